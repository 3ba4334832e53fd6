#pragma once

#include <Eigen/Dense>

namespace ioulmm {

template <typename Scalar>
struct Types {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
};

using Matrix = Types<double>::Matrix;
using Vector = Types<double>::Vector;
using Index = Eigen::Index;

} // namespace ioulmm
