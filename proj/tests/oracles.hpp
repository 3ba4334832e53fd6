#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// under test except where a finite difference needs the function itself.

#include "ioulmm/covariance.hpp"
#include "ioulmm/data_model.hpp"
#include "ioulmm/likelihood.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/LU>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

namespace oracle {

using ioulmm::Index;
using ioulmm::Matrix;
using ioulmm::Vector;

inline double integrate(const std::function<double(double)>& f, double a, double b) {
    if (b <= a) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 6, 1e-12);
}

/// cov(W(s), W(t)) as the double integral of the stationary OU covariance
/// tau^2/(2 alpha) exp(-alpha |u - v|) over [0,s] x [0,t].
inline double iou_double_integral(double alpha, double tau, double s, double t) {
    const double scale = tau * tau / (2.0 * alpha);
    auto inner = [&](double u) {
        const double cut = std::min(u, t);
        auto f = [&](double v) { return std::exp(-alpha * std::abs(u - v)); };
        return integrate(f, 0.0, cut) + integrate(f, cut, t);
    };
    const double m = std::min(s, t);
    return scale * (integrate(inner, 0.0, m) + integrate(inner, m, s));
}

/// The representation via the OU solution: initial-value part plus the
/// Ito-isometry integral over [0, min(s,t)].
inline double iou_solution_integral(double alpha, double tau, double s, double t) {
    const double var0 = tau * tau / (2.0 * alpha);
    const double init = (1.0 - std::exp(-alpha * s)) * (1.0 - std::exp(-alpha * t)) * var0 /
                        (alpha * alpha);
    auto f = [&](double u) {
        return (1.0 - std::exp(-alpha * (s - u))) * (1.0 - std::exp(-alpha * (t - u)));
    };
    return init + tau * tau / (alpha * alpha) * integrate(f, 0.0, std::min(s, t));
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Central-difference gradient with per-coordinate step h * max(1, |x_k|).
inline Vector gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
    Vector g(x.size());
    for (Index k = 0; k < x.size(); ++k) {
        const double step = h * std::max(1.0, std::abs(x[k]));
        Vector xp = x, xm = x;
        xp[k] += step;
        xm[k] -= step;
        g[k] = (f(xp) - f(xm)) / (2.0 * step);
    }
    return g;
}

inline Matrix jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h) {
    const Vector f0 = f(x);
    Matrix j(f0.size(), x.size());
    for (Index k = 0; k < x.size(); ++k) {
        const double step = h * std::max(1.0, std::abs(x[k]));
        Vector xp = x, xm = x;
        xp[k] += step;
        xm[k] -= step;
        j.col(k) = (f(xp) - f(xm)) / (2.0 * step);
    }
    return j;
}

/// Log-likelihood by explicit inverse and LU determinant.
inline double dense_log_likelihood(const ioulmm::Dataset& d, const ioulmm::ParamVector& theta,
                                   const ioulmm::KernelSpec& spec) {
    double total = 0.0;
    for (const auto& s : d.subjects) {
        const Matrix q = ioulmm::assemble_q(s, theta.cov, spec);
        const Eigen::FullPivLU<Matrix> lu(q);
        const Vector r = s.y - s.x * theta.beta;
        total += -0.5 * (static_cast<double>(s.size()) * std::log(2.0 * std::numbers::pi) +
                         std::log(lu.determinant()) + r.dot(lu.inverse() * r));
    }
    return total;
}

/// Max relative discrepancy with an absolute floor.
inline double rel_error(const Matrix& got, const Matrix& want, double floor) {
    double worst = 0.0;
    for (Index i = 0; i < got.rows(); ++i) {
        for (Index j = 0; j < got.cols(); ++j) {
            const double denom = std::max(std::abs(want(i, j)), floor);
            worst = std::max(worst, std::abs(got(i, j) - want(i, j)) / denom);
        }
    }
    return worst;
}

} // namespace oracle
