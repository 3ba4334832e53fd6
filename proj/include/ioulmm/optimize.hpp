#pragma once

#include "ioulmm/types.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>

namespace ioulmm {

/// Outcome of a minimization.
struct OptimResult {
    Vector x;
    double f = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    std::string reason;
    Index iterations = 0;
    Index evaluations = 0;
};

/// Nelder-Mead with the reflection/extension/reduction/shrink sequence of R's
/// `nmmin`. Non-finite objective values are replaced by `penalty`.
///
/// Stops with success when the spread of function values satisfies
/// f_hi - f_lo <= f_tol * (|f(x0)| + f_tol) and the simplex diameter (max
/// infinity-norm distance from the best vertex) is <= x_tol. Leaving x_tol at
/// infinity gives R's rule exactly. The evaluation budget counts every
/// objective call, as R's `maxit` does.
struct NelderMeadOptions {
    Index max_evaluations = 500;
    double f_tol = 1.490116119384765625e-8;
    double x_tol = std::numeric_limits<double>::infinity();
    double penalty = 1e35;
    /// Initial vertex k is x0 + step * e_k with step = initial_step * max(1, |x0_k|).
    double initial_step = 0.1;
};

[[nodiscard]] OptimResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                                      const NelderMeadOptions& options = {});

/// Value, gradient and Hessian of a twice-differentiable objective.
struct QuadraticModel {
    double f = 0.0;
    Vector g;
    Matrix h;
};

struct TrustRegionOptions {
    Index max_iterations = 200;
    double initial_radius = 1.0;
    double max_radius = 100.0;
    /// Eigenvalues of the Hessian are replaced by max(|lambda|, eigen_floor).
    double eigen_floor = 1e-8;
    /// Relative step size below which the iteration gives up.
    double x_tol = 1e-12;
    double accept_ratio = 0.1;
};

/// Value-only objective; std::nullopt marks an infeasible point.
using ValueFn = std::function<std::optional<double>(const Vector&)>;
/// Full second-order model; std::nullopt marks an infeasible point.
using ModelFn = std::function<std::optional<QuadraticModel>(const Vector&)>;
/// Success test applied at every accepted iterate.
using ConvergedFn = std::function<bool(const Vector&, const QuadraticModel&)>;

/// Trust-region Newton on the eigen-regularized Hessian. Each step solves
/// min_p g'p + p'Bp/2 subject to |p| <= radius exactly in the eigenbasis of B.
[[nodiscard]] OptimResult trust_region_newton(const ValueFn& value, const ModelFn& model,
                                              const ConvergedFn& converged, const Vector& x0,
                                              const TrustRegionOptions& options = {});

} // namespace ioulmm
