#pragma once

#include "ioulmm/likelihood.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ioulmm {

enum class Optimizer { NelderMead, NewtonTrustRegion, Hybrid };

/// LogScale optimizes log(alpha), log(tau), log(sigma2) (logit of the Hurst
/// index under FBM). Raw optimizes (beta, gamma, alpha, tau, sigma) directly,
/// penalizing infeasible points; sigma enters squared, so its sign is free.
enum class PositivityTransform { LogScale, Raw };

struct FitConfig {
    Optimizer optimizer = Optimizer::NelderMead;
    /// Starting point; every coordinate 1 when absent.
    std::optional<ParamVector> initial;
    PositivityTransform positivity_transform = PositivityTransform::LogScale;
    /// Nelder-Mead: objective evaluations. Newton: iterations.
    Index max_iters = 20000;
    /// Nelder-Mead relative spread of -loglik across the simplex.
    double f_tol = 1e-10;
    /// Nelder-Mead simplex diameter in optimizer coordinates.
    double x_tol = 1e-6;
    /// Log-likelihood assigned where Q_i fails to be positive definite.
    double penalty_value = -1e12;
    /// Iteration cap for the Newton polish of the Hybrid optimizer.
    Index polish_iters = 100;
    LikelihoodOptions likelihood;
};

void check_fit_config(const FitConfig& config);

/// Every coordinate equal to one, the conventional default start.
[[nodiscard]] ParamVector all_ones(Index p_beta, Index p_gamma);

struct FitResult {
    ParamVector theta_hat;
    double loglik_at_max = 0.0;
    bool converged = false;
    std::string reason;
    Index iterations = 0;
    Index evaluations = 0;
    Matrix a_hat;
    Matrix u_hat;
    /// Standard errors of theta_hat (sigma2 scale); NaN when unavailable.
    Vector se;
    double wall_time_ms = 0.0;
};

/// Raised when A_N or U_N is singular at the estimate.
class SingularInformation : public std::runtime_error {
public:
    explicit SingularInformation(const std::string& block)
        : std::runtime_error("information block " + block + " is singular"), block_(block) {}
    [[nodiscard]] const std::string& block() const { return block_; }

private:
    std::string block_;
};

[[nodiscard]] FitResult fit(const Dataset& dataset, const KernelSpec& spec, const FitConfig& config = {});

/// sqrt(diag((1/N) diag(A_N, U_N)^{-1})) at theta_hat.
[[nodiscard]] Vector studentized_se(const InformationBlocks& blocks, std::size_t n_subjects);
[[nodiscard]] Vector studentized_se(const Dataset& dataset, const FitResult& result, const KernelSpec& spec);

/// diag(A_N, U_N)^{1/2} sqrt(N) (theta_hat - theta0), symmetric square root.
[[nodiscard]] Vector studentize(const InformationBlocks& blocks, const Vector& theta_hat,
                                const Vector& theta0, std::size_t n_subjects);

/// Estimate with standard error.
struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

/// sigma = sqrt(sigma2) with se(sigma2) / (2 sigma).
[[nodiscard]] Estimate sigma_estimate(const FitResult& result);
/// omega = tau^2 / alpha^2 with delta-method se from the (alpha, tau) block of U_N^{-1}/N.
[[nodiscard]] Estimate omega_estimate(const FitResult& result, std::size_t n_subjects);

/// Log-likelihood over an (alpha, tau) grid with the other coordinates held at
/// `fixed`. Rows follow grid_alpha, columns grid_tau; infeasible cells are NaN.
[[nodiscard]] Matrix profile_surface(const Dataset& dataset, const KernelSpec& spec, const ParamVector& fixed,
                                     const Vector& grid_alpha, const Vector& grid_tau,
                                     LikelihoodOptions options = {});

} // namespace ioulmm
