#pragma once

#include "ioulmm/simulation.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ioulmm {

/// Shared Monte Carlo settings for the diagnostics.
struct DiagnosticRun {
    std::size_t replications = 200;
    std::uint64_t noise_seed = 1;
    std::size_t threads = 1;
    /// Redraw the design for every replication instead of freezing it.
    bool fresh_design = false;
};

/// p coordinate directions followed by `n_random` seeded random unit vectors.
[[nodiscard]] std::vector<Vector> default_directions(Index p, std::size_t n_random, std::uint64_t seed);

struct LanCell {
    std::size_t n = 0;
    std::size_t direction = 0;
    bool skipped = false;
    /// Residual with diag(A_N, U_N), one entry per replication.
    std::vector<double> residual;
    /// Residual with the observed information of the same dataset.
    std::vector<double> residual_observed;
    double mean_abs = 0.0;
    double mcse_abs = 0.0;
    double mean_abs_observed = 0.0;
    /// mean |residual - residual_observed|.
    double mean_abs_difference = 0.0;
    /// Size of floating-point error in the log-likelihood difference.
    double rounding_floor = 0.0;
};

struct LanCheckReport {
    std::vector<std::size_t> n_values;
    std::vector<Vector> directions;
    /// Row-major over (n, direction).
    std::vector<LanCell> cells;
    [[nodiscard]] const LanCell& cell(std::size_t n_index, std::size_t direction) const {
        return cells[n_index * directions.size() + direction];
    }
};

/// R_N(u) = [l(theta0 + u/sqrt(N)) - l(theta0)] - [Delta_N' u - u' I u / 2] on
/// nested designs, I = diag(A_N, U_N) at theta0 on the largest design.
[[nodiscard]] LanCheckReport lan_expansion_check(const ParamVector& true_theta, const KernelSpec& spec,
                                                 const DesignConfig& design, const std::vector<std::size_t>& n_values,
                                                 const std::vector<Vector>& directions, const DiagnosticRun& run);

/// True when mean |R_N| does not increase along n_values, except for at most
/// one increase smaller than twice the combined Monte Carlo standard error.
/// Values at the rounding floor count as zero.
[[nodiscard]] bool lan_trend_decreasing(const LanCheckReport& report, std::size_t direction);

struct ScoreCltReport {
    std::size_t n = 0;
    std::size_t replications = 0;
    Vector mean;
    Vector mean_mcse;
    Matrix empirical_cov;
    Matrix cov_mcse;
    /// diag(A_N, U_N) of the same design.
    Matrix information;
    /// max |empirical - information| / mcse over all entries.
    double max_z = 0.0;
    /// Same, restricted to the beta-v cross block.
    double max_z_cross = 0.0;
    double max_abs_deviation = 0.0;
};

[[nodiscard]] ScoreCltReport score_clt_check(const ParamVector& true_theta, const KernelSpec& spec,
                                             const DesignConfig& design, const DiagnosticRun& run);

struct InformationLimitRow {
    std::size_t n = 0;
    Matrix a_hat;
    Matrix u_hat;
    /// Max entry change against the previous row; NaN on the first.
    double change_a = 0.0;
    double change_u = 0.0;
    double min_eig_a = 0.0;
    double min_eig_u = 0.0;
    double asymmetry_u = 0.0;
};

[[nodiscard]] std::vector<InformationLimitRow> information_limit_check(const KernelSpec& spec,
                                                                       const DesignConfig& design,
                                                                       const CovParams& v,
                                                                       const std::vector<std::size_t>& n_values);

struct NormalityComponent {
    std::string name;
    std::vector<double> values;
    double qq_correlation = 0.0;
    std::vector<double> bin_edges;
    std::vector<std::size_t> counts;
    std::vector<double> expected;
    /// Reported without a pass/fail claim.
    bool exempt = false;
};

struct NormalityReport {
    std::vector<NormalityComponent> components;
    bool low_power = false;
};

/// Standard normal quantile (Acklam's rational approximation refined by one Halley step).
[[nodiscard]] double normal_quantile(double p);
[[nodiscard]] double normal_cdf(double x);
/// Correlation between sorted values and normal quantiles at R's ppoints.
[[nodiscard]] double qq_correlation(std::vector<double> values);

/// Rows with any NaN are dropped. Components named in `exempt` are flagged.
[[nodiscard]] NormalityReport studentized_normality(const Matrix& studentized, const std::vector<std::string>& names,
                                                    const std::vector<std::string>& exempt = {"sigma2"},
                                                    std::size_t bins = 30);

struct ThirdDerivativeReport {
    std::size_t n = 0;
    double radius = 0.0;
    std::size_t points_evaluated = 0;
    std::size_t points_skipped = 0;
    /// N^{-1/2} max over sampled points of the Frobenius norm of the derivative of I_N.
    double max_scaled_norm = 0.0;
    double max_norm = 0.0;
    /// Largest entry of the pure-beta third derivative block.
    double beta_block_max = 0.0;
};

[[nodiscard]] ThirdDerivativeReport third_derivative_bound_check(const Dataset& dataset, const ParamVector& theta,
                                                                 const KernelSpec& spec, double radius,
                                                                 std::size_t n_points = 10, std::uint64_t seed = 1);

} // namespace ioulmm
