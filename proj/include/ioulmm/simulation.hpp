#pragma once

#include "ioulmm/estimation.hpp"
#include "ioulmm/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ioulmm {

enum class DesignKind { Balanced, Unbalanced };
/// Whether x2 is drawn per observation or once per subject.
enum class X2Mode { PerObservation, PerSubject };

/// Covariates follow x = (t, Bernoulli(x2_probability)), z = (1, t).
struct DesignConfig {
    DesignKind kind = DesignKind::Balanced;
    std::size_t n_subjects = 250;
    /// Balanced: every subject observed at 1..n_points.
    Index n_points = 20;
    /// Unbalanced: n_i = floor(Uniform[n_lower, n_upper)), times drawn
    /// without replacement from {1..grid_max}.
    double n_lower = 15.0;
    double n_upper = 20.0;
    Index grid_max = 20;
    X2Mode x2_mode = X2Mode::PerObservation;
    double x2_probability = 0.5;
    std::uint64_t design_seed = 1;
};

void check_design_config(const DesignConfig& config);

/// Times and covariates with y set to zero. Subject i depends only on
/// (design_seed, i, draw), so a design with N subjects is a prefix of any
/// larger one with the same seed.
[[nodiscard]] Dataset generate_design(const DesignConfig& config, std::uint32_t draw = 0);

enum class DrawMode { Joint, Decomposed };

/// Draws Y_i ~ N(X_i beta, Q_i(v)) for a fixed skeleton. Factors are computed
/// once per distinct (times, Z) pattern.
class ResponseSimulator {
public:
    ResponseSimulator(const Dataset& skeleton, const ParamVector& theta, const KernelSpec& spec,
                      DrawMode mode = DrawMode::Joint);

    /// Responses for one replication; subject i uses stream (seed, i, replication).
    [[nodiscard]] Dataset simulate(std::uint64_t noise_seed, std::uint32_t replication) const;
    void simulate_into(Dataset& out, std::uint64_t noise_seed, std::uint32_t replication) const;

private:
    struct Factors {
        Matrix q;       // Joint: Cholesky factor of Q_i
        Matrix w;       // Decomposed: square root of H_i
    };
    const Dataset* skeleton_;
    ParamVector theta_;
    DrawMode mode_;
    Matrix g_root_;
    std::vector<Factors> factors_;
    std::vector<std::size_t> pattern_of_;
};

[[nodiscard]] Dataset simulate_responses(const Dataset& skeleton, const ParamVector& theta,
                                         const KernelSpec& spec, std::uint64_t noise_seed,
                                         std::uint32_t replication = 0, DrawMode mode = DrawMode::Joint);

struct McConfig {
    ParamVector true_theta;
    std::size_t n_replications = 1000;
    std::uint64_t noise_seed = 1;
    FitConfig fit_config;
    /// Draw the design once (true) or afresh for every replication.
    bool frozen_design = true;
    std::size_t threads = 1;
};

void check_mc_config(const McConfig& config);

struct ParameterSummary {
    std::string name;
    double truth = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    double bias = 0.0;
    double mcse = 0.0;
};

struct McReport {
    /// parameter_names(...) followed by "sigma" and "omega".
    std::vector<std::string> names;
    Vector truth;
    /// One row per replication; NaN rows for fits that threw.
    Matrix estimates;
    /// Standard errors on the parameter scale, one row per replication.
    Matrix se;
    /// diag(A_N, U_N)^{1/2} sqrt(N) (theta_hat - theta0) per replication.
    Matrix studentized;
    std::vector<bool> converged;
    std::vector<std::string> reasons;
    std::vector<double> loglik;
    std::vector<double> wall_time_ms;
    std::size_t failures = 0;
    /// Over converged replications only.
    std::vector<ParameterSummary> summary;
};

/// sqrt(sum (x - mean)^2 / (M (M - 1))).
[[nodiscard]] double mcse(const std::vector<double>& values);
[[nodiscard]] ParameterSummary summarize(const std::string& name, const std::vector<double>& values, double truth);

[[nodiscard]] McReport run_mc_study(const McConfig& mc, const DesignConfig& design, const KernelSpec& spec);

/// Report rows in table order: beta, gamma, shape, tau, sigma, then sigma2 and omega.
[[nodiscard]] std::vector<ParameterSummary> table_rows(const McReport& report);

} // namespace ioulmm
