#include "ioulmm/simulation.hpp"

#include "ioulmm/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace ioulmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Matrix psd_root(const Matrix& m) {
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
    const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal();
}

std::vector<double> pattern_key(const Subject& s) {
    std::vector<double> key{static_cast<double>(s.size()), static_cast<double>(s.z.cols())};
    key.insert(key.end(), s.times.data(), s.times.data() + s.times.size());
    key.insert(key.end(), s.z.data(), s.z.data() + s.z.size());
    return key;
}

} // namespace

void check_design_config(const DesignConfig& c) {
    if (c.n_subjects == 0) throw std::invalid_argument("DesignConfig: n_subjects must be positive");
    if (c.kind == DesignKind::Balanced && c.n_points < 1) {
        throw std::invalid_argument("DesignConfig: n_points must be positive");
    }
    if (c.kind == DesignKind::Unbalanced) {
        if (!(c.n_lower >= 1.0 && c.n_upper > c.n_lower)) {
            throw std::invalid_argument("DesignConfig: need 1 <= n_lower < n_upper");
        }
        if (static_cast<double>(c.grid_max) < std::ceil(c.n_upper) - 1.0) {
            throw std::invalid_argument("DesignConfig: grid_max smaller than the largest n_i");
        }
    }
    if (!(c.x2_probability >= 0.0 && c.x2_probability <= 1.0)) {
        throw std::invalid_argument("DesignConfig: x2_probability must lie in [0, 1]");
    }
}

Dataset generate_design(const DesignConfig& c, std::uint32_t draw) {
    check_design_config(c);
    std::vector<Subject> subjects(c.n_subjects);
    for (std::size_t i = 0; i < c.n_subjects; ++i) {
        CounterRng rng(c.design_seed, static_cast<std::uint32_t>(StreamPurpose::Design),
                       static_cast<std::uint32_t>(i), draw);
        Subject& s = subjects[i];
        s.id = std::to_string(i + 1);
        if (c.kind == DesignKind::Balanced) {
            s.times = Vector::LinSpaced(c.n_points, 1.0, static_cast<double>(c.n_points));
        } else {
            const auto n = static_cast<Index>(std::floor(rng.uniform(c.n_lower, c.n_upper)));
            std::vector<int> grid(static_cast<std::size_t>(c.grid_max));
            std::iota(grid.begin(), grid.end(), 1);
            for (Index k = 0; k < n; ++k) {
                const auto remaining = static_cast<std::uint32_t>(c.grid_max - k);
                std::swap(grid[static_cast<std::size_t>(k)], grid[static_cast<std::size_t>(k + rng.below(remaining))]);
            }
            std::sort(grid.begin(), grid.begin() + n);
            s.times.resize(n);
            for (Index k = 0; k < n; ++k) s.times[k] = grid[static_cast<std::size_t>(k)];
        }
        const Index n = s.times.size();
        s.y = Vector::Zero(n);
        s.x.resize(n, 2);
        s.z.resize(n, 2);
        const double subject_x2 = rng.bernoulli(c.x2_probability) ? 1.0 : 0.0;
        for (Index k = 0; k < n; ++k) {
            s.x(k, 0) = s.times[k];
            s.x(k, 1) = c.x2_mode == X2Mode::PerSubject ? subject_x2 : (rng.bernoulli(c.x2_probability) ? 1.0 : 0.0);
            s.z(k, 0) = 1.0;
            s.z(k, 1) = s.times[k];
        }
    }
    const double horizon = c.kind == DesignKind::Balanced ? static_cast<double>(c.n_points)
                                                          : static_cast<double>(c.grid_max);
    return make_dataset(std::move(subjects), horizon);
}

ResponseSimulator::ResponseSimulator(const Dataset& skeleton, const ParamVector& theta, const KernelSpec& spec,
                                     DrawMode mode)
    : skeleton_(&skeleton), theta_(theta), mode_(mode) {
    check_cov_params(theta.cov, spec);
    if (theta.beta.size() != skeleton.p_beta) throw std::invalid_argument("ResponseSimulator: beta size");
    if (random_effect_dim(spec.g_param, theta.cov.gamma.size()) != skeleton.p_b) {
        throw std::invalid_argument("ResponseSimulator: gamma size");
    }
    g_root_ = psd_root(g_matrix(theta.cov.gamma, spec.g_param));
    std::map<std::vector<double>, std::size_t> seen;
    pattern_of_.resize(skeleton.n_subjects());
    for (std::size_t i = 0; i < skeleton.n_subjects(); ++i) {
        const Subject& s = skeleton.subjects[i];
        auto [it, inserted] = seen.emplace(pattern_key(s), factors_.size());
        pattern_of_[i] = it->second;
        if (!inserted) continue;
        const Matrix q = assemble_q(s, theta.cov, spec);
        const Eigen::LLT<Matrix> llt(q);
        if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
            throw CholeskyFailure(s.id);
        }
        Factors f;
        if (mode == DrawMode::Joint) {
            f.q = llt.matrixL();
        } else {
            f.w = psd_root(kernel_matrices(spec, theta.cov.alpha, theta.cov.tau, s.times, 0).value);
        }
        factors_.push_back(std::move(f));
    }
}

void ResponseSimulator::simulate_into(Dataset& out, std::uint64_t noise_seed, std::uint32_t replication) const {
    if (out.subjects.size() != skeleton_->subjects.size()) out = *skeleton_;
    const double sigma = std::sqrt(theta_.cov.sigma2);
    for (std::size_t i = 0; i < skeleton_->n_subjects(); ++i) {
        const Subject& s = skeleton_->subjects[i];
        CounterRng rng(noise_seed, static_cast<std::uint32_t>(StreamPurpose::Noise), static_cast<std::uint32_t>(i),
                       replication);
        const Index n = s.size();
        const Factors& f = factors_[pattern_of_[i]];
        Vector y = s.x * theta_.beta;
        if (mode_ == DrawMode::Joint) {
            Vector e(n);
            for (Index k = 0; k < n; ++k) e[k] = rng.normal();
            y.noalias() += f.q.triangularView<Eigen::Lower>() * e;
        } else {
            Vector b(g_root_.cols());
            for (Index k = 0; k < b.size(); ++k) b[k] = rng.normal();
            Vector w(n);
            for (Index k = 0; k < n; ++k) w[k] = rng.normal();
            Vector eps(n);
            for (Index k = 0; k < n; ++k) eps[k] = sigma * rng.normal();
            y += s.z * (g_root_ * b) + f.w * w + eps;
        }
        out.subjects[i].y = std::move(y);
    }
}

Dataset ResponseSimulator::simulate(std::uint64_t noise_seed, std::uint32_t replication) const {
    Dataset out = *skeleton_;
    simulate_into(out, noise_seed, replication);
    return out;
}

Dataset simulate_responses(const Dataset& skeleton, const ParamVector& theta, const KernelSpec& spec,
                           std::uint64_t noise_seed, std::uint32_t replication, DrawMode mode) {
    return ResponseSimulator(skeleton, theta, spec, mode).simulate(noise_seed, replication);
}

void check_mc_config(const McConfig& c) {
    if (c.n_replications < 2) throw std::invalid_argument("McConfig: n_replications must be >= 2");
    check_fit_config(c.fit_config);
}

double mcse(const std::vector<double>& v) {
    const auto m = static_cast<double>(v.size());
    if (v.size() < 2) return kNaN;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / m;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (m * (m - 1.0)));
}

ParameterSummary summarize(const std::string& name, const std::vector<double>& v, double truth) {
    ParameterSummary s;
    s.name = name;
    s.truth = truth;
    const auto m = static_cast<double>(v.size());
    if (v.empty()) {
        s.mean = s.sd = s.bias = s.mcse = kNaN;
        return s;
    }
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / m;
    s.bias = s.mean - truth;
    s.mcse = mcse(v);
    s.sd = s.mcse * std::sqrt(m);
    return s;
}

McReport run_mc_study(const McConfig& mc, const DesignConfig& design, const KernelSpec& spec) {
    check_mc_config(mc);
    const Index p = mc.true_theta.size();
    const Index p_beta = mc.true_theta.beta.size();
    const Index p_gamma = mc.true_theta.cov.gamma.size();
    const std::size_t m = mc.n_replications;

    McReport r;
    r.names = parameter_names(p_beta, p_gamma, spec.kind);
    r.names.emplace_back("sigma");
    r.names.emplace_back("omega");
    const Vector theta0 = mc.true_theta.flatten();
    const auto& v0 = mc.true_theta.cov;
    r.truth.resize(p + 2);
    r.truth << theta0, std::sqrt(v0.sigma2), v0.tau * v0.tau / (v0.alpha * v0.alpha);
    r.estimates = Matrix::Constant(static_cast<Index>(m), p + 2, kNaN);
    r.se = Matrix::Constant(static_cast<Index>(m), p, kNaN);
    r.studentized = Matrix::Constant(static_cast<Index>(m), p, kNaN);
    r.converged.assign(m, false);
    r.reasons.assign(m, "");
    r.loglik.assign(m, kNaN);
    r.wall_time_ms.assign(m, 0.0);

    const Dataset frozen = generate_design(design);
    FitConfig fc = mc.fit_config;
    fc.likelihood.threads = 1;

    parallel_for(m, mc.threads, [&](std::size_t rep) {
        const auto start = std::chrono::steady_clock::now();
        const auto rep32 = static_cast<std::uint32_t>(rep);
        const Dataset skeleton = mc.frozen_design ? frozen : generate_design(design, rep32 + 1);
        const auto row = static_cast<Index>(rep);
        try {
            const Dataset data = ResponseSimulator(skeleton, mc.true_theta, spec).simulate(mc.noise_seed, rep32);
            const FitResult f = fit(data, spec, fc);
            const Vector est = f.theta_hat.flatten();
            const Estimate sig = sigma_estimate(f);
            const Estimate om = omega_estimate(f, data.n_subjects());
            r.estimates.row(row) << est.transpose(), sig.value, om.value;
            r.se.row(row) = f.se.transpose();
            if (f.a_hat.size() && f.u_hat.size()) {
                r.studentized.row(row) =
                    studentize({f.a_hat, f.u_hat}, est, theta0, data.n_subjects()).transpose();
            }
            r.converged[rep] = f.converged;
            r.reasons[rep] = f.reason;
            r.loglik[rep] = f.loglik_at_max;
        } catch (const std::exception& e) {
            r.reasons[rep] = e.what();
        }
        r.wall_time_ms[rep] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    });

    r.failures = static_cast<std::size_t>(std::count(r.converged.begin(), r.converged.end(), false));
    for (Index k = 0; k < p + 2; ++k) {
        std::vector<double> col;
        for (std::size_t rep = 0; rep < m; ++rep) {
            if (r.converged[rep]) col.push_back(r.estimates(static_cast<Index>(rep), k));
        }
        r.summary.push_back(summarize(r.names[static_cast<std::size_t>(k)], col, r.truth[k]));
    }
    return r;
}

std::vector<ParameterSummary> table_rows(const McReport& r) {
    const std::size_t p = r.summary.size() - 2;
    std::vector<ParameterSummary> rows(r.summary.begin(), r.summary.begin() + static_cast<std::ptrdiff_t>(p - 1));
    rows.push_back(r.summary[p]);     // sigma
    rows.push_back(r.summary[p - 1]); // sigma2
    rows.push_back(r.summary[p + 1]); // omega
    return rows;
}

} // namespace ioulmm
