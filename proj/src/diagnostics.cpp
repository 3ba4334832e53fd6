#include "ioulmm/diagnostics.hpp"

#include "ioulmm/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace ioulmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kEps = std::numeric_limits<double>::epsilon();

Dataset prefix(const Dataset& full, std::size_t n) {
    std::vector<Subject> subjects(full.subjects.begin(), full.subjects.begin() + static_cast<std::ptrdiff_t>(n));
    return make_dataset(std::move(subjects), full.horizon);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return kNaN;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

double min_eigenvalue(const Matrix& m) {
    return Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

std::size_t largest(const std::vector<std::size_t>& n_values) {
    if (n_values.empty()) throw std::invalid_argument("n_values must not be empty");
    const std::size_t n = *std::max_element(n_values.begin(), n_values.end());
    if (*std::min_element(n_values.begin(), n_values.end()) == 0) {
        throw std::invalid_argument("n_values must be positive");
    }
    return n;
}

} // namespace

std::vector<Vector> default_directions(Index p, std::size_t n_random, std::uint64_t seed) {
    std::vector<Vector> out;
    for (Index k = 0; k < p; ++k) out.push_back(Vector::Unit(p, k));
    for (std::size_t j = 0; j < n_random; ++j) {
        CounterRng rng(seed, static_cast<std::uint32_t>(StreamPurpose::Directions), static_cast<std::uint32_t>(j), 0);
        Vector u(p);
        for (Index k = 0; k < p; ++k) u[k] = rng.normal();
        out.push_back(u.normalized());
    }
    return out;
}

LanCheckReport lan_expansion_check(const ParamVector& theta0, const KernelSpec& spec, const DesignConfig& design,
                                   const std::vector<std::size_t>& n_values, const std::vector<Vector>& directions,
                                   const DiagnosticRun& run) {
    const std::size_t n_max = largest(n_values);
    const Index p = theta0.size();
    for (const auto& u : directions) {
        if (u.size() != p) throw std::invalid_argument("lan_expansion_check: direction has the wrong length");
    }
    if (run.replications < 2) throw std::invalid_argument("lan_expansion_check: need at least 2 replications");

    DesignConfig dc = design;
    dc.n_subjects = n_max;
    // Design, stand-in information and simulator for one replication.
    struct Setup {
        Dataset full;
        Matrix info;
        std::unique_ptr<ResponseSimulator> sim;
    };
    auto make_setup = [&](std::uint32_t draw) {
        Setup s;
        s.full = generate_design(dc, draw);
        s.info = LikelihoodEvaluator(s.full, spec).information_blocks(theta0).block_diagonal();
        s.sim = std::make_unique<ResponseSimulator>(s.full, theta0, spec);
        return s;
    };
    const Setup frozen = run.fresh_design ? Setup{} : make_setup(0);
    const Vector flat0 = theta0.flatten();
    const Index p_beta = theta0.beta.size();
    const Index p_gamma = theta0.cov.gamma.size();

    const std::size_t nn = n_values.size();
    const std::size_t nd = directions.size();
    LanCheckReport report;
    report.n_values = n_values;
    report.directions = directions;
    report.cells.resize(nn * nd);
    std::vector<std::vector<bool>> feasible(nn, std::vector<bool>(nd, true));
    for (std::size_t a = 0; a < nn; ++a) {
        for (std::size_t d = 0; d < nd; ++d) {
            auto& c = report.cells[a * nd + d];
            c.n = n_values[a];
            c.direction = d;
            const Vector t = flat0 + directions[d] / std::sqrt(static_cast<double>(n_values[a]));
            feasible[a][d] = cov_params_feasible(ParamVector::unflatten(t, p_beta, p_gamma).cov, spec);
            c.skipped = !feasible[a][d];
            c.residual.assign(run.replications, kNaN);
            c.residual_observed.assign(run.replications, kNaN);
        }
    }
    std::vector<double> floors(nn * nd * run.replications, 0.0);

    parallel_for(run.replications, run.threads, [&](std::size_t rep) {
        const auto rep32 = static_cast<std::uint32_t>(rep);
        const Setup fresh = run.fresh_design ? make_setup(rep32 + 1) : Setup{};
        const Setup& setup = run.fresh_design ? fresh : frozen;
        const Matrix& info = setup.info;
        const Dataset data_full = setup.sim->simulate(run.noise_seed, rep32);
        for (std::size_t a = 0; a < nn; ++a) {
            const std::size_t n = n_values[a];
            const double sn = std::sqrt(static_cast<double>(n));
            const Dataset data = prefix(data_full, n);
            const LikelihoodEvaluator eval(data, spec);
            const LikelihoodTerms t0 = eval.evaluate(theta0, 2);
            const Vector delta = t0.score / sn;
            const Matrix observed = -t0.hessian / static_cast<double>(n);
            for (std::size_t d = 0; d < nd; ++d) {
                if (!feasible[a][d]) continue;
                const Vector& u = directions[d];
                double l1;
                try {
                    l1 = eval.log_likelihood(ParamVector::unflatten(flat0 + u / sn, p_beta, p_gamma));
                } catch (const CholeskyFailure&) {
                    continue;
                }
                const double diff = l1 - t0.loglik;
                auto& c = report.cells[a * nd + d];
                c.residual[rep] = diff - (delta.dot(u) - 0.5 * u.dot(info * u));
                c.residual_observed[rep] = diff - (delta.dot(u) - 0.5 * u.dot(observed * u));
                floors[(a * nd + d) * run.replications + rep] = 64.0 * kEps * (std::abs(l1) + std::abs(t0.loglik));
            }
        }
    });

    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        auto& c = report.cells[i];
        if (c.skipped) continue;
        std::vector<double> abs_r, abs_o, abs_d;
        for (std::size_t rep = 0; rep < run.replications; ++rep) {
            if (std::isnan(c.residual[rep])) continue;
            abs_r.push_back(std::abs(c.residual[rep]));
            abs_o.push_back(std::abs(c.residual_observed[rep]));
            abs_d.push_back(std::abs(c.residual[rep] - c.residual_observed[rep]));
            c.rounding_floor = std::max(c.rounding_floor, floors[i * run.replications + rep]);
        }
        if (abs_r.size() < 2) {
            c.skipped = true;
            continue;
        }
        c.mean_abs = mean_of(abs_r);
        c.mcse_abs = sd_of(abs_r) / std::sqrt(static_cast<double>(abs_r.size()));
        c.mean_abs_observed = mean_of(abs_o);
        c.mean_abs_difference = mean_of(abs_d);
    }
    return report;
}

bool lan_trend_decreasing(const LanCheckReport& report, std::size_t direction) {
    std::vector<std::size_t> order(report.n_values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return report.n_values[a] < report.n_values[b]; });
    std::vector<double> mean, se;
    for (auto a : order) {
        const LanCell& c = report.cell(a, direction);
        if (c.skipped) return false;
        const bool at_floor = c.mean_abs <= c.rounding_floor;
        mean.push_back(at_floor ? 0.0 : c.mean_abs);
        se.push_back(at_floor ? 0.0 : c.mcse_abs);
    }
    int inversions = 0;
    for (std::size_t k = 1; k < mean.size(); ++k) {
        if (mean[k] <= mean[k - 1]) continue;
        ++inversions;
        if (inversions > 1 || mean[k] - mean[k - 1] > 2.0 * std::hypot(se[k], se[k - 1])) return false;
    }
    return mean.back() <= mean.front();
}

ScoreCltReport score_clt_check(const ParamVector& theta0, const KernelSpec& spec, const DesignConfig& design,
                               const DiagnosticRun& run) {
    if (run.replications < 2) throw std::invalid_argument("score_clt_check: need at least 2 replications");
    const Dataset skeleton = generate_design(design);
    const std::size_t n = skeleton.n_subjects();
    const auto m = static_cast<Index>(run.replications);
    const Index p = theta0.size();
    const ResponseSimulator sim(skeleton, theta0, spec);
    Matrix scores(m, p);
    parallel_for(run.replications, run.threads, [&](std::size_t rep) {
        const Dataset data = sim.simulate(run.noise_seed, static_cast<std::uint32_t>(rep));
        scores.row(static_cast<Index>(rep)) =
            (LikelihoodEvaluator(data, spec).score(theta0) / std::sqrt(static_cast<double>(n))).transpose();
    });

    ScoreCltReport r;
    r.n = n;
    r.replications = run.replications;
    r.mean = scores.colwise().mean().transpose();
    const Matrix centered = scores.rowwise() - r.mean.transpose();
    const double md = static_cast<double>(m);
    r.empirical_cov = centered.transpose() * centered / (md - 1.0);
    r.mean_mcse = (centered.colwise().squaredNorm().transpose() / (md - 1.0)).cwiseSqrt() / std::sqrt(md);
    r.cov_mcse.resize(p, p);
    for (Index j = 0; j < p; ++j) {
        for (Index k = 0; k < p; ++k) {
            const Vector prod = centered.col(j).cwiseProduct(centered.col(k));
            const double mu = prod.mean();
            r.cov_mcse(j, k) = std::sqrt((prod.array() - mu).square().sum() / (md - 1.0) / md);
        }
    }
    r.information = LikelihoodEvaluator(skeleton, spec).information_blocks(theta0).block_diagonal();
    const Index pb = theta0.beta.size();
    for (Index j = 0; j < p; ++j) {
        for (Index k = 0; k < p; ++k) {
            const double dev = std::abs(r.empirical_cov(j, k) - r.information(j, k));
            const double z = dev / r.cov_mcse(j, k);
            r.max_abs_deviation = std::max(r.max_abs_deviation, dev);
            r.max_z = std::max(r.max_z, z);
            if ((j < pb) != (k < pb)) r.max_z_cross = std::max(r.max_z_cross, z);
        }
    }
    return r;
}

std::vector<InformationLimitRow> information_limit_check(const KernelSpec& spec, const DesignConfig& design,
                                                         const CovParams& v, const std::vector<std::size_t>& n_values) {
    DesignConfig dc = design;
    dc.n_subjects = largest(n_values);
    const Dataset full = generate_design(dc);
    ParamVector theta;
    theta.beta = Vector::Zero(full.p_beta);
    theta.cov = v;
    std::vector<InformationLimitRow> rows;
    for (std::size_t n : n_values) {
        const Dataset data = prefix(full, n);
        const InformationBlocks b = LikelihoodEvaluator(data, spec).information_blocks(theta);
        InformationLimitRow row;
        row.n = n;
        row.a_hat = b.a_hat;
        row.u_hat = b.u_hat;
        row.change_a = rows.empty() ? kNaN : max_abs(b.a_hat - rows.back().a_hat);
        row.change_u = rows.empty() ? kNaN : max_abs(b.u_hat - rows.back().u_hat);
        row.min_eig_a = min_eigenvalue(b.a_hat);
        row.min_eig_u = min_eigenvalue(b.u_hat);
        row.asymmetry_u = max_abs(b.u_hat - b.u_hat.transpose());
        rows.push_back(std::move(row));
    }
    return rows;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -std::numeric_limits<double>::infinity();
        if (p == 1.0) return std::numeric_limits<double>::infinity();
        throw std::domain_error("normal_quantile: p outside [0, 1]");
    }
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

double qq_correlation(std::vector<double> v) {
    const std::size_t n = v.size();
    if (n < 3) throw std::invalid_argument("qq_correlation: need at least 3 values");
    std::sort(v.begin(), v.end());
    if (v.front() == v.back()) throw std::invalid_argument("qq_correlation: zero variance");
    const double a = n <= 10 ? 0.375 : 0.5;
    Vector x(static_cast<Index>(n)), q(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        x[static_cast<Index>(i)] = v[i];
        q[static_cast<Index>(i)] = normal_quantile((static_cast<double>(i + 1) - a) / (static_cast<double>(n) + 1.0 - 2.0 * a));
    }
    const Vector xc = x.array() - x.mean();
    const Vector qc = q.array() - q.mean();
    return xc.dot(qc) / (xc.norm() * qc.norm());
}

NormalityReport studentized_normality(const Matrix& studentized, const std::vector<std::string>& names,
                                      const std::vector<std::string>& exempt, std::size_t bins) {
    if (static_cast<Index>(names.size()) != studentized.cols()) {
        throw std::invalid_argument("studentized_normality: names do not match columns");
    }
    if (bins < 1) throw std::invalid_argument("studentized_normality: bins must be positive");
    std::vector<Index> rows;
    for (Index i = 0; i < studentized.rows(); ++i) {
        if (studentized.row(i).allFinite()) rows.push_back(i);
    }
    NormalityReport report;
    report.low_power = rows.size() < 50;
    constexpr double lo = -4.0;
    constexpr double hi = 4.0;
    for (Index k = 0; k < studentized.cols(); ++k) {
        NormalityComponent c;
        c.name = names[static_cast<std::size_t>(k)];
        c.exempt = std::find(exempt.begin(), exempt.end(), c.name) != exempt.end();
        for (Index i : rows) c.values.push_back(studentized(i, k));
        c.qq_correlation = qq_correlation(c.values);
        const double width = (hi - lo) / static_cast<double>(bins);
        for (std::size_t b = 0; b <= bins; ++b) c.bin_edges.push_back(lo + width * static_cast<double>(b));
        c.counts.assign(bins, 0);
        for (double x : c.values) {
            const auto b = static_cast<std::ptrdiff_t>(std::floor((x - lo) / width));
            c.counts[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1))]++;
        }
        for (std::size_t b = 0; b < bins; ++b) {
            const double left = b == 0 ? 0.0 : normal_cdf(c.bin_edges[b]);
            const double right = b + 1 == bins ? 1.0 : normal_cdf(c.bin_edges[b + 1]);
            c.expected.push_back(static_cast<double>(c.values.size()) * (right - left));
        }
        report.components.push_back(std::move(c));
    }
    return report;
}

ThirdDerivativeReport third_derivative_bound_check(const Dataset& dataset, const ParamVector& theta,
                                                   const KernelSpec& spec, double radius, std::size_t n_points,
                                                   std::uint64_t seed) {
    if (!(radius >= 0.0) || !std::isfinite(radius)) throw std::invalid_argument("radius must be finite and >= 0");
    if (n_points < 1) throw std::invalid_argument("n_points must be positive");
    const LikelihoodEvaluator eval(dataset, spec);
    const std::size_t n = dataset.n_subjects();
    const double sn = std::sqrt(static_cast<double>(n));
    const Vector flat = theta.flatten();
    const Index p = flat.size();
    const Index p_beta = theta.beta.size();
    const Index p_gamma = theta.cov.gamma.size();

    ThirdDerivativeReport r;
    r.n = n;
    r.radius = radius;
    const std::size_t points = radius == 0.0 ? 1 : n_points;
    for (std::size_t j = 0; j < points; ++j) {
        Vector x = flat;
        if (radius > 0.0) {
            CounterRng rng(seed, static_cast<std::uint32_t>(StreamPurpose::Diagnostics), static_cast<std::uint32_t>(j), 0);
            Vector w(p);
            for (Index k = 0; k < p; ++k) w[k] = rng.normal();
            const double scale = radius / sn * std::pow(rng.uniform(), 1.0 / static_cast<double>(p));
            x += scale * w.normalized();
        }
        try {
            double total = 0.0;
            double beta_max = 0.0;
            for (Index k = 0; k < p; ++k) {
                const double h = 1e-4 * std::max(1.0, std::abs(x[k]));
                Vector xp = x, xm = x;
                xp[k] += h;
                xm[k] -= h;
                const Matrix d = (eval.observed_information(ParamVector::unflatten(xp, p_beta, p_gamma)) -
                                  eval.observed_information(ParamVector::unflatten(xm, p_beta, p_gamma))) /
                                 (2.0 * h);
                total += d.squaredNorm();
                if (k < p_beta) beta_max = std::max(beta_max, max_abs(d.topLeftCorner(p_beta, p_beta)));
            }
            r.max_norm = std::max(r.max_norm, std::sqrt(total));
            r.beta_block_max = std::max(r.beta_block_max, beta_max);
            ++r.points_evaluated;
        } catch (const CholeskyFailure&) {
            ++r.points_skipped;
        } catch (const std::invalid_argument&) {
            ++r.points_skipped;
        }
    }
    r.max_scaled_norm = r.max_norm / sn;
    return r;
}

} // namespace ioulmm
