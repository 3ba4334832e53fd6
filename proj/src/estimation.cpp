#include "ioulmm/estimation.hpp"

#include "ioulmm/optimize.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <limits>

namespace ioulmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Maps between theta and the unconstrained coordinates seen by the optimizer.
class Transform {
public:
    Transform(Index p_beta, Index p_gamma, const KernelSpec& spec, PositivityTransform kind)
        : p_beta_(p_beta), p_gamma_(p_gamma), shape_(p_beta + p_gamma), kind_(kind),
          logit_shape_(spec.kind == KernelKind::FBM) {}

    [[nodiscard]] Vector to_internal(const Vector& theta) const {
        Vector x = theta;
        if (kind_ == PositivityTransform::Raw) {
            x[shape_ + 2] = std::sqrt(theta[shape_ + 2]);
            return x;
        }
        x[shape_] = logit_shape_ ? std::log(theta[shape_] / (1.0 - theta[shape_])) : std::log(theta[shape_]);
        x[shape_ + 1] = std::log(theta[shape_ + 1]);
        x[shape_ + 2] = std::log(theta[shape_ + 2]);
        return x;
    }

    [[nodiscard]] Vector to_theta(const Vector& x) const {
        Vector theta = x;
        if (kind_ == PositivityTransform::Raw) {
            theta[shape_ + 2] = x[shape_ + 2] * x[shape_ + 2];
            return theta;
        }
        theta[shape_] = logit_shape_ ? 1.0 / (1.0 + std::exp(-x[shape_])) : std::exp(x[shape_]);
        theta[shape_ + 1] = std::exp(x[shape_ + 1]);
        theta[shape_ + 2] = std::exp(x[shape_ + 2]);
        return theta;
    }

    [[nodiscard]] ParamVector params(const Vector& x) const {
        return ParamVector::unflatten(to_theta(x), p_beta_, p_gamma_);
    }

    /// First and second derivatives of each theta coordinate in its own x coordinate.
    void jacobian(const Vector& x, Vector& d1, Vector& d2) const {
        const Vector theta = to_theta(x);
        d1 = Vector::Ones(theta.size());
        d2 = Vector::Zero(theta.size());
        if (kind_ == PositivityTransform::Raw) {
            d1[shape_ + 2] = 2.0 * x[shape_ + 2];
            d2[shape_ + 2] = 2.0;
            return;
        }
        for (Index k = shape_; k < shape_ + 3; ++k) {
            if (k == shape_ && logit_shape_) {
                const double h = theta[k];
                d1[k] = h * (1.0 - h);
                d2[k] = d1[k] * (1.0 - 2.0 * h);
            } else {
                d1[k] = d2[k] = theta[k];
            }
        }
    }

private:
    Index p_beta_;
    Index p_gamma_;
    Index shape_;
    PositivityTransform kind_;
    bool logit_shape_;
};

bool domain_ok(const Vector& theta, Index shape, bool fbm) {
    if (!theta.allFinite()) return false;
    if (fbm && !(theta[shape] > 0.0 && theta[shape] < 1.0)) return false;
    return theta[shape] > 0.0 && theta[shape + 1] > 0.0 && theta[shape + 2] > 0.0;
}

Vector nan_vector(Index n) { return Vector::Constant(n, kNaN); }

} // namespace

void check_fit_config(const FitConfig& c) {
    if (c.max_iters < 1) throw std::invalid_argument("FitConfig: max_iters must be >= 1");
    if (!(c.f_tol > 0.0)) throw std::invalid_argument("FitConfig: f_tol must be positive");
    if (!(c.x_tol > 0.0)) throw std::invalid_argument("FitConfig: x_tol must be positive");
    if (!std::isfinite(c.penalty_value)) throw std::invalid_argument("FitConfig: penalty_value must be finite");
    if (c.polish_iters < 1) throw std::invalid_argument("FitConfig: polish_iters must be >= 1");
}

ParamVector all_ones(Index p_beta, Index p_gamma) {
    ParamVector t;
    t.beta = Vector::Ones(p_beta);
    t.cov.gamma = Vector::Ones(p_gamma);
    t.cov.alpha = t.cov.tau = t.cov.sigma2 = 1.0;
    return t;
}

Vector studentized_se(const InformationBlocks& blocks, std::size_t n_subjects) {
    const double n = static_cast<double>(n_subjects);
    auto inverse_diag = [&](const Matrix& m, const char* name) {
        const Eigen::LDLT<Matrix> ldlt(m);
        const Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
        const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 1e-12 * top)) {
            throw SingularInformation(name);
        }
        return Vector(ldlt.solve(Matrix::Identity(m.rows(), m.cols())).diagonal());
    };
    const Vector da = inverse_diag(blocks.a_hat, "A_N");
    const Vector du = inverse_diag(blocks.u_hat, "U_N");
    Vector se(da.size() + du.size());
    se << da, du;
    return (se / n).cwiseSqrt();
}

Vector studentized_se(const Dataset& dataset, const FitResult& result, const KernelSpec& spec) {
    if (!result.converged) throw std::invalid_argument("studentized_se: fit did not converge");
    const LikelihoodEvaluator eval(dataset, spec);
    return studentized_se(eval.information_blocks(result.theta_hat), dataset.n_subjects());
}

Vector studentize(const InformationBlocks& blocks, const Vector& theta_hat, const Vector& theta0,
                  std::size_t n_subjects) {
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(blocks.block_diagonal());
    return eig.operatorSqrt() * (std::sqrt(static_cast<double>(n_subjects)) * (theta_hat - theta0));
}

Estimate sigma_estimate(const FitResult& r) {
    const double s = std::sqrt(r.theta_hat.cov.sigma2);
    const double se2 = r.se.size() ? r.se[r.se.size() - 1] : kNaN;
    return {s, se2 / (2.0 * s)};
}

Estimate omega_estimate(const FitResult& r, std::size_t n_subjects) {
    const double a = r.theta_hat.cov.alpha;
    const double t = r.theta_hat.cov.tau;
    Estimate out{t * t / (a * a), kNaN};
    if (r.u_hat.size() == 0) return out;
    const Index ia = r.theta_hat.cov.gamma.size();
    const Matrix cov = r.u_hat.ldlt().solve(Matrix::Identity(r.u_hat.rows(), r.u_hat.cols())) /
                       static_cast<double>(n_subjects);
    Eigen::Vector2d grad(-2.0 * t * t / (a * a * a), 2.0 * t / (a * a));
    const Eigen::Matrix2d block = cov.block(ia, ia, 2, 2);
    out.se = std::sqrt(grad.dot(block * grad));
    return out;
}

FitResult fit(const Dataset& dataset, const KernelSpec& spec, const FitConfig& config) {
    check_fit_config(config);
    const auto start = std::chrono::steady_clock::now();
    if (const auto v = validate(dataset); !v.empty()) {
        throw DataError("subject '" + v.front().subject_id + "': " + v.front().message);
    }

    const Index p_beta = dataset.p_beta;
    const Index p_gamma = gamma_size(spec.g_param, dataset.p_b);
    const Index shape = p_beta + p_gamma;
    const bool fbm = spec.kind == KernelKind::FBM;
    ParamVector init = config.initial.value_or(all_ones(p_beta, p_gamma));
    if (!config.initial && fbm) init.cov.alpha = 0.5;
    if (init.beta.size() != p_beta || init.cov.gamma.size() != p_gamma) {
        throw std::invalid_argument("fit: initial point has the wrong dimension");
    }
    if (!domain_ok(init.flatten(), shape, fbm) || !cov_params_feasible(init.cov, spec)) {
        throw std::invalid_argument("fit: infeasible initial point");
    }

    const LikelihoodEvaluator eval(dataset, spec, config.likelihood);
    const double n = static_cast<double>(dataset.n_subjects());
    const Transform tf(p_beta, p_gamma, spec, config.positivity_transform);
    const Index p = init.size();

    FitResult out;
    out.theta_hat = init;
    out.se = nan_vector(p);
    auto finish = [&](FitResult& r) {
        r.wall_time_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return r;
    };

    // The initial point must have a defined likelihood; CholeskyFailure propagates.
    out.loglik_at_max = eval.log_likelihood(init);
    if (static_cast<Index>(dataset.total_observations()) < p) {
        out.reason = "under-identified";
        return finish(out);
    }

    auto loglik_at = [&](const Vector& x) -> std::optional<double> {
        const Vector theta = tf.to_theta(x);
        if (!domain_ok(theta, shape, fbm)) return std::nullopt;
        try {
            const double l = eval.log_likelihood(ParamVector::unflatten(theta, p_beta, p_gamma));
            if (!std::isfinite(l)) return std::nullopt;
            return l;
        } catch (const CholeskyFailure&) {
            return std::nullopt;
        } catch (const std::invalid_argument&) {
            return std::nullopt;
        } catch (const std::domain_error&) {
            return std::nullopt;
        }
    };

    Vector x = tf.to_internal(init.flatten());
    bool converged = false;
    std::string reason;

    if (config.optimizer != Optimizer::NewtonTrustRegion) {
        NelderMeadOptions nm;
        nm.max_evaluations = config.max_iters;
        nm.f_tol = config.f_tol;
        nm.x_tol = config.x_tol;
        nm.penalty = -config.penalty_value;
        const OptimResult r = nelder_mead(
            [&](const Vector& z) {
                const auto l = loglik_at(z);
                return l ? -*l : -config.penalty_value;
            },
            x, nm);
        x = r.x;
        converged = r.converged;
        reason = r.reason;
        out.iterations += r.iterations;
        out.evaluations += r.evaluations;
    }

    if (config.optimizer != Optimizer::NelderMead) {
        const ValueFn value = [&](const Vector& z) -> std::optional<double> {
            const auto l = loglik_at(z);
            if (!l) return std::nullopt;
            return -*l / n;
        };
        const ModelFn model = [&](const Vector& z) -> std::optional<QuadraticModel> {
            const Vector theta = tf.to_theta(z);
            if (!domain_ok(theta, shape, fbm)) return std::nullopt;
            LikelihoodTerms t;
            try {
                t = eval.evaluate(ParamVector::unflatten(theta, p_beta, p_gamma), 2);
            } catch (const CholeskyFailure&) {
                return std::nullopt;
            } catch (const std::invalid_argument&) {
                return std::nullopt;
            }
            Vector d1, d2;
            tf.jacobian(z, d1, d2);
            QuadraticModel m;
            m.f = -t.loglik / n;
            m.g = -(d1.cwiseProduct(t.score)) / n;
            m.h = -(d1.asDiagonal() * t.hessian * d1.asDiagonal()) / n;
            m.h.diagonal() -= d2.cwiseProduct(t.score) / n;
            return m;
        };
        const ConvergedFn done = [&](const Vector& z, const QuadraticModel& m) {
            Vector d1, d2;
            tf.jacobian(z, d1, d2);
            const double score_norm = (n * m.g.cwiseQuotient(d1)).norm();
            return score_norm <= 1e-4 * (1.0 + n * std::abs(m.f)) / std::sqrt(n);
        };
        TrustRegionOptions tr;
        tr.max_iterations = config.optimizer == Optimizer::Hybrid ? config.polish_iters : config.max_iters;
        const OptimResult r = trust_region_newton(value, model, done, x, tr);
        x = r.x;
        out.iterations += r.iterations;
        out.evaluations += r.evaluations;
        if (config.optimizer == Optimizer::Hybrid) {
            converged = converged || r.converged;
            if (r.converged) reason = r.reason;
        } else {
            converged = r.converged;
            reason = r.reason;
        }
    }

    out.theta_hat = tf.params(x);
    out.loglik_at_max = eval.log_likelihood(out.theta_hat);
    out.converged = converged;
    out.reason = reason;
    try {
        const InformationBlocks blocks = eval.information_blocks(out.theta_hat);
        out.a_hat = blocks.a_hat;
        out.u_hat = blocks.u_hat;
        out.se = studentized_se(blocks, dataset.n_subjects());
    } catch (const SingularInformation& e) {
        out.converged = false;
        out.reason = e.what();
    }
    return finish(out);
}

Matrix profile_surface(const Dataset& dataset, const KernelSpec& spec, const ParamVector& fixed,
                       const Vector& grid_alpha, const Vector& grid_tau, LikelihoodOptions options) {
    auto check_grid = [](const Vector& g, const char* name) {
        if (g.size() == 0) throw std::invalid_argument(std::string("profile_surface: empty grid ") + name);
        if (!g.allFinite()) throw std::invalid_argument(std::string("profile_surface: non-finite grid ") + name);
        for (Index i = 1; i < g.size(); ++i) {
            if (!(g[i] > g[i - 1])) {
                throw std::invalid_argument(std::string("profile_surface: grid ") + name +
                                            " not strictly increasing");
            }
        }
    };
    check_grid(grid_alpha, "alpha");
    check_grid(grid_tau, "tau");
    const LikelihoodEvaluator eval(dataset, spec, options);
    Matrix out(grid_alpha.size(), grid_tau.size());
    ParamVector theta = fixed;
    for (Index i = 0; i < grid_alpha.size(); ++i) {
        for (Index j = 0; j < grid_tau.size(); ++j) {
            theta.cov.alpha = grid_alpha[i];
            theta.cov.tau = grid_tau[j];
            try {
                out(i, j) = eval.log_likelihood(theta);
            } catch (const CholeskyFailure&) {
                out(i, j) = kNaN;
            } catch (const std::invalid_argument&) {
                out(i, j) = kNaN;
            } catch (const std::domain_error&) {
                out(i, j) = kNaN;
            }
        }
    }
    return out;
}

} // namespace ioulmm
