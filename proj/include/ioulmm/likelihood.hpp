#pragma once

#include "ioulmm/covariance.hpp"
#include "ioulmm/data_model.hpp"
#include "ioulmm/types.hpp"

#include <Eigen/Cholesky>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ioulmm {

/// Full parameter theta = (beta, gamma, alpha, tau, sigma2), flattened in that order.
struct ParamVector {
    Vector beta;
    CovParams cov;

    [[nodiscard]] Index size() const { return beta.size() + cov.gamma.size() + 3; }
    [[nodiscard]] Vector flatten() const;
    [[nodiscard]] static ParamVector unflatten(const Eigen::Ref<const Vector>& flat, Index p_beta,
                                               Index p_gamma);
};

/// beta1.., gamma1.., alpha|hurst, tau, sigma2
[[nodiscard]] std::vector<std::string> parameter_names(Index p_beta, Index p_gamma, KernelKind kind);

/// Raised when some Q_i(v) is not numerically positive definite, i.e. the
/// parameter lies outside the region where the likelihood is defined.
class CholeskyFailure : public std::runtime_error {
public:
    explicit CholeskyFailure(std::string subject_id)
        : std::runtime_error("Q_i not positive definite for subject '" + subject_id + "'"),
          subject_id_(std::move(subject_id)) {}
    [[nodiscard]] const std::string& subject_id() const { return subject_id_; }

private:
    std::string subject_id_;
};

struct LikelihoodOptions {
    std::size_t threads = 1;
};

/// Factorizations and solved vectors at one parameter value. Subjects whose
/// times and Z rows coincide share one covariance group.
class LikelihoodWorkspace {
public:
    [[nodiscard]] int order() const { return order_; }
    [[nodiscard]] const ParamVector& theta() const { return theta_; }
    [[nodiscard]] Matrix factor(std::size_t subject) const;
    [[nodiscard]] const Vector& residual(std::size_t subject) const { return residual_[subject]; }
    [[nodiscard]] const Vector& solved(std::size_t subject) const { return solved_[subject]; }

private:
    friend class LikelihoodEvaluator;

    struct Group {
        Eigen::LLT<Matrix> llt;
        CovarianceBlocks blocks;
        double logdet = 0.0;
        Matrix q_inv;               // order >= 1
        std::vector<Matrix> q_inv_dq; // Q^{-1} dQ_j
        Vector trace_first;         // tr(Q^{-1} dQ_j)
        Matrix half_trace_pair;     // 1/2 tr(Q^{-1} dQ_j Q^{-1} dQ_k)
        std::vector<double> trace_second; // tr(Q^{-1} d2Q_jk), aligned with blocks.second
    };

    ParamVector theta_;
    int order_ = 0;
    std::vector<Group> groups_;
    std::vector<std::size_t> group_of_;
    std::vector<Vector> residual_;
    std::vector<Vector> solved_;
};

/// Sums over subjects of the log-likelihood and its derivatives (unnormalized).
struct LikelihoodTerms {
    double loglik = 0.0;
    Vector score;       // order >= 1
    Matrix a_sum;       // order >= 1: sum X^T Q^{-1} X
    Matrix u_sum;       // order >= 1: sum 1/2 tr(Q^{-1} dQ_j Q^{-1} dQ_k)
    Matrix hessian;     // order >= 2: second derivative of the log-likelihood
};

/// Normalized expected-information blocks A_N = (1/N) sum X^T Q^{-1} X and
/// U_N = (1/N) sum 1/2 tr(Q^{-1} dQ_j Q^{-1} dQ_k).
struct InformationBlocks {
    Matrix a_hat;
    Matrix u_hat;

    [[nodiscard]] Matrix block_diagonal() const;
};

class LikelihoodEvaluator {
public:
    LikelihoodEvaluator(const Dataset& dataset, KernelSpec spec, LikelihoodOptions options = {});

    [[nodiscard]] const Dataset& dataset() const { return *dataset_; }
    [[nodiscard]] const KernelSpec& spec() const { return spec_; }
    [[nodiscard]] std::size_t n_groups() const { return group_members_.size(); }
    [[nodiscard]] bool uses_time_table() const { return use_table_; }

    /// Throws CholeskyFailure, or std::invalid_argument on infeasible/ill-sized theta.
    [[nodiscard]] LikelihoodWorkspace prepare(const ParamVector& theta, int order) const;
    [[nodiscard]] LikelihoodTerms evaluate(const LikelihoodWorkspace& ws, int order) const;
    [[nodiscard]] LikelihoodTerms evaluate(const ParamVector& theta, int order) const;

    [[nodiscard]] double log_likelihood(const ParamVector& theta) const;
    [[nodiscard]] Vector score(const ParamVector& theta) const;
    /// -(1/N) times the Hessian of the log-likelihood.
    [[nodiscard]] Matrix observed_information(const ParamVector& theta) const;
    [[nodiscard]] InformationBlocks information_blocks(const ParamVector& theta) const;

private:
    void check_dimensions(const ParamVector& theta) const;

    const Dataset* dataset_;
    KernelSpec spec_;
    LikelihoodOptions options_;
    std::vector<std::vector<std::size_t>> group_members_;
    std::vector<std::size_t> group_of_;
    bool use_table_ = false;
    Vector grid_;
    std::vector<std::vector<Index>> group_grid_index_;
};

[[nodiscard]] double log_likelihood(const Dataset& dataset, const ParamVector& theta,
                                    const KernelSpec& spec);
[[nodiscard]] Vector score(const Dataset& dataset, const ParamVector& theta, const KernelSpec& spec);
[[nodiscard]] Matrix observed_information(const Dataset& dataset, const ParamVector& theta,
                                          const KernelSpec& spec);
/// Delta_N(theta) = score / sqrt(N).
[[nodiscard]] Vector normalized_score(const Dataset& dataset, const ParamVector& theta,
                                      const KernelSpec& spec);

} // namespace ioulmm
