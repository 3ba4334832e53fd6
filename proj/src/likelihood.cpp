#include "ioulmm/likelihood.hpp"

#include "ioulmm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace ioulmm {

Vector ParamVector::flatten() const {
    Vector out(size());
    const Index pb = beta.size();
    const Index pg = cov.gamma.size();
    out.head(pb) = beta;
    out.segment(pb, pg) = cov.gamma;
    out[pb + pg] = cov.alpha;
    out[pb + pg + 1] = cov.tau;
    out[pb + pg + 2] = cov.sigma2;
    return out;
}

ParamVector ParamVector::unflatten(const Eigen::Ref<const Vector>& flat, Index p_beta,
                                   Index p_gamma) {
    if (flat.size() != p_beta + p_gamma + 3) {
        throw std::invalid_argument("ParamVector::unflatten: length mismatch");
    }
    ParamVector out;
    out.beta = flat.head(p_beta);
    out.cov.gamma = flat.segment(p_beta, p_gamma);
    out.cov.alpha = flat[p_beta + p_gamma];
    out.cov.tau = flat[p_beta + p_gamma + 1];
    out.cov.sigma2 = flat[p_beta + p_gamma + 2];
    return out;
}

std::vector<std::string> parameter_names(Index p_beta, Index p_gamma, KernelKind kind) {
    std::vector<std::string> names;
    for (Index k = 0; k < p_beta; ++k) names.push_back("beta" + std::to_string(k + 1));
    for (Index k = 0; k < p_gamma; ++k) names.push_back("gamma" + std::to_string(k + 1));
    names.emplace_back(kind == KernelKind::IOU ? "alpha" : "hurst");
    names.emplace_back("tau");
    names.emplace_back("sigma2");
    return names;
}

Matrix InformationBlocks::block_diagonal() const {
    const Index pa = a_hat.rows();
    const Index pu = u_hat.rows();
    Matrix out = Matrix::Zero(pa + pu, pa + pu);
    out.topLeftCorner(pa, pa) = a_hat;
    out.bottomRightCorner(pu, pu) = u_hat;
    return out;
}

Matrix LikelihoodWorkspace::factor(std::size_t subject) const {
    return groups_.at(group_of_.at(subject)).llt.matrixL();
}

LikelihoodEvaluator::LikelihoodEvaluator(const Dataset& dataset, KernelSpec spec,
                                         LikelihoodOptions options)
    : dataset_(&dataset), spec_(spec), options_(options) {
    // Group subjects with identical times and Z: they share Q_i.
    std::map<std::vector<double>, std::size_t> key_to_group;
    group_of_.resize(dataset.subjects.size());
    for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
        const auto& s = dataset.subjects[i];
        std::vector<double> key(s.times.data(), s.times.data() + s.times.size());
        key.push_back(static_cast<double>(s.z.cols()));
        key.insert(key.end(), s.z.data(), s.z.data() + s.z.size());
        auto [it, inserted] = key_to_group.try_emplace(std::move(key), group_members_.size());
        if (inserted) group_members_.emplace_back();
        group_members_[it->second].push_back(i);
        group_of_[i] = it->second;
    }

    // A kernel table over distinct observation times pays off when the
    // grid is smaller than the per-group kernel evaluations it replaces.
    std::vector<double> all;
    double per_group_cost = 0.0;
    for (const auto& members : group_members_) {
        const auto& s = dataset.subjects[members.front()];
        all.insert(all.end(), s.times.data(), s.times.data() + s.times.size());
        per_group_cost += static_cast<double>(s.size()) * static_cast<double>(s.size());
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    const double table_cost = static_cast<double>(all.size()) * static_cast<double>(all.size());
    use_table_ = table_cost < per_group_cost;
    if (use_table_) {
        grid_ = Eigen::Map<const Vector>(all.data(), static_cast<Index>(all.size()));
        group_grid_index_.reserve(group_members_.size());
        for (const auto& members : group_members_) {
            const auto& s = dataset.subjects[members.front()];
            std::vector<Index> idx(static_cast<std::size_t>(s.size()));
            for (Index j = 0; j < s.size(); ++j) {
                idx[static_cast<std::size_t>(j)] =
                    std::lower_bound(all.begin(), all.end(), s.times[j]) - all.begin();
            }
            group_grid_index_.push_back(std::move(idx));
        }
    }
}

void LikelihoodEvaluator::check_dimensions(const ParamVector& theta) const {
    if (theta.beta.size() != dataset_->p_beta) {
        throw std::invalid_argument("beta length " + std::to_string(theta.beta.size()) +
                                    " does not match p_beta " + std::to_string(dataset_->p_beta));
    }
    if (random_effect_dim(spec_.g_param, theta.cov.gamma.size()) != dataset_->p_b) {
        throw std::invalid_argument("gamma length does not match p_b");
    }
    check_cov_params(theta.cov, spec_);
    if (!theta.beta.allFinite()) throw std::invalid_argument("beta has non-finite entries");
}

LikelihoodWorkspace LikelihoodEvaluator::prepare(const ParamVector& theta, int order) const {
    check_dimensions(theta);
    const auto& v = theta.cov;
    LikelihoodWorkspace ws;
    ws.theta_ = theta;
    ws.order_ = order;
    ws.group_of_ = group_of_;
    ws.groups_.resize(group_members_.size());

    KernelMatrices table;
    if (use_table_) table = kernel_matrices(spec_, v.alpha, v.tau, grid_, order);

    const Index pv = cov_size(v);
    parallel_for(group_members_.size(), options_.threads, [&](std::size_t g) {
        const auto& s = dataset_->subjects[group_members_[g].front()];
        const KernelMatrices h = use_table_ ? gather(table, group_grid_index_[g])
                                            : kernel_matrices(spec_, v.alpha, v.tau, s.times, order);
        auto& grp = ws.groups_[g];
        grp.blocks = covariance_blocks(h, s.z, v, spec_, order);
        grp.llt.compute(grp.blocks.q);
        const auto& diag = grp.llt.matrixLLT().diagonal();
        if (grp.llt.info() != Eigen::Success || !diag.allFinite() || (diag.array() <= 0.0).any()) {
            throw CholeskyFailure(s.id);
        }
        grp.logdet = 2.0 * diag.array().log().sum();
        if (order < 1) return;

        const Index n = s.size();
        grp.q_inv = grp.llt.solve(Matrix::Identity(n, n));
        grp.q_inv_dq.resize(static_cast<std::size_t>(pv));
        grp.trace_first.resize(pv);
        for (Index j = 0; j < pv; ++j) {
            grp.q_inv_dq[static_cast<std::size_t>(j)] = grp.q_inv * grp.blocks.first[static_cast<std::size_t>(j)];
            grp.trace_first[j] = grp.q_inv_dq[static_cast<std::size_t>(j)].trace();
        }
        grp.half_trace_pair.resize(pv, pv);
        for (Index j = 0; j < pv; ++j) {
            for (Index k = 0; k <= j; ++k) {
                const double t = 0.5 * (grp.q_inv_dq[static_cast<std::size_t>(j)].array() *
                                        grp.q_inv_dq[static_cast<std::size_t>(k)].transpose().array())
                                           .sum();
                grp.half_trace_pair(j, k) = grp.half_trace_pair(k, j) = t;
            }
        }
        if (order < 2) return;
        grp.trace_second.clear();
        for (const auto& d : grp.blocks.second) {
            grp.trace_second.push_back((grp.q_inv.array() * d.value.array()).sum());
        }
    });

    const std::size_t n_subjects = dataset_->subjects.size();
    ws.residual_.resize(n_subjects);
    ws.solved_.resize(n_subjects);
    parallel_for(n_subjects, options_.threads, [&](std::size_t i) {
        const auto& s = dataset_->subjects[i];
        ws.residual_[i] = s.y - s.x * theta.beta;
        ws.solved_[i] = ws.groups_[group_of_[i]].llt.solve(ws.residual_[i]);
    });
    return ws;
}

namespace {

struct SubjectTerms {
    double loglik = 0.0;
    Vector score;
    Matrix a;
    Matrix u;
    Matrix hessian;

    SubjectTerms& operator+=(const SubjectTerms& o) {
        loglik += o.loglik;
        if (o.score.size() > 0) {
            score += o.score;
            a += o.a;
            u += o.u;
        }
        if (o.hessian.size() > 0) hessian += o.hessian;
        return *this;
    }
};

} // namespace

LikelihoodTerms LikelihoodEvaluator::evaluate(const LikelihoodWorkspace& ws, int order) const {
    if (order > ws.order_) throw std::invalid_argument("workspace prepared at a lower order");
    const auto& theta = ws.theta_;
    const Index pb = theta.beta.size();
    const Index pv = cov_size(theta.cov);
    const Index p = pb + pv;
    const std::size_t n_subjects = dataset_->subjects.size();
    const double log2pi = std::log(2.0 * std::numbers::pi);

    std::vector<SubjectTerms> terms(n_subjects);
    parallel_for(n_subjects, options_.threads, [&](std::size_t i) {
        const auto& s = dataset_->subjects[i];
        const auto& grp = ws.groups_[group_of_[i]];
        const Vector& r = ws.residual_[i];
        const Vector& a = ws.solved_[i];
        SubjectTerms& out = terms[i];
        out.loglik = -0.5 * (static_cast<double>(s.size()) * log2pi + grp.logdet + r.dot(a));
        if (order < 1) return;

        const Matrix qinv_x = grp.llt.solve(s.x);
        out.a = s.x.transpose() * qinv_x;
        out.u = grp.half_trace_pair;
        out.score.resize(p);
        out.score.head(pb) = s.x.transpose() * a;
        Matrix dq_a(s.size(), pv);
        for (Index j = 0; j < pv; ++j) {
            dq_a.col(j) = grp.blocks.first[static_cast<std::size_t>(j)] * a;
            out.score[pb + j] = 0.5 * (a.dot(dq_a.col(j)) - grp.trace_first[j]);
        }
        if (order < 2) return;

        out.hessian.resize(p, p);
        out.hessian.topLeftCorner(pb, pb) = -out.a;
        // d/dv_k (X^T Q^{-1} r) = -X^T Q^{-1} dQ_k Q^{-1} r
        const Matrix cross = -qinv_x.transpose() * dq_a;
        out.hessian.topRightCorner(pb, pv) = cross;
        out.hessian.bottomLeftCorner(pv, pb) = cross.transpose();
        const Matrix qinv_dq_a = grp.q_inv * dq_a;
        Matrix vv = -dq_a.transpose() * qinv_dq_a + grp.half_trace_pair;
        for (std::size_t m = 0; m < grp.blocks.second.size(); ++m) {
            const auto& d = grp.blocks.second[m];
            const double val = 0.5 * (a.dot(d.value * a) - grp.trace_second[m]);
            vv(d.j, d.k) += val;
            if (d.j != d.k) vv(d.k, d.j) += val;
        }
        out.hessian.bottomRightCorner(pv, pv) = 0.5 * (vv + vv.transpose());
    });

    SubjectTerms total = pairwise_sum<SubjectTerms>(0, n_subjects, [&](std::size_t i) -> const SubjectTerms& {
        return terms[i];
    });
    LikelihoodTerms out;
    out.loglik = total.loglik;
    out.score = std::move(total.score);
    out.a_sum = std::move(total.a);
    out.u_sum = std::move(total.u);
    out.hessian = std::move(total.hessian);
    return out;
}

LikelihoodTerms LikelihoodEvaluator::evaluate(const ParamVector& theta, int order) const {
    return evaluate(prepare(theta, order), order);
}

double LikelihoodEvaluator::log_likelihood(const ParamVector& theta) const {
    return evaluate(theta, 0).loglik;
}

Vector LikelihoodEvaluator::score(const ParamVector& theta) const {
    return evaluate(theta, 1).score;
}

Matrix LikelihoodEvaluator::observed_information(const ParamVector& theta) const {
    const double n = static_cast<double>(dataset_->subjects.size());
    return -evaluate(theta, 2).hessian / n;
}

InformationBlocks LikelihoodEvaluator::information_blocks(const ParamVector& theta) const {
    const double n = static_cast<double>(dataset_->subjects.size());
    auto terms = evaluate(theta, 1);
    return {terms.a_sum / n, terms.u_sum / n};
}

double log_likelihood(const Dataset& dataset, const ParamVector& theta, const KernelSpec& spec) {
    return LikelihoodEvaluator(dataset, spec).log_likelihood(theta);
}

Vector score(const Dataset& dataset, const ParamVector& theta, const KernelSpec& spec) {
    return LikelihoodEvaluator(dataset, spec).score(theta);
}

Matrix observed_information(const Dataset& dataset, const ParamVector& theta,
                            const KernelSpec& spec) {
    return LikelihoodEvaluator(dataset, spec).observed_information(theta);
}

Vector normalized_score(const Dataset& dataset, const ParamVector& theta, const KernelSpec& spec) {
    return score(dataset, theta, spec) / std::sqrt(static_cast<double>(dataset.subjects.size()));
}

} // namespace ioulmm
