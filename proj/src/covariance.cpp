#include "ioulmm/covariance.hpp"

#include <cmath>
#include <string>

namespace ioulmm {

Index gamma_size(GParam g, Index p_b) {
    if (g == GParam::PaperBivariate) {
        if (p_b != 2) throw std::invalid_argument("PaperBivariate G requires p_b = 2");
        return 3;
    }
    return p_b * (p_b + 1) / 2;
}

Index random_effect_dim(GParam g, Index p_gamma) {
    if (g == GParam::PaperBivariate) {
        if (p_gamma != 3) throw std::invalid_argument("PaperBivariate G requires p_gamma = 3");
        return 2;
    }
    for (Index p = 0; p * (p + 1) / 2 <= p_gamma; ++p) {
        if (p * (p + 1) / 2 == p_gamma) return p;
    }
    throw std::invalid_argument("CholeskyFactor G: gamma length " + std::to_string(p_gamma) +
                                " is not a triangular number");
}

void check_cov_params(const CovParams& v, const KernelSpec& spec) {
    if (!v.gamma.allFinite()) throw std::invalid_argument("gamma has non-finite entries");
    (void)random_effect_dim(spec.g_param, v.gamma.size());
    if (!std::isfinite(v.alpha) || !std::isfinite(v.tau) || !std::isfinite(v.sigma2)) {
        throw std::invalid_argument("non-finite covariance parameter");
    }
    if (spec.kind == KernelKind::IOU) {
        if (!(v.alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    } else if (!(v.alpha > 0.0 && v.alpha < 1.0)) {
        throw std::invalid_argument("hurst must lie in (0, 1)");
    }
    if (!(v.tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (!(v.sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
}

bool cov_params_feasible(const CovParams& v, const KernelSpec& spec) noexcept {
    try {
        check_cov_params(v, spec);
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

namespace {

struct Terms {
    double value;
    double d1;
    double d2;
};

Terms kernel_terms(const KernelSpec& spec, double shape, double tau, double s, double t, int order) {
    Terms out{0.0, 0.0, 0.0};
    if (spec.kind == KernelKind::IOU) {
        detail::require_finite(shape, tau, s, t, "iou_kernel");
        if (!(shape > 0.0)) throw std::domain_error("iou_kernel: alpha must be positive");
        double g, g1, g2;
        detail::iou_shape(shape, s, t, g, g1, g2);
        const double half_tau2 = 0.5 * tau * tau;
        out = {half_tau2 * g, half_tau2 * g1, half_tau2 * g2};
    } else {
        out.value = fbm_kernel(shape, tau, s, t);
        if (order >= 1) out.d1 = fbm_kernel_dhurst(shape, tau, s, t);
        if (order >= 2) out.d2 = fbm_kernel_dhurst2(shape, tau, s, t);
    }
    if (order >= 2 && spec.second_derivatives == SecondDerivativeMode::FiniteDifference) {
        const double h = 1e-5 * std::max(1.0, std::abs(shape));
        auto d1_at = [&](double a) {
            return spec.kind == KernelKind::IOU ? iou_kernel_dalpha(a, tau, s, t)
                                                : fbm_kernel_dhurst(a, tau, s, t);
        };
        out.d2 = (d1_at(shape + h) - d1_at(shape - h)) / (2.0 * h);
    }
    return out;
}

} // namespace

KernelMatrices kernel_matrices(const KernelSpec& spec, double shape, double tau, const Vector& times,
                               int order) {
    const Index n = times.size();
    KernelMatrices out;
    out.value.resize(n, n);
    if (order >= 1) out.d_shape.resize(n, n);
    if (order >= 2) out.d_shape2.resize(n, n);
    for (Index j = 0; j < n; ++j) {
        for (Index k = 0; k <= j; ++k) {
            const Terms t = kernel_terms(spec, shape, tau, times[j], times[k], order);
            out.value(j, k) = out.value(k, j) = t.value;
            if (order >= 1) out.d_shape(j, k) = out.d_shape(k, j) = t.d1;
            if (order >= 2) out.d_shape2(j, k) = out.d_shape2(k, j) = t.d2;
        }
    }
    return out;
}

KernelMatrices gather(const KernelMatrices& table, const std::vector<Index>& idx) {
    KernelMatrices out;
    out.value = table.value(idx, idx);
    if (table.d_shape.size() > 0) out.d_shape = table.d_shape(idx, idx);
    if (table.d_shape2.size() > 0) out.d_shape2 = table.d_shape2(idx, idx);
    return out;
}

namespace {

// Lower-triangular factor filled column-major from gamma, and the (row, col)
// position of each gamma entry.
std::pair<Index, Index> cholesky_position(Index p_b, Index k) {
    Index col = 0;
    while (k >= p_b - col) {
        k -= p_b - col;
        ++col;
    }
    return {col + k, col};
}

Matrix cholesky_factor(const Vector& gamma, Index p_b) {
    Matrix l = Matrix::Zero(p_b, p_b);
    for (Index k = 0; k < gamma.size(); ++k) {
        const auto [r, c] = cholesky_position(p_b, k);
        l(r, c) = gamma[k];
    }
    return l;
}

Matrix unit(Index p_b, Index r, Index c) {
    Matrix e = Matrix::Zero(p_b, p_b);
    e(r, c) = 1.0;
    return e;
}

} // namespace

Matrix g_matrix(const Vector& gamma, GParam g) {
    const Index p_b = random_effect_dim(g, gamma.size());
    if (g == GParam::PaperBivariate) {
        Matrix out(2, 2);
        out << gamma[0] * gamma[0], gamma[1], gamma[1], gamma[2] * gamma[2];
        return out;
    }
    const Matrix l = cholesky_factor(gamma, p_b);
    return l * l.transpose();
}

Matrix g_matrix_dgamma(const Vector& gamma, GParam g, Index k) {
    const Index p_b = random_effect_dim(g, gamma.size());
    if (k < 0 || k >= gamma.size()) throw std::out_of_range("g_matrix_dgamma: component index");
    if (g == GParam::PaperBivariate) {
        Matrix out = Matrix::Zero(2, 2);
        if (k == 0) out(0, 0) = 2.0 * gamma[0];
        if (k == 1) out(0, 1) = out(1, 0) = 1.0;
        if (k == 2) out(1, 1) = 2.0 * gamma[2];
        return out;
    }
    const Matrix l = cholesky_factor(gamma, p_b);
    const auto [r, c] = cholesky_position(p_b, k);
    const Matrix e = unit(p_b, r, c);
    return e * l.transpose() + l * e.transpose();
}

Matrix g_matrix_d2gamma(const Vector& gamma, GParam g, Index j, Index k) {
    const Index p_b = random_effect_dim(g, gamma.size());
    if (j < 0 || k < 0 || j >= gamma.size() || k >= gamma.size()) {
        throw std::out_of_range("g_matrix_d2gamma: component index");
    }
    Matrix out = Matrix::Zero(p_b, p_b);
    if (g == GParam::PaperBivariate) {
        if (j == k && j == 0) out(0, 0) = 2.0;
        if (j == k && j == 2) out(1, 1) = 2.0;
        return out;
    }
    const auto [rj, cj] = cholesky_position(p_b, j);
    const auto [rk, ck] = cholesky_position(p_b, k);
    const Matrix ej = unit(p_b, rj, cj);
    const Matrix ek = unit(p_b, rk, ck);
    return ej * ek.transpose() + ek * ej.transpose();
}

bool g_second_derivative_nonzero(GParam g, Index p_b, Index j, Index k) {
    if (g == GParam::PaperBivariate) return j == k && (j == 0 || j == 2);
    // E_j E_k^T is nonzero iff both entries share a column.
    return cholesky_position(p_b, j).second == cholesky_position(p_b, k).second;
}

CovarianceBlocks covariance_blocks(const KernelMatrices& h, const Matrix& z, const CovParams& v,
                                   const KernelSpec& spec, int order) {
    const Index n = h.value.rows();
    const Index pg = v.gamma.size();
    const Index p_b = z.cols();
    if (random_effect_dim(spec.g_param, pg) != p_b) {
        throw std::invalid_argument("gamma length does not match the number of random effects");
    }
    CovarianceBlocks out;
    out.q = z * g_matrix(v.gamma, spec.g_param) * z.transpose() + h.value;
    out.q.diagonal().array() += v.sigma2;
    if (order < 1) return out;

    const double inv_tau = 1.0 / v.tau;
    out.first.reserve(static_cast<std::size_t>(pg + 3));
    for (Index k = 0; k < pg; ++k) {
        out.first.push_back(z * g_matrix_dgamma(v.gamma, spec.g_param, k) * z.transpose());
    }
    out.first.push_back(h.d_shape);
    out.first.push_back(2.0 * inv_tau * h.value);
    out.first.push_back(Matrix::Identity(n, n));
    if (order < 2) return out;

    for (Index j = 0; j < pg; ++j) {
        for (Index k = j; k < pg; ++k) {
            if (!g_second_derivative_nonzero(spec.g_param, p_b, j, k)) continue;
            out.second.push_back(
                {j, k, z * g_matrix_d2gamma(v.gamma, spec.g_param, j, k) * z.transpose()});
        }
    }
    const Index ia = pg;
    const Index it = pg + 1;
    out.second.push_back({ia, ia, h.d_shape2});
    out.second.push_back({ia, it, 2.0 * inv_tau * h.d_shape});
    out.second.push_back({it, it, 2.0 * inv_tau * inv_tau * h.value});
    return out;
}

CovarianceBlocks covariance_blocks(const Subject& subject, const CovParams& v,
                                   const KernelSpec& spec, int order) {
    const KernelMatrices h = kernel_matrices(spec, v.alpha, v.tau, subject.times, order);
    return covariance_blocks(h, subject.z, v, spec, order);
}

Matrix assemble_q(const Subject& subject, const CovParams& v, const KernelSpec& spec) {
    return covariance_blocks(subject, v, spec, 0).q;
}

Matrix assemble_q_dv(const Subject& subject, const CovParams& v, const KernelSpec& spec,
                     Index component) {
    if (component < 0 || component >= cov_size(v)) {
        throw std::out_of_range("assemble_q_dv: component index");
    }
    auto blocks = covariance_blocks(subject, v, spec, 1);
    return std::move(blocks.first[static_cast<std::size_t>(component)]);
}

Matrix assemble_q_dv2(const Subject& subject, const CovParams& v, const KernelSpec& spec, Index j,
                      Index k) {
    if (j < 0 || k < 0 || j >= cov_size(v) || k >= cov_size(v)) {
        throw std::out_of_range("assemble_q_dv2: component index");
    }
    if (j > k) std::swap(j, k);
    const auto blocks = covariance_blocks(subject, v, spec, 2);
    for (const auto& d : blocks.second) {
        if (d.j == j && d.k == k) return d.value;
    }
    return Matrix::Zero(subject.size(), subject.size());
}

} // namespace ioulmm
