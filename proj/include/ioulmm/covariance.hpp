#pragma once

#include "ioulmm/data_model.hpp"
#include "ioulmm/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ioulmm {

enum class KernelKind { IOU, FBM };

/// Random-effects covariance parameterization.
///  PaperBivariate: G = [[g1^2, g2], [g2, g3^2]] (p_b = 2, three parameters, not PSD for all g).
///  CholeskyFactor: G = L L^T with L lower-triangular, filled column-major from gamma.
enum class GParam { PaperBivariate, CholeskyFactor };

enum class SecondDerivativeMode { Analytic, FiniteDifference };

struct KernelSpec {
    KernelKind kind = KernelKind::IOU;
    GParam g_param = GParam::PaperBivariate;
    SecondDerivativeMode second_derivatives = SecondDerivativeMode::Analytic;
};

/// Covariance parameters v = (gamma, alpha, tau, sigma2). Under the FBM kernel
/// `alpha` holds the Hurst index instead of the OU rate.
struct CovParams {
    Vector gamma;
    double alpha = 1.0;
    double tau = 1.0;
    double sigma2 = 1.0;
};

[[nodiscard]] Index gamma_size(GParam g, Index p_b);
/// Inverse of gamma_size; throws when the length fits no p_b.
[[nodiscard]] Index random_effect_dim(GParam g, Index p_gamma);
/// Number of covariance parameters p_gamma + 3.
[[nodiscard]] inline Index cov_size(const CovParams& v) { return v.gamma.size() + 3; }

/// Throws std::invalid_argument describing the first violated parameter constraint.
void check_cov_params(const CovParams& v, const KernelSpec& spec);
[[nodiscard]] bool cov_params_feasible(const CovParams& v, const KernelSpec& spec) noexcept;

namespace detail {

template <typename Scalar>
void require_finite(Scalar a, Scalar b, Scalar s, Scalar t, const char* what) {
    using std::isfinite;
    if (!isfinite(a) || !isfinite(b) || !isfinite(s) || !isfinite(t)) {
        throw std::domain_error(std::string(what) + ": non-finite input");
    }
    if (s < Scalar(0) || t < Scalar(0)) throw std::domain_error(std::string(what) + ": negative time");
}

// Below this value of alpha*max(s,t) the closed form loses all precision to
// cancellation; the power series in alpha is used instead.
inline constexpr double kIouSeriesThreshold = 1e-4;

/// g(alpha) and its first two alpha-derivatives, where the IOU kernel is tau^2/2 * g.
template <typename Scalar>
void iou_shape(Scalar alpha, Scalar s, Scalar t, Scalar& g, Scalar& g1, Scalar& g2) {
    using std::abs;
    using std::exp;
    using std::max;
    using std::min;
    const Scalar m = min(s, t);
    const Scalar d = abs(s - t);
    if (m == Scalar(0)) {
        // W(0) = 0: the row and column at time zero vanish identically.
        g = g1 = g2 = Scalar(0);
        return;
    }
    if (alpha * max(s, t) < Scalar(kIouSeriesThreshold)) {
        // g = sum_{k>=2} (-1)^k alpha^(k-3) c_k / k!,  c_k = s^k + t^k - d^k
        g = g1 = g2 = Scalar(0);
        Scalar sk = s * s, tk = t * t, dk = d * d, fact = Scalar(2);
        for (int k = 2; k <= 7; ++k) {
            const Scalar ck = (sk + tk - dk) / fact;
            const Scalar sign = (k % 2 == 0) ? Scalar(1) : Scalar(-1);
            const int e = k - 3;
            g += sign * ck * std::pow(alpha, Scalar(e));
            if (e != 0) g1 += sign * ck * Scalar(e) * std::pow(alpha, Scalar(e - 1));
            if (e != 0 && e != 1) g2 += sign * ck * Scalar(e * (e - 1)) * std::pow(alpha, Scalar(e - 2));
            sk *= s;
            tk *= t;
            dk *= d;
            fact *= Scalar(k + 1);
        }
        return;
    }
    const Scalar es = exp(-alpha * s);
    const Scalar et = exp(-alpha * t);
    const Scalar ed = exp(-alpha * d);
    const Scalar phi = Scalar(2) * alpha * m + es + et - Scalar(1) - ed;
    const Scalar phi1 = Scalar(2) * m - s * es - t * et + d * ed;
    const Scalar phi2 = s * s * es + t * t * et - d * d * ed;
    const Scalar a2 = alpha * alpha;
    const Scalar a3 = a2 * alpha;
    g = phi / a3;
    g1 = (alpha * phi1 - Scalar(3) * phi) / (a3 * alpha);
    g2 = (Scalar(12) * phi - Scalar(6) * alpha * phi1 + a2 * phi2) / (a3 * a2);
}

template <typename Scalar>
Scalar xlogx_pow(Scalar x, Scalar hurst, int log_power) {
    using std::log;
    using std::pow;
    if (x == Scalar(0)) return Scalar(0);
    const Scalar lx = log(x);
    Scalar out = pow(x, Scalar(2) * hurst);
    for (int i = 0; i < log_power; ++i) out *= lx;
    return out;
}

} // namespace detail

/// Covariance of the integrated stationary OU process at times s and t:
/// tau^2/(2 alpha^3) (2 alpha min(s,t) + e^{-alpha s} + e^{-alpha t} - 1 - e^{-alpha|s-t|}).
template <typename Scalar>
Scalar iou_kernel(Scalar alpha, Scalar tau, Scalar s, Scalar t) {
    detail::require_finite(alpha, tau, s, t, "iou_kernel");
    if (!(alpha > Scalar(0))) throw std::domain_error("iou_kernel: alpha must be positive");
    Scalar g, g1, g2;
    detail::iou_shape(alpha, s, t, g, g1, g2);
    return tau * tau / Scalar(2) * g;
}

template <typename Scalar>
Scalar iou_kernel_dalpha(Scalar alpha, Scalar tau, Scalar s, Scalar t) {
    detail::require_finite(alpha, tau, s, t, "iou_kernel_dalpha");
    if (!(alpha > Scalar(0))) throw std::domain_error("iou_kernel_dalpha: alpha must be positive");
    Scalar g, g1, g2;
    detail::iou_shape(alpha, s, t, g, g1, g2);
    return tau * tau / Scalar(2) * g1;
}

template <typename Scalar>
Scalar iou_kernel_dalpha2(Scalar alpha, Scalar tau, Scalar s, Scalar t) {
    detail::require_finite(alpha, tau, s, t, "iou_kernel_dalpha2");
    if (!(alpha > Scalar(0))) throw std::domain_error("iou_kernel_dalpha2: alpha must be positive");
    Scalar g, g1, g2;
    detail::iou_shape(alpha, s, t, g, g1, g2);
    return tau * tau / Scalar(2) * g2;
}

template <typename Scalar>
Scalar iou_kernel_dtau(Scalar alpha, Scalar tau, Scalar s, Scalar t) {
    return Scalar(2) / tau * iou_kernel(alpha, tau, s, t);
}

/// Covariance of scaled fractional Brownian motion: tau^2/2 (s^2H + t^2H - |s-t|^2H).
template <typename Scalar>
Scalar fbm_kernel(Scalar hurst, Scalar tau, Scalar s, Scalar t) {
    using std::abs;
    using std::pow;
    detail::require_finite(hurst, tau, s, t, "fbm_kernel");
    if (!(hurst > Scalar(0) && hurst < Scalar(1))) {
        throw std::domain_error("fbm_kernel: hurst must lie in (0, 1)");
    }
    const Scalar e = Scalar(2) * hurst;
    return tau * tau / Scalar(2) * (pow(s, e) + pow(t, e) - pow(abs(s - t), e));
}

/// x^{2H} log x is taken as 0 at x = 0 (its limit).
template <typename Scalar>
Scalar fbm_kernel_dhurst(Scalar hurst, Scalar tau, Scalar s, Scalar t) {
    using std::abs;
    detail::require_finite(hurst, tau, s, t, "fbm_kernel_dhurst");
    if (!(hurst > Scalar(0) && hurst < Scalar(1))) {
        throw std::domain_error("fbm_kernel_dhurst: hurst must lie in (0, 1)");
    }
    return tau * tau *
           (detail::xlogx_pow(s, hurst, 1) + detail::xlogx_pow(t, hurst, 1) -
            detail::xlogx_pow(abs(s - t), hurst, 1));
}

template <typename Scalar>
Scalar fbm_kernel_dhurst2(Scalar hurst, Scalar tau, Scalar s, Scalar t) {
    using std::abs;
    detail::require_finite(hurst, tau, s, t, "fbm_kernel_dhurst2");
    if (!(hurst > Scalar(0) && hurst < Scalar(1))) {
        throw std::domain_error("fbm_kernel_dhurst2: hurst must lie in (0, 1)");
    }
    return Scalar(2) * tau * tau *
           (detail::xlogx_pow(s, hurst, 2) + detail::xlogx_pow(t, hurst, 2) -
            detail::xlogx_pow(abs(s - t), hurst, 2));
}

template <typename Scalar>
Scalar fbm_kernel_dtau(Scalar hurst, Scalar tau, Scalar s, Scalar t) {
    return Scalar(2) / tau * fbm_kernel(hurst, tau, s, t);
}

/// System-noise kernel matrices over a time vector. Both kernels are
/// proportional to tau^2, so tau-derivatives are recovered by scaling `value`
/// and `d_shape`; only the shape-parameter derivatives are stored.
struct KernelMatrices {
    Matrix value;
    Matrix d_shape;  // empty unless order >= 1
    Matrix d_shape2; // empty unless order >= 2
};

[[nodiscard]] KernelMatrices kernel_matrices(const KernelSpec& spec, double shape, double tau,
                                             const Vector& times, int order);
/// Restricts precomputed kernel matrices to the rows/columns in `idx`.
[[nodiscard]] KernelMatrices gather(const KernelMatrices& table, const std::vector<Index>& idx);

[[nodiscard]] Matrix g_matrix(const Vector& gamma, GParam g);
[[nodiscard]] Matrix g_matrix_dgamma(const Vector& gamma, GParam g, Index k);
[[nodiscard]] Matrix g_matrix_d2gamma(const Vector& gamma, GParam g, Index j, Index k);
/// True when g_matrix_d2gamma(., j, k) is structurally nonzero.
[[nodiscard]] bool g_second_derivative_nonzero(GParam g, Index p_b, Index j, Index k);

struct SecondDerivative {
    Index j;
    Index k;
    Matrix value;
};

/// Q_i = Z G Z^T + H_i + sigma2 I and its derivatives in the order
/// (gamma_1..gamma_pg, alpha|hurst, tau, sigma2). `second` lists only the
/// structurally nonzero pairs with j <= k.
struct CovarianceBlocks {
    Matrix q;
    std::vector<Matrix> first;
    std::vector<SecondDerivative> second;
};

[[nodiscard]] CovarianceBlocks covariance_blocks(const KernelMatrices& h, const Matrix& z,
                                                 const CovParams& v, const KernelSpec& spec,
                                                 int order);
[[nodiscard]] CovarianceBlocks covariance_blocks(const Subject& subject, const CovParams& v,
                                                 const KernelSpec& spec, int order);

[[nodiscard]] Matrix assemble_q(const Subject& subject, const CovParams& v, const KernelSpec& spec);
[[nodiscard]] Matrix assemble_q_dv(const Subject& subject, const CovParams& v,
                                   const KernelSpec& spec, Index component);
[[nodiscard]] Matrix assemble_q_dv2(const Subject& subject, const CovParams& v,
                                    const KernelSpec& spec, Index j, Index k);

} // namespace ioulmm
