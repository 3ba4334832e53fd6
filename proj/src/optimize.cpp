#include "ioulmm/optimize.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ioulmm {

OptimResult nelder_mead(const std::function<double(const Vector&)>& fn, const Vector& x0,
                        const NelderMeadOptions& opt) {
    constexpr double reflect = 1.0;
    constexpr double contract = 0.5;
    constexpr double expand = 2.0;

    const Index n = x0.size();
    if (n == 0) throw std::invalid_argument("nelder_mead: empty parameter vector");
    if (opt.max_evaluations < 1) throw std::invalid_argument("nelder_mead: max_evaluations must be >= 1");

    OptimResult out;
    auto eval = [&](const Vector& x) {
        ++out.evaluations;
        const double f = fn(x);
        return std::isfinite(f) ? f : opt.penalty;
    };

    const double f0 = fn(x0);
    out.evaluations = 1;
    if (!std::isfinite(f0)) throw std::domain_error("nelder_mead: objective not finite at the initial point");
    const double convtol = opt.f_tol * (std::abs(f0) + opt.f_tol);

    // Columns 0..n are vertices, column n+1 is scratch for centroid/contraction.
    Matrix p(n, n + 2);
    Vector values(n + 2);
    p.col(0) = x0;
    values[0] = f0;
    double size = 0.0;
    for (Index j = 1; j <= n; ++j) {
        p.col(j) = x0;
        double step = opt.initial_step * std::max(1.0, std::abs(x0[j - 1]));
        while (p(j - 1, j) == x0[j - 1]) {
            p(j - 1, j) = x0[j - 1] + step;
            step *= 10.0;
        }
        size += std::abs(p(j - 1, j) - x0[j - 1]);
    }
    double oldsize = size;
    bool calcvert = true;
    Index lo = 0;
    Vector trial(n);

    for (;;) {
        if (calcvert) {
            for (Index j = 0; j <= n; ++j) {
                if (j != lo) values[j] = eval(p.col(j));
            }
            calcvert = false;
        }
        double vlo = values[lo];
        double vhi = vlo;
        Index hi = lo;
        for (Index j = 0; j <= n; ++j) {
            if (j == lo) continue;
            if (values[j] < vlo) {
                lo = j;
                vlo = values[j];
            }
            if (values[j] > vhi) {
                hi = j;
                vhi = values[j];
            }
        }
        if (vhi <= vlo + convtol) {
            double diameter = 0.0;
            for (Index j = 0; j <= n; ++j) {
                diameter = std::max(diameter, (p.col(j) - p.col(lo)).cwiseAbs().maxCoeff());
            }
            if (diameter <= opt.x_tol) {
                out.converged = true;
                out.reason = "simplex converged";
                break;
            }
        }
        ++out.iterations;

        const Vector centroid = (p.leftCols(n + 1).rowwise().sum() - p.col(hi)) / static_cast<double>(n);
        trial = (1.0 + reflect) * centroid - reflect * p.col(hi);
        const double vr = eval(trial);
        if (vr < vlo) {
            const Vector reflected = trial;
            trial = expand * reflected + (1.0 - expand) * centroid;
            const double ve = eval(trial);
            if (ve < vr) {
                p.col(hi) = trial;
                values[hi] = ve;
            } else {
                p.col(hi) = reflected;
                values[hi] = vr;
            }
        } else {
            if (vr < vhi) {
                p.col(hi) = trial;
                values[hi] = vr;
            }
            trial = (1.0 - contract) * p.col(hi) + contract * centroid;
            const double vc = eval(trial);
            if (vc < values[hi]) {
                p.col(hi) = trial;
                values[hi] = vc;
            } else if (vr >= vhi) {
                calcvert = true;
                size = 0.0;
                for (Index j = 0; j <= n; ++j) {
                    if (j == lo) continue;
                    p.col(j) = contract * (p.col(j) - p.col(lo)) + p.col(lo);
                    size += (p.col(j) - p.col(lo)).cwiseAbs().sum();
                }
                if (size < oldsize) {
                    oldsize = size;
                } else {
                    out.reason = "simplex size did not decrease in shrink";
                    break;
                }
            }
        }
        if (out.evaluations > opt.max_evaluations) {
            out.reason = "evaluation budget exhausted";
            break;
        }
    }
    out.x = p.col(lo);
    out.f = values[lo];
    return out;
}

namespace {

// Minimizer of g'p + p'Bp/2 over |p| <= radius, B = V diag(lambda) V' with lambda > 0.
Vector trust_step(const Eigen::SelfAdjointEigenSolver<Matrix>& eig, const Vector& lambda,
                  const Vector& g, double radius) {
    const Vector gt = eig.eigenvectors().transpose() * g;
    auto step_norm = [&](double mu) { return (gt.array() / (lambda.array() + mu)).matrix().norm(); };
    double mu = 0.0;
    if (step_norm(0.0) > radius) {
        double lo = 0.0;
        double hi = std::max(1.0, gt.norm() / radius);
        while (step_norm(hi) > radius) hi *= 2.0;
        for (int it = 0; it < 100 && hi - lo > 1e-14 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            (step_norm(mid) > radius ? lo : hi) = mid;
        }
        mu = hi;
    }
    return -eig.eigenvectors() * (gt.array() / (lambda.array() + mu)).matrix();
}

} // namespace

OptimResult trust_region_newton(const ValueFn& value, const ModelFn& model, const ConvergedFn& converged,
                                const Vector& x0, const TrustRegionOptions& opt) {
    OptimResult out;
    auto current = model(x0);
    out.evaluations = 1;
    if (!current) throw std::domain_error("trust_region_newton: initial point infeasible");
    Vector x = x0;
    double radius = opt.initial_radius;

    for (;;) {
        if (converged(x, *current)) {
            out.converged = true;
            out.reason = "gradient tolerance met";
            break;
        }
        if (out.iterations >= opt.max_iterations) {
            out.reason = "iteration budget exhausted";
            break;
        }
        ++out.iterations;

        const Eigen::SelfAdjointEigenSolver<Matrix> eig(current->h);
        const Vector lambda = eig.eigenvalues().cwiseAbs().cwiseMax(opt.eigen_floor);

        bool accepted = false;
        while (!accepted) {
            const Vector step = trust_step(eig, lambda, current->g, radius);
            if (step.norm() <= opt.x_tol * (1.0 + x.norm())) break;
            const Vector gt = eig.eigenvectors().transpose() * step;
            const double predicted = -(current->g.dot(step) + 0.5 * (lambda.array() * gt.array().square()).sum());
            const Vector trial = x + step;
            const auto ft = value(trial);
            ++out.evaluations;
            const double actual = ft ? current->f - *ft : -std::numeric_limits<double>::infinity();
            const double ratio = predicted > 0.0 ? actual / predicted : -1.0;
            if (ft && std::isfinite(*ft) && ratio > opt.accept_ratio) {
                auto next = model(trial);
                ++out.evaluations;
                if (!next) {
                    radius *= 0.25;
                    continue;
                }
                x = trial;
                current = std::move(next);
                accepted = true;
                if (ratio > 0.75 && step.norm() > 0.99 * radius) radius = std::min(2.0 * radius, opt.max_radius);
            } else {
                radius = 0.25 * std::min(radius, step.norm());
            }
        }
        if (!accepted) {
            out.reason = "step size below x_tol";
            break;
        }
    }
    out.x = x;
    out.f = current->f;
    return out;
}

} // namespace ioulmm
