#include <doctest.h>

#include "ioulmm/optimize.hpp"
#include "ioulmm/rng.hpp"

#include <cmath>
#include <set>

using namespace ioulmm;

TEST_CASE("philox4x32-10 known-answer vectors") {
    using A4 = std::array<std::uint32_t, 4>;
    using A2 = std::array<std::uint32_t, 2>;
    CHECK(philox4x32(A4{0, 0, 0, 0}, A2{0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32(A4{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, A2{0xffffffff, 0xffffffff}) ==
          A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32(A4{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, A2{0xa4093822, 0x299f31d0}) ==
          A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are reproducible and distinct") {
    CounterRng a(42, 2, 7, 3), b(42, 2, 7, 3), c(42, 2, 7, 4), d(43, 2, 7, 3);
    std::vector<std::uint32_t> va, vb, vc, vd;
    for (int i = 0; i < 16; ++i) {
        va.push_back(a());
        vb.push_back(b());
        vc.push_back(c());
        vd.push_back(d());
    }
    CHECK(va == vb);
    CHECK(va != vc);
    CHECK(va != vd);
}

TEST_CASE("uniform, normal and below have the right ranges and moments") {
    CounterRng rng(1, 4, 0, 0);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0, nsum = 0.0, nsum_sq = 0.0, nsum4 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        sum += u;
        sum_sq += u * u;
        const double z = rng.normal();
        nsum += z;
        nsum_sq += z * z;
        nsum4 += z * z * z * z;
    }
    // Tolerances are five standard errors of each moment estimate.
    CHECK(std::abs(sum / n - 0.5) < 5.0 * std::sqrt(1.0 / 12.0 / n));
    CHECK(std::abs(sum_sq / n - 1.0 / 3.0) < 5.0 * std::sqrt(4.0 / 45.0 / n));
    CHECK(std::abs(nsum / n) < 5.0 / std::sqrt(n));
    CHECK(std::abs(nsum_sq / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(nsum4 / n - 3.0) < 5.0 * std::sqrt(96.0 / n));

    std::set<std::uint32_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto k = rng.below(7);
        REQUIRE(k < 7u);
        seen.insert(k);
    }
    CHECK(seen.size() == 7);
    CHECK(rng.uniform(3.0, 5.0) > 3.0);
}

namespace {

double rosenbrock(const Vector& x) {
    return 100.0 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1.0 - x[0], 2);
}

std::optional<QuadraticModel> rosenbrock_model(const Vector& x) {
    QuadraticModel m;
    m.f = rosenbrock(x);
    m.g = Vector(2);
    m.g << -400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]), 200.0 * (x[1] - x[0] * x[0]);
    m.h = Matrix(2, 2);
    m.h << 1200.0 * x[0] * x[0] - 400.0 * x[1] + 2.0, -400.0 * x[0], -400.0 * x[0], 200.0;
    return m;
}

} // namespace

TEST_CASE("nelder_mead minimizes Rosenbrock") {
    Vector x0(2);
    x0 << -1.2, 1.0;
    NelderMeadOptions opt;
    opt.max_evaluations = 5000;
    opt.f_tol = 1e-14;
    const auto r = nelder_mead(rosenbrock, x0, opt);
    CHECK(r.converged);
    CHECK(r.reason == "simplex converged");
    CHECK(std::abs(r.x[0] - 1.0) < 1e-3);
    CHECK(std::abs(r.x[1] - 1.0) < 2e-3);
    CHECK(r.evaluations <= 5000);
}

TEST_CASE("nelder_mead budget, penalty and x_tol") {
    Vector x0(2);
    x0 << -1.2, 1.0;
    NelderMeadOptions opt;
    opt.max_evaluations = 20;
    const auto r = nelder_mead(rosenbrock, x0, opt);
    CHECK_FALSE(r.converged);
    CHECK(r.reason == "evaluation budget exhausted");
    CHECK(r.evaluations <= 21);

    // Infeasible half-plane: the penalty keeps the search on x0 > 0.
    auto walled = [](const Vector& x) {
        return x[0] <= 0.0 ? std::numeric_limits<double>::quiet_NaN() : std::pow(x[0] - 0.5, 2) + x[1] * x[1];
    };
    Vector y0(2);
    y0 << 1.0, 1.0;
    NelderMeadOptions tight;
    tight.f_tol = 1e-16;
    tight.x_tol = 1e-6;
    tight.max_evaluations = 2000;
    const auto w = nelder_mead(walled, y0, tight);
    CHECK(w.converged);
    CHECK(std::abs(w.x[0] - 0.5) < 1e-5);
    CHECK(std::abs(w.x[1]) < 1e-5);

    Vector bad(1);
    bad << 0.0;
    CHECK_THROWS(nelder_mead([](const Vector&) { return std::nan(""); }, bad));
}

TEST_CASE("trust_region_newton solves a quadratic in one step and Rosenbrock to tolerance") {
    Matrix a(2, 2);
    a << 3.0, 1.0, 1.0, 2.0;
    Vector b(2);
    b << 1.0, -1.0;
    auto quad_value = [&](const Vector& x) -> std::optional<double> { return 0.5 * x.dot(a * x) - b.dot(x); };
    auto quad_model = [&](const Vector& x) -> std::optional<QuadraticModel> {
        return QuadraticModel{0.5 * x.dot(a * x) - b.dot(x), a * x - b, a};
    };
    auto small_grad = [](const Vector&, const QuadraticModel& m) { return m.g.norm() < 1e-10; };
    TrustRegionOptions opt;
    opt.initial_radius = 10.0;
    const auto q = trust_region_newton(quad_value, quad_model, small_grad, Vector::Zero(2), opt);
    CHECK(q.converged);
    CHECK(q.iterations <= 2);
    const Vector want = a.ldlt().solve(b);
    CHECK((q.x - want).norm() < 1e-12);

    Vector x0(2);
    x0 << -1.2, 1.0;
    const auto r = trust_region_newton([](const Vector& x) -> std::optional<double> { return rosenbrock(x); },
                                       rosenbrock_model, small_grad, x0);
    CHECK(r.converged);
    CHECK((r.x - Vector::Ones(2)).norm() < 1e-8);
}

TEST_CASE("trust_region_newton reports an infeasible start") {
    auto none = [](const Vector&) -> std::optional<double> { return std::nullopt; };
    auto none_model = [](const Vector&) -> std::optional<QuadraticModel> { return std::nullopt; };
    auto never = [](const Vector&, const QuadraticModel&) { return false; };
    CHECK_THROWS(trust_region_newton(none, none_model, never, Vector::Zero(1)));
}
