#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "velo/error.hpp"
#include "velo/kinetics.hpp"
#include "oracles.hpp"

using namespace velo;

namespace {

GeneKinetics induction(double alpha, double beta, double gamma) {
    GeneKinetics p;
    p.alpha = alpha;
    p.beta = beta;
    p.gamma = gamma;
    return p;
}

oracle::UV rk4_at(const GeneKinetics& p, double t) {
    if (p.u0 == 0.0 && p.s0 == 0.0) {
        return oracle::switching(p.alpha, p.beta, p.gamma, p.t_on, p.t_off, t);
    }
    return oracle::integrate([&](double) { return p.alpha; }, p.beta, p.gamma, {p.u0, p.s0}, p.t_on, t);
}

}  // namespace

TEST_CASE("solve_phase: initial condition at t_on") {
    const auto st = solve_phase(induction(2, 1, 0.5), 0.0);
    CHECK(st.u == 0.0);
    CHECK(st.s == 0.0);
}

TEST_CASE("solve_phase: induction value at t = 1 against integration") {
    const auto p = induction(2, 1, 0.5);
    const auto st = solve_phase(p, 1.0);
    const auto ref = rk4_at(p, 1.0);
    CHECK(std::abs(st.u - ref.u) < 1e-6);
    CHECK(std::abs(st.s - ref.s) < 1e-6);
    CHECK(st.u == doctest::Approx(1.264241).epsilon(1e-6));
    CHECK(st.s == doctest::Approx(0.619272).epsilon(1e-6));
}

TEST_CASE("solve_phase: long induction approaches the steady state") {
    const auto st = solve_phase(induction(2, 1, 0.5), 200.0);
    CHECK(st.u == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(st.s == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("solve_phase: equal splicing and degradation rates use the limit") {
    const auto p = induction(1, 1, 1);
    const auto st = solve_phase(p, 1.0);
    const auto ref = rk4_at(p, 1.0);
    CHECK(st.u == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-14));
    CHECK(std::abs(st.s - ref.s) < 1e-6);
    // s(1) = 1 - 2/e for alpha = beta = gamma = 1 from rest.
    CHECK(std::abs(st.s - (1.0 - 2.0 * std::exp(-1.0))) < 1e-12);
}

TEST_CASE("solve_phase: nearly equal rates agree with the exact divided difference") {
    auto p = induction(1.5, 1.0, 1.0 + 1e-9);
    auto q = induction(1.5, 1.0, 1.0 + 1e-4);
    for (double t : {0.3, 1.0, 4.0}) {
        const auto a = solve_phase(p, t);
        const auto b = solve_phase(q, t);
        CHECK(std::abs(a.s - b.s) < 1e-3);
        const auto ref = rk4_at(p, t);
        CHECK(std::abs(a.s - ref.s) < 1e-6);
    }
}

TEST_CASE("solve_phase: continuity across the switch-off time") {
    auto p = induction(3, 0.8, 0.3);
    p.t_off = 4.0;
    for (double h : {1e-3, 1e-6}) {
        const auto before = solve_phase(p, p.t_off - h);
        const auto after = solve_phase(p, p.t_off + h);
        CHECK(std::abs(before.u - after.u) < 10 * h);
        CHECK(std::abs(before.s - after.s) < 10 * h);
    }
}

TEST_CASE("solve_phase: before t_on the initial condition is held") {
    auto p = induction(3, 0.8, 0.3);
    p.t_on = 2.0;
    p.u0 = 0.4;
    p.s0 = 0.7;
    const auto st = solve_phase(p, -5.0);
    CHECK(st.u == 0.4);
    CHECK(st.s == 0.7);
}

TEST_CASE("solve_phase: invalid parameters throw") {
    CHECK_THROWS_AS(solve_phase(induction(1, 0, 1), 1.0), DomainError);
    CHECK_THROWS_AS(solve_phase(induction(1, 1, -1), 1.0), DomainError);
}

TEST_CASE("solve_mixture: rho = 0 from rest stays at zero") {
    for (double t : {0.0, 1.0, 10.0}) {
        const auto st = solve_mixture(2, 1, 0.5, 0.0, 0.0, 0.0, 0.0, t);
        CHECK(st.u == 0.0);
        CHECK(st.s == 0.0);
    }
}

TEST_CASE("solve_mixture: rho = 1 reproduces induction") {
    const auto p = induction(2, 1, 0.5);
    for (double t : {0.5, 2.0, 7.0}) {
        const auto a = solve_mixture(2, 1, 0.5, 1.0, 0.0, 0.0, 0.0, t);
        const auto b = solve_phase(p, t);
        CHECK(a.u == b.u);
        CHECK(a.s == b.s);
    }
}

TEST_CASE("solve_mixture: half rate against integration") {
    const auto st = solve_mixture(2, 1, 0.5, 0.5, 0.0, 0.0, 0.0, 2.0);
    const auto ref = oracle::integrate([](double) { return 1.0; }, 1.0, 0.5, {}, 0.0, 2.0);
    CHECK(std::abs(st.u - ref.u) < 1e-6);
    CHECK(std::abs(st.s - ref.s) < 1e-6);
}

TEST_CASE("solve_mixture: domain errors") {
    CHECK_THROWS_AS(solve_mixture(2, 1, 0.5, 0.5, 1.0, 0, 0, 0.5), DomainError);
    CHECK_THROWS_AS(solve_mixture(2, 1, 0.5, 1.5, 0.0, 0, 0, 1.0), DomainError);
    CHECK_THROWS_AS(solve_mixture(2, 1, 0.5, -0.1, 0.0, 0, 0, 1.0), DomainError);
}

TEST_CASE("steady_state values and fixed point") {
    auto a = steady_state(2, 1, 0.5);
    CHECK(a.u == 2.0);
    CHECK(a.s == 4.0);
    auto b = steady_state(0, 1, 1);
    CHECK(b.u == 0.0);
    CHECK(b.s == 0.0);
    auto c = steady_state(1, 2, 4);
    CHECK(c.u == 0.5);
    CHECK(c.s == 0.25);
    CHECK_THROWS_AS(steady_state(1, 0, 1), DomainError);

    const auto v = velocity(a.u, a.s, 1, 0.5, 2);
    CHECK(v.du_dt == 0.0);
    CHECK(v.ds_dt == 0.0);
}

TEST_CASE("velocity examples") {
    CHECK(velocity(2, 4, 1, 0.5).ds_dt == 0.0);
    CHECK(velocity(1, 0, 1, 0.5).ds_dt == 1.0);
    CHECK(velocity(0, 1, 1, 1).ds_dt == -1.0);
    CHECK(velocity(1, 0, 2, 0.5, 3).du_dt == 1.0);
}

TEST_CASE("rk4_reference: zero dynamics stay at zero") {
    OdeRates r;
    r.alpha_tilde = [](double) { return 0.0; };
    const auto traj = rk4_reference(r, {0, 0}, {0.0, 0.5, 1.0, 3.0});
    REQUIRE(traj.size() == 4);
    for (const auto& st : traj) {
        CHECK(st.u == 0.0);
        CHECK(st.s == 0.0);
    }
}

TEST_CASE("rk4_reference: piecewise schedule against the independent integrator") {
    auto p = induction(2.5, 0.7, 1.9);
    p.t_off = 1.3;
    const std::vector<double> grid{0.0, 0.4, 1.3, 2.0, 3.7};
    const auto traj = rk4_reference(phase_rates(p), {0, 0}, grid, 1e-4);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const auto ref = oracle::switching(p.alpha, p.beta, p.gamma, p.t_on, p.t_off, grid[k]);
        CHECK(std::abs(traj[k].u - ref.u) < 1e-9);
        CHECK(std::abs(traj[k].s - ref.s) < 1e-9);
    }
}

TEST_CASE("rk4_reference: endpoint, self-convergence and grid checks") {
    const auto p = induction(2, 1, 0.5);
    const auto a = rk4_reference(phase_rates(p), {0, 0}, {0.0, 1.0}, 1e-4).back();
    const auto b = rk4_reference(phase_rates(p), {0, 0}, {0.0, 1.0}, 5e-5).back();
    CHECK(a.u == doctest::Approx(1.264241).epsilon(1e-6));
    CHECK(a.s == doctest::Approx(0.619272).epsilon(1e-6));
    CHECK(std::abs(a.u - b.u) < 1e-9);
    CHECK(std::abs(a.s - b.s) < 1e-9);
    CHECK_THROWS_AS(rk4_reference(phase_rates(p), {0, 0}, {0.0, 1.0, 1.0}), DomainError);
    CHECK_THROWS_AS(rk4_reference(phase_rates(p), {0, 0}, {1.0, 0.5}), DomainError);
}

TEST_CASE("solutions stay non-negative and repression is monotone") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> rate(0.05, 5.0), init(0.0, 5.0), tt(0.0, 30.0);
    for (int k = 0; k < 200; ++k) {
        GeneKinetics p = induction(rate(rng), rate(rng), rate(rng));
        p.u0 = init(rng);
        p.s0 = init(rng);
        p.t_off = tt(rng);
        const auto st = solve_phase(p, tt(rng));
        CHECK(st.u >= -1e-12);
        CHECK(st.s >= -1e-12);

        double previous = std::numeric_limits<double>::infinity();
        for (double t = 0.0; t < 10.0; t += 0.25) {
            const auto r = solve_mixture(p.alpha, p.beta, p.gamma, 0.0, 0.0, p.u0, p.s0, t);
            CHECK(r.u <= previous);
            previous = r.u;
        }
    }
}

TEST_CASE("dual numbers differentiate the closed form") {
    using D = Dual<3>;
    const double a = 2.0, b = 1.3, g = 0.4, tau = 1.7, h = 1e-6;
    D u, s;
    detail::constant_rate_solution(D::variable(a, 0), D::variable(b, 1), D::variable(g, 2), D(0.3), D(0.2), D(tau), u,
                                   s);
    auto eval = [&](double aa, double bb, double gg) {
        double uu, ss;
        detail::constant_rate_solution(aa, bb, gg, 0.3, 0.2, tau, uu, ss);
        return std::pair{uu, ss};
    };
    const std::array<std::array<double, 3>, 3> shifts{{{h, 0, 0}, {0, h, 0}, {0, 0, h}}};
    for (int k = 0; k < 3; ++k) {
        const auto plus = eval(a + shifts[k][0], b + shifts[k][1], g + shifts[k][2]);
        const auto minus = eval(a - shifts[k][0], b - shifts[k][1], g - shifts[k][2]);
        CHECK(u.d[k] == doctest::Approx((plus.first - minus.first) / (2 * h)).epsilon(1e-6));
        CHECK(s.d[k] == doctest::Approx((plus.second - minus.second) / (2 * h)).epsilon(1e-6));
    }
}
