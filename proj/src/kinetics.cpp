#include "velo/kinetics.hpp"

#include <algorithm>
#include <string>

#include "velo/error.hpp"

namespace velo {

void GeneKinetics::validate() const {
    if (!(beta > 0.0) || !(gamma > 0.0)) {
        throw DomainError("kinetics: beta and gamma must be positive (beta=" + std::to_string(beta) +
                          ", gamma=" + std::to_string(gamma) + ")");
    }
    if (!(alpha >= 0.0)) {
        throw DomainError("kinetics: alpha must be non-negative");
    }
    if (t_on > t_off) {
        throw DomainError("kinetics: t_on must not exceed t_off");
    }
    if (!(u0 >= 0.0) || !(s0 >= 0.0)) {
        throw DomainError("kinetics: initial conditions must be non-negative");
    }
    if (!(sigma_u > 0.0) || !(sigma_s > 0.0)) {
        throw DomainError("kinetics: noise scales must be positive");
    }
}

KineticState solve_phase(const GeneKinetics& params, double t) {
    params.validate();
    KineticState out;
    detail::phase_solution(params.alpha, params.beta, params.gamma, params.t_on, params.t_off, params.u0, params.s0, t,
                           out.u, out.s);
    return out;
}

KineticState solve_mixture(double alpha, double beta, double gamma, double rho, double t0, double u0, double s0,
                           double t) {
    if (!(beta > 0.0) || !(gamma > 0.0)) {
        throw DomainError("solve_mixture: beta and gamma must be positive");
    }
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw DomainError("solve_mixture: rho must lie in [0, 1]");
    }
    if (t < t0) {
        throw DomainError("solve_mixture: t precedes the initial time t0");
    }
    KineticState out;
    detail::constant_rate_solution(rho * alpha, beta, gamma, u0, s0, t - t0, out.u, out.s);
    return out;
}

KineticState steady_state(double alpha, double beta, double gamma) {
    if (!(beta > 0.0) || !(gamma > 0.0)) {
        throw DomainError("steady_state: beta and gamma must be positive");
    }
    return {alpha / beta, alpha / gamma};
}

Velocity velocity(double u, double s, double beta, double gamma, double alpha_tilde) {
    return {alpha_tilde - beta * u, beta * u - gamma * s};
}

OdeRates phase_rates(const GeneKinetics& params) {
    OdeRates rates;
    const double alpha = params.alpha, t_on = params.t_on, t_off = params.t_off;
    rates.alpha_tilde = [=](double t) { return (t >= t_on && t < t_off) ? alpha : 0.0; };
    rates.beta = params.beta;
    rates.gamma = params.gamma;
    rates.breakpoints = {t_on};
    if (std::isfinite(t_off)) {
        rates.breakpoints.push_back(t_off);
    }
    return rates;
}

namespace {

KineticState rk4_step(const OdeRates& rates, const KineticState& y, double t, double h) {
    // The transcription rate is sampled just inside the step so a breakpoint at
    // either end does not leak the neighbouring value into the step.
    const double eps = 1e-12 * std::max(1.0, std::abs(t));
    auto rhs = [&](double time, double u, double s) {
        const double clamped = std::clamp(time, t + eps, t + h - eps);
        const double a = rates.alpha_tilde(clamped);
        return KineticState{a - rates.beta * u, rates.beta * u - rates.gamma * s};
    };
    const auto k1 = rhs(t, y.u, y.s);
    const auto k2 = rhs(t + 0.5 * h, y.u + 0.5 * h * k1.u, y.s + 0.5 * h * k1.s);
    const auto k3 = rhs(t + 0.5 * h, y.u + 0.5 * h * k2.u, y.s + 0.5 * h * k2.s);
    const auto k4 = rhs(t + h, y.u + h * k3.u, y.s + h * k3.s);
    return {y.u + h / 6.0 * (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u),
            y.s + h / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s)};
}

// Integrates from a to b with uniform substeps no larger than max_step.
KineticState integrate_segment(const OdeRates& rates, KineticState y, double a, double b, double max_step) {
    if (b <= a) {
        return y;
    }
    const auto steps = static_cast<long>(std::ceil((b - a) / max_step - 1e-9));
    const double h = (b - a) / static_cast<double>(std::max(1L, steps));
    for (long k = 0; k < std::max(1L, steps); ++k) {
        y = rk4_step(rates, y, a + static_cast<double>(k) * h, h);
    }
    return y;
}

}  // namespace

std::vector<KineticState> rk4_reference(const OdeRates& rates, KineticState initial, const std::vector<double>& t_grid,
                                        double max_step) {
    if (!(max_step > 0.0)) {
        throw DomainError("rk4_reference: max_step must be positive");
    }
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        if (!(t_grid[i] > t_grid[i - 1])) {
            throw DomainError("rk4_reference: time grid must be strictly increasing");
        }
    }
    std::vector<KineticState> out;
    out.reserve(t_grid.size());
    if (t_grid.empty()) {
        return out;
    }
    std::vector<double> breaks = rates.breakpoints;
    std::sort(breaks.begin(), breaks.end());

    KineticState y = initial;
    out.push_back(y);
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        double a = t_grid[i - 1];
        const double b = t_grid[i];
        for (double brk : breaks) {
            if (brk > a && brk < b) {
                y = integrate_segment(rates, y, a, brk, max_step);
                a = brk;
            }
        }
        y = integrate_segment(rates, y, a, b, max_step);
        out.push_back(y);
    }
    return out;
}

}  // namespace velo
