#ifndef VELO_KINETICS_HPP
#define VELO_KINETICS_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "velo/dual.hpp"

/**
 * @file kinetics.hpp
 * @brief Closed-form transcription/splicing/degradation kinetics.
 *
 * Each gene follows
 *
 *     du/dt = a(t) - beta * u
 *     ds/dt = beta * u - gamma * s
 *
 * where a(t) is the effective transcription rate. With a(t) constant over an
 * interval the system has an analytic solution, which is what every model in
 * this library evaluates. `rk4_reference()` integrates the same system
 * numerically and serves as the oracle for the closed forms.
 */

namespace velo {

/// Per-gene kinetic parameters.
struct GeneKinetics {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
    double t_on = 0.0;
    double t_off = std::numeric_limits<double>::infinity();
    double u0 = 0.0;
    double s0 = 0.0;
    double sigma_u = 1.0;
    double sigma_s = 1.0;

    /// Throws DomainError when an invariant is violated.
    void validate() const;
};

struct KineticState {
    double u = 0.0;
    double s = 0.0;
};

/// Relative tolerance on |gamma - beta| below which the degenerate limit is used.
inline constexpr double kDegenerateRateTolerance = 1e-6;

namespace detail {

/**
 * Analytic solution after `tau` time units with constant transcription
 * `alpha_tilde`, starting from (u0, s0). Templated so that the same code path
 * serves plain doubles and dual numbers.
 */
template <class T>
void constant_rate_solution(const T& alpha_tilde, const T& beta, const T& gamma, const T& u0, const T& s0,
                            const T& tau, T& u, T& s) {
    using std::exp;
    using std::expm1;
    const T decay_u = exp(-beta * tau);
    const T decay_s = exp(-gamma * tau);
    u = u0 * decay_u - alpha_tilde / beta * expm1(-beta * tau);

    // (exp(-gamma tau) - exp(-beta tau)) / (gamma - beta), written so that it
    // stays accurate as gamma approaches beta.
    const T diff = gamma - beta;
    const double scale = std::max(value_of(beta), value_of(gamma));
    T cross;
    if (std::abs(value_of(diff)) <= kDegenerateRateTolerance * scale) {
        // Limit of the divided difference, with its first-order correction so
        // that derivatives with respect to gamma - beta stay consistent.
        cross = -tau * decay_u * (1.0 - 0.5 * diff * tau);
    } else {
        cross = decay_u * expm1(-diff * tau) / diff;
    }
    s = s0 * decay_s - alpha_tilde / gamma * expm1(-gamma * tau) + (alpha_tilde - beta * u0) * cross;
}

/**
 * Switch-on/switch-off solution. Before `t_on` the state is held at the
 * initial condition; between `t_on` and `t_off` transcription runs at
 * `alpha`; after `t_off` it is zero and the state decays from its value at
 * `t_off`.
 */
template <class T>
void phase_solution(const T& alpha, const T& beta, const T& gamma, const T& t_on, const T& t_off, const T& u0,
                    const T& s0, const T& t, T& u, T& s) {
    if (value_of(t) < value_of(t_on)) {
        u = u0;
        s = s0;
        return;
    }
    if (value_of(t) < value_of(t_off)) {
        constant_rate_solution(alpha, beta, gamma, u0, s0, T(t - t_on), u, s);
        return;
    }
    T u_off, s_off;
    constant_rate_solution(alpha, beta, gamma, u0, s0, T(t_off - t_on), u_off, s_off);
    constant_rate_solution(T(0.0), beta, gamma, u_off, s_off, T(t - t_off), u, s);
}

}  // namespace detail

/// Evaluates the switching kinetic function of `params` at time `t`.
KineticState solve_phase(const GeneKinetics& params, double t);

/**
 * Kinetic function with transcription rate `rho * alpha` held constant from
 * `t0`, starting at (u0, s0). Throws DomainError for `t < t0` or `rho`
 * outside [0, 1].
 */
KineticState solve_mixture(double alpha, double beta, double gamma, double rho, double t0, double u0, double s0,
                           double t);

/// Fixed point (alpha / beta, alpha / gamma) of sustained transcription.
KineticState steady_state(double alpha, double beta, double gamma);

struct Velocity {
    double du_dt = 0.0;
    double ds_dt = 0.0;
};

/// ds/dt = beta u - gamma s, and du/dt = alpha_tilde - beta u (zero transcription if omitted).
Velocity velocity(double u, double s, double beta, double gamma, double alpha_tilde = 0.0);

/// Right-hand side description for the numerical oracle.
struct OdeRates {
    /// Effective transcription rate as a function of time.
    std::function<double(double)> alpha_tilde;
    double beta = 1.0;
    double gamma = 1.0;
    /// Times at which `alpha_tilde` may jump; steps never straddle them.
    std::vector<double> breakpoints;
};

/**
 * Classical fourth-order Runge-Kutta integration of the kinetic ODE, reported
 * at every point of `t_grid` (which must be strictly increasing). Steps
 * between grid points are subdivided so that none exceeds `max_step`.
 */
std::vector<KineticState> rk4_reference(const OdeRates& rates, KineticState initial, const std::vector<double>& t_grid,
                                        double max_step = 1e-3);

/// Convenience: rates for the switching model of `params`.
OdeRates phase_rates(const GeneKinetics& params);

}  // namespace velo

#endif
