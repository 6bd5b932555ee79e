#ifndef VELO_MODEL_KERNELS_HPP
#define VELO_MODEL_KERNELS_HPP

// Internal helpers shared by models.cpp and training.cpp.

#include <cmath>
#include <numbers>

#include "velo/kinetics.hpp"
#include "velo/models.hpp"

namespace velo::detail {

/// Floor added to posterior standard deviations.
inline constexpr double kPosteriorSigmaFloor = 1e-4;

/// mu_t = mu_scale * softplus(z); an all-zero encoder output lands at t_max / 2.
inline double head_mu_scale(const ModelState& state) { return 0.5 * state.t_max / std::numbers::ln2; }
/// sigma_t = sigma_scale * softplus(z) + floor; starts at a tenth of the prior width.
inline double head_sigma_scale(const ModelState& state) { return 0.1 * state.prior.sigma0 / std::numbers::ln2; }

inline LatentPosterior posterior_from_raw(const ModelState& state, const Matrix& raw) {
    const Eigen::Index rows = raw.rows();
    const int d = state.latent_dim;
    LatentPosterior p;
    p.mu_t.resize(rows);
    p.sigma_t.resize(rows);
    p.mu_c.resize(rows, d);
    p.sigma_c.resize(rows, d);
    const double ms = head_mu_scale(state), ss = head_sigma_scale(state);
    for (Eigen::Index i = 0; i < rows; ++i) {
        p.mu_t[i] = ms * nn::softplus(raw(i, 0));
        p.sigma_t[i] = ss * nn::softplus(raw(i, 1)) + kPosteriorSigmaFloor;
        for (int k = 0; k < d; ++k) {
            p.mu_c(i, k) = raw(i, 2 + k);
            p.sigma_c(i, k) = nn::softplus(raw(i, 2 + d + k)) + kPosteriorSigmaFloor;
        }
    }
    return p;
}

template <class T>
struct GeneScalars {
    T alpha, beta, gamma, t_on, t_off;
};

inline GeneScalars<double> gene_scalars(const GeneParams& p, Eigen::Index g) {
    return {std::exp(p.log_alpha[g]), std::exp(p.log_beta[g]), std::exp(p.log_gamma[g]), p.t_on[g],
            p.t_on[g] + std::exp(p.log_duration[g])};
}

/**
 * Kinetic mean of gene g for one cell. A cell with a refinement window runs
 * at rho * alpha from the window average; otherwise the basic model follows
 * the switching solution from zero and the full model runs at rho * alpha from
 * zero starting at t_on.
 */
template <class T>
void entry_mean(ModelKind kind, const GeneScalars<T>& gs, const T& t, const T& rho, const CellInitialCondition* ic,
                Eigen::Index g, T& u, T& s) {
    if (ic != nullptr && ic->has_window) {
        constant_rate_solution(T(rho * gs.alpha), gs.beta, gs.gamma, T(ic->u0[g]), T(ic->s0[g]), T(t - ic->t0), u, s);
        return;
    }
    const T zero(0.0);
    if (kind == ModelKind::basic) {
        phase_solution(gs.alpha, gs.beta, gs.gamma, gs.t_on, gs.t_off, zero, zero, t, u, s);
        return;
    }
    if (value_of(t) < value_of(gs.t_on)) {
        u = zero;
        s = zero;
        return;
    }
    constant_rate_solution(T(rho * gs.alpha), gs.beta, gs.gamma, zero, zero, T(t - gs.t_on), u, s);
}

}  // namespace velo::detail

#endif
