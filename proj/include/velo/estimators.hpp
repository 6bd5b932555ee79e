#ifndef VELO_ESTIMATORS_HPP
#define VELO_ESTIMATORS_HPP

#include <span>
#include <string>
#include <vector>

#include "velo/data.hpp"
#include "velo/kinetics.hpp"

/**
 * @file estimators.hpp
 * @brief Baseline per-gene estimators.
 *
 * `fit_steady_state()` reads rates off the upper quantiles of u and s under a
 * unit splicing rate. `fit_gene_em()` alternates a hard grid assignment of
 * per-gene cell times with a gradient-descent fit of the switching kinetics to
 * the mean squared reconstruction error. `global_time()` reduces the per-gene
 * times to one ordering per cell.
 */

namespace velo {

struct SteadyStateFit {
    double alpha_hat = 0.0;
    double beta_hat = 1.0;
    double gamma_hat = 0.0;
    double quantile = 0.95;
    double u_star = 0.0;
    double s_star = 0.0;
    bool estimable = false;
};

/// Requires equal lengths >= 10 and quantile in (0.5, 1). Genes with s* = 0 come back flagged.
SteadyStateFit fit_steady_state(std::span<const double> u, std::span<const double> s, double quantile = 0.95);

/**
 * For each cell, the grid time in [0, t_max] minimising
 * (u - u(t))^2 / (2 sigma_u^2) + (s - s(t))^2 / (2 sigma_s^2)
 * under `params`; ties go to the smaller time.
 */
std::vector<double> assign_times_grid(std::span<const double> u, std::span<const double> s,
                                      const GeneKinetics& params, int grid_size, double t_max);

struct EMConfig {
    int grid_size = 500;
    double t_max = 20.0;
    int max_iterations = 100;
    double relative_tolerance = 1e-4;
    double quantile = 0.95;
};

struct GeneEMFit {
    GeneKinetics params;
    std::vector<double> times;
    double mse = 0.0;
    int iterations = 0;
    std::vector<double> mse_history;
    bool estimable = false;
    /// Non-empty when the fit stopped early, e.g. on a non-finite M-step.
    std::string diagnostic;
};

/// Requires at least 50 cells. All-zero genes come back flagged rather than fitted.
GeneEMFit fit_gene_em(std::span<const double> u, std::span<const double> s, const EMConfig& config = {});

/// Mean squared error of the switching model at the given per-cell times (u and s residuals summed).
double gene_mse(std::span<const double> u, std::span<const double> s, const GeneKinetics& params,
                std::span<const double> times);

/**
 * Min-max scales each estimable gene's times (columns of an N x G matrix) to
 * [0, 1] and takes the per-cell median. Throws DomainError when no gene is
 * estimable.
 */
Vector global_time(const Matrix& gene_times, const std::vector<bool>& estimable);

}  // namespace velo

#endif
