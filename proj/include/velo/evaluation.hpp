#ifndef VELO_EVALUATION_HPP
#define VELO_EVALUATION_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "velo/data.hpp"

namespace velo {

struct ReconstructionMetrics {
    double mse = 0.0;
    double mae = 0.0;
    /// Diagonal-Gaussian log-likelihood summed over genes, averaged over cells.
    double ll = 0.0;
};

/**
 * Compares N x 2G features against their reconstruction. `sigma_u` and
 * `sigma_s` hold one noise scale per gene.
 */
ReconstructionMetrics reconstruction_metrics(const Matrix& x, const Matrix& x_hat, const RowVector& sigma_u,
                                             const RowVector& sigma_s);

/// Per-gene MSE over both u and s columns of gene g.
RowVector per_gene_mse(const Matrix& x, const Matrix& x_hat);

/// Ranks starting at 1, with tied values sharing their average rank.
std::vector<double> average_ranks(std::span<const double> values);

/**
 * Spearman rank correlation with average ranks for ties. Returns nullopt when
 * either input is constant. Throws DomainError for unequal lengths or fewer
 * than three values.
 */
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct CellUncertainty {
    std::vector<std::optional<double>> cv_t;
    std::vector<std::optional<double>> cv_c;
};

/**
 * Coefficient of variation of the time posterior (sigma_t / mu_t) and the
 * multivariate trace form sqrt(sum sigma_c^2 / sum mu_c^2) for cell state.
 * Undefined values (zero mean) are reported as nullopt. `mu_c` may have zero
 * columns, in which case only cv_t is filled.
 */
CellUncertainty cv_uncertainty(const Vector& mu_t, const Vector& sigma_t, const Matrix& mu_c, const Matrix& sigma_c);

struct VelocityTable {
    Matrix du_dt;  // N x G
    Matrix ds_dt;  // N x G
};

/**
 * Velocities at reconstructed coordinates: du/dt = rho alpha - beta u and
 * ds/dt = beta u - gamma s, using per-gene rates and per-cell rho.
 */
VelocityTable velocity_table(const Matrix& u_hat, const Matrix& s_hat, const Matrix& rho, const RowVector& alpha,
                             const RowVector& beta, const RowVector& gamma);

/// Flat report written as metrics.json.
struct MetricsReport {
    std::string model;
    std::string value_space = "preprocessed";
    std::optional<ReconstructionMetrics> train;
    std::optional<ReconstructionMetrics> test;
    std::optional<double> time_spearman;       // against ground-truth time
    std::optional<double> capture_spearman;    // against capture times
    std::optional<double> informative_spearman;
    std::optional<double> runtime_seconds;
    std::vector<std::pair<std::string, double>> per_gene_mse;
    std::vector<std::string> notes;

    std::string to_json() const;
};

}  // namespace velo

#endif
