#ifndef VELO_SIMULATOR_HPP
#define VELO_SIMULATOR_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "velo/data.hpp"
#include "velo/kinetics.hpp"

/**
 * @file simulator.hpp
 * @brief Synthetic unspliced/spliced data with complete ground truth.
 *
 * Cells live on a lineage tree. Every gene has fixed rates (alpha, beta,
 * gamma) and, per branch, a relative transcription schedule rho(t) made of
 * logistic steps between target levels. Abundances are obtained by
 * integrating the kinetic ODE along the path from the root to the cell, so
 * they stay continuous across branch points.
 */

namespace velo::sim {

/// rho(t) = initial + sum_k (level_k - level_{k-1}) * logistic((t - time_k) / width).
struct RhoSchedule {
    double initial_level = 0.0;
    std::vector<std::pair<double, double>> changes;  // (time, new level), ascending in time
    double width = 0.1;

    double operator()(double t) const;
    /// Compact text form, e.g. `0>1@2.5>0@9|w=0.1`.
    std::string describe() const;
};

/**
 * Monotone logistic increase from `rho_low` to `rho_high` centred on
 * `t_boost`; `sharpness` is the logistic slope (1 / width). Throws
 * DomainError unless 0 <= rho_low < rho_high <= 1 and sharpness > 0.
 */
RhoSchedule boost_gene_schedule(double t_boost, double rho_low, double rho_high, double sharpness);

struct Branch {
    std::string name;
    int parent = -1;  // index of the parent branch; -1 for the root
    double start = 0.0;
    double duration = 1.0;
    /// Relative share of cells drawn from this branch.
    double weight = 1.0;
};

struct GeneSetup {
    std::string name;
    /// Free-form class tag, e.g. "standard", "early_repression", "boost".
    std::string kind = "standard";
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
    /// Abundances at the root start time.
    KineticState initial;
};

struct LineageTree {
    /// Parents must precede their children.
    std::vector<Branch> branches;
    std::vector<GeneSetup> genes;
    /// schedules[branch][gene]
    std::vector<std::vector<RhoSchedule>> schedules;

    /// Throws DomainError for disconnected, cyclic, or inconsistent trees.
    void validate() const;
};

struct SyntheticTruth {
    Vector time;
    std::vector<int> branch;
    std::vector<std::string> branch_names;
    Matrix rho;      // N x G
    Matrix u_clean;  // N x G, before noise
    Matrix s_clean;
    std::vector<GeneSetup> genes;
    std::vector<std::string> schedules;  // description of the root-to-leaf schedule per gene
    RowVector sigma_u;
    RowVector sigma_s;
    double noise_fraction = 0.0;
};

struct Simulation {
    ExpressionMatrix data;
    SyntheticTruth truth;
};

/**
 * Draws `n_cells` cells (branch proportional to weight, time uniform over the
 * branch span) and integrates each gene with RK4 at step <= `max_step`.
 * Gaussian noise with standard deviation `noise_fraction` times the gene's
 * dynamic range (separately for u and s) is added and negative values are
 * truncated at zero. Deterministic for a given seed: every cell has its own
 * generator derived from (seed, cell index).
 */
Simulation simulate(const LineageTree& tree, int n_cells, double noise_fraction, std::uint64_t seed,
                    double max_step = 1e-3);

/// Quantile-bins true times into `n_bins` integer labels 0..n_bins-1, non-decreasing in time.
std::vector<int> capture_time_labels(const Vector& times, int n_bins);

struct Preset {
    std::string name;
    LineageTree tree;
    int n_cells = 0;
    double noise_fraction = 0.1;
    double t_max = 20.0;
};

/**
 * Benchmark presets:
 *  - S1: single lineage, 100 genes (60 standard, 20 early repression, 20 late induction), 2000 cells.
 *  - S2: bifurcation at t = 10 into two branches, 100 genes, 3000 cells.
 *  - S3: S1 plus 10 transcriptional-boost genes.
 * Gene rates and switch times are drawn from `seed`.
 */
Preset make_preset(const std::string& name, std::uint64_t seed);

}  // namespace velo::sim

#endif
