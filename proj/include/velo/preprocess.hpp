#ifndef VELO_PREPROCESS_HPP
#define VELO_PREPROCESS_HPP

#include <string>
#include <vector>

#include "velo/data.hpp"

namespace velo {

struct PreprocessOptions {
    /// Scale each cell's u and s to the median total of their own matrix.
    bool normalize = true;
    /// Keep the K genes with the largest spliced variance / mean; 0 keeps every gene.
    int n_top_genes = 1000;
    /// Moment smoothing over k nearest neighbours (the cell itself included); 0 disables it.
    int k_neighbors = 30;
    int n_pcs = 30;
};

/**
 * Size-factor normalisation, dispersion-based gene selection and KNN moment
 * smoothing, applied in that order. Each applied step appends one record to
 * `provenance`; replay_provenance() on the raw input repeats the transform
 * exactly. Throws DomainError when K exceeds the number of genes.
 */
ExpressionMatrix preprocess(const ExpressionMatrix& raw, const PreprocessOptions& options);

/// Re-applies the records that `processed` added on top of `raw.provenance`.
ExpressionMatrix replay_provenance(const ExpressionMatrix& raw, const std::vector<std::string>& records);

/// Per-cell size factors (median total / cell total); cells with a zero total keep factor 1.
Vector size_factors(const Matrix& counts);

/// Spliced dispersion (variance / mean, zero for all-zero genes) per gene.
RowVector dispersion(const Matrix& spliced);

/// Indices of the k nearest cells (self first) in the leading principal components of `x`.
std::vector<std::vector<Eigen::Index>> knn_pca(const Matrix& x, int n_pcs, int k);

}  // namespace velo

#endif
