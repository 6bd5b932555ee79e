#ifndef VELO_DATA_HPP
#define VELO_DATA_HPP

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace velo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/**
 * Paired unspliced/spliced abundances for N cells and G genes.
 *
 * Rows are cells and columns genes in both matrices. `capture_times` and
 * `labels` are optional per-cell annotations; `provenance` is an ordered log of
 * the preprocessing steps applied, one `key=value;...` record per step.
 */
struct ExpressionMatrix {
    std::vector<std::string> cell_ids;
    std::vector<std::string> gene_names;
    Matrix unspliced;
    Matrix spliced;
    std::optional<std::vector<double>> capture_times;
    std::optional<std::vector<std::string>> labels;
    std::vector<std::string> provenance;

    Eigen::Index n_cells() const { return unspliced.rows(); }
    Eigen::Index n_genes() const { return unspliced.cols(); }

    /// N x 2G feature matrix [u_1..u_G, s_1..s_G].
    Matrix features() const;

    /// Copy restricted to the given cells, in the given order.
    ExpressionMatrix subset_cells(const std::vector<Eigen::Index>& cells) const;
    /// Copy restricted to the given genes, in the given order.
    ExpressionMatrix subset_genes(const std::vector<Eigen::Index>& genes) const;

    /// Throws InputError when shapes, ids, or values are inconsistent.
    void validate() const;
};

}  // namespace velo

#endif
