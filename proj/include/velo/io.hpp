#ifndef VELO_IO_HPP
#define VELO_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "velo/data.hpp"

/**
 * @file io.hpp
 * @brief Matrix files and plain CSV tables.
 *
 * CSV matrices have a header row `cell_id,<gene>,...` and one row per cell.
 * MTX matrices use the Matrix Market coordinate format (cells are rows, genes
 * are columns, 1-based indices) with two sidecar files next to the matrix:
 * `<path>.rows` (one cell id per line) and `<path>.cols` (one gene per line).
 */

namespace velo {

enum class MatrixFormat { csv, mtx };

MatrixFormat parse_matrix_format(const std::string& text);

struct LabeledMatrix {
    std::vector<std::string> row_ids;
    std::vector<std::string> col_names;
    Matrix values;
};

LabeledMatrix read_csv_matrix(const std::filesystem::path& path);
void write_csv_matrix(const std::filesystem::path& path, const LabeledMatrix& m);
LabeledMatrix read_mtx_matrix(const std::filesystem::path& path);
/// Writes the nonzero entries plus both sidecar files.
void write_mtx_matrix(const std::filesystem::path& path, const LabeledMatrix& m);

/**
 * Loads an unspliced/spliced pair. Cells and genes of the spliced file are
 * matched to the unspliced file by name, so permuted orders give the same
 * result. Throws InputError naming the first missing or duplicate name and on
 * negative or non-finite values.
 */
ExpressionMatrix load_matrices(const std::filesystem::path& unspliced, const std::filesystem::path& spliced,
                               MatrixFormat format);

/**
 * Optional per-cell annotations, a CSV with a `cell_id` column plus any of
 * `capture_time` and `label`. Rows are matched by cell id; every cell of
 * `data` must be present.
 */
void load_cell_annotations(const std::filesystem::path& path, ExpressionMatrix& data);

/**
 * Writes `unspliced.csv`, `spliced.csv`, `cells.csv` (when annotations are
 * present) and `provenance.txt` into `dir`. read_expression() restores an
 * equal ExpressionMatrix.
 */
void write_expression(const std::filesystem::path& dir, const ExpressionMatrix& data);
ExpressionMatrix read_expression(const std::filesystem::path& dir);

/// Shortest decimal text that parses back to exactly `x`.
std::string format_double(double x);
double parse_double(const std::string& text, const std::string& context);

/// Small CSV table: header plus string cells. No quoting; fields must not contain commas or newlines.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column; throws InputError when absent.
    std::size_t column(const std::string& name) const;
    bool has_column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

}  // namespace velo

#endif
