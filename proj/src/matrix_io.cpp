#include "velo/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "velo/error.hpp"

namespace velo {

namespace fs = std::filesystem;

Matrix ExpressionMatrix::features() const {
    Matrix x(n_cells(), 2 * n_genes());
    x << unspliced, spliced;
    return x;
}

ExpressionMatrix ExpressionMatrix::subset_cells(const std::vector<Eigen::Index>& cells) const {
    ExpressionMatrix out;
    out.gene_names = gene_names;
    out.provenance = provenance;
    out.unspliced.resize(static_cast<Eigen::Index>(cells.size()), n_genes());
    out.spliced.resize(static_cast<Eigen::Index>(cells.size()), n_genes());
    std::vector<double> capture;
    std::vector<std::string> labs;
    for (std::size_t k = 0; k < cells.size(); ++k) {
        const auto i = cells[k];
        if (i < 0 || i >= n_cells()) {
            throw ShapeError("subset_cells: cell index " + std::to_string(i) + " out of range");
        }
        const auto r = static_cast<Eigen::Index>(k);
        out.cell_ids.push_back(cell_ids[i]);
        out.unspliced.row(r) = unspliced.row(i);
        out.spliced.row(r) = spliced.row(i);
        if (capture_times) {
            capture.push_back((*capture_times)[i]);
        }
        if (labels) {
            labs.push_back((*labels)[i]);
        }
    }
    if (capture_times) {
        out.capture_times = std::move(capture);
    }
    if (labels) {
        out.labels = std::move(labs);
    }
    return out;
}

ExpressionMatrix ExpressionMatrix::subset_genes(const std::vector<Eigen::Index>& genes) const {
    ExpressionMatrix out = *this;
    out.gene_names.clear();
    out.unspliced.resize(n_cells(), static_cast<Eigen::Index>(genes.size()));
    out.spliced.resize(n_cells(), static_cast<Eigen::Index>(genes.size()));
    for (std::size_t k = 0; k < genes.size(); ++k) {
        const auto g = genes[k];
        if (g < 0 || g >= n_genes()) {
            throw ShapeError("subset_genes: gene index " + std::to_string(g) + " out of range");
        }
        out.gene_names.push_back(gene_names[g]);
        out.unspliced.col(static_cast<Eigen::Index>(k)) = unspliced.col(g);
        out.spliced.col(static_cast<Eigen::Index>(k)) = spliced.col(g);
    }
    return out;
}

namespace {

void check_unique(const std::vector<std::string>& names, const char* what) {
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty()) {
            throw InputError(std::string("empty ") + what + " name");
        }
        if (n.find_first_of(",\n\r") != std::string::npos) {
            throw InputError(std::string(what) + " name '" + n + "' contains a comma or newline");
        }
        if (!seen.insert(n).second) {
            throw InputError(std::string("duplicate ") + what + " '" + n + "'");
        }
    }
}

void check_values(const Matrix& m, const char* which, const std::vector<std::string>& rows,
                  const std::vector<std::string>& cols) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double v = m(i, j);
            if (!std::isfinite(v) || v < 0.0) {
                throw InputError(std::string(which) + " value " + format_double(v) + " at cell '" + rows[i] +
                                 "', gene '" + cols[j] + "' must be finite and non-negative");
            }
        }
    }
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') {
        s.pop_back();
    }
    return s;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "'");
    }
    return in;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write '" + path.string() + "'");
    }
    return out;
}

std::vector<std::string> read_names(const fs::path& path) {
    auto in = open_in(path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (!line.empty()) {
            names.push_back(line);
        }
    }
    return names;
}

// Maps `names` onto the order of `reference`; throws naming the first mismatch.
std::vector<Eigen::Index> align(const std::vector<std::string>& reference, const std::vector<std::string>& names,
                                const char* what) {
    if (reference.size() != names.size()) {
        throw InputError(std::string("unspliced and spliced files list different numbers of ") + what + "s (" +
                         std::to_string(reference.size()) + " vs " + std::to_string(names.size()) + ")");
    }
    std::unordered_map<std::string, Eigen::Index> index;
    for (std::size_t k = 0; k < names.size(); ++k) {
        index.emplace(names[k], static_cast<Eigen::Index>(k));
    }
    std::vector<Eigen::Index> order;
    for (const auto& n : reference) {
        auto it = index.find(n);
        if (it == index.end()) {
            throw InputError(std::string(what) + " '" + n + "' is in the unspliced file but not the spliced file");
        }
        order.push_back(it->second);
    }
    return order;
}

LabeledMatrix read_labeled(const fs::path& path, MatrixFormat format) {
    return format == MatrixFormat::csv ? read_csv_matrix(path) : read_mtx_matrix(path);
}

}  // namespace

void ExpressionMatrix::validate() const {
    if (unspliced.rows() != spliced.rows() || unspliced.cols() != spliced.cols()) {
        throw InputError("unspliced and spliced matrices differ in shape");
    }
    if (static_cast<Eigen::Index>(cell_ids.size()) != n_cells()) {
        throw InputError("cell id count does not match the matrix rows");
    }
    if (static_cast<Eigen::Index>(gene_names.size()) != n_genes()) {
        throw InputError("gene name count does not match the matrix columns");
    }
    check_unique(cell_ids, "cell");
    check_unique(gene_names, "gene");
    check_values(unspliced, "unspliced", cell_ids, gene_names);
    check_values(spliced, "spliced", cell_ids, gene_names);
    if (capture_times && static_cast<Eigen::Index>(capture_times->size()) != n_cells()) {
        throw InputError("capture times do not cover every cell");
    }
    if (labels && static_cast<Eigen::Index>(labels->size()) != n_cells()) {
        throw InputError("labels do not cover every cell");
    }
}

MatrixFormat parse_matrix_format(const std::string& text) {
    if (text == "csv") {
        return MatrixFormat::csv;
    }
    if (text == "mtx") {
        return MatrixFormat::mtx;
    }
    throw InputError("unknown matrix format '" + text + "' (expected csv or mtx)");
}

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& context) {
    double value = 0.0;
    const char* begin = text.data();
    const char* end = text.data() + text.size();
    while (begin < end && *begin == ' ') {
        ++begin;
    }
    if (begin < end && *begin == '+') {
        ++begin;
    }
    const auto res = std::from_chars(begin, end, value);
    if (res.ec != std::errc() || res.ptr != end) {
        throw InputError(context + ": '" + text + "' is not a number");
    }
    return value;
}

LabeledMatrix read_csv_matrix(const fs::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) {
        throw InputError("'" + path.string() + "' is empty");
    }
    auto header = split_line(strip_cr(line));
    if (header.empty()) {
        throw InputError("'" + path.string() + "' has an empty header");
    }
    LabeledMatrix m;
    m.col_names.assign(header.begin() + 1, header.end());
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) {
            continue;
        }
        auto fields = split_line(line);
        if (fields.size() != header.size()) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        m.row_ids.push_back(fields[0]);
        for (std::size_t k = 1; k < fields.size(); ++k) {
            values.push_back(parse_double(fields[k], path.string() + ":" + std::to_string(line_no)));
        }
    }
    const auto rows = static_cast<Eigen::Index>(m.row_ids.size());
    const auto cols = static_cast<Eigen::Index>(m.col_names.size());
    m.values.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m.values(i, j) = values[static_cast<std::size_t>(i * cols + j)];
        }
    }
    return m;
}

void write_csv_matrix(const fs::path& path, const LabeledMatrix& m) {
    if (static_cast<Eigen::Index>(m.row_ids.size()) != m.values.rows() ||
        static_cast<Eigen::Index>(m.col_names.size()) != m.values.cols()) {
        throw ShapeError("write_csv_matrix: labels do not match the matrix shape");
    }
    auto out = open_out(path);
    out << "cell_id";
    for (const auto& c : m.col_names) {
        out << ',' << c;
    }
    out << '\n';
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        out << m.row_ids[i];
        for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
            out << ',' << format_double(m.values(i, j));
        }
        out << '\n';
    }
}

LabeledMatrix read_mtx_matrix(const fs::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("%%MatrixMarket", 0) != 0) {
        throw InputError("'" + path.string() + "' lacks a %%MatrixMarket header");
    }
    std::istringstream banner(line);
    std::string tag, object, layout, field, symmetry;
    banner >> tag >> object >> layout >> field >> symmetry;
    if (object != "matrix" || layout != "coordinate" || (field != "real" && field != "integer") ||
        symmetry != "general") {
        throw InputError("'" + path.string() + "': only 'matrix coordinate real|integer general' is supported");
    }
    while (std::getline(in, line) && (line.empty() || line[0] == '%')) {
    }
    std::istringstream size_line(line);
    long rows = 0, cols = 0, entries = 0;
    if (!(size_line >> rows >> cols >> entries) || rows < 0 || cols < 0 || entries < 0) {
        throw InputError("'" + path.string() + "': malformed size line");
    }
    LabeledMatrix m;
    m.values = Matrix::Zero(rows, cols);
    for (long k = 0; k < entries; ++k) {
        long i = 0, j = 0;
        std::string value;
        if (!(in >> i >> j >> value)) {
            throw InputError("'" + path.string() + "': expected " + std::to_string(entries) + " entries, found " +
                             std::to_string(k));
        }
        if (i < 1 || i > rows || j < 1 || j > cols) {
            throw InputError("'" + path.string() + "': entry (" + std::to_string(i) + ", " + std::to_string(j) +
                             ") out of range");
        }
        m.values(i - 1, j - 1) = parse_double(value, path.string());
    }
    m.row_ids = read_names(fs::path(path.string() + ".rows"));
    m.col_names = read_names(fs::path(path.string() + ".cols"));
    if (static_cast<long>(m.row_ids.size()) != rows || static_cast<long>(m.col_names.size()) != cols) {
        throw InputError("'" + path.string() + "': sidecar name files do not match the matrix size");
    }
    return m;
}

void write_mtx_matrix(const fs::path& path, const LabeledMatrix& m) {
    long nonzero = 0;
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
            nonzero += m.values(i, j) != 0.0 ? 1 : 0;
        }
    }
    {
        auto out = open_out(path);
        out << "%%MatrixMarket matrix coordinate real general\n";
        out << m.values.rows() << ' ' << m.values.cols() << ' ' << nonzero << '\n';
        for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
                if (m.values(i, j) != 0.0) {
                    out << i + 1 << ' ' << j + 1 << ' ' << format_double(m.values(i, j)) << '\n';
                }
            }
        }
    }
    auto rows = open_out(fs::path(path.string() + ".rows"));
    for (const auto& r : m.row_ids) {
        rows << r << '\n';
    }
    auto cols = open_out(fs::path(path.string() + ".cols"));
    for (const auto& c : m.col_names) {
        cols << c << '\n';
    }
}

ExpressionMatrix load_matrices(const fs::path& unspliced, const fs::path& spliced, MatrixFormat format) {
    auto u = read_labeled(unspliced, format);
    auto s = read_labeled(spliced, format);
    check_unique(u.row_ids, "cell");
    check_unique(u.col_names, "gene");
    check_unique(s.row_ids, "cell");
    check_unique(s.col_names, "gene");
    const auto cell_order = align(u.row_ids, s.row_ids, "cell");
    const auto gene_order = align(u.col_names, s.col_names, "gene");

    ExpressionMatrix data;
    data.cell_ids = u.row_ids;
    data.gene_names = u.col_names;
    data.unspliced = std::move(u.values);
    data.spliced.resize(data.unspliced.rows(), data.unspliced.cols());
    for (Eigen::Index j = 0; j < data.spliced.cols(); ++j) {
        for (Eigen::Index i = 0; i < data.spliced.rows(); ++i) {
            data.spliced(i, j) = s.values(cell_order[i], gene_order[j]);
        }
    }
    data.validate();
    return data;
}

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        throw InputError("CSV table has no column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
}

bool CsvTable::has_column(const std::string& name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(const fs::path& path) {
    auto in = open_in(path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) {
        throw InputError("'" + path.string() + "' is empty");
    }
    t.header = split_line(strip_cr(line));
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) {
            continue;
        }
        auto fields = split_line(line);
        if (fields.size() != t.header.size()) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
    }
    return t;
}

void write_csv(const fs::path& path, const CsvTable& table) {
    auto out = open_out(path);
    auto emit = [&](const std::vector<std::string>& fields) {
        for (std::size_t k = 0; k < fields.size(); ++k) {
            if (fields[k].find_first_of(",\n") != std::string::npos) {
                throw InputError("CSV field '" + fields[k] + "' contains a comma or newline");
            }
            out << (k ? "," : "") << fields[k];
        }
        out << '\n';
    };
    emit(table.header);
    for (const auto& r : table.rows) {
        if (r.size() != table.header.size()) {
            throw ShapeError("write_csv: row width differs from header");
        }
        emit(r);
    }
}

void load_cell_annotations(const fs::path& path, ExpressionMatrix& data) {
    const auto table = read_csv(path);
    const auto id_col = table.column("cell_id");
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        row_of.emplace(table.rows[r][id_col], r);
    }
    std::vector<std::size_t> rows;
    for (const auto& id : data.cell_ids) {
        auto it = row_of.find(id);
        if (it == row_of.end()) {
            throw InputError("'" + path.string() + "' has no row for cell '" + id + "'");
        }
        rows.push_back(it->second);
    }
    if (table.has_column("capture_time")) {
        const auto col = table.column("capture_time");
        std::vector<double> times;
        for (auto r : rows) {
            times.push_back(parse_double(table.rows[r][col], path.string() + " capture_time"));
        }
        data.capture_times = std::move(times);
    }
    if (table.has_column("label")) {
        const auto col = table.column("label");
        std::vector<std::string> labels;
        for (auto r : rows) {
            labels.push_back(table.rows[r][col]);
        }
        data.labels = std::move(labels);
    }
}

void write_expression(const fs::path& dir, const ExpressionMatrix& data) {
    data.validate();
    fs::create_directories(dir);
    write_csv_matrix(dir / "unspliced.csv", {data.cell_ids, data.gene_names, data.unspliced});
    write_csv_matrix(dir / "spliced.csv", {data.cell_ids, data.gene_names, data.spliced});
    if (data.capture_times || data.labels) {
        CsvTable cells;
        cells.header.push_back("cell_id");
        if (data.capture_times) {
            cells.header.push_back("capture_time");
        }
        if (data.labels) {
            cells.header.push_back("label");
        }
        for (Eigen::Index i = 0; i < data.n_cells(); ++i) {
            std::vector<std::string> row{data.cell_ids[i]};
            if (data.capture_times) {
                row.push_back(format_double((*data.capture_times)[i]));
            }
            if (data.labels) {
                row.push_back((*data.labels)[i]);
            }
            cells.rows.push_back(std::move(row));
        }
        write_csv(dir / "cells.csv", cells);
    } else {
        fs::remove(dir / "cells.csv");
    }
    auto prov = open_out(dir / "provenance.txt");
    for (const auto& p : data.provenance) {
        prov << p << '\n';
    }
}

ExpressionMatrix read_expression(const fs::path& dir) {
    auto data = load_matrices(dir / "unspliced.csv", dir / "spliced.csv", MatrixFormat::csv);
    if (fs::exists(dir / "cells.csv")) {
        load_cell_annotations(dir / "cells.csv", data);
    }
    if (fs::exists(dir / "provenance.txt")) {
        data.provenance = read_names(dir / "provenance.txt");
    }
    data.validate();
    return data;
}

}  // namespace velo
