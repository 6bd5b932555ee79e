#include "velo/preprocess.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "velo/error.hpp"

namespace velo {

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size();
    return m % 2 == 1 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

void apply_normalize(ExpressionMatrix& data) {
    const Vector fu = size_factors(data.unspliced);
    const Vector fs = size_factors(data.spliced);
    data.unspliced = fu.asDiagonal() * data.unspliced;
    data.spliced = fs.asDiagonal() * data.spliced;
}

void apply_select(ExpressionMatrix& data, int k) {
    if (k > data.n_genes()) {
        throw DomainError("preprocess: asked for " + std::to_string(k) + " genes but only " +
                          std::to_string(data.n_genes()) + " are available");
    }
    const RowVector disp = dispersion(data.spliced);
    std::vector<Eigen::Index> order(data.n_genes());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return disp[a] > disp[b]; });
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());
    auto provenance = data.provenance;
    data = data.subset_genes(order);
    data.provenance = std::move(provenance);
}

void apply_smooth(ExpressionMatrix& data, int k, int n_pcs) {
    const auto neighbors = knn_pca(data.spliced, n_pcs, k);
    Matrix u(data.unspliced.rows(), data.unspliced.cols());
    Matrix s(data.spliced.rows(), data.spliced.cols());
    for (Eigen::Index i = 0; i < data.n_cells(); ++i) {
        RowVector su = RowVector::Zero(data.n_genes()), ss = RowVector::Zero(data.n_genes());
        for (auto j : neighbors[i]) {
            su += data.unspliced.row(j);
            ss += data.spliced.row(j);
        }
        const double n = static_cast<double>(neighbors[i].size());
        u.row(i) = su / n;
        s.row(i) = ss / n;
    }
    data.unspliced = std::move(u);
    data.spliced = std::move(s);
}

// Parses "step;key=value;..." records.
struct Record {
    std::string step;
    std::vector<std::pair<std::string, std::string>> fields;

    int int_field(const std::string& key) const {
        for (const auto& [k, v] : fields) {
            if (k == key) {
                return std::stoi(v);
            }
        }
        throw InputError("provenance record '" + step + "' lacks '" + key + "'");
    }
};

Record parse_record(const std::string& text) {
    Record r;
    std::istringstream in(text);
    std::string part;
    std::getline(in, r.step, ';');
    while (std::getline(in, part, ';')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) {
            throw InputError("malformed provenance field '" + part + "'");
        }
        r.fields.emplace_back(part.substr(0, eq), part.substr(eq + 1));
    }
    return r;
}

void apply_record(ExpressionMatrix& data, const std::string& text) {
    const auto r = parse_record(text);
    if (r.step == "normalize") {
        apply_normalize(data);
    } else if (r.step == "select_genes") {
        apply_select(data, r.int_field("k"));
    } else if (r.step == "smooth") {
        apply_smooth(data, r.int_field("k"), r.int_field("n_pcs"));
    } else {
        throw InputError("unknown provenance step '" + r.step + "'");
    }
    data.provenance.push_back(text);
}

}  // namespace

Vector size_factors(const Matrix& counts) {
    const Vector totals = counts.rowwise().sum();
    std::vector<double> positive;
    for (Eigen::Index i = 0; i < totals.size(); ++i) {
        if (totals[i] > 0.0) {
            positive.push_back(totals[i]);
        }
    }
    Vector f = Vector::Ones(totals.size());
    if (positive.empty()) {
        return f;
    }
    const double target = median_of(positive);
    for (Eigen::Index i = 0; i < totals.size(); ++i) {
        if (totals[i] > 0.0) {
            f[i] = target / totals[i];
        }
    }
    return f;
}

RowVector dispersion(const Matrix& spliced) {
    RowVector out(spliced.cols());
    const double n = static_cast<double>(spliced.rows());
    for (Eigen::Index g = 0; g < spliced.cols(); ++g) {
        const double mean = spliced.col(g).mean();
        if (!(mean > 0.0) || spliced.rows() < 2) {
            out[g] = 0.0;
            continue;
        }
        const double var = (spliced.col(g).array() - mean).square().sum() / (n - 1.0);
        out[g] = var / mean;
    }
    return out;
}

std::vector<std::vector<Eigen::Index>> knn_pca(const Matrix& x, int n_pcs, int k) {
    const Eigen::Index n = x.rows();
    if (k < 1 || k > n) {
        throw DomainError("knn: k must lie in [1, number of cells]");
    }
    if (n_pcs < 1) {
        throw DomainError("knn: need at least one principal component");
    }
    const Matrix centered = x.rowwise() - x.colwise().mean();
    const Matrix cov = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Eigen::Index comps = std::min<Eigen::Index>(n_pcs, x.cols());
    // Eigenvalues come in increasing order; the leading components are the last columns.
    const Matrix basis = eig.eigenvectors().rightCols(comps);
    const Matrix scores = centered * basis;
    const Vector norms = scores.rowwise().squaredNorm();
    const Matrix gram = scores * scores.transpose();

    std::vector<std::vector<Eigen::Index>> out(n);
    std::vector<Eigen::Index> order(n);
    std::vector<double> dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            dist[j] = j == i ? -1.0 : std::max(0.0, norms[i] + norms[j] - 2.0 * gram(i, j));
        }
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
        });
        out[i].assign(order.begin(), order.begin() + k);
    }
    return out;
}

ExpressionMatrix preprocess(const ExpressionMatrix& raw, const PreprocessOptions& options) {
    raw.validate();
    if (options.n_top_genes < 0 || options.k_neighbors < 0) {
        throw DomainError("preprocess: gene count and neighbour count must be non-negative");
    }
    std::vector<std::string> records;
    if (options.normalize) {
        records.push_back("normalize;target=median_total");
    }
    if (options.n_top_genes > 0) {
        if (options.n_top_genes > raw.n_genes()) {
            throw DomainError("preprocess: asked for " + std::to_string(options.n_top_genes) + " genes but only " +
                              std::to_string(raw.n_genes()) + " are available");
        }
        records.push_back("select_genes;k=" + std::to_string(options.n_top_genes) + ";by=spliced_dispersion");
    }
    if (options.k_neighbors > 0) {
        records.push_back("smooth;k=" + std::to_string(options.k_neighbors) +
                          ";n_pcs=" + std::to_string(options.n_pcs) + ";space=spliced_pca");
    }
    return replay_provenance(raw, records);
}

ExpressionMatrix replay_provenance(const ExpressionMatrix& raw, const std::vector<std::string>& records) {
    ExpressionMatrix data = raw;
    for (const auto& r : records) {
        apply_record(data, r);
    }
    return data;
}

}  // namespace velo
