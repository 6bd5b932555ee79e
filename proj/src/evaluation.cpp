#include "velo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "velo/error.hpp"

namespace velo {

ReconstructionMetrics reconstruction_metrics(const Matrix& x, const Matrix& x_hat, const RowVector& sigma_u,
                                             const RowVector& sigma_s) {
    if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) {
        throw ShapeError("reconstruction_metrics: x and x_hat differ in shape");
    }
    const Eigen::Index genes = x.cols() / 2;
    if (x.cols() % 2 != 0 || sigma_u.size() != genes || sigma_s.size() != genes) {
        throw ShapeError("reconstruction_metrics: expected 2G columns and G noise scales");
    }
    ReconstructionMetrics m;
    if (x.size() == 0) {
        return m;
    }
    const Matrix diff = x - x_hat;
    m.mse = diff.array().square().mean();
    m.mae = diff.array().abs().mean();

    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double ll = 0.0;
    for (Eigen::Index g = 0; g < genes; ++g) {
        const double su = sigma_u[g], ss = sigma_s[g];
        ll += -static_cast<double>(x.rows()) * (2.0 * half_log_2pi + std::log(su) + std::log(ss));
        ll -= 0.5 * diff.col(g).squaredNorm() / (su * su);
        ll -= 0.5 * diff.col(genes + g).squaredNorm() / (ss * ss);
    }
    m.ll = ll / static_cast<double>(x.rows());
    return m;
}

RowVector per_gene_mse(const Matrix& x, const Matrix& x_hat) {
    if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols() || x.cols() % 2 != 0) {
        throw ShapeError("per_gene_mse: shape mismatch");
    }
    const Eigen::Index genes = x.cols() / 2;
    RowVector out(genes);
    const Matrix diff = x - x_hat;
    for (Eigen::Index g = 0; g < genes; ++g) {
        out[g] = (diff.col(g).squaredNorm() + diff.col(genes + g).squaredNorm()) /
                 (2.0 * static_cast<double>(std::max<Eigen::Index>(1, x.rows())));
    }
    return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && values[order[j]] == values[order[i]]) {
            ++j;
        }
        const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            ranks[order[k]] = rank;
        }
        i = j;
    }
    return ranks;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DomainError("spearman: inputs differ in length");
    }
    if (a.size() < 3) {
        throw DomainError("spearman: need at least three observations");
    }
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = (n + 1.0) / 2.0;
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - mean) * (rb[i] - mean);
        da += (ra[i] - mean) * (ra[i] - mean);
        db += (rb[i] - mean) * (rb[i] - mean);
    }
    if (da == 0.0 || db == 0.0) {
        return std::nullopt;
    }
    return num / std::sqrt(da * db);
}

CellUncertainty cv_uncertainty(const Vector& mu_t, const Vector& sigma_t, const Matrix& mu_c, const Matrix& sigma_c) {
    if (mu_t.size() != sigma_t.size()) {
        throw ShapeError("cv_uncertainty: mu_t and sigma_t differ in length");
    }
    if (mu_c.rows() != sigma_c.rows() || mu_c.cols() != sigma_c.cols()) {
        throw ShapeError("cv_uncertainty: mu_c and sigma_c differ in shape");
    }
    if (mu_c.cols() > 0 && mu_c.rows() != mu_t.size()) {
        throw ShapeError("cv_uncertainty: cell counts differ");
    }
    CellUncertainty out;
    out.cv_t.resize(mu_t.size());
    for (Eigen::Index i = 0; i < mu_t.size(); ++i) {
        if (mu_t[i] != 0.0) {
            out.cv_t[i] = std::abs(sigma_t[i] / mu_t[i]);
        }
    }
    if (mu_c.cols() > 0) {
        out.cv_c.resize(mu_c.rows());
        for (Eigen::Index i = 0; i < mu_c.rows(); ++i) {
            const double mean_norm = mu_c.row(i).squaredNorm();
            if (mean_norm > 0.0) {
                out.cv_c[i] = std::sqrt(sigma_c.row(i).squaredNorm() / mean_norm);
            }
        }
    }
    return out;
}

VelocityTable velocity_table(const Matrix& u_hat, const Matrix& s_hat, const Matrix& rho, const RowVector& alpha,
                             const RowVector& beta, const RowVector& gamma) {
    if (u_hat.rows() != s_hat.rows() || u_hat.cols() != s_hat.cols() || rho.rows() != u_hat.rows() ||
        rho.cols() != u_hat.cols() || alpha.size() != u_hat.cols() || beta.size() != u_hat.cols() ||
        gamma.size() != u_hat.cols()) {
        throw ShapeError("velocity_table: shape mismatch");
    }
    VelocityTable v;
    v.du_dt = (rho.array().rowwise() * alpha.array()) - (u_hat.array().rowwise() * beta.array());
    v.ds_dt = (u_hat.array().rowwise() * beta.array()) - (s_hat.array().rowwise() * gamma.array());
    return v;
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["model"] = model;
    j["value_space"] = value_space;
    auto put = [&](const char* prefix, const std::optional<ReconstructionMetrics>& m) {
        if (m) {
            j[std::string("mse_") + prefix] = m->mse;
            j[std::string("mae_") + prefix] = m->mae;
            j[std::string("ll_") + prefix] = m->ll;
        }
    };
    put("train", train);
    put("test", test);
    auto put_opt = [&](const char* key, const std::optional<double>& v) {
        if (v) {
            j[key] = *v;
        }
    };
    put_opt("k_t_true", time_spearman);
    put_opt("k_t_capture", capture_spearman);
    put_opt("k_t_info", informative_spearman);
    put_opt("runtime_seconds", runtime_seconds);
    if (!per_gene_mse.empty()) {
        nlohmann::ordered_json genes;
        for (const auto& [name, value] : per_gene_mse) {
            genes[name] = value;
        }
        j["per_gene_mse"] = genes;
    }
    if (!notes.empty()) {
        j["notes"] = notes;
    }
    return j.dump(2) + "\n";
}

}  // namespace velo
