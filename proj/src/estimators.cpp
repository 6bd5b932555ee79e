#include "velo/estimators.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "velo/dual.hpp"
#include "velo/error.hpp"

namespace velo {

namespace {

// Linear-interpolation quantile on a sorted copy.
double quantile_of(std::span<const double> values, double q) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Kinetic parameters of the EM model in optimisation coordinates.
struct EmCoords {
    std::array<double, 4> theta{};  // log alpha, log beta, log gamma, log t_off

    GeneKinetics kinetics() const {
        GeneKinetics p;
        p.alpha = std::exp(theta[0]);
        p.beta = std::exp(theta[1]);
        p.gamma = std::exp(theta[2]);
        p.t_on = 0.0;
        p.t_off = std::exp(theta[3]);
        return p;
    }
};

bool all_finite(const std::array<double, 4>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// MSE and its gradient with respect to the log-space coordinates.
double mse_and_gradient(std::span<const double> u, std::span<const double> s, const EmCoords& c,
                        std::span<const double> times, std::array<double, 4>& grad) {
    using D = Dual<4>;
    const D alpha = exp(D::variable(c.theta[0], 0));
    const D beta = exp(D::variable(c.theta[1], 1));
    const D gamma = exp(D::variable(c.theta[2], 2));
    const D t_off = exp(D::variable(c.theta[3], 3));
    const D zero(0.0);
    D total(0.0);
    for (std::size_t i = 0; i < u.size(); ++i) {
        D uh, sh;
        detail::phase_solution(alpha, beta, gamma, zero, t_off, zero, zero, D(times[i]), uh, sh);
        const D du = uh - u[i];
        const D ds = sh - s[i];
        total += du * du + ds * ds;
    }
    const double n = static_cast<double>(u.size());
    for (int k = 0; k < 4; ++k) {
        grad[k] = total.d[k] / n;
    }
    return total.v / n;
}

// Golden-section polish of each grid time within one grid spacing.
void polish_times(std::span<const double> u, std::span<const double> s, const GeneKinetics& p, double spacing,
                  double t_max, std::vector<double>& times) {
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    for (std::size_t i = 0; i < times.size(); ++i) {
        const auto cost = [&](double t) {
            const auto x = solve_phase(p, t);
            return (x.u - u[i]) * (x.u - u[i]) + (x.s - s[i]) * (x.s - s[i]);
        };
        double a = std::max(0.0, times[i] - spacing), b = std::min(t_max, times[i] + spacing);
        double c = b - r * (b - a), d = a + r * (b - a);
        double fc = cost(c), fd = cost(d);
        for (int k = 0; k < 40; ++k) {
            if (fc < fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = cost(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = cost(d);
            }
        }
        const double t = 0.5 * (a + b);
        if (cost(t) < cost(times[i])) {
            times[i] = t;
        }
    }
}

}  // namespace

SteadyStateFit fit_steady_state(std::span<const double> u, std::span<const double> s, double quantile) {
    if (u.size() != s.size()) {
        throw DomainError("fit_steady_state: u and s differ in length");
    }
    if (u.size() < 10) {
        throw DomainError("fit_steady_state: need at least 10 cells");
    }
    if (!(quantile > 0.5 && quantile < 1.0)) {
        throw DomainError("fit_steady_state: quantile must lie in (0.5, 1)");
    }
    SteadyStateFit fit;
    fit.quantile = quantile;
    fit.u_star = quantile_of(u, quantile);
    fit.s_star = quantile_of(s, quantile);
    fit.alpha_hat = fit.u_star;
    fit.beta_hat = 1.0;
    if (fit.s_star > 0.0 && fit.u_star > 0.0) {
        fit.gamma_hat = fit.u_star / fit.s_star;
        fit.estimable = true;
    }
    return fit;
}

std::vector<double> assign_times_grid(std::span<const double> u, std::span<const double> s,
                                      const GeneKinetics& params, int grid_size, double t_max) {
    if (u.size() != s.size()) {
        throw DomainError("assign_times_grid: u and s differ in length");
    }
    if (grid_size < 2 || !(t_max > 0.0)) {
        throw DomainError("assign_times_grid: need grid_size >= 2 and positive t_max");
    }
    params.validate();
    std::vector<double> grid(grid_size);
    std::vector<KineticState> curve(grid_size);
    for (int k = 0; k < grid_size; ++k) {
        grid[k] = t_max * static_cast<double>(k) / static_cast<double>(grid_size - 1);
        curve[k] = solve_phase(params, grid[k]);
    }
    const double wu = 0.5 / (params.sigma_u * params.sigma_u);
    const double ws = 0.5 / (params.sigma_s * params.sigma_s);
    std::vector<double> times(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_k = 0;
        for (int k = 0; k < grid_size; ++k) {
            const double du = u[i] - curve[k].u;
            const double ds = s[i] - curve[k].s;
            const double d2 = wu * du * du + ws * ds * ds;
            if (d2 < best) {  // strict: earlier grid points win ties
                best = d2;
                best_k = k;
            }
        }
        times[i] = grid[best_k];
    }
    return times;
}

double gene_mse(std::span<const double> u, std::span<const double> s, const GeneKinetics& params,
                std::span<const double> times) {
    if (u.size() != s.size() || u.size() != times.size()) {
        throw DomainError("gene_mse: inputs differ in length");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const auto p = solve_phase(params, times[i]);
        total += (p.u - u[i]) * (p.u - u[i]) + (p.s - s[i]) * (p.s - s[i]);
    }
    return total / static_cast<double>(std::max<std::size_t>(1, u.size()));
}

GeneEMFit fit_gene_em(std::span<const double> u, std::span<const double> s, const EMConfig& config) {
    if (u.size() != s.size()) {
        throw DomainError("fit_gene_em: u and s differ in length");
    }
    if (u.size() < 50) {
        throw DomainError("fit_gene_em: need at least 50 cells");
    }
    if (config.grid_size < 100) {
        throw DomainError("fit_gene_em: grid must have at least 100 points");
    }

    GeneEMFit fit;
    const auto ss = fit_steady_state(u, s, config.quantile);
    if (!ss.estimable) {
        fit.diagnostic = "unestimable: upper quantile of u or s is zero";
        fit.times.assign(u.size(), 0.0);
        return fit;
    }
    fit.estimable = true;

    const double spacing = config.t_max / (config.grid_size - 1);
    // E-step: best time per cell for the given rates.
    const auto assign = [&](const EmCoords& c) {
        auto times = assign_times_grid(u, s, c.kinetics(), config.grid_size, config.t_max);
        polish_times(u, s, c.kinetics(), spacing, config.t_max, times);
        return times;
    };

    // Start from the steady-state rates and the best of a few switch-off times.
    // The largest unspliced value bounds alpha/beta from below when induction saturates.
    EmCoords coords;
    const double u_top = *std::max_element(u.begin(), u.end());
    double best_mse = std::numeric_limits<double>::infinity();
    for (double alpha : {ss.alpha_hat, std::max(u_top, ss.alpha_hat)}) {
        for (int k = 1; k <= 20; ++k) {
            EmCoords trial;
            trial.theta = {std::log(alpha), 0.0, std::log(ss.gamma_hat), std::log(0.05 * k * config.t_max)};
            const auto times = assign_times_grid(u, s, trial.kinetics(), config.grid_size, config.t_max);
            const double mse = gene_mse(u, s, trial.kinetics(), times);
            if (mse < best_mse) {
                best_mse = mse;
                coords = trial;
            }
        }
    }

    // Each iteration reassigns times, then takes a quasi-Newton step on the
    // rates. Trial points are scored with their own time assignment, so the
    // recorded MSE never increases.
    std::array<double, 4> grad{};
    fit.times = assign(coords);
    double mse = mse_and_gradient(u, s, coords, fit.times, grad);
    fit.mse_history.push_back(mse);
    Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
    for (int iter = 0; iter < config.max_iterations; ++iter) {
        if (!std::isfinite(mse) || !all_finite(grad)) {
            fit.diagnostic = "non-finite M-step at iteration " + std::to_string(iter) + "; kept last finite iterate";
            break;
        }
        const Eigen::Vector4d g(grad[0], grad[1], grad[2], grad[3]);
        if (g.squaredNorm() == 0.0) {
            break;
        }
        Eigen::Vector4d dir = -h * g;
        if (dir.dot(g) >= 0.0) {
            h.setIdentity();
            dir = -g;
        }
        if (dir.norm() > 1.0) {
            dir.normalize();
        }
        bool accepted = false;
        double step = 1.0;
        for (int attempt = 0; attempt < 30; ++attempt, step *= 0.5) {
            EmCoords trial = coords;
            for (int j = 0; j < 4; ++j) {
                trial.theta[j] += step * dir[j];
            }
            auto times = assign(trial);
            std::array<double, 4> trial_grad{};
            const double trial_mse = mse_and_gradient(u, s, trial, times, trial_grad);
            if (!std::isfinite(trial_mse) || !all_finite(trial_grad) || trial_mse > mse + 1e-4 * step * dir.dot(g)) {
                continue;
            }
            const Eigen::Vector4d sk = step * dir;
            const Eigen::Vector4d yk = Eigen::Vector4d(trial_grad[0], trial_grad[1], trial_grad[2], trial_grad[3]) - g;
            const double sy = sk.dot(yk);
            if (sy > 1e-12 * sk.norm() * yk.norm()) {
                const double rho = 1.0 / sy;
                const Eigen::Matrix4d v = Eigen::Matrix4d::Identity() - rho * yk * sk.transpose();
                h = v.transpose() * h * v + rho * sk * sk.transpose();
            }
            coords = trial;
            fit.times = std::move(times);
            grad = trial_grad;
            accepted = true;
            break;
        }
        if (!accepted) {
            break;
        }
        const double previous = mse;
        mse = mse_and_gradient(u, s, coords, fit.times, grad);
        fit.mse_history.push_back(mse);
        fit.iterations = iter + 1;
        if (previous - mse < config.relative_tolerance * previous) {
            break;
        }
    }

    fit.params = coords.kinetics();
    fit.mse = mse;
    // Equal noise scales inside EM; report the pooled residual standard deviation.
    const double sigma = std::sqrt(std::max(fit.mse / 2.0, 1e-12));
    fit.params.sigma_u = sigma;
    fit.params.sigma_s = sigma;
    return fit;
}

Vector global_time(const Matrix& gene_times, const std::vector<bool>& estimable) {
    if (static_cast<Eigen::Index>(estimable.size()) != gene_times.cols()) {
        throw ShapeError("global_time: estimable mask does not match gene count");
    }
    std::vector<Eigen::Index> genes;
    for (Eigen::Index g = 0; g < gene_times.cols(); ++g) {
        if (estimable[g]) {
            genes.push_back(g);
        }
    }
    if (genes.empty()) {
        throw DomainError("global_time: no estimable genes");
    }
    Matrix scaled(gene_times.rows(), static_cast<Eigen::Index>(genes.size()));
    for (std::size_t k = 0; k < genes.size(); ++k) {
        const auto col = gene_times.col(genes[k]);
        const double lo = col.minCoeff(), hi = col.maxCoeff();
        if (hi > lo) {
            scaled.col(static_cast<Eigen::Index>(k)) = (col.array() - lo) / (hi - lo);
        } else {
            scaled.col(static_cast<Eigen::Index>(k)).setZero();
        }
    }
    Vector out(gene_times.rows());
    std::vector<double> row(genes.size());
    for (Eigen::Index i = 0; i < scaled.rows(); ++i) {
        for (std::size_t k = 0; k < genes.size(); ++k) {
            row[k] = scaled(i, static_cast<Eigen::Index>(k));
        }
        std::sort(row.begin(), row.end());
        const std::size_t m = row.size();
        out[i] = m % 2 == 1 ? row[m / 2] : 0.5 * (row[m / 2 - 1] + row[m / 2]);
    }
    return out;
}

}  // namespace velo
