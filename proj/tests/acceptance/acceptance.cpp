// Acceptance run: one PASS/FAIL line per criterion, exit code 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "velo/cli.hpp"
#include "velo/estimators.hpp"
#include "velo/evaluation.hpp"
#include "velo/io.hpp"
#include "velo/kinetics.hpp"
#include "velo/models.hpp"
#include "velo/nn.hpp"
#include "velo/simulator.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace velo;
namespace fs = std::filesystem;

namespace {

// Thresholds.
constexpr double kKineticsTolerance = 1e-6;
constexpr double kKineticsSeconds = 5.0;
constexpr double kLayerGradTolerance = 1e-4;
constexpr double kElboGradTolerance = 1e-3;
constexpr double kGradSeconds = 30.0;
constexpr double kKlSpotTolerance = 1e-9;
constexpr double kTimeSpearman = 0.8;
constexpr double kSecondsPerSeed = 600.0;
constexpr double kHeldOutRatio = 0.2;
constexpr double kGammaTolerance = 0.05;
constexpr double kEmSpearman = 0.99;
constexpr double kBoostRatio = 0.5;
const std::vector<std::uint64_t> kSeeds{0, 1, 2};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::vector<double> as_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

// ---------------------------------------------------------------- training runs

struct RunSummary {
    double spearman = 0.0;
    double mse_train = 0.0;
    double mse_test = 0.0;
    std::vector<double> boost_gene_mse;
    double seconds = 0.0;
    bool aborted = false;
};

std::map<std::string, RunSummary> g_runs;

const RunSummary& run(const std::string& preset_name, ModelKind kind, std::uint64_t seed, bool capture_bins) {
    const std::string key = preset_name + "/" + to_string(kind) + "/" + std::to_string(seed) + (capture_bins ? "/info" : "");
    if (auto it = g_runs.find(key); it != g_runs.end()) {
        return it->second;
    }
    const auto preset = sim::make_preset(preset_name, seed);
    const auto simulation = sim::simulate(preset.tree, preset.n_cells, preset.noise_fraction, seed);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.t_max = preset.t_max;
    std::optional<std::vector<double>> capture;
    if (capture_bins) {
        const auto bins = sim::capture_time_labels(simulation.truth.time, 7);
        capture = std::vector<double>(bins.begin(), bins.end());
    }

    const auto start = Clock::now();
    const auto result = train(simulation.data, cfg, kind, capture);
    RunSummary s;
    s.seconds = seconds_since(start);
    s.aborted = result.aborted;
    s.mse_train = result.history.back().mse_train;
    s.mse_test = result.history.back().mse_test;
    const auto pred = predict(result.state, simulation.data);
    s.spearman = spearman(as_vector(pred.posterior.mu_t), as_vector(simulation.truth.time)).value_or(0.0);
    const RowVector per_gene = per_gene_mse(simulation.data.features(), reconstruction(pred));
    for (std::size_t g = 0; g < simulation.truth.genes.size(); ++g) {
        if (simulation.truth.genes[g].kind == "boost") {
            s.boost_gene_mse.push_back(per_gene[static_cast<Eigen::Index>(g)]);
        }
    }
    std::cerr << "  run " << key << ": spearman " << s.spearman << ", mse train " << s.mse_train << ", test "
              << s.mse_test << ", " << s.seconds << " s" << (s.aborted ? " (aborted: " + result.diagnostic + ")" : "")
              << "\n";
    return g_runs.emplace(key, s).first->second;
}

// ---------------------------------------------------------------- criteria

// Piecewise RK4 from rest, reported on an increasing grid, never stepping across a switch.
std::vector<oracle::UV> rk4_on_grid(const GeneKinetics& k, const std::vector<double>& grid) {
    std::vector<double> stops{k.t_on, k.t_off};
    std::vector<oracle::UV> out;
    oracle::UV x;
    double t = 0.0;
    for (double target : grid) {
        while (t < target) {
            double next = target;
            for (double b : stops) {
                if (b > t && b < next) next = b;
            }
            const double rate = (t >= k.t_on && t < k.t_off) ? k.alpha : 0.0;
            x = oracle::integrate([rate](double) { return rate; }, k.beta, k.gamma, x, t, next, 1e-4);
            t = next;
        }
        out.push_back(x);
    }
    return out;
}

Verdict kinetics_oracle() {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> rate(0.1, 5.0), on(0.0, 3.0), len(0.5, 10.0), near(-1.0, 1.0);
    std::vector<double> grid(50);
    for (int i = 0; i < 50; ++i) grid[i] = 0.3 * (i + 1);
    const auto start = Clock::now();
    double worst = 0.0;
    int degenerate = 0;
    for (int set = 0; set < 100; ++set) {
        GeneKinetics k;
        k.alpha = rate(rng);
        k.beta = rate(rng);
        k.gamma = set < 10 ? k.beta * (1.0 + 5e-6 * near(rng)) : rate(rng);
        k.t_on = on(rng);
        k.t_off = k.t_on + len(rng);
        if (std::abs(k.beta - k.gamma) / k.beta < 1e-5) ++degenerate;
        std::vector<KineticState> analytic;
        for (double t : grid) analytic.push_back(solve_phase(k, t));
        const auto ref = rk4_on_grid(k, grid);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            worst = std::max({worst, std::abs(analytic[i].u - ref[i].u), std::abs(analytic[i].s - ref[i].s)});
        }
    }
    const double secs = seconds_since(start);
    return {worst <= kKineticsTolerance && secs < kKineticsSeconds && degenerate >= 10,
            fmt("max abs error %.2e (<= %.0e) over 100 sets, %d near-equal rate sets, %.2f s with the reference (< %.0f s)",
                worst, kKineticsTolerance, degenerate, secs, kKineticsSeconds)};
}

Verdict gradient_fidelity() {
    const auto start = Clock::now();
    nn::Rng rng(7);
    double layer_worst = 0.0;
    const std::vector<std::pair<nn::Activation, nn::Activation>> acts{
        {nn::Activation::leaky_relu, nn::Activation::identity},
        {nn::Activation::softplus, nn::Activation::sigmoid},
        {nn::Activation::sigmoid, nn::Activation::softplus}};
    for (const auto& [hidden, out] : acts) {
        for (bool bn : {false, true}) {
            for (nn::Mode mode : {nn::Mode::train, nn::Mode::eval}) {
                nn::MLPSpec spec;
                spec.widths = {5, 8, 6, 3};
                spec.hidden_activation = hidden;
                spec.output_activation = out;
                spec.dropout = 0.0;
                spec.batch_norm = bn;
                const auto params = nn::init_params(spec, rng);
                const Matrix x = gradcheck::random_matrix(4, 5, rng);
                layer_worst = std::max(layer_worst, gradcheck::worst_gradient_error(spec, params, x, mode, rng));
            }
        }
    }
    double elbo_worst = 0.0, loss_gap = 0.0;
    int checked = 0;
    for (ModelKind kind : {ModelKind::basic, ModelKind::full}) {
        const auto r = gradcheck::check_model_gradients(kind, kind == ModelKind::full ? 21 : 20);
        elbo_worst = std::max(elbo_worst, r.worst);
        loss_gap = std::max(loss_gap, r.loss_gap);
        checked += r.checked;
    }
    const double secs = seconds_since(start);
    return {layer_worst < kLayerGradTolerance && elbo_worst < kElboGradTolerance && loss_gap < 1e-9 &&
                secs < kGradSeconds,
            fmt("layers %.2e (< %.0e), tiny-model ELBO %.2e (< %.0e) over %d scalars, %.2f s (< %.0f s)",
                layer_worst, kLayerGradTolerance, elbo_worst, kElboGradTolerance, checked, secs, kGradSeconds)};
}

Verdict kl_properties() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> mu(-10.0, 10.0), sd(0.01, 10.0);
    double lowest = std::numeric_limits<double>::infinity(), identical = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double mq = mu(rng), sq = sd(rng), mp = mu(rng), sp = sd(rng);
        lowest = std::min(lowest, gaussian_kl(mq, sq, mp, sp));
        identical = std::max(identical, std::abs(gaussian_kl(mq, sq, mq, sq)));
    }
    const double spot1 = std::abs(gaussian_kl(1.0, 1.0, 0.0, 1.0) - 0.5);
    // N(0, 0.25) against N(0, 1): 0.5 * (0.25 - 1 - log 0.25).
    const double spot2 = std::abs(gaussian_kl(0.0, 0.5, 0.0, 1.0) - 0.5 * (0.25 - 1.0 - std::log(0.25)));
    const double spot2_rounded = std::abs(gaussian_kl(0.0, 0.5, 0.0, 1.0) - 0.318147);
    return {lowest >= 0.0 && identical == 0.0 && spot1 <= kKlSpotTolerance && spot2 <= kKlSpotTolerance &&
                spot2_rounded < 5e-7,
            fmt("min over 1e4 pairs %.3e, identical pairs %.1e, spot errors %.1e and %.1e (<= %.0e)", lowest,
                identical, spot1, spot2, kKlSpotTolerance)};
}

Verdict time_recovery() {
    std::vector<double> rho;
    double slowest = 0.0;
    for (auto seed : kSeeds) {
        const auto& r = run("S1", ModelKind::basic, seed, false);
        rho.push_back(r.spearman);
        slowest = std::max(slowest, r.seconds);
    }
    const double med = oracle::median(rho);
    return {med >= kTimeSpearman && slowest <= kSecondsPerSeed,
            fmt("median Spearman %.4f (>= %.1f) [%.4f %.4f %.4f], slowest seed %.0f s (<= %.0f s)", med,
                kTimeSpearman, rho[0], rho[1], rho[2], slowest, kSecondsPerSeed)};
}

Verdict mixture_superiority() {
    int wins = 0, total = 0;
    std::ostringstream detail;
    for (const char* preset : {"S2", "S3"}) {
        detail << preset << ":";
        for (auto seed : kSeeds) {
            const auto& b = run(preset, ModelKind::basic, seed, false);
            const auto& f = run(preset, ModelKind::full, seed, false);
            wins += f.mse_train < b.mse_train ? 1 : 0;
            ++total;
            detail << fmt(" %.3f<%.3f", f.mse_train, b.mse_train);
        }
        detail << " ";
    }
    return {wins == total, fmt("full < basic train MSE on %d/%d runs; ", wins, total) + detail.str()};
}

Verdict generalization() {
    bool pass = true;
    std::ostringstream detail;
    for (auto seed : kSeeds) {
        const auto& f = run("S2", ModelKind::full, seed, false);
        const double gap = std::abs(f.mse_test - f.mse_train) / f.mse_train;
        pass = pass && gap <= kHeldOutRatio;
        detail << fmt(" seed %d: train %.4f test %.4f (%.1f%%)", static_cast<int>(seed), f.mse_train, f.mse_test,
                      100.0 * gap);
    }
    return {pass, fmt("held-out within %.0f%% of train on every seed;", 100.0 * kHeldOutRatio) + detail.str()};
}

Verdict informative_prior() {
    std::vector<double> info, plain;
    for (auto seed : kSeeds) {
        plain.push_back(run("S1", ModelKind::basic, seed, false).spearman);
        info.push_back(run("S1", ModelKind::basic, seed, true).spearman);
    }
    const double mi = oracle::median(info), mp = oracle::median(plain);
    return {mi >= mp, fmt("median Spearman informative %.5f >= uninformative %.5f", mi, mp)};
}

Verdict baseline_sanity() {
    // Steady-state samples with 2% noise.
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> rate(0.2, 3.0);
    std::normal_distribution<double> noise(0.0, 0.02);
    double worst_gamma = 0.0;
    for (int gene = 0; gene < 20; ++gene) {
        const double alpha = rate(rng), gamma = rate(rng);
        std::vector<double> u(500), s(500);
        for (int i = 0; i < 500; ++i) {
            u[i] = alpha * (1.0 + noise(rng));
            s[i] = alpha / gamma * (1.0 + noise(rng));
        }
        const auto fit = fit_steady_state(u, s);
        worst_gamma = std::max(worst_gamma, std::abs(fit.gamma_hat / gamma - 1.0));
    }

    const auto preset = sim::make_preset("S1", 0);
    const auto clean = sim::simulate(preset.tree, preset.n_cells, 0.0, 0);
    const auto truth = as_vector(clean.truth.time);
    const Eigen::Index n = clean.data.unspliced.rows(), genes = clean.data.unspliced.cols();
    Matrix times(n, genes);
    std::vector<bool> estimable;
    std::vector<double> per_gene;
    int increases = 0;
    for (Eigen::Index g = 0; g < genes; ++g) {
        const Vector u = clean.data.unspliced.col(g), s = clean.data.spliced.col(g);
        const auto fit = fit_gene_em(as_vector(u), as_vector(s));
        for (std::size_t k = 1; k < fit.mse_history.size(); ++k) {
            increases += fit.mse_history[k] > fit.mse_history[k - 1] ? 1 : 0;
        }
        estimable.push_back(fit.estimable);
        for (Eigen::Index i = 0; i < n; ++i) times(i, g) = fit.times[i];
        per_gene.push_back(spearman(fit.times, truth).value_or(0.0));
    }
    const double median_gene = oracle::median(per_gene);
    const double global = *spearman(as_vector(global_time(times, estimable)), truth);
    return {worst_gamma <= kGammaTolerance && median_gene >= kEmSpearman && global >= kEmSpearman && increases == 0,
            fmt("gamma worst rel error %.4f (<= %.2f); EM median per-gene Spearman %.4f, global %.4f (>= %.2f), "
                "%d MSE increases",
                worst_gamma, kGammaTolerance, median_gene, global, kEmSpearman, increases)};
}

Verdict boost_handling() {
    bool pass = true;
    std::ostringstream detail;
    for (auto seed : kSeeds) {
        const auto& b = run("S3", ModelKind::basic, seed, false);
        const auto& f = run("S3", ModelKind::full, seed, false);
        const double mb = oracle::median(b.boost_gene_mse), mf = oracle::median(f.boost_gene_mse);
        pass = pass && !f.boost_gene_mse.empty() && mf <= kBoostRatio * mb;
        detail << fmt(" seed %d: %.3f vs %.3f (ratio %.2f)", static_cast<int>(seed), mf, mb, mf / mb);
    }
    return {pass, fmt("median boost-gene MSE full <= %.1f x basic on every seed;", kBoostRatio) + detail.str()};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    if (!fs::exists(dir)) {
        return files;
    }
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().filename().string().rfind("run_meta_", 0) != 0) {
            files[fs::relative(e.path(), dir).string()] = read_text(e.path());
        }
    }
    return files;
}

Verdict determinism_and_io() {
    TempDir dir("acceptance");
    std::ostringstream sink;
    bool commands_ok = true;
    for (const char* r : {"a", "b"}) {
        const auto base = dir / r;
        const std::vector<std::vector<std::string>> steps{
            {"simulate", "--preset", "S3", "--seed", "4", "--out", (base / "data").string()},
            {"preprocess", "--input", (base / "data").string(), "--out", (base / "pre").string(), "--set",
             "n_top_genes=100"},
            {"fit-vae", "--model", "full", "--seed", "4", "--epochs", "3", "--input", (base / "pre").string(), "--out",
             (base / "fit").string(), "--set", "encoder_hidden=32,16", "--set", "decoder_hidden=16,32"},
            {"refine", "--input", (base / "pre").string(), "--out", (base / "fit").string(), "--set",
             "refine_epochs=2", "--set", "encoder_hidden=32,16", "--set", "decoder_hidden=16,32"},
            {"evaluate", "--input", (base / "pre").string(), "--out", (base / "fit").string()},
            {"fit-em", "--input", (base / "pre").string(), "--out", (base / "em").string()},
            {"plot", "--input", (base / "pre").string(), "--out", (base / "fit").string()},
        };
        for (const auto& args : steps) {
            commands_ok = commands_ok && run_cli(args, sink, sink) == 0;
        }
    }
    const auto a = snapshot(dir / "a"), b = snapshot(dir / "b");
    const bool identical = commands_ok && !a.empty() && a == b;

    std::mt19937_64 rng(9);
    std::lognormal_distribution<double> value(0.0, 2.0);
    LabeledMatrix m;
    for (int i = 0; i < 37; ++i) m.row_ids.push_back("cell" + std::to_string(i));
    for (int g = 0; g < 11; ++g) m.col_names.push_back("gene" + std::to_string(g));
    m.values.resize(37, 11);
    for (Eigen::Index k = 0; k < m.values.size(); ++k) {
        m.values.data()[k] = k % 3 == 0 ? 0.0 : value(rng);
    }
    write_csv_matrix(dir / "m.csv", m);
    write_mtx_matrix(dir / "m.mtx", m);
    const bool csv_exact = read_csv_matrix(dir / "m.csv").values == m.values;
    const bool mtx_exact = read_mtx_matrix(dir / "m.mtx").values == m.values;
    return {identical && csv_exact && mtx_exact,
            fmt("%zu output files byte-identical across reruns: %s; csv round trip exact: %s; mtx round trip exact: %s",
                a.size(), identical ? "yes" : "no", csv_exact ? "yes" : "no", mtx_exact ? "yes" : "no")};
}

}  // namespace

// Optional arguments select criteria by number; no arguments runs all of them.
int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"kinetics oracle", kinetics_oracle},
        {"gradient fidelity", gradient_fidelity},
        {"KL properties", kl_properties},
        {"basic-model time recovery", time_recovery},
        {"mixture model beats basic", mixture_superiority},
        {"held-out generalization", generalization},
        {"informative prior", informative_prior},
        {"baseline sanity", baseline_sanity},
        {"boost genes", boost_handling},
        {"determinism and I/O", determinism_and_io},
    };
    // Progress goes to stderr; the verdict lines are repeated together at the end.
    std::vector<std::string> lines;
    int failed = 0;
    std::vector<bool> selected(criteria.size(), argc < 2);
    for (int a = 1; a < argc; ++a) {
        const auto k = static_cast<std::size_t>(std::stoul(argv[a]));
        if (k < 1 || k > criteria.size()) {
            std::cerr << "no criterion " << argv[a] << "\n";
            return 2;
        }
        selected[k - 1] = true;
    }
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!selected[i]) {
            continue;
        }
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        lines.push_back(fmt("[%s] %2zu %s: ", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str()) + v.detail);
        std::cerr << lines.back() << "\n";
    }
    std::cout << "\n";
    for (const auto& l : lines) std::cout << l << "\n";
    std::cout << (failed == 0 ? "all selected criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
    return failed == 0 ? 0 : 1;
}
