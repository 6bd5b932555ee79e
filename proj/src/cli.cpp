#include "velo/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "velo/config.hpp"
#include "velo/error.hpp"
#include "velo/estimators.hpp"
#include "velo/evaluation.hpp"
#include "velo/io.hpp"
#include "velo/models.hpp"
#include "velo/preprocess.hpp"
#include "velo/simulator.hpp"
#include "velo/svg.hpp"

namespace velo {

namespace fs = std::filesystem;

namespace {

constexpr int kCaptureBins = 7;

struct Context {
    std::string command;
    KeyValueConfig kv;
    RunConfig rc;
    std::ostream& out;
};

fs::path require_out(const RunConfig& rc) {
    if (rc.out_dir.empty()) {
        throw InputError("no output directory (set 'out' or pass --out)");
    }
    fs::create_directories(rc.out_dir);
    return rc.out_dir;
}

void require_seed(const RunConfig& rc) {
    if (!rc.seed_given) {
        throw InputError("a seed is required (set 'seed' or pass --seed)");
    }
}

void require_exists(const fs::path& p, const std::string& what) {
    if (p.empty() || !fs::exists(p)) {
        throw InputError(what + " '" + p.string() + "' does not exist");
    }
}

ExpressionMatrix load_input(const RunConfig& rc) {
    if (!rc.input_dir.empty()) {
        require_exists(rc.input_dir, "input directory");
        return read_expression(rc.input_dir);
    }
    if (rc.unspliced.empty() || rc.spliced.empty()) {
        throw InputError("no input (set 'input' to a data directory, or 'unspliced' and 'spliced')");
    }
    require_exists(rc.unspliced, "unspliced matrix");
    require_exists(rc.spliced, "spliced matrix");
    auto data = load_matrices(rc.unspliced, rc.spliced, parse_matrix_format(rc.format));
    if (!rc.annotations.empty()) {
        require_exists(rc.annotations, "annotation file");
        load_cell_annotations(rc.annotations, data);
    }
    return data;
}

std::string fmt(double x) { return format_double(x); }

void write_key_values(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& kvs) {
    std::ofstream f(path);
    if (!f) {
        throw InputError("cannot write '" + path.string() + "'");
    }
    for (const auto& [k, v] : kvs) {
        f << k << " = " << v << '\n';
    }
}

void write_run_meta(const Context& ctx, double wall_seconds) {
    if (ctx.rc.out_dir.empty()) {
        return;
    }
    fs::create_directories(ctx.rc.out_dir);
    std::ofstream f(ctx.rc.out_dir / ("run_meta_" + ctx.command + ".txt"));
    f << "command = " << ctx.command << '\n';
    f << "seed = " << (ctx.rc.seed_given ? std::to_string(ctx.rc.seed) : "unset") << '\n';
    f << "version = " << kVersion << '\n';
    f << "eigen = " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << '\n';
    f << "compiler = " << __VERSION__ << '\n';
    f << "wall_time_seconds = " << fmt(wall_seconds) << '\n';
    for (const auto& [k, v] : ctx.kv.entries()) {
        f << "config." << k << " = " << v << '\n';
    }
}

LabeledMatrix labeled(const ExpressionMatrix& data, const Matrix& m) { return {data.cell_ids, data.gene_names, m}; }

void write_fitted(const fs::path& dir, const ExpressionMatrix& data, const Matrix& u_hat, const Matrix& s_hat) {
    write_csv_matrix(dir / "fitted_unspliced.csv", labeled(data, u_hat));
    write_csv_matrix(dir / "fitted_spliced.csv", labeled(data, s_hat));
}

// ---- simulate ------------------------------------------------------------

void cmd_simulate(Context& ctx) {
    require_seed(ctx.rc);
    const auto dir = require_out(ctx.rc);
    const auto preset = sim::make_preset(ctx.rc.preset, ctx.rc.seed);
    auto result = sim::simulate(preset.tree, preset.n_cells, preset.noise_fraction, ctx.rc.seed);
    const auto bins = sim::capture_time_labels(result.truth.time, kCaptureBins);
    auto& data = result.data;
    data.capture_times = std::vector<double>(bins.begin(), bins.end());
    write_expression(dir, data);

    CsvTable truth{{"cell_id", "true_time", "branch", "capture_bin"}, {}};
    for (Eigen::Index i = 0; i < data.n_cells(); ++i) {
        truth.rows.push_back({data.cell_ids[i], fmt(result.truth.time[i]),
                              result.truth.branch_names[result.truth.branch[i]], std::to_string(bins[i])});
    }
    write_csv(dir / "truth.csv", truth);
    CsvTable params{{"gene", "kind", "alpha", "beta", "gamma", "sigma_u", "sigma_s", "schedule"}, {}};
    for (std::size_t g = 0; g < result.truth.genes.size(); ++g) {
        const auto& gs = result.truth.genes[g];
        const auto e = static_cast<Eigen::Index>(g);
        params.rows.push_back({gs.name, gs.kind, fmt(gs.alpha), fmt(gs.beta), fmt(gs.gamma),
                               fmt(result.truth.sigma_u[e]), fmt(result.truth.sigma_s[e]), result.truth.schedules[g]});
    }
    write_csv(dir / "truth_params.csv", params);
    write_csv_matrix(dir / "truth_rho.csv", labeled(data, result.truth.rho));
    ctx.out << "simulated " << data.n_cells() << " cells x " << data.n_genes() << " genes (" << preset.name
            << ") into " << dir.string() << '\n';
}

// ---- preprocess ----------------------------------------------------------

void cmd_preprocess(Context& ctx) {
    const auto dir = require_out(ctx.rc);
    const auto raw = load_input(ctx.rc);
    const auto processed = preprocess(raw, ctx.rc.preprocess);
    write_expression(dir, processed);
    // Cells are never dropped, so per-cell ground truth still applies.
    if (!ctx.rc.input_dir.empty() && fs::exists(ctx.rc.input_dir / "truth.csv")) {
        fs::copy_file(ctx.rc.input_dir / "truth.csv", dir / "truth.csv", fs::copy_options::overwrite_existing);
    }
    ctx.out << "preprocessed to " << processed.n_cells() << " cells x " << processed.n_genes() << " genes\n";
}

// ---- baselines -----------------------------------------------------------

void cmd_fit_steady(Context& ctx) {
    const auto dir = require_out(ctx.rc);
    const auto data = load_input(ctx.rc);
    CsvTable t{{"gene", "alpha", "beta", "gamma", "u_star", "s_star", "estimable"}, {}};
    for (Eigen::Index g = 0; g < data.n_genes(); ++g) {
        const Vector u = data.unspliced.col(g), s = data.spliced.col(g);
        const auto fit = fit_steady_state({u.data(), static_cast<std::size_t>(u.size())},
                                          {s.data(), static_cast<std::size_t>(s.size())});
        t.rows.push_back({data.gene_names[g], fmt(fit.alpha_hat), fmt(fit.beta_hat), fmt(fit.gamma_hat),
                          fmt(fit.u_star), fmt(fit.s_star), fit.estimable ? "1" : "0"});
    }
    write_csv(dir / "params.csv", t);
    write_key_values(dir / "model_info.txt", {{"model", "steady_state"}});
    ctx.out << "fitted steady-state rates for " << data.n_genes() << " genes\n";
}

void cmd_fit_em(Context& ctx) {
    const auto dir = require_out(ctx.rc);
    const auto data = load_input(ctx.rc);
    EMConfig cfg;
    cfg.t_max = ctx.rc.train.t_max;
    const Eigen::Index n = data.n_cells(), genes = data.n_genes();
    Matrix gene_times = Matrix::Zero(n, genes);
    Matrix u_hat(n, genes), s_hat(n, genes);
    std::vector<bool> estimable(genes);
    CsvTable t{{"gene", "alpha", "beta", "gamma", "t_on", "t_off", "sigma_u", "sigma_s", "mse", "iterations",
                "estimable"},
               {}};
    for (Eigen::Index g = 0; g < genes; ++g) {
        const Vector u = data.unspliced.col(g), s = data.spliced.col(g);
        const auto fit = fit_gene_em({u.data(), static_cast<std::size_t>(n)}, {s.data(), static_cast<std::size_t>(n)},
                                     cfg);
        estimable[g] = fit.estimable;
        for (Eigen::Index i = 0; i < n; ++i) {
            gene_times(i, g) = fit.times[i];
            const auto st = fit.estimable ? solve_phase(fit.params, fit.times[i]) : KineticState{};
            u_hat(i, g) = st.u;
            s_hat(i, g) = st.s;
        }
        const auto& p = fit.params;
        t.rows.push_back({data.gene_names[g], fmt(p.alpha), fmt(p.beta), fmt(p.gamma), fmt(p.t_on), fmt(p.t_off),
                          fmt(p.sigma_u), fmt(p.sigma_s), fmt(fit.mse), std::to_string(fit.iterations),
                          fit.estimable ? "1" : "0"});
        if (!fit.diagnostic.empty()) {
            ctx.out << "gene " << data.gene_names[g] << ": " << fit.diagnostic << '\n';
        }
    }
    const Vector global = global_time(gene_times, estimable);
    write_csv(dir / "params.csv", t);
    write_csv_matrix(dir / "gene_times.csv", labeled(data, gene_times));
    CsvTable times{{"cell_id", "time"}, {}};
    for (Eigen::Index i = 0; i < n; ++i) {
        times.rows.push_back({data.cell_ids[i], fmt(global[i])});
    }
    write_csv(dir / "times.csv", times);
    write_fitted(dir, data, u_hat, s_hat);
    write_key_values(dir / "model_info.txt",
                     {{"model", "em"}, {"time_source", "global_time_standin (median of min-max scaled gene times)"}});
    ctx.out << "fitted per-gene EM for " << genes << " genes\n";
}

// ---- VAE -----------------------------------------------------------------

void write_prediction(const fs::path& dir, const ExpressionMatrix& data, const ModelState& state) {
    const auto p = predict(state, data);
    const auto cv = cv_uncertainty(p.posterior.mu_t, p.posterior.sigma_t, p.posterior.mu_c, p.posterior.sigma_c);
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); };

    CsvTable times{{"cell_id", "time", "time_sigma", "cv_t"}, {}};
    for (Eigen::Index i = 0; i < data.n_cells(); ++i) {
        times.rows.push_back({data.cell_ids[i], fmt(p.posterior.mu_t[i]), fmt(p.posterior.sigma_t[i]), opt(cv.cv_t[i])});
    }
    write_csv(dir / "times.csv", times);

    if (state.kind == ModelKind::full) {
        CsvTable st{{"cell_id"}, {}};
        for (int k = 0; k < state.latent_dim; ++k) {
            st.header.push_back("c" + std::to_string(k + 1));
        }
        for (int k = 0; k < state.latent_dim; ++k) {
            st.header.push_back("c" + std::to_string(k + 1) + "_sigma");
        }
        st.header.push_back("cv_c");
        for (Eigen::Index i = 0; i < data.n_cells(); ++i) {
            std::vector<std::string> row{data.cell_ids[i]};
            for (int k = 0; k < state.latent_dim; ++k) {
                row.push_back(fmt(p.posterior.mu_c(i, k)));
            }
            for (int k = 0; k < state.latent_dim; ++k) {
                row.push_back(fmt(p.posterior.sigma_c(i, k)));
            }
            row.push_back(opt(cv.cv_c[i]));
            st.rows.push_back(std::move(row));
        }
        write_csv(dir / "state.csv", st);
    }

    CsvTable params{{"gene", "alpha", "beta", "gamma", "t_on", "t_off", "sigma_u", "sigma_s", "default_initialized"},
                    {}};
    for (int g = 0; g < state.n_genes; ++g) {
        const auto k = state.genes.kinetics(g);
        params.rows.push_back({state.gene_names[g], fmt(k.alpha), fmt(k.beta), fmt(k.gamma), fmt(k.t_on),
                               fmt(k.t_off), fmt(k.sigma_u), fmt(k.sigma_s),
                               state.default_initialized[g] ? "1" : "0"});
    }
    write_csv(dir / "params.csv", params);
    write_csv_matrix(dir / "rho.csv", labeled(data, p.rho));

    LabeledMatrix vel;
    vel.row_ids = data.cell_ids;
    for (const auto& g : data.gene_names) {
        vel.col_names.push_back("du_" + g);
    }
    for (const auto& g : data.gene_names) {
        vel.col_names.push_back("ds_" + g);
    }
    vel.values.resize(data.n_cells(), 2 * data.n_genes());
    vel.values << p.du_dt, p.ds_dt;
    write_csv_matrix(dir / "velocity.csv", vel);
    write_fitted(dir, data, p.u_hat, p.s_hat);
}

void save_model_file(const fs::path& path, const ModelState& state) {
    std::ofstream f(path);
    if (!f) {
        throw InputError("cannot write '" + path.string() + "'");
    }
    save_model(f, state);
}

ModelState load_model_file(const fs::path& path) {
    require_exists(path, "model checkpoint");
    std::ifstream f(path);
    return load_model(f);
}

std::optional<std::vector<double>> capture_prior(const RunConfig& rc, const ExpressionMatrix& data) {
    if (!rc.use_capture_prior) {
        return std::nullopt;
    }
    if (!data.capture_times) {
        throw InputError("capture_prior = 1 but the input has no capture_time annotation");
    }
    return data.capture_times;
}

void cmd_fit_vae(Context& ctx) {
    require_seed(ctx.rc);
    const auto dir = require_out(ctx.rc);
    const auto data = load_input(ctx.rc);
    const auto result = train(data, ctx.rc.train, ctx.rc.model, capture_prior(ctx.rc, data));
    if (result.aborted) {
        ctx.out << "training stopped early: " << result.diagnostic << '\n';
    }
    CsvTable hist{{"epoch", "elbo", "kl_t", "kl_c", "mse_train", "mse_test"}, {}};
    for (const auto& r : result.history) {
        hist.rows.push_back({std::to_string(r.epoch), fmt(r.elbo), fmt(r.kl_t), fmt(r.kl_c), fmt(r.mse_train),
                             fmt(r.mse_test)});
    }
    write_csv(dir / "history.csv", hist);
    CsvTable split{{"cell_id", "split"}, {}};
    std::vector<std::string> which(data.n_cells());
    for (auto i : result.train_cells) {
        which[i] = "train";
    }
    for (auto i : result.test_cells) {
        which[i] = "test";
    }
    for (Eigen::Index i = 0; i < data.n_cells(); ++i) {
        split.rows.push_back({data.cell_ids[i], which[i]});
    }
    write_csv(dir / "split.csv", split);
    save_model_file(dir / "model.txt", result.state);
    write_prediction(dir, data, result.state);
    write_key_values(dir / "model_info.txt",
                     {{"model", to_string(ctx.rc.model)},
                      {"capture_prior", ctx.rc.use_capture_prior ? "1" : "0"},
                      {"prior_t0", fmt(result.state.prior.t0)},
                      {"prior_sigma0", fmt(result.state.prior.sigma0)},
                      {"sigma_heads", "softplus"},
                      {"epochs_run", std::to_string(result.history.size())},
                      {"aborted", result.aborted ? "1" : "0"}});
    if (!result.history.empty()) {
        ctx.out << "trained " << to_string(ctx.rc.model) << " model: train MSE "
                << fmt(result.history.back().mse_train) << ", test MSE " << fmt(result.history.back().mse_test)
                << '\n';
    }
}

fs::path model_path_for(const RunConfig& rc) {
    if (!rc.model_path.empty()) {
        return rc.model_path;
    }
    if (!rc.out_dir.empty()) {
        return rc.out_dir / "model.txt";
    }
    throw InputError("no model checkpoint (set 'model_path' or pass --model-path)");
}

void cmd_refine(Context& ctx) {
    const auto model_file = model_path_for(ctx.rc);
    const auto state = load_model_file(model_file);
    const auto dir = require_out(ctx.rc);
    const auto data = load_input(ctx.rc);
    const auto& t = ctx.rc.train;
    const auto r = refine_initial_conditions(state, data, t.window_far(), t.window_near(), t);
    save_model_file(dir / "model.txt", r.state);
    write_prediction(dir, data, r.state);
    std::vector<std::pair<std::string, std::string>> info;
    if (fs::exists(dir / "model_info.txt")) {
        const auto previous = KeyValueConfig::load(dir / "model_info.txt");
        for (const auto& [k, v] : previous.entries()) {
            if (k != "refined" && k != "refine_rolled_back") {
                info.emplace_back(k, v);
            }
        }
    } else {
        info.emplace_back("model", to_string(state.kind));
    }
    info.emplace_back("refined", r.rolled_back ? "0" : "1");
    info.emplace_back("refine_rolled_back", r.rolled_back ? "1" : "0");
    write_key_values(dir / "model_info.txt", info);
    ctx.out << "refinement: MSE " << fmt(r.mse_before) << " -> " << fmt(r.mse_after)
            << (r.rolled_back ? " (rolled back)" : "") << '\n';
}

void cmd_predict(Context& ctx) {
    const auto state = load_model_file(model_path_for(ctx.rc));
    const auto dir = require_out(ctx.rc);
    const auto data = load_input(ctx.rc);
    write_prediction(dir, data, state);
    ctx.out << "wrote predictions for " << data.n_cells() << " cells\n";
}

// ---- evaluate / plot -----------------------------------------------------

std::optional<std::vector<double>> column_by_cell(const fs::path& path, const std::string& col,
                                                   const ExpressionMatrix& data) {
    if (!fs::exists(path)) {
        return std::nullopt;
    }
    const auto t = read_csv(path);
    if (!t.has_column(col)) {
        return std::nullopt;
    }
    const auto id = t.column("cell_id"), c = t.column(col);
    std::map<std::string, double> by_id;
    for (const auto& r : t.rows) {
        by_id[r[id]] = r[c] == "NA" ? std::nan("") : parse_double(r[c], path.string());
    }
    std::vector<double> out;
    for (const auto& cell : data.cell_ids) {
        const auto it = by_id.find(cell);
        if (it == by_id.end()) {
            throw InputError("'" + path.string() + "' has no row for cell '" + cell + "'");
        }
        out.push_back(it->second);
    }
    return out;
}

std::pair<RowVector, RowVector> sigmas_from_params(const fs::path& path, const ExpressionMatrix& data) {
    RowVector su = RowVector::Ones(data.n_genes()), ss = RowVector::Ones(data.n_genes());
    if (!fs::exists(path)) {
        return {su, ss};
    }
    const auto t = read_csv(path);
    if (!t.has_column("sigma_u") || !t.has_column("sigma_s")) {
        return {su, ss};
    }
    const auto gc = t.column("gene"), uc = t.column("sigma_u"), sc = t.column("sigma_s");
    std::map<std::string, std::pair<double, double>> by_gene;
    for (const auto& r : t.rows) {
        by_gene[r[gc]] = {parse_double(r[uc], path.string()), parse_double(r[sc], path.string())};
    }
    for (Eigen::Index g = 0; g < data.n_genes(); ++g) {
        const auto it = by_gene.find(data.gene_names[g]);
        if (it != by_gene.end()) {
            su[g] = std::max(it->second.first, 1e-12);
            ss[g] = std::max(it->second.second, 1e-12);
        }
    }
    return {su, ss};
}

Matrix fitted_features(const fs::path& dir, const ExpressionMatrix& data) {
    const auto aligned = load_matrices(dir / "fitted_unspliced.csv", dir / "fitted_spliced.csv", MatrixFormat::csv);
    if (aligned.cell_ids != data.cell_ids || aligned.gene_names != data.gene_names) {
        throw InputError("fitted values in '" + dir.string() + "' do not match the input cells and genes");
    }
    return aligned.features();
}

std::optional<double> rank_corr(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::isfinite(a[i]) && std::isfinite(b[i])) {
            x.push_back(a[i]);
            y.push_back(b[i]);
        }
    }
    if (x.size() < 3) {
        return std::nullopt;
    }
    return spearman(x, y);
}

void cmd_evaluate(Context& ctx) {
    const auto dir = require_out(ctx.rc);
    const auto data = load_input(ctx.rc);
    MetricsReport report;
    std::map<std::string, std::string> info;
    if (fs::exists(dir / "model_info.txt")) {
        const auto stored = KeyValueConfig::load(dir / "model_info.txt");
        for (const auto& [k, v] : stored.entries()) {
            info[k] = v;
        }
    }
    report.model = info.count("model") ? info["model"] : "unknown";
    if (info.count("time_source")) {
        report.notes.push_back("time: " + info["time_source"]);
    }
    if (info.count("refined") && info["refined"] == "1") {
        report.model += "+refined";
    }

    if (fs::exists(dir / "fitted_unspliced.csv")) {
        const Matrix x = data.features();
        const Matrix x_hat = fitted_features(dir, data);
        const auto [su, ss] = sigmas_from_params(dir / "params.csv", data);
        std::vector<Eigen::Index> train_rows, test_rows;
        if (fs::exists(dir / "split.csv")) {
            const auto t = read_csv(dir / "split.csv");
            std::map<std::string, std::string> split;
            for (const auto& r : t.rows) {
                split[r[t.column("cell_id")]] = r[t.column("split")];
            }
            for (Eigen::Index i = 0; i < data.n_cells(); ++i) {
                (split[data.cell_ids[i]] == "test" ? test_rows : train_rows).push_back(i);
            }
        } else {
            for (Eigen::Index i = 0; i < data.n_cells(); ++i) {
                train_rows.push_back(i);
            }
        }
        auto rows_of = [](const Matrix& m, const std::vector<Eigen::Index>& rows) {
            Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
            for (std::size_t k = 0; k < rows.size(); ++k) {
                out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
            }
            return out;
        };
        report.train = reconstruction_metrics(rows_of(x, train_rows), rows_of(x_hat, train_rows), su, ss);
        if (!test_rows.empty()) {
            report.test = reconstruction_metrics(rows_of(x, test_rows), rows_of(x_hat, test_rows), su, ss);
        }
        const RowVector pg = per_gene_mse(x, x_hat);
        for (Eigen::Index g = 0; g < data.n_genes(); ++g) {
            report.per_gene_mse.emplace_back(data.gene_names[g], pg[g]);
        }
    } else {
        report.notes.push_back("no fitted values in run directory; reconstruction metrics skipped");
    }

    const auto inferred = column_by_cell(dir / "times.csv", "time", data);
    if (inferred) {
        fs::path truth_path = ctx.rc.input_dir.empty() ? fs::path() : ctx.rc.input_dir / "truth.csv";
        if (!truth_path.empty()) {
            if (auto truth = column_by_cell(truth_path, "true_time", data)) {
                report.time_spearman = rank_corr(*inferred, *truth);
            }
        }
        if (data.capture_times) {
            const auto corr = rank_corr(*inferred, *data.capture_times);
            if (info.count("capture_prior") && info["capture_prior"] == "1") {
                report.informative_spearman = corr;
                report.notes.push_back("times inferred with the capture-time prior");
            } else {
                report.capture_spearman = corr;
            }
        }
    }
    report.notes.push_back("metrics computed on the values the model was fitted to (after preprocessing)");
    std::ofstream f(dir / "metrics.json");
    f << report.to_json() << '\n';
    ctx.out << report.to_json() << '\n';
}

void cmd_plot(Context& ctx) {
    const auto dir = require_out(ctx.rc);
    const auto data = load_input(ctx.rc);
    if (!fs::exists(dir / "fitted_unspliced.csv") || !fs::exists(dir / "times.csv")) {
        throw InputError("no predictions in '" + dir.string() + "' (run a fit or predict first)");
    }
    if (ctx.rc.plot_genes.empty()) {
        ctx.out << "no genes selected; nothing plotted\n";
        return;
    }
    const Matrix x_hat = fitted_features(dir, data);
    svg::PlotInputs in;
    in.gene_names = data.gene_names;
    in.u = data.unspliced;
    in.s = data.spliced;
    in.u_hat = x_hat.leftCols(data.n_genes());
    in.s_hat = x_hat.rightCols(data.n_genes());
    const auto t = *column_by_cell(dir / "times.csv", "time", data);
    in.time = Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
    if (data.labels) {
        in.groups = *data.labels;
    }
    std::optional<std::vector<double>> ref;
    if (!ctx.rc.input_dir.empty()) {
        ref = column_by_cell(ctx.rc.input_dir / "truth.csv", "true_time", data);
        in.reference_name = "true time";
    }
    if (!ref && data.capture_times) {
        ref = data.capture_times;
        in.reference_name = "capture time";
    }
    if (ref) {
        in.reference_time = *ref;
    }
    const auto written = svg::plot_outputs(dir / "plots", in, ctx.rc.plot_genes);
    ctx.out << "wrote " << written.size() << " plots\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"RNA velocity inference with kinetic variational models", "velo"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    struct Flags {
        std::string config;
        std::vector<std::string> sets;
        std::map<std::string, std::string> direct;
    };
    Flags flags;
    std::map<std::string, CLI::App*> subs;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "Generate a synthetic benchmark dataset"},
        {"preprocess", "Normalize, select genes and smooth"},
        {"fit-steady", "Steady-state rate estimates per gene"},
        {"fit-em", "Per-gene EM baseline"},
        {"fit-vae", "Train the basic or full variational model"},
        {"refine", "Refine a full model with window-averaged initial conditions"},
        {"predict", "Apply a trained model to data"},
        {"evaluate", "Compute metrics for a run directory"},
        {"plot", "Write SVG diagnostics for a run directory"},
    };
    // Flag name -> config key.
    const std::vector<std::pair<std::string, std::string>> direct_flags{
        {"--seed", "seed"},     {"--out", "out"},         {"--input", "input"},   {"--preset", "preset"},
        {"--model", "model"},   {"--model-path", "model_path"}, {"--genes", "genes"}, {"--epochs", "epochs"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", flags.config, "Flat key = value config file");
        sub->add_option("--set", flags.sets, "Override a config entry (key=value), repeatable");
        for (const auto& [flag, key] : direct_flags) {
            sub->add_option_function<std::string>(
                flag, [&flags, key = key](const std::string& v) { flags.direct[key] = v; }, "Sets '" + key + "'");
        }
        subs[name] = sub;
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    std::string command;
    for (const auto& [name, sub] : subs) {
        if (sub->parsed()) {
            command = name;
        }
    }
    const auto start = std::chrono::steady_clock::now();
    try {
        KeyValueConfig kv;
        if (!flags.config.empty()) {
            kv = KeyValueConfig::load(flags.config);
        }
        for (const auto& s : flags.sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) {
                throw InputError("--set expects key=value, got '" + s + "'");
            }
            kv.set(s.substr(0, eq), s.substr(eq + 1));
        }
        for (const auto& [k, v] : flags.direct) {
            kv.set(k, v);
        }
        Context ctx{command, kv, RunConfig::from(kv), out};
        if (command == "simulate") {
            cmd_simulate(ctx);
        } else if (command == "preprocess") {
            cmd_preprocess(ctx);
        } else if (command == "fit-steady") {
            cmd_fit_steady(ctx);
        } else if (command == "fit-em") {
            cmd_fit_em(ctx);
        } else if (command == "fit-vae") {
            cmd_fit_vae(ctx);
        } else if (command == "refine") {
            cmd_refine(ctx);
        } else if (command == "predict") {
            cmd_predict(ctx);
        } else if (command == "evaluate") {
            cmd_evaluate(ctx);
        } else if (command == "plot") {
            cmd_plot(ctx);
        }
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_run_meta(ctx, wall);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace velo
