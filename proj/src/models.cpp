#include "velo/models.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "velo/error.hpp"
#include "velo/estimators.hpp"
#include "model_kernels.hpp"

namespace velo {

std::string to_string(ModelKind kind) { return kind == ModelKind::full ? "full" : "basic"; }

ModelKind parse_model_kind(const std::string& text) {
    if (text == "basic") {
        return ModelKind::basic;
    }
    if (text == "full") {
        return ModelKind::full;
    }
    throw InputError("unknown model kind '" + text + "' (expected basic or full)");
}

void TimePrior::validate(Eigen::Index n_cells) const {
    if (!(sigma0 > 0.0)) {
        throw DomainError("time prior: sigma0 must be positive");
    }
    if (cell_means && cell_means->size() != n_cells) {
        throw DomainError("time prior: informative means must cover every cell");
    }
}

void TrainConfig::validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw DomainError("train config: train fraction must lie in (0, 1)");
    }
    if (batch_size < 2) {
        throw DomainError("train config: batch size must be at least 2");
    }
    if (latent_dim < 1) {
        throw DomainError("train config: latent dimension must be at least 1");
    }
    if (epochs < 1) {
        throw DomainError("train config: need at least one epoch");
    }
    if (!(learning_rate > 0.0) || !(ode_learning_rate > 0.0)) {
        throw DomainError("train config: learning rates must be positive");
    }
    if (!(t_max > 0.0)) {
        throw DomainError("train config: t_max must be positive");
    }
    if (!(window_far() > window_near()) || window_near() < 0.0) {
        throw DomainError("train config: refinement window needs delta1 > delta2 >= 0");
    }
    if (time_init_epochs < 0 || !(time_init_width > 0.0)) {
        throw DomainError("train config: time initialisation needs epochs >= 0 and a positive width");
    }
    if (!(kl_warmup_fraction >= 0.0 && kl_warmup_fraction <= 1.0)) {
        throw DomainError("train config: KL warm-up fraction must lie in [0, 1]");
    }
}

GeneParams GeneParams::zeros(Eigen::Index genes) {
    GeneParams p;
    for (RowVector* v : {&p.log_alpha, &p.log_beta, &p.log_gamma, &p.t_on, &p.log_duration, &p.log_sigma_u,
                         &p.log_sigma_s}) {
        *v = RowVector::Zero(genes);
    }
    return p;
}

GeneParams GeneParams::from_kinetics(const std::vector<GeneKinetics>& kinetics) {
    auto p = zeros(static_cast<Eigen::Index>(kinetics.size()));
    for (std::size_t g = 0; g < kinetics.size(); ++g) {
        const auto& k = kinetics[g];
        k.validate();
        p.log_alpha[g] = std::log(std::max(k.alpha, 1e-8));
        p.log_beta[g] = std::log(k.beta);
        p.log_gamma[g] = std::log(k.gamma);
        p.t_on[g] = k.t_on;
        p.log_duration[g] = std::log(std::max(k.t_off - k.t_on, 1e-6));
        p.log_sigma_u[g] = std::log(k.sigma_u);
        p.log_sigma_s[g] = std::log(k.sigma_s);
    }
    return p;
}

GeneKinetics GeneParams::kinetics(Eigen::Index g) const {
    GeneKinetics k;
    k.alpha = std::exp(log_alpha[g]);
    k.beta = std::exp(log_beta[g]);
    k.gamma = std::exp(log_gamma[g]);
    k.t_on = t_on[g];
    k.t_off = t_on[g] + std::exp(log_duration[g]);
    k.sigma_u = std::exp(log_sigma_u[g]);
    k.sigma_s = std::exp(log_sigma_s[g]);
    return k;
}

ModelState make_model(ModelKind kind, const std::vector<std::string>& gene_names,
                      const std::vector<GeneKinetics>& kinetics, const TrainConfig& config, const Matrix& train_features,
                      nn::Rng& rng) {
    config.validate();
    const auto genes = static_cast<int>(gene_names.size());
    if (genes < 1 || static_cast<int>(kinetics.size()) != genes) {
        throw ShapeError("make_model: need one kinetic parameter set per gene");
    }
    if (train_features.cols() != 2 * genes) {
        throw ShapeError("make_model: training features must have 2G columns");
    }
    ModelState state;
    state.kind = kind;
    state.n_genes = genes;
    state.latent_dim = kind == ModelKind::full ? config.latent_dim : 0;
    state.t_max = config.t_max;
    state.gene_names = gene_names;
    state.genes = GeneParams::from_kinetics(kinetics);
    state.default_initialized.assign(genes, false);
    state.prior.t0 = 0.5 * config.t_max;
    state.prior.sigma0 = 0.25 * config.t_max;

    state.input_scale = RowVector::Ones(2 * genes);
    if (train_features.rows() > 1) {
        const RowVector mean = train_features.colwise().mean();
        const RowVector sd =
            ((train_features.rowwise() - mean).array().square().colwise().sum() / (train_features.rows() - 1.0))
                .sqrt();
        for (Eigen::Index j = 0; j < sd.size(); ++j) {
            state.input_scale[j] = sd[j] > 1e-8 ? sd[j] : 1.0;
        }
    }

    state.encoder_spec.widths.push_back(2 * genes);
    for (int w : config.encoder_hidden) {
        state.encoder_spec.widths.push_back(w);
    }
    state.encoder_spec.widths.push_back(state.encoder_outputs());
    state.encoder_spec.dropout = config.dropout;
    state.encoder_spec.output_activation = nn::Activation::identity;
    state.encoder = nn::init_params(state.encoder_spec, rng);

    if (kind == ModelKind::full) {
        state.decoder_spec.widths.push_back(config.latent_dim);
        for (int w : config.decoder_hidden) {
            state.decoder_spec.widths.push_back(w);
        }
        state.decoder_spec.widths.push_back(genes);
        state.decoder_spec.dropout = 0.0;
        state.decoder_spec.output_activation = nn::Activation::sigmoid;
        state.decoder = nn::init_params(state.decoder_spec, rng);
    }
    return state;
}

namespace {

void check_features(const ModelState& state, const Matrix& batch) {
    if (batch.cols() != 2 * state.n_genes) {
        throw ShapeError("model: batch has " + std::to_string(batch.cols()) + " columns, expected " +
                         std::to_string(2 * state.n_genes) + " ([u, s] per gene)");
    }
}

}  // namespace

LatentPosterior encode(const ModelState& state, const Matrix& batch) {
    check_features(state, batch);
    const Matrix scaled = batch.array().rowwise() / state.input_scale.array();
    const auto out = nn::forward(state.encoder_spec, state.encoder, scaled, nn::Mode::eval);
    return detail::posterior_from_raw(state, out.output);
}

Matrix decode_rho(const ModelState& state, const Matrix& c) {
    if (state.kind != ModelKind::full) {
        throw DomainError("decode_rho: the basic model has no cell-state decoder");
    }
    if (c.cols() != state.latent_dim) {
        throw ShapeError("decode_rho: expected " + std::to_string(state.latent_dim) + " latent columns");
    }
    return nn::forward(state.decoder_spec, state.decoder, c, nn::Mode::eval).output;
}

KineticMean kinetic_mean(const ModelState& state, const Vector& t, const Matrix* rho,
                         const std::vector<CellInitialCondition>* initial) {
    const Eigen::Index rows = t.size();
    const Eigen::Index genes = state.n_genes;
    if (state.kind == ModelKind::full && (rho == nullptr || rho->rows() != rows || rho->cols() != genes)) {
        throw ShapeError("kinetic_mean: the full model needs a B x G rho matrix");
    }
    if (initial != nullptr && static_cast<Eigen::Index>(initial->size()) != rows) {
        throw ShapeError("kinetic_mean: need one initial condition per row");
    }
    KineticMean mean{Matrix(rows, genes), Matrix(rows, genes)};
    for (Eigen::Index g = 0; g < genes; ++g) {
        const detail::GeneScalars<double> gs = detail::gene_scalars(state.genes, g);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const CellInitialCondition* ic = initial ? &(*initial)[i] : nullptr;
            const double r = state.kind == ModelKind::full ? (*rho)(i, g) : 1.0;
            double u, s;
            detail::entry_mean(state.kind, gs, t[i], r, ic, g, u, s);
            mean.u(i, g) = u;
            mean.s(i, g) = s;
        }
    }
    return mean;
}

double gaussian_kl(double mu_q, double sigma_q, double mu_p, double sigma_p) {
    if (!(sigma_q > 0.0) || !(sigma_p > 0.0)) {
        throw DomainError("gaussian_kl: standard deviations must be positive");
    }
    const double diff = mu_q - mu_p;
    return std::log(sigma_p / sigma_q) + (sigma_q * sigma_q + diff * diff) / (2.0 * sigma_p * sigma_p) - 0.5;
}

RowVector reconstruction_per_gene(const ModelState& state, const Matrix& batch, const KineticMean& mean) {
    check_features(state, batch);
    const Eigen::Index genes = state.n_genes;
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    RowVector out(genes);
    const RowVector su = state.genes.sigma_u(), ss = state.genes.sigma_s();
    for (Eigen::Index g = 0; g < genes; ++g) {
        const double ru = (batch.col(g) - mean.u.col(g)).squaredNorm();
        const double rs = (batch.col(genes + g) - mean.s.col(g)).squaredNorm();
        out[g] = -static_cast<double>(batch.rows()) * (log_2pi + std::log(su[g]) + std::log(ss[g])) -
                 ru / (2.0 * su[g] * su[g]) - rs / (2.0 * ss[g] * ss[g]);
    }
    return out;
}

ElboTerms elbo(const ModelState& state, const Matrix& batch, const LatentPosterior& posterior,
               const Vector& prior_mean, double prior_sigma, const Vector& t_sample, const Matrix* c_sample) {
    check_features(state, batch);
    const Eigen::Index rows = batch.rows();
    if (posterior.mu_t.size() != rows || t_sample.size() != rows || prior_mean.size() != rows) {
        throw ShapeError("elbo: posterior, samples and prior must have one entry per cell");
    }
    ElboTerms terms;
    Matrix rho;
    if (state.kind == ModelKind::full) {
        if (c_sample == nullptr || c_sample->rows() != rows || c_sample->cols() != state.latent_dim) {
            throw ShapeError("elbo: the full model needs a B x d cell-state sample");
        }
        rho = decode_rho(state, *c_sample);
    }
    const auto mean = kinetic_mean(state, t_sample, state.kind == ModelKind::full ? &rho : nullptr);
    terms.reconstruction = reconstruction_per_gene(state, batch, mean).sum();
    for (Eigen::Index i = 0; i < rows; ++i) {
        terms.kl_t += gaussian_kl(posterior.mu_t[i], posterior.sigma_t[i], prior_mean[i], prior_sigma);
        for (Eigen::Index k = 0; k < posterior.mu_c.cols(); ++k) {
            terms.kl_c += gaussian_kl(posterior.mu_c(i, k), posterior.sigma_c(i, k), 0.0, 1.0);
        }
    }
    terms.total = terms.reconstruction - terms.kl_t - terms.kl_c;
    if (!std::isfinite(terms.reconstruction)) {
        throw NumericError("elbo: reconstruction term is not finite");
    }
    if (!std::isfinite(terms.kl_t)) {
        throw NumericError("elbo: KL term for time is not finite");
    }
    if (!std::isfinite(terms.kl_c)) {
        throw NumericError("elbo: KL term for cell state is not finite");
    }
    return terms;
}

Initialization initialize_params(const ExpressionMatrix& data, const TrainConfig& config,
                                 const std::optional<std::vector<double>>& capture_times) {
    data.validate();
    const Eigen::Index genes = data.n_genes();
    const Eigen::Index cells = data.n_cells();
    Initialization init;
    init.prior.t0 = 0.5 * config.t_max;
    init.prior.sigma0 = 0.25 * config.t_max;
    double t_off = 0.5 * config.t_max;

    if (capture_times) {
        const auto& ct = *capture_times;
        if (static_cast<Eigen::Index>(ct.size()) != cells) {
            throw ShapeError("initialize_params: need one capture time per cell");
        }
        std::vector<double> levels(ct.begin(), ct.end());
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        const double k = static_cast<double>(levels.size());
        Vector means(cells);
        for (Eigen::Index i = 0; i < cells; ++i) {
            const auto pos = std::lower_bound(levels.begin(), levels.end(), ct[i]) - levels.begin();
            means[i] = config.t_max * (static_cast<double>(pos) + 0.5) / k;
        }
        init.prior.cell_means = std::move(means);
        init.prior.sigma0 = config.t_max / (2.0 * k);

        const double lo = levels.front(), hi = levels.back();
        std::vector<double> scaled(ct.size());
        for (std::size_t i = 0; i < ct.size(); ++i) {
            scaled[i] = hi > lo ? (ct[i] - lo) / (hi - lo) : 0.5;
        }
        std::sort(scaled.begin(), scaled.end());
        const double pos = 0.75 * static_cast<double>(scaled.size() - 1);
        const auto a = static_cast<std::size_t>(std::floor(pos));
        const auto b = std::min(a + 1, scaled.size() - 1);
        const double q75 = scaled[a] + (pos - static_cast<double>(a)) * (scaled[b] - scaled[a]);
        t_off = std::max(q75, 0.05) * config.t_max;
    }

    for (Eigen::Index g = 0; g < genes; ++g) {
        const Vector u = data.unspliced.col(g);
        const Vector s = data.spliced.col(g);
        GeneKinetics k;
        bool fallback = true;
        if (cells >= 10) {
            const auto fit = fit_steady_state({u.data(), static_cast<std::size_t>(u.size())},
                                              {s.data(), static_cast<std::size_t>(s.size())}, 0.95);
            if (fit.estimable) {
                k.alpha = fit.alpha_hat;
                k.beta = fit.beta_hat;
                k.gamma = fit.gamma_hat;
                fallback = false;
            }
        }
        if (fallback) {
            k.alpha = k.beta = k.gamma = 1.0;
        }
        k.t_on = 0.0;
        k.t_off = t_off;
        auto sd = [](const Vector& v) {
            if (v.size() < 2) {
                return 0.0;
            }
            return std::sqrt((v.array() - v.mean()).square().sum() / (static_cast<double>(v.size()) - 1.0));
        };
        k.sigma_u = std::max(sd(u), 1e-3);
        k.sigma_s = std::max(sd(s), 1e-3);
        init.kinetics.push_back(k);
        init.default_initialized.push_back(fallback);
    }
    return init;
}

Vector initial_times(const ExpressionMatrix& data, double t_max) {
    const Eigen::Index n = data.n_cells(), genes = data.n_genes();
    Matrix gene_times = Matrix::Zero(n, genes);
    std::vector<bool> usable(genes, false);
    for (Eigen::Index g = 0; g < genes && n >= 10; ++g) {
        const Vector u = data.unspliced.col(g), s = data.spliced.col(g);
        const std::span<const double> us(u.data(), static_cast<std::size_t>(n)), ss(s.data(), static_cast<std::size_t>(n));
        const auto fit = fit_steady_state(us, ss, 0.95);
        if (!fit.estimable) {
            continue;
        }
        GeneKinetics k;
        k.alpha = fit.alpha_hat;
        k.beta = fit.beta_hat;
        k.gamma = fit.gamma_hat;
        k.t_on = 0.0;
        k.t_off = 0.5 * t_max;
        const auto times = assign_times_grid(us, ss, k, 500, t_max);
        for (Eigen::Index i = 0; i < n; ++i) {
            gene_times(i, g) = times[i];
        }
        usable[g] = true;
    }
    if (std::none_of(usable.begin(), usable.end(), [](bool b) { return b; })) {
        return Vector::Constant(n, 0.5 * t_max);
    }
    Vector t = global_time(gene_times, usable);
    const double lo = t.minCoeff(), hi = t.maxCoeff();
    if (hi > lo) {
        t = (t.array() - lo) / (hi - lo) * t_max;
    } else {
        t.setConstant(0.5 * t_max);
    }
    return t;
}

std::vector<CellInitialCondition> initial_conditions(const ModelState& state, const Vector& t) {
    const Eigen::Index genes = state.n_genes;
    std::vector<CellInitialCondition> out(t.size());
    const Eigen::Index refs = state.reference_times.size();
    // Reference cells sorted by time with prefix sums for O(log N) window means.
    std::vector<Eigen::Index> order(refs);
    for (Eigen::Index i = 0; i < refs; ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return state.reference_times[a] < state.reference_times[b]; });
    std::vector<double> sorted_times(refs);
    Matrix prefix_u = Matrix::Zero(refs + 1, genes);
    Matrix prefix_s = Matrix::Zero(refs + 1, genes);
    for (Eigen::Index k = 0; k < refs; ++k) {
        sorted_times[k] = state.reference_times[order[k]];
        prefix_u.row(k + 1) = prefix_u.row(k) + state.reference_u.row(order[k]);
        prefix_s.row(k + 1) = prefix_s.row(k) + state.reference_s.row(order[k]);
    }
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        auto& ic = out[i];
        ic.u0 = RowVector::Zero(genes);
        ic.s0 = RowVector::Zero(genes);
        const double lo = t[i] - state.delta1, hi = t[i] - state.delta2;
        const auto first = std::lower_bound(sorted_times.begin(), sorted_times.end(), lo) - sorted_times.begin();
        const auto last = std::upper_bound(sorted_times.begin(), sorted_times.end(), hi) - sorted_times.begin();
        if (last > first) {
            const double n = static_cast<double>(last - first);
            ic.has_window = true;
            ic.t0 = 0.5 * (lo + hi);
            ic.u0 = (prefix_u.row(last) - prefix_u.row(first)) / n;
            ic.s0 = (prefix_s.row(last) - prefix_s.row(first)) / n;
        }
    }
    return out;
}

Prediction predict(const ModelState& state, const ExpressionMatrix& data) {
    if (data.n_genes() != state.n_genes) {
        throw ShapeError("predict: data has " + std::to_string(data.n_genes()) + " genes, model was trained on " +
                         std::to_string(state.n_genes));
    }
    for (int g = 0; g < state.n_genes; ++g) {
        if (data.gene_names[g] != state.gene_names[g]) {
            throw InputError("predict: gene '" + data.gene_names[g] + "' does not match trained gene '" +
                             state.gene_names[g] + "'");
        }
    }
    Prediction p;
    p.posterior = encode(state, data.features());
    const Eigen::Index rows = data.n_cells();
    if (state.kind == ModelKind::full) {
        p.rho = decode_rho(state, p.posterior.mu_c);
    } else {
        p.rho.resize(rows, state.n_genes);
        const RowVector t_off = state.genes.t_off();
        for (Eigen::Index g = 0; g < state.n_genes; ++g) {
            for (Eigen::Index i = 0; i < rows; ++i) {
                const double t = p.posterior.mu_t[i];
                p.rho(i, g) = (t >= state.genes.t_on[g] && t < t_off[g]) ? 1.0 : 0.0;
            }
        }
    }
    std::vector<CellInitialCondition> ics;
    if (state.refined) {
        ics = initial_conditions(state, p.posterior.mu_t);
    }
    const auto mean = kinetic_mean(state, p.posterior.mu_t, state.kind == ModelKind::full ? &p.rho : nullptr,
                                   state.refined ? &ics : nullptr);
    p.u_hat = mean.u;
    p.s_hat = mean.s;
    const RowVector alpha = state.genes.alpha(), beta = state.genes.beta(), gamma = state.genes.gamma();
    p.du_dt = (p.rho.array().rowwise() * alpha.array()) - (p.u_hat.array().rowwise() * beta.array());
    p.ds_dt = (p.u_hat.array().rowwise() * beta.array()) - (p.s_hat.array().rowwise() * gamma.array());
    return p;
}

Matrix reconstruction(const Prediction& p) {
    Matrix x(p.u_hat.rows(), 2 * p.u_hat.cols());
    x << p.u_hat, p.s_hat;
    return x;
}

namespace {

Matrix row_matrix(const RowVector& v) { return v; }

const Matrix& tensor(const std::vector<nn::NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors) {
        if (t.name == name) {
            return t.value;
        }
    }
    throw InputError("model checkpoint: missing tensor '" + name + "'");
}

RowVector row_tensor(const std::vector<nn::NamedTensor>& tensors, const std::string& name, Eigen::Index size) {
    const Matrix& m = tensor(tensors, name);
    if (m.rows() != 1 || m.cols() != size) {
        throw InputError("model checkpoint: tensor '" + name + "' has the wrong shape");
    }
    return m.row(0);
}

void write_widths(std::ostream& out, const char* key, const nn::MLPSpec& spec) {
    out << key;
    for (int w : spec.widths) {
        out << ' ' << w;
    }
    out << '\n';
}

std::vector<int> parse_ints(const std::string& rest) {
    std::istringstream in(rest);
    std::vector<int> values;
    int v = 0;
    while (in >> v) {
        values.push_back(v);
    }
    return values;
}

}  // namespace

void save_model(std::ostream& out, const ModelState& state) {
    out << std::setprecision(17);
    out << "velo-model 1\n";
    out << "kind " << to_string(state.kind) << '\n';
    out << "n_genes " << state.n_genes << '\n';
    out << "latent_dim " << state.latent_dim << '\n';
    out << "t_max " << state.t_max << '\n';
    write_widths(out, "encoder_widths", state.encoder_spec);
    out << "encoder_dropout " << state.encoder_spec.dropout << '\n';
    if (state.kind == ModelKind::full) {
        write_widths(out, "decoder_widths", state.decoder_spec);
    }
    out << "prior " << state.prior.t0 << ' ' << state.prior.sigma0 << '\n';
    out << "refined " << (state.refined ? 1 : 0) << ' ' << state.delta1 << ' ' << state.delta2 << '\n';
    out << "genes";
    for (const auto& g : state.gene_names) {
        out << ' ' << g;
    }
    out << '\n';
    out << "default_initialized";
    for (bool b : state.default_initialized) {
        out << ' ' << (b ? 1 : 0);
    }
    out << '\n';
    out << "kinetics gene alpha beta gamma t_on t_off sigma_u sigma_s\n";
    for (int g = 0; g < state.n_genes; ++g) {
        const auto k = state.genes.kinetics(g);
        out << "kinetics " << state.gene_names[g] << ' ' << k.alpha << ' ' << k.beta << ' ' << k.gamma << ' '
            << k.t_on << ' ' << k.t_off << ' ' << k.sigma_u << ' ' << k.sigma_s << '\n';
    }
    out << "end-header\n";

    std::vector<nn::NamedTensor> tensors;
    tensors.push_back({"input_scale", row_matrix(state.input_scale)});
    nn::append_tensors(tensors, "encoder", state.encoder);
    if (state.kind == ModelKind::full) {
        nn::append_tensors(tensors, "decoder", state.decoder);
    }
    const auto& gp = state.genes;
    tensors.push_back({"genes.log_alpha", row_matrix(gp.log_alpha)});
    tensors.push_back({"genes.log_beta", row_matrix(gp.log_beta)});
    tensors.push_back({"genes.log_gamma", row_matrix(gp.log_gamma)});
    tensors.push_back({"genes.t_on", row_matrix(gp.t_on)});
    tensors.push_back({"genes.log_duration", row_matrix(gp.log_duration)});
    tensors.push_back({"genes.log_sigma_u", row_matrix(gp.log_sigma_u)});
    tensors.push_back({"genes.log_sigma_s", row_matrix(gp.log_sigma_s)});
    if (state.refined) {
        tensors.push_back({"reference.times", Matrix(state.reference_times)});
        tensors.push_back({"reference.u", state.reference_u});
        tensors.push_back({"reference.s", state.reference_s});
    }
    nn::write_tensors(out, tensors);
}

ModelState load_model(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "velo-model 1") {
        throw InputError("model checkpoint: missing 'velo-model 1' header");
    }
    ModelState state;
    std::vector<int> default_flags;
    bool have_decoder = false;
    while (std::getline(in, line)) {
        if (line == "end-header") {
            break;
        }
        std::istringstream fields(line);
        std::string key;
        fields >> key;
        std::string rest;
        std::getline(fields, rest);
        std::istringstream values(rest);
        if (key == "kind") {
            std::string kind;
            values >> kind;
            state.kind = parse_model_kind(kind);
        } else if (key == "n_genes") {
            values >> state.n_genes;
        } else if (key == "latent_dim") {
            values >> state.latent_dim;
        } else if (key == "t_max") {
            values >> state.t_max;
        } else if (key == "encoder_widths") {
            state.encoder_spec.widths = parse_ints(rest);
        } else if (key == "encoder_dropout") {
            values >> state.encoder_spec.dropout;
        } else if (key == "decoder_widths") {
            state.decoder_spec.widths = parse_ints(rest);
            have_decoder = true;
        } else if (key == "prior") {
            values >> state.prior.t0 >> state.prior.sigma0;
        } else if (key == "refined") {
            int flag = 0;
            values >> flag >> state.delta1 >> state.delta2;
            state.refined = flag != 0;
        } else if (key == "genes") {
            std::string name;
            while (values >> name) {
                state.gene_names.push_back(name);
            }
        } else if (key == "default_initialized") {
            default_flags = parse_ints(rest);
        } else if (key == "kinetics") {
            continue;  // human-readable copy; the tensors are authoritative
        } else {
            throw InputError("model checkpoint: unknown header key '" + key + "'");
        }
    }
    if (state.n_genes < 1 || static_cast<int>(state.gene_names.size()) != state.n_genes) {
        throw InputError("model checkpoint: gene list does not match n_genes");
    }
    for (int f : default_flags) {
        state.default_initialized.push_back(f != 0);
    }
    state.default_initialized.resize(state.n_genes, false);

    const auto tensors = nn::read_tensors(in);
    const Eigen::Index genes = state.n_genes;
    state.input_scale = row_tensor(tensors, "input_scale", 2 * genes);
    state.encoder_spec.output_activation = nn::Activation::identity;
    nn::restore_tensors(tensors, "encoder", state.encoder_spec, state.encoder);
    if (state.kind == ModelKind::full) {
        if (!have_decoder) {
            throw InputError("model checkpoint: full model without decoder widths");
        }
        state.decoder_spec.dropout = 0.0;
        state.decoder_spec.output_activation = nn::Activation::sigmoid;
        nn::restore_tensors(tensors, "decoder", state.decoder_spec, state.decoder);
    }
    auto& gp = state.genes;
    gp.log_alpha = row_tensor(tensors, "genes.log_alpha", genes);
    gp.log_beta = row_tensor(tensors, "genes.log_beta", genes);
    gp.log_gamma = row_tensor(tensors, "genes.log_gamma", genes);
    gp.t_on = row_tensor(tensors, "genes.t_on", genes);
    gp.log_duration = row_tensor(tensors, "genes.log_duration", genes);
    gp.log_sigma_u = row_tensor(tensors, "genes.log_sigma_u", genes);
    gp.log_sigma_s = row_tensor(tensors, "genes.log_sigma_s", genes);
    if (state.refined) {
        const Matrix& times = tensor(tensors, "reference.times");
        state.reference_times = times.col(0);
        state.reference_u = tensor(tensors, "reference.u");
        state.reference_s = tensor(tensors, "reference.s");
        if (state.reference_u.cols() != genes || state.reference_s.cols() != genes ||
            state.reference_u.rows() != times.rows() || state.reference_s.rows() != times.rows()) {
            throw InputError("model checkpoint: reference cells have inconsistent shapes");
        }
    }
    return state;
}

}  // namespace velo
