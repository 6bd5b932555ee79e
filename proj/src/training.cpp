#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "model_kernels.hpp"
#include "velo/dual.hpp"
#include "velo/error.hpp"
#include "velo/models.hpp"

namespace velo {

namespace detail {

StepOutcome loss_and_gradients(const ModelState& state, const Matrix& batch, const Vector& prior_mean,
                               double prior_sigma, const Vector& eps_t, const Matrix& eps_c, double kl_weight,
                               nn::Mode mode, nn::Rng* rng, const std::vector<CellInitialCondition>* initial,
                               bool encoder_grads, const TimeAnchor* anchor) {
    const Eigen::Index rows = batch.rows();
    const Eigen::Index genes = state.n_genes;
    const int d = state.latent_dim;
    const bool full = state.kind == ModelKind::full;
    if (batch.cols() != 2 * genes) {
        throw ShapeError("loss_and_gradients: batch must have 2G columns");
    }
    if (prior_mean.size() != rows || eps_t.size() != rows || (full && (eps_c.rows() != rows || eps_c.cols() != d))) {
        throw ShapeError("loss_and_gradients: prior means and noise must match the batch");
    }
    if (initial != nullptr && static_cast<Eigen::Index>(initial->size()) != rows) {
        throw ShapeError("loss_and_gradients: need one initial condition per row");
    }
    if (anchor != nullptr && anchor->target.size() != rows) {
        throw ShapeError("loss_and_gradients: need one anchor time per row");
    }
    if (!(prior_sigma > 0.0)) {
        throw DomainError("loss_and_gradients: prior sigma must be positive");
    }

    StepOutcome out;
    const Matrix scaled = batch.array().rowwise() / state.input_scale.array();
    auto enc = nn::forward(state.encoder_spec, state.encoder, scaled, mode, rng);
    const Matrix& raw = enc.output;
    const LatentPosterior post = posterior_from_raw(state, raw);
    const Vector t = post.mu_t.array() + post.sigma_t.array() * eps_t.array();

    Matrix c, rho;
    nn::ForwardResult dec;
    if (full) {
        c = post.mu_c.array() + post.sigma_c.array() * eps_c.array();
        dec = nn::forward(state.decoder_spec, state.decoder, c, mode, rng);
        rho = dec.output;
    }

    // Reconstruction and its derivatives through the closed-form kinetics.
    using D = Dual<6>;
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    Vector d_recon_dt = Vector::Zero(rows);
    Matrix d_recon_drho = full ? Matrix::Zero(rows, genes) : Matrix();
    GeneParams gg = GeneParams::zeros(genes);
    double recon = 0.0;
    for (Eigen::Index g = 0; g < genes; ++g) {
        const auto& p = state.genes;
        const double alpha = std::exp(p.log_alpha[g]), beta = std::exp(p.log_beta[g]),
                     gamma = std::exp(p.log_gamma[g]), dur = std::exp(p.log_duration[g]);
        GeneScalars<D> gs{D::variable(alpha, 1), D::variable(beta, 2), D::variable(gamma, 3),
                          D::variable(p.t_on[g], 4), D::variable(p.t_on[g] + dur, 5)};
        const double su = std::exp(p.log_sigma_u[g]), ss = std::exp(p.log_sigma_s[g]);
        const double isu2 = 1.0 / (su * su), iss2 = 1.0 / (ss * ss);
        std::array<double, 6> acc{};
        double acc_su = 0.0, acc_ss = 0.0;
        for (Eigen::Index i = 0; i < rows; ++i) {
            const D ti = D::variable(t[i], 0);
            const D ri = full ? D::variable(rho(i, g), 5) : D(1.0);
            const CellInitialCondition* ic = initial ? &(*initial)[i] : nullptr;
            D u, s;
            entry_mean(state.kind, gs, ti, ri, ic, g, u, s);
            const double ru = batch(i, g) - u.v;
            const double rs = batch(i, genes + g) - s.v;
            recon += -log_2pi - p.log_sigma_u[g] - p.log_sigma_s[g] - 0.5 * ru * ru * isu2 - 0.5 * rs * rs * iss2;
            const double wu = ru * isu2, ws = rs * iss2;
            std::array<double, 6> grad;
            for (int k = 0; k < 6; ++k) {
                grad[k] = wu * u.d[k] + ws * s.d[k];
            }
            d_recon_dt[i] += grad[0];
            for (int k = 1; k < 5; ++k) {
                acc[k] += grad[k];
            }
            if (full) {
                d_recon_drho(i, g) = grad[5];
            } else {
                acc[5] += grad[5];
            }
            acc_su += -1.0 + ru * ru * isu2;
            acc_ss += -1.0 + rs * rs * iss2;
        }
        gg.log_alpha[g] = acc[1] * alpha;
        gg.log_beta[g] = acc[2] * beta;
        gg.log_gamma[g] = acc[3] * gamma;
        gg.t_on[g] = acc[4] + acc[5];
        gg.log_duration[g] = acc[5] * dur;
        gg.log_sigma_u[g] = acc_su;
        gg.log_sigma_s[g] = acc_ss;
    }

    const double inv_b = 1.0 / static_cast<double>(rows);
    // Loss gradients are -(1/B) of the reconstruction gradients.
    out.grads.genes = gg;
    for (RowVector* v : {&out.grads.genes.log_alpha, &out.grads.genes.log_beta, &out.grads.genes.log_gamma,
                         &out.grads.genes.t_on, &out.grads.genes.log_duration, &out.grads.genes.log_sigma_u,
                         &out.grads.genes.log_sigma_s}) {
        *v *= -inv_b;
    }

    double kl_t = 0.0, kl_c = 0.0;
    const double ip2 = 1.0 / (prior_sigma * prior_sigma);
    Vector g_mu_t(rows), g_sigma_t(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mu = post.mu_t[i], sg = post.sigma_t[i], diff = mu - prior_mean[i];
        kl_t += std::log(prior_sigma / sg) + 0.5 * (sg * sg + diff * diff) * ip2 - 0.5;
        const double g_t = -inv_b * d_recon_dt[i];
        g_mu_t[i] = g_t + kl_weight * inv_b * diff * ip2;
        g_sigma_t[i] = g_t * eps_t[i] + kl_weight * inv_b * (-1.0 / sg + sg * ip2);
    }
    double anchor_loss = 0.0;
    if (anchor != nullptr && anchor->weight > 0.0) {
        const double w = anchor->weight * static_cast<double>(genes);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const double diff = post.mu_t[i] - anchor->target[i];
            anchor_loss += 0.5 * w * diff * diff;
            g_mu_t[i] += inv_b * w * diff;
        }
    }

    Matrix g_raw = Matrix::Zero(rows, raw.cols());
    const double ms = head_mu_scale(state), hs = head_sigma_scale(state);
    for (Eigen::Index i = 0; i < rows; ++i) {
        g_raw(i, 0) = g_mu_t[i] * ms * nn::sigmoid(raw(i, 0));
        g_raw(i, 1) = g_sigma_t[i] * hs * nn::sigmoid(raw(i, 1));
    }

    if (full) {
        const Matrix upstream = -inv_b * d_recon_drho;
        auto back = nn::backward(state.decoder_spec, state.decoder, dec.cache, upstream);
        out.grads.decoder = std::move(back.grads);
        const Matrix& g_c = back.input_grad;
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (int k = 0; k < d; ++k) {
                const double mu = post.mu_c(i, k), sg = post.sigma_c(i, k);
                kl_c += -std::log(sg) + 0.5 * (sg * sg + mu * mu) - 0.5;
                const double g_mu = g_c(i, k) + kl_weight * inv_b * mu;
                const double g_sg = g_c(i, k) * eps_c(i, k) + kl_weight * inv_b * (-1.0 / sg + sg);
                g_raw(i, 2 + k) = g_mu;
                g_raw(i, 2 + d + k) = g_sg * nn::sigmoid(raw(i, 2 + d + k));
            }
        }
        out.decoder_cache = std::move(dec.cache);
    }

    if (encoder_grads) {
        out.grads.encoder = nn::backward(state.encoder_spec, state.encoder, enc.cache, g_raw).grads;
    } else {
        out.grads.encoder = nn::MLPGrads::zeros_like(state.encoder);
    }
    out.encoder_cache = std::move(enc.cache);

    out.terms.reconstruction = recon;
    out.terms.kl_t = kl_t;
    out.terms.kl_c = kl_c;
    out.terms.total = recon - kl_t - kl_c;
    out.loss = (-(recon - kl_weight * (kl_t + kl_c)) + anchor_loss) * inv_b;
    return out;
}

std::vector<nn::ParamSlot> param_slots(ModelState& state, const ModelGrads& grads, bool include_encoder) {
    std::vector<nn::ParamSlot> slots;
    if (include_encoder) {
        nn::append_slots(slots, "encoder", state.encoder, grads.encoder);
    }
    if (state.kind == ModelKind::full) {
        nn::append_slots(slots, "decoder", state.decoder, grads.decoder);
    }
    auto add = [&](const char* name, RowVector& value, const RowVector& grad) {
        slots.push_back({std::string("genes.") + name, value.data(), grad.data(), value.size()});
    };
    auto& p = state.genes;
    const auto& g = grads.genes;
    add("log_alpha", p.log_alpha, g.log_alpha);
    add("log_beta", p.log_beta, g.log_beta);
    add("log_gamma", p.log_gamma, g.log_gamma);
    add("t_on", p.t_on, g.t_on);
    add("log_duration", p.log_duration, g.log_duration);
    add("log_sigma_u", p.log_sigma_u, g.log_sigma_u);
    add("log_sigma_s", p.log_sigma_s, g.log_sigma_s);
    return slots;
}

}  // namespace detail

namespace {

struct SplitSlots {
    std::vector<nn::ParamSlot> network;
    std::vector<nn::ParamSlot> genes;
};

SplitSlots split_slots(std::vector<nn::ParamSlot> all) {
    SplitSlots out;
    for (auto& s : all) {
        (s.name.rfind("genes.", 0) == 0 ? out.genes : out.network).push_back(std::move(s));
    }
    return out;
}

// Keeps the kinetic parameters inside a range where exp() and the solution stay finite.
void clamp_genes(GeneParams& p, double t_max) {
    p.log_alpha = p.log_alpha.cwiseMax(-12.0).cwiseMin(12.0);
    p.log_beta = p.log_beta.cwiseMax(-8.0).cwiseMin(8.0);
    p.log_gamma = p.log_gamma.cwiseMax(-8.0).cwiseMin(8.0);
    p.t_on = p.t_on.cwiseMax(-t_max).cwiseMin(2.0 * t_max);
    p.log_duration = p.log_duration.cwiseMax(-8.0).cwiseMin(std::log(4.0 * t_max));
    p.log_sigma_u = p.log_sigma_u.cwiseMax(std::log(1e-4)).cwiseMin(8.0);
    p.log_sigma_s = p.log_sigma_s.cwiseMax(std::log(1e-4)).cwiseMin(8.0);
}

Matrix gather_rows(const Matrix& m, std::span<const Eigen::Index> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
    }
    return out;
}

// Contiguous minibatches; a trailing batch of one cell joins the previous batch.
std::vector<std::span<const Eigen::Index>> make_batches(const std::vector<Eigen::Index>& order, int batch_size) {
    std::vector<std::span<const Eigen::Index>> batches;
    const std::size_t n = order.size();
    std::size_t start = 0;
    while (start < n) {
        std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
        if (n - end == 1) {
            end = n;
        }
        batches.emplace_back(order.data() + start, end - start);
        start = end;
    }
    return batches;
}

double mse_between(const Matrix& a, const Matrix& b) {
    if (a.size() == 0) {
        return 0.0;
    }
    return (a - b).squaredNorm() / static_cast<double>(a.size());
}

Matrix draw_normal(Eigen::Index rows, Eigen::Index cols, nn::Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            m(i, j) = normal(rng);
        }
    }
    return m;
}

void step_optimizers(ModelState& state, const detail::ModelGrads& grads, bool include_encoder,
                     nn::AdamState& network_adam, nn::AdamState& gene_adam, double lr, double ode_lr) {
    auto slots = split_slots(detail::param_slots(state, grads, include_encoder));
    // Check everything before touching anything so a NaN leaves the state intact.
    for (const auto* group : {&slots.network, &slots.genes}) {
        for (const auto& s : *group) {
            for (Eigen::Index k = 0; k < s.size; ++k) {
                if (std::isnan(s.grad[k])) {
                    throw NumericError("NaN gradient in tensor '" + s.name + "'");
                }
            }
        }
    }
    if (!slots.network.empty()) {
        nn::adam_step(network_adam, slots.network, lr);
    }
    nn::adam_step(gene_adam, slots.genes, ode_lr);
    ++state.encoder.version;
    ++state.decoder.version;
    clamp_genes(state.genes, state.t_max);
}

}  // namespace

TrainResult train(const ExpressionMatrix& data, const TrainConfig& config, ModelKind kind,
                  const std::optional<std::vector<double>>& capture_times) {
    config.validate();
    data.validate();
    const Eigen::Index n = data.n_cells();
    if (n < 4) {
        throw DomainError("train: need at least 4 cells");
    }
    nn::Rng rng(config.seed);

    std::vector<Eigen::Index> cells(n);
    std::iota(cells.begin(), cells.end(), Eigen::Index{0});
    std::shuffle(cells.begin(), cells.end(), rng);
    const auto n_train = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>(std::llround(config.train_fraction * static_cast<double>(n))), 2, n - 1);

    TrainResult result;
    result.train_cells.assign(cells.begin(), cells.begin() + n_train);
    result.test_cells.assign(cells.begin() + n_train, cells.end());
    std::sort(result.train_cells.begin(), result.train_cells.end());
    std::sort(result.test_cells.begin(), result.test_cells.end());

    const Matrix features = data.features();
    const Matrix train_x = gather_rows(features, result.train_cells);
    const Matrix test_x = gather_rows(features, result.test_cells);

    auto init = initialize_params(data, config, capture_times);
    ModelState state = make_model(kind, data.gene_names, init.kinetics, config, train_x, rng);
    state.default_initialized = init.default_initialized;
    state.prior = init.prior;
    state.prior.validate(n);

    Vector prior_means(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        prior_means[i] = state.prior.mean_for(i);
    }
    const Vector train_prior = gather_rows(prior_means, result.train_cells);
    detail::TimeAnchor anchor;
    Vector train_anchor;
    if (config.time_init_epochs > 0) {
        train_anchor = gather_rows(initial_times(data, config.t_max), result.train_cells);
        const double width = config.time_init_width * config.t_max;
        anchor.weight = 1.0 / (width * width);
    }

    nn::AdamState network_adam, gene_adam;
    const int warmup = static_cast<int>(std::ceil(config.kl_warmup_fraction * config.epochs));
    std::vector<Eigen::Index> order(result.train_cells.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    ModelState snapshot = state;

    auto reconstruct = [&](const ModelState& s, const Matrix& x, const LatentPosterior& post) {
        Matrix rho;
        if (s.kind == ModelKind::full) {
            rho = decode_rho(s, post.mu_c);
        }
        const auto mean = kinetic_mean(s, post.mu_t, s.kind == ModelKind::full ? &rho : nullptr);
        Matrix x_hat(x.rows(), x.cols());
        x_hat << mean.u, mean.s;
        return x_hat;
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double kl_weight = warmup > 0 ? std::min(1.0, (epoch + 1.0) / warmup) : 1.0;
        std::shuffle(order.begin(), order.end(), rng);
        try {
            for (auto batch_rows : make_batches(order, config.batch_size)) {
                const auto rows = static_cast<Eigen::Index>(batch_rows.size());
                const Matrix x = gather_rows(train_x, batch_rows);
                const Vector pm = gather_rows(train_prior, batch_rows);
                const Vector eps_t = draw_normal(rows, 1, rng);
                const Matrix eps_c = draw_normal(rows, state.latent_dim, rng);
                const bool anchored = epoch < config.time_init_epochs;
                if (anchored) {
                    anchor.target = gather_rows(train_anchor, batch_rows);
                }
                auto step = detail::loss_and_gradients(state, x, pm, state.prior.sigma0, eps_t, eps_c, kl_weight,
                                                       nn::Mode::train, &rng, nullptr, true,
                                                       anchored ? &anchor : nullptr);
                if (!std::isfinite(step.loss)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
                }
                step_optimizers(state, step.grads, true, network_adam, gene_adam, config.learning_rate,
                                config.ode_learning_rate);
                nn::update_running_stats(state.encoder_spec, state.encoder, step.encoder_cache);
                if (kind == ModelKind::full) {
                    nn::update_running_stats(state.decoder_spec, state.decoder, step.decoder_cache);
                }
            }

            EpochRecord rec;
            rec.epoch = epoch + 1;
            const auto post = encode(state, train_x);
            const Matrix c = post.mu_c;
            const auto terms = elbo(state, train_x, post, train_prior, state.prior.sigma0, post.mu_t,
                                    kind == ModelKind::full ? &c : nullptr);
            const double nt = static_cast<double>(train_x.rows());
            rec.elbo = terms.total / nt;
            rec.kl_t = terms.kl_t / nt;
            rec.kl_c = terms.kl_c / nt;
            rec.mse_train = mse_between(train_x, reconstruct(state, train_x, post));
            if (test_x.rows() > 0) {
                rec.mse_test = mse_between(test_x, reconstruct(state, test_x, encode(state, test_x)));
            }
            if (!std::isfinite(rec.mse_train) || !std::isfinite(rec.elbo)) {
                throw NumericError("non-finite epoch summary at epoch " + std::to_string(epoch + 1));
            }
            result.history.push_back(rec);
            snapshot = state;
        } catch (const NumericError& e) {
            result.aborted = true;
            result.diagnostic = std::string(e.what()) + "; returned the state after epoch " +
                                std::to_string(result.history.size());
            state = snapshot;
            break;
        }
    }
    result.state = std::move(state);
    return result;
}

RefineResult refine_initial_conditions(const ModelState& state, const ExpressionMatrix& data, double delta1,
                                       double delta2, const TrainConfig& config) {
    if (state.kind != ModelKind::full) {
        throw DomainError("refine: only the full model has per-cell transcription rates to refine");
    }
    if (!(delta1 > delta2) || delta2 < 0.0) {
        throw DomainError("refine: window needs delta1 > delta2 >= 0");
    }
    if (config.refine_epochs < 0) {
        throw DomainError("refine: negative epoch count");
    }
    auto train_mse = [&](const ModelState& s) { return mse_between(data.features(), reconstruction(predict(s, data))); };

    RefineResult result;
    result.mse_before = train_mse(state);

    ModelState refined = state;
    refined.refined = true;
    refined.delta1 = delta1;
    refined.delta2 = delta2;
    const Matrix features = data.features();
    const Vector times = encode(state, features).mu_t;
    refined.reference_times = times;
    refined.reference_u = data.unspliced;
    refined.reference_s = data.spliced;
    const auto ics = initial_conditions(refined, times);

    ModelState best = refined;
    double best_mse = train_mse(refined);
    nn::Rng rng(config.seed + 1);
    nn::AdamState network_adam, gene_adam;
    std::vector<Eigen::Index> order(data.n_cells());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const Vector prior = Vector::Constant(data.n_cells(), refined.prior.t0);

    try {
        for (int epoch = 0; epoch < config.refine_epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (auto batch_rows : make_batches(order, config.batch_size)) {
                const auto rows = static_cast<Eigen::Index>(batch_rows.size());
                const Matrix x = gather_rows(features, batch_rows);
                std::vector<CellInitialCondition> batch_ics;
                batch_ics.reserve(batch_rows.size());
                for (auto r : batch_rows) {
                    batch_ics.push_back(ics[r]);
                }
                auto step = detail::loss_and_gradients(refined, x, gather_rows(prior, batch_rows),
                                                       refined.prior.sigma0, Vector::Zero(rows),
                                                       Matrix::Zero(rows, refined.latent_dim), 0.0, nn::Mode::eval,
                                                       nullptr, &batch_ics, false);
                if (!std::isfinite(step.loss)) {
                    throw NumericError("non-finite refinement loss");
                }
                step_optimizers(refined, step.grads, false, network_adam, gene_adam, config.learning_rate,
                                config.ode_learning_rate);
            }
            const double mse = train_mse(refined);
            if (std::isfinite(mse) && mse < best_mse) {
                best_mse = mse;
                best = refined;
            }
        }
    } catch (const NumericError&) {
        // Keep the best finite checkpoint seen so far.
    }

    if (!(best_mse <= 1.01 * result.mse_before)) {
        result.state = state;
        result.mse_after = result.mse_before;
        result.rolled_back = true;
        return result;
    }
    result.state = std::move(best);
    result.mse_after = best_mse;
    return result;
}

}  // namespace velo
