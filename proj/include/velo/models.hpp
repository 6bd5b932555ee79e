#ifndef VELO_MODELS_HPP
#define VELO_MODELS_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "velo/data.hpp"
#include "velo/kinetics.hpp"
#include "velo/nn.hpp"

/**
 * @file models.hpp
 * @brief Variational models of latent cell time and cell state.
 *
 * Both models encode a cell's [u, s] vector into a Gaussian posterior over its
 * latent time t and decode t back through the closed-form kinetics.
 *
 * - The basic model shares one switching kinetic function per gene across all
 *   cells (transcription on between t_on and t_off).
 * - The full model adds a latent cell state c ~ N(0, I). A decoder network maps
 *   c to a relative transcription rate rho in (0, 1) per gene, and each cell
 *   follows the kinetics with transcription rate rho * alpha started at the
 *   gene's t_on from zero.
 *
 * Rates are stored as logarithms so that gradient steps keep them positive.
 */

namespace velo {

enum class ModelKind { basic, full };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

struct TimePrior {
    double t0 = 10.0;
    double sigma0 = 5.0;
    /// Per-cell prior means (informative prior), indexed like the training data.
    std::optional<Vector> cell_means;

    double mean_for(Eigen::Index cell) const { return cell_means ? (*cell_means)[cell] : t0; }
    void validate(Eigen::Index n_cells) const;
};

struct LatentPosterior {
    Vector mu_t;
    Vector sigma_t;
    Matrix mu_c;     // B x d (zero columns for the basic model)
    Matrix sigma_c;  // B x d
};

/// Trainable per-gene kinetics in optimisation coordinates (all 1 x G).
struct GeneParams {
    RowVector log_alpha;
    RowVector log_beta;
    RowVector log_gamma;
    RowVector t_on;
    RowVector log_duration;  // log(t_off - t_on)
    RowVector log_sigma_u;
    RowVector log_sigma_s;

    Eigen::Index size() const { return log_alpha.size(); }
    static GeneParams zeros(Eigen::Index genes);
    static GeneParams from_kinetics(const std::vector<GeneKinetics>& kinetics);
    GeneKinetics kinetics(Eigen::Index g) const;
    RowVector alpha() const { return log_alpha.array().exp(); }
    RowVector beta() const { return log_beta.array().exp(); }
    RowVector gamma() const { return log_gamma.array().exp(); }
    RowVector t_off() const { return t_on.array() + log_duration.array().exp(); }
    RowVector sigma_u() const { return log_sigma_u.array().exp(); }
    RowVector sigma_s() const { return log_sigma_s.array().exp(); }
};

struct TrainConfig {
    double learning_rate = 2e-4;
    /// Step size for the per-gene kinetic parameters.
    double ode_learning_rate = 1e-2;
    int batch_size = 128;
    double train_fraction = 0.7;
    int latent_dim = 5;
    int epochs = 300;
    std::uint64_t seed = 0;
    /// Time scale of the model; the uninformative prior is N(t_max / 2, (t_max / 4)^2).
    double t_max = 20.0;
    /// Refinement window [t - delta1, t - delta2]; negative means "derive from t_max".
    double delta1 = -1.0;
    double delta2 = -1.0;
    int refine_epochs = 50;
    /// Fraction of epochs over which the KL weight rises linearly from 0 to 1.
    double kl_warmup_fraction = 0.1;
    double dropout = 0.2;
    std::vector<int> encoder_hidden{500, 250};
    std::vector<int> decoder_hidden{250, 500};
    /// Epochs during which posterior means are pulled toward the steady-state time estimate.
    int time_init_epochs = 30;
    /// Width of that pull, in units of t_max.
    double time_init_width = 0.05;

    double window_far() const { return delta1 >= 0.0 ? delta1 : 3.0 * t_max / 100.0; }
    double window_near() const { return delta2 >= 0.0 ? delta2 : 1.0 * t_max / 100.0; }
    void validate() const;
};

/// Initial conditions attached to a cell after refinement.
struct CellInitialCondition {
    bool has_window = false;
    double t0 = 0.0;
    RowVector u0;  // 1 x G
    RowVector s0;
};

struct ModelState {
    ModelKind kind = ModelKind::basic;
    int n_genes = 0;
    int latent_dim = 0;
    double t_max = 20.0;
    std::vector<std::string> gene_names;
    /// Per-feature divisor applied to [u, s] before the encoder.
    RowVector input_scale;

    nn::MLPSpec encoder_spec;
    nn::MLPParams encoder;
    nn::MLPSpec decoder_spec;
    nn::MLPParams decoder;
    GeneParams genes;
    /// Genes that fell back to default rates at initialisation.
    std::vector<bool> default_initialized;
    TimePrior prior;

    /// Refinement: reference cells (times and abundances) used for window averages.
    bool refined = false;
    double delta1 = 0.0;
    double delta2 = 0.0;
    Vector reference_times;
    Matrix reference_u;
    Matrix reference_s;

    int encoder_outputs() const { return kind == ModelKind::full ? 2 + 2 * latent_dim : 2; }
};

/// Builds networks and gene parameters for `kind` with freshly initialised weights.
ModelState make_model(ModelKind kind, const std::vector<std::string>& gene_names,
                      const std::vector<GeneKinetics>& kinetics, const TrainConfig& config, const Matrix& train_features,
                      nn::Rng& rng);

/// Posterior parameters for a B x 2G batch; eval mode uses running statistics and no dropout.
LatentPosterior encode(const ModelState& state, const Matrix& batch);

/// rho for a B x d batch of cell states.
Matrix decode_rho(const ModelState& state, const Matrix& c);

struct KineticMean {
    Matrix u;  // B x G
    Matrix s;
};

/**
 * Kinetic mean F(t) for each row. `rho` is required for the full model and
 * ignored by the basic model. `initial` (optional, one per row) applies
 * refined initial conditions.
 */
KineticMean kinetic_mean(const ModelState& state, const Vector& t, const Matrix* rho = nullptr,
                         const std::vector<CellInitialCondition>* initial = nullptr);

/// KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)).
double gaussian_kl(double mu_q, double sigma_q, double mu_p, double sigma_p);

struct ElboTerms {
    double total = 0.0;
    double reconstruction = 0.0;
    double kl_t = 0.0;
    double kl_c = 0.0;
};

/**
 * ELBO of a batch, summed over cells: Gaussian log-likelihood of x under the
 * kinetic mean at the sampled t (and c), minus the closed-form KL terms for
 * t against N(prior_mean, prior_sigma^2) and c against N(0, I). Throws
 * NumericError naming the first non-finite term.
 */
ElboTerms elbo(const ModelState& state, const Matrix& batch, const LatentPosterior& posterior,
               const Vector& prior_mean, double prior_sigma, const Vector& t_sample,
               const Matrix* c_sample = nullptr);

/// Reconstruction log-likelihood per gene (summed over cells), G entries.
RowVector reconstruction_per_gene(const ModelState& state, const Matrix& batch, const KineticMean& mean);

/// Rates from the steady-state fit, or from capture times when given.
struct Initialization {
    std::vector<GeneKinetics> kinetics;
    std::vector<bool> default_initialized;
    TimePrior prior;
};

/**
 * Initial cell times in [0, t_max]: each gene's cells are placed on its
 * steady-state switching curve (t_on = 0, t_off = t_max / 2) and the per-cell
 * median of the min-max scaled gene times is stretched to [0, t_max].
 */
Vector initial_times(const ExpressionMatrix& data, double t_max);

/**
 * Steady-state initialisation of every gene: alpha = u*, beta = 1,
 * gamma = u* / s*, t_on = 0, t_off = t_max / 2, noise scales from the
 * per-gene standard deviation. With capture times the prior becomes
 * informative (one mean per distinct capture time, evenly spread over
 * [0, t_max]) and t_off moves to the 75th percentile of the scaled capture
 * times. Genes without a usable steady state get alpha = beta = gamma = 1.
 */
Initialization initialize_params(const ExpressionMatrix& data, const TrainConfig& config,
                                 const std::optional<std::vector<double>>& capture_times = std::nullopt);

struct EpochRecord {
    int epoch = 0;
    double elbo = 0.0;  // per cell, KL at full weight
    double kl_t = 0.0;
    double kl_c = 0.0;
    double mse_train = 0.0;
    double mse_test = 0.0;
};

struct TrainResult {
    ModelState state;
    std::vector<EpochRecord> history;
    std::vector<Eigen::Index> train_cells;
    std::vector<Eigen::Index> test_cells;
    bool aborted = false;
    std::string diagnostic;
};

/**
 * Minibatch ADAM on the negative ELBO. Cells are split into train/test by a
 * seeded shuffle; the encoder, the rho decoder (full model), and the per-gene
 * kinetics are optimised jointly. A non-finite loss stops training and returns
 * the state at the end of the last finite epoch.
 */
TrainResult train(const ExpressionMatrix& data, const TrainConfig& config, ModelKind kind,
                  const std::optional<std::vector<double>>& capture_times = std::nullopt);

/**
 * Window-averaged initial conditions for cells at times `t`, from the
 * reference cells stored in `state`. Cells with no reference cell in
 * [t - delta1, t - delta2] get has_window = false and zero values.
 */
std::vector<CellInitialCondition> initial_conditions(const ModelState& state, const Vector& t);

struct RefineResult {
    ModelState state;
    double mse_before = 0.0;
    double mse_after = 0.0;
    bool rolled_back = false;
};

/**
 * Attaches window-averaged initial conditions to a trained full model and
 * fine-tunes the kinetics and rho decoder with the encoder frozen. The result
 * never has a train MSE more than 1% above the input model's; otherwise the
 * input model is returned unchanged and `rolled_back` is set.
 */
RefineResult refine_initial_conditions(const ModelState& state, const ExpressionMatrix& data, double delta1,
                                       double delta2, const TrainConfig& config);

struct Prediction {
    LatentPosterior posterior;
    Matrix u_hat;
    Matrix s_hat;
    Matrix rho;  // full model: decoder output; basic model: 1 inside [t_on, t_off), else 0
    Matrix du_dt;
    Matrix ds_dt;
};

/// Posterior means pushed through the kinetics; velocities use alpha_tilde = rho * alpha.
Prediction predict(const ModelState& state, const ExpressionMatrix& data);

/// Feature matrix [u_hat, s_hat] of a prediction.
Matrix reconstruction(const Prediction& p);

/// Writes / reads the model checkpoint (named-tensor format plus a metadata block).
void save_model(std::ostream& out, const ModelState& state);
ModelState load_model(std::istream& in);

namespace detail {

/// Gradients of the negative per-cell-averaged objective used by training.
struct ModelGrads {
    nn::MLPGrads encoder;
    nn::MLPGrads decoder;
    GeneParams genes;
};

/// Quadratic pull weight * G * (mu_t - target)^2 / 2 added per cell.
struct TimeAnchor {
    Vector target;
    double weight = 0.0;
};

struct StepOutcome {
    ElboTerms terms;  // summed over the batch, KL at full weight
    double loss = 0.0;
    ModelGrads grads;
    nn::ForwardCache encoder_cache;
    nn::ForwardCache decoder_cache;
};

/**
 * Loss = -(reconstruction - kl_weight * (kl_t + kl_c)) / B for one
 * reparameterised sample per cell, with exact gradients for every trainable
 * tensor. `eps_t` (B) and `eps_c` (B x d) are the standard-normal draws.
 * With `encoder_grads` false the encoder is treated as frozen.
 */
StepOutcome loss_and_gradients(const ModelState& state, const Matrix& batch, const Vector& prior_mean,
                               double prior_sigma, const Vector& eps_t, const Matrix& eps_c, double kl_weight,
                               nn::Mode mode, nn::Rng* rng,
                               const std::vector<CellInitialCondition>* initial = nullptr,
                               bool encoder_grads = true, const TimeAnchor* anchor = nullptr);

/// Slots for ADAM over every trainable tensor of `state`.
std::vector<nn::ParamSlot> param_slots(ModelState& state, const ModelGrads& grads, bool include_encoder);

}  // namespace detail

}  // namespace velo

#endif
