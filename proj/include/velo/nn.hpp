#ifndef VELO_NN_HPP
#define VELO_NN_HPP

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

/**
 * @file nn.hpp
 * @brief Small reverse-mode multilayer perceptron core.
 *
 * Batches are row-major in the statistical sense: a B x in matrix holds one
 * sample per row. Hidden layers are dense -> batch norm -> activation ->
 * dropout; the output layer is dense -> activation. Forward passes are pure
 * (running batch-norm statistics are updated by a separate call), which makes
 * finite-difference checks and concurrent evaluation straightforward.
 */

namespace velo::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

enum class Activation { identity, leaky_relu, softplus, sigmoid };
enum class Mode { train, eval };

inline constexpr double kLeakySlope = 0.01;

struct MLPSpec {
    /// input, hidden..., output
    std::vector<int> widths;
    Activation hidden_activation = Activation::leaky_relu;
    Activation output_activation = Activation::identity;
    /// Dropout probability applied after every hidden activation.
    double dropout = 0.2;
    /// Batch normalization on every hidden layer.
    bool batch_norm = true;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;

    int input_width() const { return widths.front(); }
    int output_width() const { return widths.back(); }
    int num_layers() const { return static_cast<int>(widths.size()) - 1; }
    bool is_hidden(int layer) const { return layer + 1 < num_layers(); }
    void validate() const;
};

struct LayerParams {
    Matrix weight;  // out x in
    RowVector bias;
    RowVector bn_scale;
    RowVector bn_shift;
    RowVector running_mean;
    RowVector running_var;
};

struct MLPParams {
    std::vector<LayerParams> layers;
    /// Bumped by every in-place update; forward caches remember the value they saw.
    std::uint64_t version = 0;
};

struct LayerGrads {
    Matrix weight;
    RowVector bias;
    RowVector bn_scale;
    RowVector bn_shift;
};

struct MLPGrads {
    std::vector<LayerGrads> layers;

    /// Zero gradients shaped like `params`.
    static MLPGrads zeros_like(const MLPParams& params);
    MLPGrads& operator+=(const MLPGrads& other);
};

/// Uniform fan-in initialization, unit batch-norm scale, zero shift.
MLPParams init_params(const MLPSpec& spec, Rng& rng);

struct LayerCache {
    Matrix input;
    Matrix normalized;   // batch-norm xhat
    RowVector inv_std;   // 1 / sqrt(var + eps), batch statistics
    RowVector batch_mean;
    RowVector batch_var;
    Matrix pre_activation;
    Matrix activated;
    Matrix dropout_mask;  // already scaled by 1 / keep
};

struct ForwardCache {
    Mode mode = Mode::eval;
    std::uint64_t params_version = 0;
    std::vector<LayerCache> layers;
    /// Set once backward() has consumed the cache.
    std::shared_ptr<bool> consumed = std::make_shared<bool>(false);
};

struct ForwardResult {
    Matrix output;
    ForwardCache cache;
};

/**
 * Runs the network on `batch`. Train mode uses batch statistics and draws
 * dropout masks from `rng` (required when dropout > 0); eval mode uses running
 * statistics and no dropout. Throws ShapeError on width mismatch or when a
 * single-row batch meets train-mode batch norm.
 */
ForwardResult forward(const MLPSpec& spec, const MLPParams& params, const Matrix& batch, Mode mode,
                      Rng* rng = nullptr);

/// Moves running batch-norm statistics toward the batch statistics in `cache`.
void update_running_stats(const MLPSpec& spec, MLPParams& params, const ForwardCache& cache);

struct BackwardResult {
    MLPGrads grads;
    Matrix input_grad;
};

/**
 * Exact gradients of the cached train-mode computation given dL/doutput.
 * A cache can be consumed once, and only while the parameters it was
 * computed with are unchanged.
 */
BackwardResult backward(const MLPSpec& spec, const MLPParams& params, const ForwardCache& cache,
                        const Matrix& upstream);

double apply_activation(Activation act, double x);
double activation_derivative(Activation act, double x);

/// Numerically stable softplus log(1 + exp(x)).
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// mu + sigma * noise, with sigma clamped to at least 1e-8; negative sigma is an error.
double sample_reparameterized(double mu, double sigma, double noise);
Matrix sample_reparameterized(const Matrix& mu, const Matrix& sigma, const Matrix& noise);

inline constexpr double kMinSigma = 1e-8;

/// One named trainable tensor and its gradient, viewed as flat storage.
struct ParamSlot {
    std::string name;
    double* value = nullptr;
    const double* grad = nullptr;
    Eigen::Index size = 0;
};

/// Appends slots for every trainable tensor in an MLP; names are `prefix.<layer>.<tensor>`.
void append_slots(std::vector<ParamSlot>& slots, const std::string& prefix, MLPParams& params, const MLPGrads& grads);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<std::string> names;
    std::vector<Vector> first_moment;
    std::vector<Vector> second_moment;
};

/**
 * Bias-corrected ADAM update applied in place to every slot. The first call
 * sizes the moment buffers; later calls must present the same slots in the
 * same order. A NaN gradient throws NumericError naming the tensor before any
 * value is modified.
 */
void adam_step(AdamState& state, std::span<const ParamSlot> slots, double lr);

/// A named dense tensor, the unit of the checkpoint format.
struct NamedTensor {
    std::string name;
    Matrix value;
};

/**
 * Checkpoint text format:
 *
 *     velo-tensors 1
 *     tensor <name> <rows> <cols>
 *     <row 0 values>
 *     ...
 *
 * Values are written with 17 significant digits so a round trip is exact.
 */
void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);

/// Flattens an MLP (including running statistics) into named tensors.
void append_tensors(std::vector<NamedTensor>& out, const std::string& prefix, const MLPParams& params);
/// Restores an MLP written by append_tensors; throws InputError on a missing or misshapen tensor.
void restore_tensors(const std::vector<NamedTensor>& tensors, const std::string& prefix, const MLPSpec& spec,
                     MLPParams& params);

}  // namespace velo::nn

#endif
