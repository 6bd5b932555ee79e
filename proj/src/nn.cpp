#include "velo/nn.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "velo/error.hpp"

namespace velo::nn {

void MLPSpec::validate() const {
    if (widths.size() < 2) {
        throw DomainError("MLPSpec: need at least input and output widths");
    }
    for (int w : widths) {
        if (w < 1) {
            throw DomainError("MLPSpec: layer widths must be >= 1");
        }
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw DomainError("MLPSpec: dropout must lie in [0, 1)");
    }
}

MLPGrads MLPGrads::zeros_like(const MLPParams& params) {
    MLPGrads g;
    g.layers.reserve(params.layers.size());
    for (const auto& p : params.layers) {
        g.layers.push_back({Matrix::Zero(p.weight.rows(), p.weight.cols()), RowVector::Zero(p.bias.size()),
                            RowVector::Zero(p.bn_scale.size()), RowVector::Zero(p.bn_shift.size())});
    }
    return g;
}

MLPGrads& MLPGrads::operator+=(const MLPGrads& other) {
    if (other.layers.size() != layers.size()) {
        throw ShapeError("MLPGrads: layer count mismatch");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].weight += other.layers[l].weight;
        layers[l].bias += other.layers[l].bias;
        layers[l].bn_scale += other.layers[l].bn_scale;
        layers[l].bn_shift += other.layers[l].bn_shift;
    }
    return *this;
}

MLPParams init_params(const MLPSpec& spec, Rng& rng) {
    spec.validate();
    MLPParams params;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const int in = spec.widths[l];
        const int out = spec.widths[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        LayerParams p;
        p.weight.resize(out, in);
        for (Eigen::Index j = 0; j < p.weight.cols(); ++j) {
            for (Eigen::Index i = 0; i < p.weight.rows(); ++i) {
                p.weight(i, j) = dist(rng);
            }
        }
        p.bias.resize(out);
        for (Eigen::Index i = 0; i < p.bias.size(); ++i) {
            p.bias(i) = dist(rng);
        }
        if (spec.is_hidden(l) && spec.batch_norm) {
            p.bn_scale = RowVector::Ones(out);
            p.bn_shift = RowVector::Zero(out);
            p.running_mean = RowVector::Zero(out);
            p.running_var = RowVector::Ones(out);
        }
        params.layers.push_back(std::move(p));
    }
    return params;
}

double apply_activation(Activation act, double x) {
    switch (act) {
        case Activation::identity:
            return x;
        case Activation::leaky_relu:
            return x > 0.0 ? x : kLeakySlope * x;
        case Activation::softplus:
            return softplus(x);
        case Activation::sigmoid:
            return sigmoid(x);
    }
    return x;
}

double activation_derivative(Activation act, double x) {
    switch (act) {
        case Activation::identity:
            return 1.0;
        case Activation::leaky_relu:
            return x > 0.0 ? 1.0 : kLeakySlope;
        case Activation::softplus:
            return sigmoid(x);
        case Activation::sigmoid: {
            const double y = sigmoid(x);
            return y * (1.0 - y);
        }
    }
    return 1.0;
}

namespace {

void check_shapes(const MLPSpec& spec, const MLPParams& params) {
    if (static_cast<int>(params.layers.size()) != spec.num_layers()) {
        throw ShapeError("mlp: parameter bundle has " + std::to_string(params.layers.size()) + " layers, spec has " +
                         std::to_string(spec.num_layers()));
    }
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto& p = params.layers[l];
        if (p.weight.rows() != spec.widths[l + 1] || p.weight.cols() != spec.widths[l] ||
            p.bias.size() != spec.widths[l + 1]) {
            throw ShapeError("mlp: layer " + std::to_string(l) + " parameters do not match the spec");
        }
    }
}

bool has_batch_norm(const MLPSpec& spec, int layer) { return spec.batch_norm && spec.is_hidden(layer); }

}  // namespace

ForwardResult forward(const MLPSpec& spec, const MLPParams& params, const Matrix& batch, Mode mode, Rng* rng) {
    spec.validate();
    check_shapes(spec, params);
    if (batch.cols() != spec.input_width()) {
        throw ShapeError("mlp: batch has " + std::to_string(batch.cols()) + " columns, expected " +
                         std::to_string(spec.input_width()));
    }
    if (batch.rows() < 1) {
        throw ShapeError("mlp: empty batch");
    }
    const bool train = mode == Mode::train;
    if (train && spec.batch_norm && spec.num_layers() > 1 && batch.rows() < 2) {
        throw ShapeError("mlp: train-mode batch normalization needs at least two rows");
    }
    const bool dropout_on = train && spec.dropout > 0.0;
    if (dropout_on && rng == nullptr) {
        throw DomainError("mlp: train-mode dropout needs a random generator");
    }

    ForwardResult result;
    result.cache.mode = mode;
    result.cache.params_version = params.version;
    result.cache.layers.resize(spec.num_layers());
    const double rows = static_cast<double>(batch.rows());

    Matrix current = batch;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto& p = params.layers[l];
        auto& c = result.cache.layers[l];
        c.input = std::move(current);
        Matrix z = (c.input * p.weight.transpose()).rowwise() + p.bias;

        if (has_batch_norm(spec, l)) {
            if (train) {
                c.batch_mean = z.colwise().mean();
                Matrix centered = z.rowwise() - c.batch_mean;
                c.batch_var = centered.array().square().colwise().sum() / rows;
                c.inv_std = (c.batch_var.array() + spec.bn_epsilon).rsqrt();
                c.normalized = centered.array().rowwise() * c.inv_std.array();
            } else {
                c.inv_std = (p.running_var.array() + spec.bn_epsilon).rsqrt();
                c.normalized = (z.rowwise() - p.running_mean).array().rowwise() * c.inv_std.array();
            }
            c.pre_activation =
                (c.normalized.array().rowwise() * p.bn_scale.array()).rowwise() + p.bn_shift.array();
        } else {
            c.pre_activation = std::move(z);
        }

        const Activation act = spec.is_hidden(l) ? spec.hidden_activation : spec.output_activation;
        c.activated = c.pre_activation.unaryExpr([act](double x) { return apply_activation(act, x); });

        if (spec.is_hidden(l) && dropout_on) {
            const double keep = 1.0 - spec.dropout;
            std::bernoulli_distribution coin(keep);
            c.dropout_mask.resize(c.activated.rows(), c.activated.cols());
            for (Eigen::Index j = 0; j < c.dropout_mask.cols(); ++j) {
                for (Eigen::Index i = 0; i < c.dropout_mask.rows(); ++i) {
                    c.dropout_mask(i, j) = coin(*rng) ? 1.0 / keep : 0.0;
                }
            }
            current = c.activated.cwiseProduct(c.dropout_mask);
        } else {
            current = c.activated;
        }
    }
    result.output = std::move(current);
    return result;
}

void update_running_stats(const MLPSpec& spec, MLPParams& params, const ForwardCache& cache) {
    if (cache.mode != Mode::train) {
        return;
    }
    for (int l = 0; l < spec.num_layers(); ++l) {
        if (!has_batch_norm(spec, l)) {
            continue;
        }
        auto& p = params.layers[l];
        const auto& c = cache.layers[l];
        const double n = static_cast<double>(c.input.rows());
        // Running variance uses the unbiased estimate, as in common frameworks.
        const RowVector unbiased = c.batch_var * (n / std::max(1.0, n - 1.0));
        p.running_mean = (1.0 - spec.bn_momentum) * p.running_mean + spec.bn_momentum * c.batch_mean;
        p.running_var = (1.0 - spec.bn_momentum) * p.running_var + spec.bn_momentum * unbiased;
    }
}

BackwardResult backward(const MLPSpec& spec, const MLPParams& params, const ForwardCache& cache,
                        const Matrix& upstream) {
    if (!cache.consumed || *cache.consumed) {
        throw Error("mlp backward: forward cache already consumed");
    }
    if (cache.params_version != params.version) {
        throw Error("mlp backward: parameters changed since the forward pass");
    }
    check_shapes(spec, params);
    if (static_cast<int>(cache.layers.size()) != spec.num_layers()) {
        throw ShapeError("mlp backward: cache does not match the spec");
    }
    const auto& last = cache.layers.back();
    if (upstream.rows() != last.activated.rows() || upstream.cols() != last.activated.cols()) {
        throw ShapeError("mlp backward: upstream gradient has the wrong shape");
    }
    *cache.consumed = true;

    BackwardResult result;
    result.grads = MLPGrads::zeros_like(params);
    const bool train = cache.mode == Mode::train;
    const double rows = static_cast<double>(upstream.rows());

    Matrix grad = upstream;
    for (int l = spec.num_layers() - 1; l >= 0; --l) {
        const auto& p = params.layers[l];
        const auto& c = cache.layers[l];
        auto& g = result.grads.layers[l];

        if (c.dropout_mask.size() > 0) {
            grad = grad.cwiseProduct(c.dropout_mask);
        }
        const Activation act = spec.is_hidden(l) ? spec.hidden_activation : spec.output_activation;
        if (act != Activation::identity) {
            grad = grad.cwiseProduct(
                c.pre_activation.unaryExpr([act](double x) { return activation_derivative(act, x); }));
        }

        Matrix dz;
        if (has_batch_norm(spec, l)) {
            g.bn_scale = (grad.cwiseProduct(c.normalized)).colwise().sum();
            g.bn_shift = grad.colwise().sum();
            const Matrix dxhat = grad.array().rowwise() * p.bn_scale.array();
            if (train) {
                const RowVector sum_dxhat = dxhat.colwise().sum();
                const RowVector sum_dxhat_xhat = dxhat.cwiseProduct(c.normalized).colwise().sum();
                Matrix inner = (rows * dxhat).rowwise() - sum_dxhat;
                inner -= (c.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
                dz = (inner.array().rowwise() * (c.inv_std.array() / rows)).matrix();
            } else {
                dz = dxhat.array().rowwise() * c.inv_std.array();
            }
        } else {
            dz = std::move(grad);
        }

        g.weight = dz.transpose() * c.input;
        g.bias = dz.colwise().sum();
        grad = dz * p.weight;
    }
    result.input_grad = std::move(grad);
    return result;
}

double sample_reparameterized(double mu, double sigma, double noise) {
    if (std::isnan(sigma) || sigma < 0.0) {
        throw DomainError("sample_reparameterized: sigma must be non-negative");
    }
    return mu + std::max(sigma, kMinSigma) * noise;
}

Matrix sample_reparameterized(const Matrix& mu, const Matrix& sigma, const Matrix& noise) {
    if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols() || mu.rows() != noise.rows() ||
        mu.cols() != noise.cols()) {
        throw ShapeError("sample_reparameterized: shape mismatch");
    }
    Matrix out(mu.rows(), mu.cols());
    for (Eigen::Index j = 0; j < mu.cols(); ++j) {
        for (Eigen::Index i = 0; i < mu.rows(); ++i) {
            out(i, j) = sample_reparameterized(mu(i, j), sigma(i, j), noise(i, j));
        }
    }
    return out;
}

void append_slots(std::vector<ParamSlot>& slots, const std::string& prefix, MLPParams& params, const MLPGrads& grads) {
    if (grads.layers.size() != params.layers.size()) {
        throw ShapeError("append_slots: gradient bundle does not match parameters");
    }
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& p = params.layers[l];
        const auto& g = grads.layers[l];
        const std::string base = prefix + "." + std::to_string(l) + ".";
        slots.push_back({base + "weight", p.weight.data(), g.weight.data(), p.weight.size()});
        slots.push_back({base + "bias", p.bias.data(), g.bias.data(), p.bias.size()});
        if (p.bn_scale.size() > 0) {
            slots.push_back({base + "bn_scale", p.bn_scale.data(), g.bn_scale.data(), p.bn_scale.size()});
            slots.push_back({base + "bn_shift", p.bn_shift.data(), g.bn_shift.data(), p.bn_shift.size()});
        }
    }
}

void adam_step(AdamState& state, std::span<const ParamSlot> slots, double lr) {
    if (state.names.empty()) {
        for (const auto& s : slots) {
            state.names.push_back(s.name);
            state.first_moment.push_back(Vector::Zero(s.size));
            state.second_moment.push_back(Vector::Zero(s.size));
        }
    }
    if (state.names.size() != slots.size()) {
        throw ShapeError("adam_step: slot count changed between steps");
    }
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const auto& s = slots[k];
        if (s.name != state.names[k] || s.size != state.first_moment[k].size()) {
            throw ShapeError("adam_step: slot '" + s.name + "' does not match the optimizer state");
        }
        for (Eigen::Index i = 0; i < s.size; ++i) {
            if (std::isnan(s.grad[i])) {
                throw NumericError("adam_step: NaN gradient in '" + s.name + "'");
            }
        }
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const auto& s = slots[k];
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        for (Eigen::Index i = 0; i < s.size; ++i) {
            const double g = s.grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            s.value[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
    out << "velo-tensors 1\n";
    out << std::setprecision(17);
    for (const auto& t : tensors) {
        if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos) {
            throw InputError("write_tensors: tensor names must be non-empty and contain no whitespace");
        }
        out << "tensor " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
        for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
            for (Eigen::Index j = 0; j < t.value.cols(); ++j) {
                if (j > 0) {
                    out << ' ';
                }
                out << t.value(i, j);
            }
            out << '\n';
        }
    }
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "velo-tensors" || version != 1) {
        throw InputError("read_tensors: missing 'velo-tensors 1' header");
    }
    std::vector<NamedTensor> tensors;
    std::string keyword;
    while (in >> keyword) {
        if (keyword != "tensor") {
            throw InputError("read_tensors: expected 'tensor', found '" + keyword + "'");
        }
        NamedTensor t;
        Eigen::Index rows = 0, cols = 0;
        if (!(in >> t.name >> rows >> cols) || rows < 0 || cols < 0) {
            throw InputError("read_tensors: malformed tensor header");
        }
        t.value.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                std::string token;
                if (!(in >> token)) {
                    throw InputError("read_tensors: truncated tensor '" + t.name + "'");
                }
                t.value(i, j) = std::stod(token);
            }
        }
        tensors.push_back(std::move(t));
    }
    return tensors;
}

namespace {

Matrix as_matrix(const RowVector& v) { return v; }

const Matrix& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name, Eigen::Index rows,
                          Eigen::Index cols) {
    for (const auto& t : tensors) {
        if (t.name == name) {
            if (t.value.rows() != rows || t.value.cols() != cols) {
                throw InputError("checkpoint: tensor '" + name + "' has the wrong shape");
            }
            return t.value;
        }
    }
    throw InputError("checkpoint: missing tensor '" + name + "'");
}

}  // namespace

void append_tensors(std::vector<NamedTensor>& out, const std::string& prefix, const MLPParams& params) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& p = params.layers[l];
        const std::string base = prefix + "." + std::to_string(l) + ".";
        out.push_back({base + "weight", p.weight});
        out.push_back({base + "bias", as_matrix(p.bias)});
        if (p.bn_scale.size() > 0) {
            out.push_back({base + "bn_scale", as_matrix(p.bn_scale)});
            out.push_back({base + "bn_shift", as_matrix(p.bn_shift)});
            out.push_back({base + "running_mean", as_matrix(p.running_mean)});
            out.push_back({base + "running_var", as_matrix(p.running_var)});
        }
    }
}

void restore_tensors(const std::vector<NamedTensor>& tensors, const std::string& prefix, const MLPSpec& spec,
                     MLPParams& params) {
    spec.validate();
    params.layers.assign(spec.num_layers(), LayerParams{});
    for (int l = 0; l < spec.num_layers(); ++l) {
        auto& p = params.layers[l];
        const int in = spec.widths[l], out = spec.widths[l + 1];
        const std::string base = prefix + "." + std::to_string(l) + ".";
        p.weight = find_tensor(tensors, base + "weight", out, in);
        p.bias = find_tensor(tensors, base + "bias", 1, out);
        if (has_batch_norm(spec, l)) {
            p.bn_scale = find_tensor(tensors, base + "bn_scale", 1, out);
            p.bn_shift = find_tensor(tensors, base + "bn_shift", 1, out);
            p.running_mean = find_tensor(tensors, base + "running_mean", 1, out);
            p.running_var = find_tensor(tensors, base + "running_var", 1, out);
        }
    }
    ++params.version;
}

}  // namespace velo::nn
