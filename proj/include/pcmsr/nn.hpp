#pragma once

// Small feedforward networks (dense + valid 3x3 convolution) with hand-written
// backpropagation, the small/large weight penalty and noise-aware training.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "error.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace pcmsr::nn {

enum class LayerKind : int { dense = 0, conv = 1 };
enum class Activation : int { none = 0, relu = 1 };

/// One weight layer. Convolutions keep their kernels in lowered (im2col) form:
/// `weight` is (out_channels, in_channels * kernel * kernel), so every layer is
/// a plain matrix that can be mapped onto one crossbar tile.
struct Layer {
    LayerKind kind = LayerKind::dense;
    Activation activation = Activation::none;
    Tensor weight;
    std::vector<double> bias;

    // Input geometry, convolution only. Valid padding, stride 1.
    std::size_t in_channels = 0;
    std::size_t in_height = 0;
    std::size_t in_width = 0;
    std::size_t kernel = 0;

    std::size_t rows() const { return weight.rows(); }
    std::size_t cols() const { return weight.cols(); }
    std::size_t out_height() const { return in_height - kernel + 1; }
    std::size_t out_width() const { return in_width - kernel + 1; }
    std::size_t positions() const { return kind == LayerKind::conv ? out_height() * out_width() : 1; }
    std::size_t input_size() const {
        return kind == LayerKind::conv ? in_channels * in_height * in_width : cols();
    }
    std::size_t output_size() const { return rows() * positions(); }

    friend bool operator==(const Layer&, const Layer&) = default;
};

struct Network {
    std::vector<Layer> layers;
    std::uint64_t rng_seed = 0;

    std::size_t input_size() const { return layers.empty() ? 0 : layers.front().input_size(); }
    std::size_t num_classes() const { return layers.empty() ? 0 : layers.back().output_size(); }
    std::size_t weight_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.size();
        return n;
    }

    /// Every weight of every layer, layer by layer in row-major order.
    std::vector<double> all_weights() const {
        std::vector<double> w;
        w.reserve(weight_count());
        for (const auto& l : layers) w.insert(w.end(), l.weight.values().begin(), l.weight.values().end());
        return w;
    }

    std::vector<Tensor> weights() const {
        std::vector<Tensor> w;
        for (const auto& l : layers) w.push_back(l.weight);
        return w;
    }

    void validate() const {
        if (layers.empty()) throw ShapeError("network has no layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const Layer& l = layers[i];
            if (l.weight.rank() != 2) throw ShapeError("layer " + std::to_string(i) + ": weight must be a matrix");
            if (l.bias.size() != l.rows())
                throw ShapeError("layer " + std::to_string(i) + ": bias length does not match output rows");
            if (l.kind == LayerKind::conv &&
                (l.kernel == 0 || l.kernel > l.in_height || l.kernel > l.in_width ||
                 l.cols() != l.in_channels * l.kernel * l.kernel))
                throw ShapeError("layer " + std::to_string(i) + ": inconsistent convolution geometry");
            if (i > 0 && layers[i - 1].output_size() != l.input_size())
                throw ShapeError("layer " + std::to_string(i) + ": input size " + std::to_string(l.input_size()) +
                                 " does not match previous output " + std::to_string(layers[i - 1].output_size()));
            if (!l.weight.all_finite()) throw InvalidArgument("layer " + std::to_string(i) + ": non-finite weight");
        }
    }

    friend bool operator==(const Network&, const Network&) = default;
};

struct TrainConfig {
    double epsilon_small = 0.05;
    double theta_large = 1.0;
    double lambda_small = 0.01;
    double lambda_large = 0.01;
    double lr = 0.05;
    int epochs = 20;
    std::size_t batch_size = 32;
    bool noise_aware = false;
    double nw_std_rel = 0.1;
    double pdrop = 0.03;

    void validate() const {
        if (!(epsilon_small > 0.0 && epsilon_small < theta_large))
            throw InvalidArgument("train: need 0 < epsilon_small < theta_large");
        if (!(lr > 0.0)) throw InvalidArgument("train: lr must be positive");
        if (epochs < 0) throw InvalidArgument("train: epochs must be >= 0");
        if (batch_size == 0) throw InvalidArgument("train: batch_size must be positive");
        if (!(pdrop >= 0.0 && pdrop < 1.0)) throw InvalidArgument("train: pdrop must lie in [0, 1)");
        if (lambda_small < 0.0 || lambda_large < 0.0 || nw_std_rel < 0.0)
            throw InvalidArgument("train: penalty strengths and noise std must be non-negative");
    }
};

struct Gradients {
    std::vector<Tensor> weight;
    std::vector<std::vector<double>> bias;

    static Gradients zeros_like(const Network& net) {
        Gradients g;
        for (const auto& l : net.layers) {
            g.weight.emplace_back(l.weight.shape());
            g.bias.emplace_back(l.bias.size(), 0.0);
        }
        return g;
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& t : weight)
            for (double v : t.values()) s += v * v;
        for (const auto& b : bias)
            for (double v : b) s += v * v;
        return s;
    }
};

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

// ---------------------------------------------------------------------------
// Construction

inline Layer make_dense(std::size_t in, std::size_t out, Activation act) {
    Layer l;
    l.kind = LayerKind::dense;
    l.activation = act;
    l.weight = Tensor::matrix(out, in);
    l.bias.assign(out, 0.0);
    return l;
}

inline Layer make_conv(std::size_t in_channels, std::size_t height, std::size_t width, std::size_t kernel,
                       std::size_t out_channels, Activation act) {
    Layer l;
    l.kind = LayerKind::conv;
    l.activation = act;
    l.in_channels = in_channels;
    l.in_height = height;
    l.in_width = width;
    l.kernel = kernel;
    l.weight = Tensor::matrix(out_channels, in_channels * kernel * kernel);
    l.bias.assign(out_channels, 0.0);
    return l;
}

/// He-normal initialisation of all weights, zero biases.
inline void initialize(Network& net, std::uint64_t seed) {
    net.rng_seed = seed;
    Rng rng = substream(seed, "init");
    for (auto& l : net.layers) {
        const double std_dev = std::sqrt(2.0 / static_cast<double>(l.cols()));
        for (double& w : l.weight.values()) w = std_dev * standard_normal(rng);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
}

struct Architecture {
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t conv_channels = 8;
    std::size_t hidden = 64;
    std::size_t classes = 10;
};

/// conv 3x3 (ReLU) -> dense hidden (ReLU) -> dense output.
inline Network make_network(const Architecture& a, std::uint64_t seed) {
    Network net;
    net.layers.push_back(make_conv(1, a.height, a.width, 3, a.conv_channels, Activation::relu));
    net.layers.push_back(make_dense(net.layers.back().output_size(), a.hidden, Activation::relu));
    net.layers.push_back(make_dense(a.hidden, a.classes, Activation::none));
    initialize(net, seed);
    net.validate();
    return net;
}

/// Fully connected network; hidden layers use ReLU, the last layer is linear.
inline Network make_dense_network(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw InvalidArgument("dense network needs at least input and output sizes");
    Network net;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
        net.layers.push_back(make_dense(sizes[i], sizes[i + 1],
                                        i + 2 < sizes.size() ? Activation::relu : Activation::none));
    initialize(net, seed);
    net.validate();
    return net;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

inline void gather_patch(const Layer& l, std::span<const double> in, std::size_t oy, std::size_t ox,
                         std::span<double> patch) {
    std::size_t q = 0;
    const std::size_t plane = l.in_height * l.in_width;
    for (std::size_t c = 0; c < l.in_channels; ++c)
        for (std::size_t ky = 0; ky < l.kernel; ++ky) {
            const double* src = in.data() + c * plane + (oy + ky) * l.in_width + ox;
            for (std::size_t kx = 0; kx < l.kernel; ++kx) patch[q++] = src[kx];
        }
}

/// Pre-activation output of one layer for one sample. `weight` replaces the
/// layer's own weights; the matrix product is scaled by `out_scale` before the
/// bias is added.
inline void layer_preactivation(const Layer& l, const Tensor& weight, double out_scale,
                                std::span<const double> in, std::span<double> z, std::vector<double>& patch) {
    const std::size_t rows = l.rows();
    const std::size_t cols = l.cols();
    const double* w = weight.data();
    auto dot_rows = [&](std::span<const double> x, std::size_t stride, std::size_t offset) {
        for (std::size_t o = 0; o < rows; ++o) {
            const double* wr = w + o * cols;
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * x[j];
            if (out_scale != 1.0) acc *= out_scale;
            z[o * stride + offset] = acc + l.bias[o];
        }
    };
    if (l.kind == LayerKind::dense) {
        dot_rows(in, 1, 0);
        return;
    }
    patch.resize(cols);
    const std::size_t ow = l.out_width();
    const std::size_t npos = l.positions();
    for (std::size_t p = 0; p < npos; ++p) {
        gather_patch(l, in, p / ow, p % ow, patch);
        dot_rows(patch, npos, p);
    }
}

inline void activate(Activation act, std::span<double> v) {
    if (act == Activation::relu)
        for (double& x : v) x = x > 0.0 ? x : 0.0;
}

inline void check_batch(const Network& net, const Tensor& batch) {
    if (batch.rank() < 2 || batch.cols() != net.input_size())
        throw ShapeError("batch shape " + batch.shape_string() + " does not match network input size " +
                         std::to_string(net.input_size()));
}

} // namespace detail

/// Logits for a batch using substitute weights and per-layer output scales.
/// An empty `scales` means 1 for every layer.
inline Tensor forward_with(const Network& net, const std::vector<Tensor>& weights,
                           const std::vector<double>& scales, const Tensor& batch) {
    detail::check_batch(net, batch);
    if (weights.size() != net.layers.size()) throw ShapeError("weight set does not match layer count");
    const std::size_t n = batch.rows();
    Tensor logits({n, net.num_classes()});
    std::vector<double> a, z, patch;
    for (std::size_t s = 0; s < n; ++s) {
        auto x = batch.row(s);
        a.assign(x.begin(), x.end());
        for (std::size_t li = 0; li < net.layers.size(); ++li) {
            const Layer& l = net.layers[li];
            z.assign(l.output_size(), 0.0);
            detail::layer_preactivation(l, weights[li], scales.empty() ? 1.0 : scales[li], a, z, patch);
            detail::activate(l.activation, z);
            a.swap(z);
        }
        std::copy(a.begin(), a.end(), logits.row(s).begin());
    }
    return logits;
}

inline Tensor forward(const Network& net, const Tensor& batch) {
    detail::check_batch(net, batch);
    std::vector<Tensor> w;
    w.reserve(net.layers.size());
    for (const auto& l : net.layers) w.push_back(l.weight);
    return forward_with(net, w, {}, batch);
}

// ---------------------------------------------------------------------------
// Loss

inline double cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rows() != labels.size()) throw ShapeError("logits and labels disagree on batch size");
    const std::size_t k = logits.cols();
    double total = 0.0;
    for (std::size_t s = 0; s < labels.size(); ++s) {
        auto z = logits.row(s);
        if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= k)
            throw ShapeError("label " + std::to_string(labels[s]) + " outside logit range");
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - m);
        total += (m + std::log(sum)) - z[static_cast<std::size_t>(labels[s])];
    }
    return total / static_cast<double>(labels.size());
}

/// Squared-hinge penalty pushing weights out of (-epsilon, epsilon) and below theta.
inline double weight_penalty(const Network& net, const TrainConfig& cfg) {
    double p = 0.0;
    for (const auto& l : net.layers)
        for (double w : l.weight.values()) {
            const double a = std::abs(w);
            if (a < cfg.epsilon_small) p += cfg.lambda_small * (cfg.epsilon_small - a) * (cfg.epsilon_small - a);
            if (a > cfg.theta_large) p += cfg.lambda_large * (a - cfg.theta_large) * (a - cfg.theta_large);
        }
    return p;
}

inline double penalty_gradient(double w, const TrainConfig& cfg) {
    const double a = std::abs(w);
    const double sign = (w > 0.0) - (w < 0.0);
    double g = 0.0;
    if (a < cfg.epsilon_small) g -= 2.0 * cfg.lambda_small * (cfg.epsilon_small - a) * sign;
    if (a > cfg.theta_large) g += 2.0 * cfg.lambda_large * (a - cfg.theta_large) * sign;
    return g;
}

inline double constrained_loss(const Network& net, const Tensor& logits, std::span<const int> labels,
                               const TrainConfig& cfg) {
    return cross_entropy(logits, labels) + weight_penalty(net, cfg);
}

// ---------------------------------------------------------------------------
// Backward pass

namespace detail {

/// Mean cross-entropy and its gradients, evaluated with `weights` in place of
/// the network's own. Penalty terms are not included.
inline double cross_entropy_gradients(const Network& net, const std::vector<Tensor>& weights, const Tensor& batch,
                                      std::span<const int> labels, Gradients& grads) {
    check_batch(net, batch);
    if (batch.rows() != labels.size()) throw ShapeError("batch and labels disagree on size");
    const std::size_t n = batch.rows();
    const std::size_t depth = net.layers.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<std::vector<double>> act(depth + 1);
    std::vector<std::vector<double>> pre(depth);
    std::vector<double> patch, delta, upstream;
    double total = 0.0;

    for (std::size_t s = 0; s < n; ++s) {
        auto x = batch.row(s);
        act[0].assign(x.begin(), x.end());
        for (std::size_t li = 0; li < depth; ++li) {
            const Layer& l = net.layers[li];
            pre[li].assign(l.output_size(), 0.0);
            layer_preactivation(l, weights[li], 1.0, act[li], pre[li], patch);
            act[li + 1] = pre[li];
            activate(l.activation, act[li + 1]);
        }

        const auto& z = act[depth];
        const std::size_t label = static_cast<std::size_t>(labels[s]);
        if (label >= z.size()) throw ShapeError("label outside logit range");
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - m);
        total += (m + std::log(sum)) - z[label];

        upstream.resize(z.size());
        for (std::size_t k = 0; k < z.size(); ++k)
            upstream[k] = (std::exp(z[k] - m) / sum - (k == label ? 1.0 : 0.0)) * inv_n;

        for (std::size_t li = depth; li-- > 0;) {
            const Layer& l = net.layers[li];
            const Tensor& w = weights[li];
            delta = upstream;
            if (l.activation == Activation::relu)
                for (std::size_t k = 0; k < delta.size(); ++k)
                    if (pre[li][k] <= 0.0) delta[k] = 0.0;

            Tensor& gw = grads.weight[li];
            auto& gb = grads.bias[li];
            const std::size_t rows = l.rows(), cols = l.cols();
            const bool need_input_grad = li > 0;
            upstream.assign(need_input_grad ? l.input_size() : 0, 0.0);

            if (l.kind == LayerKind::dense) {
                for (std::size_t o = 0; o < rows; ++o) {
                    const double d = delta[o];
                    gb[o] += d;
                    if (d == 0.0) continue;
                    double* gr = gw.data() + o * cols;
                    const double* wr = w.data() + o * cols;
                    for (std::size_t j = 0; j < cols; ++j) gr[j] += d * act[li][j];
                    if (need_input_grad)
                        for (std::size_t j = 0; j < cols; ++j) upstream[j] += wr[j] * d;
                }
            } else {
                const std::size_t npos = l.positions(), ow = l.out_width();
                const std::size_t plane = l.in_height * l.in_width;
                patch.resize(cols);
                std::vector<double> patch_grad(cols);
                for (std::size_t p = 0; p < npos; ++p) {
                    gather_patch(l, act[li], p / ow, p % ow, patch);
                    std::fill(patch_grad.begin(), patch_grad.end(), 0.0);
                    for (std::size_t o = 0; o < rows; ++o) {
                        const double d = delta[o * npos + p];
                        gb[o] += d;
                        if (d == 0.0) continue;
                        double* gr = gw.data() + o * cols;
                        const double* wr = w.data() + o * cols;
                        for (std::size_t q = 0; q < cols; ++q) gr[q] += d * patch[q];
                        if (need_input_grad)
                            for (std::size_t q = 0; q < cols; ++q) patch_grad[q] += wr[q] * d;
                    }
                    if (need_input_grad) {
                        const std::size_t oy = p / ow, ox = p % ow;
                        std::size_t q = 0;
                        for (std::size_t c = 0; c < l.in_channels; ++c)
                            for (std::size_t ky = 0; ky < l.kernel; ++ky)
                                for (std::size_t kx = 0; kx < l.kernel; ++kx)
                                    upstream[c * plane + (oy + ky) * l.in_width + ox + kx] += patch_grad[q++];
                    }
                }
            }
        }
    }
    return total * inv_n;
}

inline void add_penalty_gradients(const Network& net, const TrainConfig& cfg, Gradients& grads) {
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& w = net.layers[li].weight.values();
        auto& g = grads.weight[li].values();
        for (std::size_t k = 0; k < w.size(); ++k) g[k] += penalty_gradient(w[k], cfg);
    }
}

} // namespace detail

/// Gradient of constrained_loss(net, forward(net, batch), labels, cfg) with
/// respect to every weight and bias.
inline Gradients backward(const Network& net, const Tensor& batch, std::span<const int> labels,
                          const TrainConfig& cfg) {
    Gradients g = Gradients::zeros_like(net);
    detail::cross_entropy_gradients(net, net.weights(), batch, labels, g);
    detail::add_penalty_gradients(net, cfg, g);
    return g;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t parameters = 0;
    std::size_t worst_layer = 0;
    std::size_t worst_index = 0; // weights first, then biases
};

/// Compares backward() against central differences of constrained_loss for
/// every weight and bias. Relative error is |a - n| / max(|a|, |n|); pairs
/// where both magnitudes are below `floor` count as exact.
inline GradCheck gradient_check(const Network& net, const Tensor& batch, std::span<const int> labels,
                                const TrainConfig& cfg, double h = 1e-5, double floor = 1e-9) {
    const Gradients g = backward(net, batch, labels, cfg);
    Network probe = net;
    auto loss = [&] { return constrained_loss(probe, forward(probe, batch), labels, cfg); };
    GradCheck out;
    auto check = [&](double& param, double analytic, std::size_t layer, std::size_t index) {
        const double saved = param;
        param = saved + h;
        const double up = loss();
        param = saved - h;
        const double down = loss();
        param = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        const double rel = scale < floor ? 0.0 : std::abs(analytic - numeric) / scale;
        ++out.parameters;
        if (rel > out.max_rel_error) out = {rel, out.parameters, layer, index};
    };
    for (std::size_t li = 0; li < probe.layers.size(); ++li) {
        auto& w = probe.layers[li].weight.values();
        for (std::size_t k = 0; k < w.size(); ++k) check(w[k], g.weight[li][k], li, k);
        auto& b = probe.layers[li].bias;
        for (std::size_t k = 0; k < b.size(); ++k) check(b[k], g.bias[li][k], li, w.size() + k);
    }
    return out;
}

inline void sgd_step(Network& net, const Gradients& g, double lr) {
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto& w = net.layers[li].weight.values();
        const auto& gw = g.weight[li].values();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
        auto& b = net.layers[li].bias;
        for (std::size_t k = 0; k < b.size(); ++k) b[k] -= lr * g.bias[li][k];
    }
}

// ---------------------------------------------------------------------------
// Evaluation

inline std::vector<int> predict(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t s = 0; s < out.size(); ++s) {
        auto z = logits.row(s);
        out[s] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    }
    return out;
}

/// Accuracy and macro-averaged F1. Classes that occur in neither the labels
/// nor the predictions are left out of the macro average.
inline Metrics score(std::span<const int> predicted, std::span<const int> labels, int classes) {
    if (labels.empty()) throw InvalidArgument("cannot score an empty dataset");
    if (predicted.size() != labels.size()) throw ShapeError("prediction and label counts differ");
    std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int p = predicted[i], y = labels[i];
        if (p < 0 || p >= classes || y < 0 || y >= classes) throw InvalidArgument("class index out of range");
        if (p == y) {
            ++correct;
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[y];
        }
    }
    double f1_sum = 0.0;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
        if (tp[c] + fp[c] + fn[c] == 0) continue;
        ++present;
        f1_sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    }
    return {static_cast<double>(correct) / static_cast<double>(labels.size()),
            present ? f1_sum / present : 0.0};
}

inline Metrics evaluate(const Network& net, const Dataset& data) {
    if (data.empty()) throw InvalidArgument("cannot evaluate on an empty dataset");
    const auto pred = predict(forward(net, data.flat()));
    return score(pred, data.labels, data.classes);
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

/// Training-time weight modifier: additive Gaussian noise of std
/// `nw_std_rel * max|w|` per layer, then drop-connect.
inline std::vector<Tensor> perturbed_weights(const Network& net, const TrainConfig& cfg, Rng& rng) {
    std::vector<Tensor> out;
    out.reserve(net.layers.size());
    for (const auto& l : net.layers) {
        Tensor w = l.weight;
        double wmax = 0.0;
        for (double v : w.values()) wmax = std::max(wmax, std::abs(v));
        const double sd = cfg.nw_std_rel * wmax;
        for (double& v : w.values()) {
            v += sd * standard_normal(rng);
            if (cfg.pdrop > 0.0 && uniform01(rng) < cfg.pdrop) v = 0.0;
        }
        out.push_back(std::move(w));
    }
    return out;
}

} // namespace detail

/// Minibatch SGD on the constrained loss. In noise-aware mode every forward and
/// backward pass sees freshly perturbed weights while updates are applied to
/// the clean weights. `on_epoch` receives the mean batch loss and the training
/// accuracy after each epoch.
inline Network train(Network net, const Dataset& data, const TrainConfig& cfg,
                     const std::function<void(const EpochStats&)>& on_epoch = {}) {
    cfg.validate();
    net.validate();
    if (data.empty()) throw InvalidArgument("training dataset is empty");
    if (data.pixels() != net.input_size()) throw ShapeError("dataset image size does not match network input");

    Rng rng = substream(net.rng_seed, "train");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<int> labels;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            const Tensor batch = data.batch(idx);
            labels.clear();
            for (std::size_t i : idx) labels.push_back(data.labels[i]);

            Gradients g = Gradients::zeros_like(net);
            const double ce = cfg.noise_aware
                                  ? detail::cross_entropy_gradients(net, detail::perturbed_weights(net, cfg, rng),
                                                                    batch, labels, g)
                                  : detail::cross_entropy_gradients(net, net.weights(), batch, labels, g);
            detail::add_penalty_gradients(net, cfg, g);
            const double loss = ce + weight_penalty(net, cfg);
            if (!std::isfinite(loss))
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batches) + " (lr " + std::to_string(cfg.lr) + ")");
            sgd_step(net, g, cfg.lr);
            loss_sum += loss;
            ++batches;
        }
        if (on_epoch) on_epoch({epoch + 1, loss_sum / static_cast<double>(batches), evaluate(net, data).accuracy});
    }
    return net;
}

} // namespace pcmsr::nn
