#pragma once

// Crossbar tiles of differential PCM pairs: programming, analog
// matrix-vector products and identity-matrix probes.

#include <optional>
#include <span>
#include <vector>

#include "device.hpp"
#include "error.hpp"
#include "nn.hpp"
#include "quantizer.hpp"

namespace pcmsr::xbar {

using device::Calibration;
using device::DeviceConfig;
using device::PcmPair;

struct AnalogTile {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<PcmPair> pairs; // row-major
    Calibration calibration;
    Tensor baseline_probe; // identity probe captured right after programming

    PcmPair& at(std::size_t r, std::size_t c) noexcept { return pairs[r * cols + c]; }
    const PcmPair& at(std::size_t r, std::size_t c) const noexcept { return pairs[r * cols + c]; }

    friend bool operator==(const AnalogTile&, const AnalogTile&) = default;
};

/// Weight matrix read-out: column j is the tile's response to the unit vector
/// e_j, so every cell is read exactly once, column by column.
template <class Engine>
Tensor identity_probe(const AnalogTile& tile, double t_now, const DeviceConfig& cfg, Engine& rng) {
    Tensor w = Tensor::matrix(tile.rows, tile.cols);
    for (std::size_t j = 0; j < tile.cols; ++j)
        for (std::size_t i = 0; i < tile.rows; ++i)
            w(i, j) = device::read(tile.at(i, j), t_now, cfg, tile.calibration, rng);
    return w;
}

/// y = W_eff(t_now) x with fresh read noise on every weight that meets a
/// nonzero input. Columns whose input is exactly zero contribute nothing and
/// are not read.
template <class Engine>
std::vector<double> mvm(const AnalogTile& tile, std::span<const double> x, double t_now, const DeviceConfig& cfg,
                        Engine& rng) {
    if (x.size() != tile.cols)
        throw ShapeError("mvm input length " + std::to_string(x.size()) + " does not match tile columns " +
                         std::to_string(tile.cols));
    std::vector<double> y(tile.rows, 0.0);
    for (std::size_t j = 0; j < tile.cols; ++j) {
        if (x[j] == 0.0) continue;
        for (std::size_t i = 0; i < tile.rows; ++i)
            y[i] += device::read(tile.at(i, j), t_now, cfg, tile.calibration, rng) * x[j];
    }
    return y;
}

/// Programs a decomposed layer: pair (i, j) gets m_pos * pos.base on the
/// positive line and m_neg * neg.base on the negative line, both through the
/// calibration and the programming-noise model. Captures the t_prog baseline.
template <class Engine>
AnalogTile program_layer(const quant::DecomposedLayer& dec, const quant::QuantizationScheme& scheme,
                         const Calibration& cal, const DeviceConfig& cfg, double t_prog, Engine& rng) {
    cfg.validate();
    AnalogTile tile;
    tile.rows = dec.rows();
    tile.cols = dec.cols();
    tile.calibration = cal;
    tile.pairs.resize(tile.rows * tile.cols);
    for (std::size_t k = 0; k < tile.pairs.size(); ++k) {
        const int mp = dec.m_pos.data[k], mn = dec.m_neg.data[k];
        if ((mp != 0 && !scheme.pos.contains(mp)) || (mn != 0 && !scheme.neg.contains(mn)))
            throw InvalidArgument("multiple pair (" + std::to_string(mp) + ", " + std::to_string(mn) +
                                  ") is not in the scheme's level sets");
        const double gp = cal.to_conductance(scheme.value_of(mp, 0));
        const double gn = cal.to_conductance(-scheme.value_of(0, mn));
        if (gp > cfg.g_max || gn > cfg.g_max)
            throw InvalidArgument("level at index " + std::to_string(k) + " exceeds g_max under the calibration");
        PcmPair& p = tile.pairs[k];
        p.target_m_pos = mp;
        p.target_m_neg = mn;
        p.t_prog = t_prog;
        p.g_pos = device::program(gp, cfg, rng);
        p.g_neg = device::program(gn, cfg, rng);
        p.nu_pos = device::draw_nu(cfg, rng);
        p.nu_neg = device::draw_nu(cfg, rng);
    }
    tile.baseline_probe = identity_probe(tile, t_prog, cfg, rng);
    return tile;
}

/// Programs an unquantized weight matrix: positive weights on the positive
/// line, negative weights on the negative line.
template <class Engine>
AnalogTile program_weights(const Tensor& weight, const Calibration& cal, const DeviceConfig& cfg, double t_prog,
                           Engine& rng) {
    cfg.validate();
    AnalogTile tile;
    tile.rows = weight.rows();
    tile.cols = weight.cols();
    tile.calibration = cal;
    tile.pairs.resize(weight.size());
    for (std::size_t k = 0; k < weight.size(); ++k) {
        const double g = std::min(cal.to_conductance(std::abs(weight[k])), cfg.g_max);
        PcmPair& p = tile.pairs[k];
        p.t_prog = t_prog;
        p.g_pos = device::program(weight[k] > 0.0 ? g : 0.0, cfg, rng);
        p.g_neg = device::program(weight[k] < 0.0 ? g : 0.0, cfg, rng);
        p.nu_pos = device::draw_nu(cfg, rng);
        p.nu_neg = device::draw_nu(cfg, rng);
    }
    tile.baseline_probe = identity_probe(tile, t_prog, cfg, rng);
    return tile;
}

// ---------------------------------------------------------------------------

/// A network whose weight matrices live on crossbar tiles; biases and
/// activations stay digital. `net` supplies geometry and biases only.
struct AnalogNetwork {
    nn::Network net;
    std::vector<AnalogTile> tiles;
    std::optional<quant::QuantizationScheme> scheme;
    double t_prog = 0.0;
    std::vector<double> output_scales; // per layer; empty means 1

    friend bool operator==(const AnalogNetwork&, const AnalogNetwork&) = default;
};

template <class Engine>
AnalogNetwork program_network(const nn::Network& net, const std::vector<quant::DecomposedLayer>& layers,
                              const quant::QuantizationScheme& scheme, const DeviceConfig& cfg, double t_prog,
                              Engine& rng) {
    if (layers.size() != net.layers.size()) throw ShapeError("decomposition does not match network depth");
    AnalogNetwork a;
    a.net = net;
    a.scheme = scheme;
    a.t_prog = t_prog;
    const Calibration cal = device::weight_to_conductance(scheme, cfg);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].rows() != net.layers[i].rows() || layers[i].cols() != net.layers[i].cols())
            throw ShapeError("decomposed layer " + std::to_string(i) + " does not match the network layer shape");
        a.tiles.push_back(program_layer(layers[i], scheme, cal, cfg, t_prog, rng));
    }
    return a;
}

/// Programs the network's own float weights. One calibration for the whole
/// network: the largest |w| maps to g_max.
template <class Engine>
AnalogNetwork program_float_network(const nn::Network& net, const DeviceConfig& cfg, double t_prog, Engine& rng) {
    double wmax = 0.0;
    for (const auto& l : net.layers)
        for (double v : l.weight.values()) wmax = std::max(wmax, std::abs(v));
    const Calibration cal = device::calibration_for_range(wmax, cfg);
    AnalogNetwork a;
    a.net = net;
    a.t_prog = t_prog;
    for (const auto& l : net.layers) a.tiles.push_back(program_weights(l.weight, cal, cfg, t_prog, rng));
    return a;
}

/// One read of every tile's effective weight matrix, in layer order.
template <class Engine>
std::vector<Tensor> read_weights(const AnalogNetwork& anet, double t_now, const DeviceConfig& cfg, Engine& rng) {
    std::vector<Tensor> w;
    w.reserve(anet.tiles.size());
    for (const auto& tile : anet.tiles) w.push_back(identity_probe(tile, t_now, cfg, rng));
    return w;
}

/// Logits of a batch. Each tile is read once per call and that read is shared
/// by every sample and every convolution position of the batch; biases,
/// activations and output scales are applied digitally.
template <class Engine>
Tensor analog_forward(const AnalogNetwork& anet, const Tensor& batch, double t_now, const DeviceConfig& cfg,
                      Engine& rng) {
    if (batch.rank() < 2 || batch.cols() != anet.net.input_size())
        throw ShapeError("batch shape " + batch.shape_string() + " does not match analog network input");
    return nn::forward_with(anet.net, read_weights(anet, t_now, cfg, rng), anet.output_scales, batch);
}

template <class Engine>
nn::Metrics analog_evaluate(const AnalogNetwork& anet, const Dataset& data, double t_now, const DeviceConfig& cfg,
                            Engine& rng) {
    const auto pred = nn::predict(analog_forward(anet, data.flat(), t_now, cfg, rng));
    return nn::score(pred, data.labels, data.classes);
}

/// The digital network whose weights are the scheme's reconstruction of `layers`.
inline nn::Network quantized_network(nn::Network net, const std::vector<quant::DecomposedLayer>& layers,
                                     const quant::QuantizationScheme& scheme) {
    if (layers.size() != net.layers.size()) throw ShapeError("decomposition does not match network depth");
    for (std::size_t i = 0; i < layers.size(); ++i) net.layers[i].weight = quant::reconstruct(layers[i], scheme);
    return net;
}

inline std::vector<quant::DecomposedLayer> decompose_network(const nn::Network& net,
                                                             const quant::QuantizationScheme& scheme) {
    std::vector<quant::DecomposedLayer> out;
    for (const auto& l : net.layers) out.push_back(quant::decompose(l.weight, scheme).layer);
    return out;
}

} // namespace pcmsr::xbar
