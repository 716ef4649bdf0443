#pragma once

// Self-correction of drifted crossbar weights.
//
// A global trigger compares identity-probe read-outs against the baseline
// captured at programming time; layers whose own drift exceeds a threshold are
// scanned for cells that moved more than a fraction of a quantization step,
// and those cells are pulsed back to their stored multiples.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crossbar.hpp"
#include "error.hpp"
#include "quantizer.hpp"
#include "random.hpp"

namespace pcmsr::repair {

using xbar::AnalogNetwork;
using xbar::AnalogTile;
using xbar::DeviceConfig;

enum class Scope { per_layer, whole_network };

/// How the per-cell deviation threshold is scaled: by the base step of the
/// weight's bin set, or by the magnitude of the weight's own quantized level.
enum class ThresholdMode { step, level };

struct RepairConfig {
    double global_threshold = 700.0;
    double layer_threshold_dt = 10.0;
    double deviation_fraction = 1.0 / 3.0;
    Scope scope = Scope::per_layer;
    ThresholdMode threshold_mode = ThresholdMode::step;
    double probe_period = 300.0; // s

    void validate() const {
        if (!(global_threshold > 0.0) || !(layer_threshold_dt > 0.0))
            throw InvalidArgument("repair: thresholds must be positive");
        if (!(deviation_fraction > 0.0 && deviation_fraction < 0.5))
            throw InvalidArgument("repair: deviation_fraction must lie in (0, 1/2)");
        if (!(probe_period > 0.0)) throw InvalidArgument("repair: probe_period must be positive");
    }
};

/// Sum of |probe - baseline| per layer and in total.
struct ProbeError {
    double total = 0.0;
    std::vector<double> per_layer;
    std::vector<Tensor> probes;

    bool triggered(const RepairConfig& cfg) const { return total > cfg.global_threshold; }
};

inline ProbeError probe_error_from(const AnalogNetwork& anet, std::vector<Tensor> probes) {
    ProbeError e;
    for (std::size_t l = 0; l < anet.tiles.size(); ++l) {
        const Tensor& base = anet.tiles[l].baseline_probe;
        if (probes[l].shape() != base.shape()) throw ShapeError("probe shape does not match the tile baseline");
        double s = 0.0;
        for (std::size_t k = 0; k < base.size(); ++k) s += std::abs(probes[l][k] - base[k]);
        e.per_layer.push_back(s);
        e.total += s;
    }
    e.probes = std::move(probes);
    return e;
}

/// Probes every tile at t_now and compares against the programming-time baselines.
template <class Engine>
ProbeError global_error(const AnalogNetwork& anet, double t_now, const DeviceConfig& cfg, Engine& rng) {
    return probe_error_from(anet, xbar::read_weights(anet, t_now, cfg, rng));
}

/// Layers whose own probe error exceeds layer_threshold_dt; every layer in
/// whole-network scope.
inline std::vector<std::size_t> identify_layers(const ProbeError& err, const RepairConfig& cfg) {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < err.per_layer.size(); ++l)
        if (cfg.scope == Scope::whole_network || err.per_layer[l] > cfg.layer_threshold_dt) out.push_back(l);
    return out;
}

struct Candidate {
    std::size_t row = 0;
    std::size_t col = 0;
    int target_m_pos = 0;
    int target_m_neg = 0;
    double read_value = 0.0;

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Step that scales the deviation threshold of a cell with stored multiples
/// (m_pos, m_neg): the base of the line that carries the weight, the smaller
/// base when both or neither do.
inline double base_step(const quant::QuantizationScheme& scheme, int m_pos, int m_neg) {
    if (m_pos != 0 && m_neg == 0) return scheme.pos.base;
    if (m_neg != 0 && m_pos == 0) return scheme.neg.base;
    return std::min(scheme.pos.base, scheme.neg.base);
}

inline double deviation_threshold(const quant::QuantizationScheme& scheme, int m_pos, int m_neg,
                                  const RepairConfig& cfg) {
    const double step = base_step(scheme, m_pos, m_neg);
    if (cfg.threshold_mode == ThresholdMode::level) {
        const double level = std::abs(scheme.value_of(m_pos, m_neg));
        return cfg.deviation_fraction * (level > 0.0 ? level : step);
    }
    return cfg.deviation_fraction * step;
}

/// Cells whose read-back deviates from their initial quantized value by
/// strictly more than the deviation threshold. Targets are the stored
/// multiples, not the nearest multiple of the drifted value.
inline std::vector<Candidate> candidate_weights(const AnalogTile& tile, const Tensor& readback,
                                                const quant::QuantizationScheme& scheme, const RepairConfig& cfg) {
    if (readback.rank() != 2 || readback.rows() != tile.rows || readback.cols() != tile.cols)
        throw ShapeError("read-back matrix does not match tile shape");
    std::vector<Candidate> out;
    for (std::size_t i = 0; i < tile.rows; ++i)
        for (std::size_t j = 0; j < tile.cols; ++j) {
            const auto& p = tile.at(i, j);
            const double initial = scheme.value_of(p.target_m_pos, p.target_m_neg);
            if (std::abs(readback(i, j) - initial) > deviation_threshold(scheme, p.target_m_pos, p.target_m_neg, cfg))
                out.push_back({i, j, p.target_m_pos, p.target_m_neg, readback(i, j)});
        }
    return out;
}

template <class Engine>
std::vector<Candidate> candidate_weights(const AnalogTile& tile, const quant::QuantizationScheme& scheme,
                                         const RepairConfig& cfg, double t_now, const DeviceConfig& dcfg,
                                         Engine& rng) {
    return candidate_weights(tile, xbar::identity_probe(tile, t_now, dcfg, rng), scheme, cfg);
}

struct RepairEvent {
    int seed = 0;
    int step = 0;
    double t = 0.0;
    std::vector<std::size_t> layers_repaired;
    std::size_t weights_touched = 0;
    std::size_t pulses = 0;
    std::size_t irreversible_count = 0; // cells whose nearest level was no longer the stored one
    double pre_probe_error = 0.0;
    double post_probe_error = 0.0;
    double accuracy_pre = 0.0;
    double accuracy_post = 0.0;

    RepairEvent& operator+=(const RepairEvent& o) {
        layers_repaired.insert(layers_repaired.end(), o.layers_repaired.begin(), o.layers_repaired.end());
        weights_touched += o.weights_touched;
        pulses += o.pulses;
        irreversible_count += o.irreversible_count;
        return *this;
    }
};

/// True when either line of a pair has drifted so far that its nearest
/// multiple (zero included) is no longer the stored one; snapping to the
/// nearest level would then restore the wrong weight.
inline bool is_irreversible(const quant::QuantizationScheme& scheme, const device::PcmPair& p,
                            const device::Calibration& cal, double g_pos_now, double g_neg_now) {
    return scheme.pos.nearest_multiple(cal.to_weight(g_pos_now) / scheme.pos.base) != p.target_m_pos ||
           scheme.neg.nearest_multiple(cal.to_weight(g_neg_now) / scheme.neg.base) != p.target_m_neg;
}

/// One correction pulse per line of every candidate, aimed at the conductance
/// of its stored multiple. Corrected pairs restart their drift clock at t_now.
template <class Engine>
RepairEvent correct(AnalogTile& tile, const std::vector<Candidate>& candidates,
                    const quant::QuantizationScheme& scheme, double t_now, const DeviceConfig& cfg, Engine& rng) {
    RepairEvent ev;
    ev.t = t_now;
    const auto& cal = tile.calibration;
    for (const Candidate& c : candidates) {
        auto& p = tile.at(c.row, c.col);
        const double gp_now = device::drift(p.g_pos, p.t_prog, t_now, p.nu_pos, cfg.t_ref);
        const double gn_now = device::drift(p.g_neg, p.t_prog, t_now, p.nu_neg, cfg.t_ref);
        if (is_irreversible(scheme, p, cal, gp_now, gn_now)) ++ev.irreversible_count;
        const double gp_target = cal.to_conductance(scheme.value_of(p.target_m_pos, 0));
        const double gn_target = cal.to_conductance(-scheme.value_of(0, p.target_m_neg));
        ev.pulses += (gp_now != gp_target) + (gn_now != gn_target);
        p.g_pos = device::nudge(gp_now, gp_target, cfg, rng);
        p.g_neg = device::nudge(gn_now, gn_target, cfg, rng);
        p.t_prog = t_now;
        ++ev.weights_touched;
    }
    return ev;
}

/// Full self-correction pass on a network whose trigger already fired: identify
/// layers, collect candidates from the given probes, correct them. Returns the
/// combined event (probe errors and accuracies are left for the caller).
template <class Engine>
RepairEvent repair_network(AnalogNetwork& anet, const ProbeError& err, double t_now, const RepairConfig& cfg,
                           const DeviceConfig& dcfg, Engine& rng) {
    if (!anet.scheme) throw InvalidArgument("self-correction needs a quantized network");
    RepairEvent total;
    total.t = t_now;
    total.pre_probe_error = err.total;
    for (std::size_t l : identify_layers(err, cfg)) {
        const auto cands = candidate_weights(anet.tiles[l], err.probes[l], *anet.scheme, cfg);
        RepairEvent ev = correct(anet.tiles[l], cands, *anet.scheme, t_now, dcfg, rng);
        ev.layers_repaired = {l};
        total += ev;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Global drift compensation

inline std::vector<double> compensation_from(const AnalogNetwork& anet, const std::vector<Tensor>& probes,
                                             std::vector<std::string>* warnings = nullptr) {
    std::vector<double> scales;
    for (std::size_t l = 0; l < anet.tiles.size(); ++l) {
        double base = 0.0, now = 0.0;
        for (double v : anet.tiles[l].baseline_probe.values()) base += std::abs(v);
        for (double v : probes[l].values()) now += std::abs(v);
        if (now == 0.0) {
            const std::string msg = "layer " + std::to_string(l) + ": probe sum is zero, compensation forced to 1";
            if (warnings) warnings->push_back(msg);
            else std::clog << "warning: " << msg << '\n';
            scales.push_back(1.0);
        } else {
            scales.push_back(base / now);
        }
    }
    return scales;
}

/// Per-layer output scale sum|baseline| / sum|probe(t_now)|.
template <class Engine>
std::vector<double> global_drift_compensation(const AnalogNetwork& anet, double t_now, const DeviceConfig& cfg,
                                              Engine& rng, std::vector<std::string>* warnings = nullptr) {
    return compensation_from(anet, xbar::read_weights(anet, t_now, cfg, rng), warnings);
}

// ---------------------------------------------------------------------------
// Timeline experiment

enum class VariantKind { self_repair, no_repair, noise_aware, drift_compensated };

inline const char* to_string(VariantKind k) {
    switch (k) {
    case VariantKind::self_repair: return "self_repair";
    case VariantKind::no_repair: return "no_repair";
    case VariantKind::noise_aware: return "noise_aware";
    case VariantKind::drift_compensated: return "drift_compensated";
    }
    return "?";
}

inline VariantKind variant_from_string(const std::string& s) {
    for (auto k : {VariantKind::self_repair, VariantKind::no_repair, VariantKind::noise_aware,
                   VariantKind::drift_compensated})
        if (s == to_string(k)) return k;
    throw InvalidArgument("unknown variant '" + s + "'");
}

/// Name of the series holding the self-repair accuracy after each step's correction.
inline constexpr const char* adjusted_series = "self_repair_adjusted";

/// A network prepared for the timeline. Quantized kinds carry the scheme and
/// decomposition; noise_aware programs the float weights of `net`.
struct Variant {
    VariantKind kind = VariantKind::self_repair;
    nn::Network net;
    std::optional<quant::QuantizationScheme> scheme;
    std::vector<quant::DecomposedLayer> layers;
};

struct TimelineConfig {
    int steps = 20;
    double step_seconds = 300.0;
    int seeds = 20;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (steps < 0) throw InvalidArgument("timeline: steps must be >= 0");
        if (!(step_seconds > 0.0)) throw InvalidArgument("timeline: step_seconds must be positive");
        if (seeds < 1) throw InvalidArgument("timeline: seeds must be >= 1");
    }
};

struct TimelineRow {
    int seed = 0;
    int step = 0;
    double t = 0.0;
    std::string variant;
    double accuracy = 0.0;
    double f1 = 0.0;
    double probe_error = 0.0;
    bool repaired = false;
    std::size_t pulses = 0;
    std::size_t irreversible = 0;

    friend bool operator==(const TimelineRow&, const TimelineRow&) = default;
};

struct TimelineLog {
    TimelineConfig config;
    std::vector<std::string> series; // variant names in row order within a step
    std::vector<TimelineRow> rows;
    std::vector<RepairEvent> events;
    /// Mean over seeds of the variance of accuracy across steps 1..N, per series.
    std::map<std::string, double> step_variance;
};

/// Mean over seeds of the population variance of a series' accuracy over steps >= 1.
inline std::map<std::string, double> step_variances(const TimelineLog& log) {
    std::map<std::string, std::map<int, std::vector<double>>> acc;
    for (const auto& r : log.rows)
        if (r.step >= 1) acc[r.variant][r.seed].push_back(r.accuracy);
    std::map<std::string, double> out;
    for (const auto& [name, by_seed] : acc) {
        double total = 0.0;
        for (const auto& [seed, v] : by_seed) {
            double mean = 0.0;
            for (double a : v) mean += a;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double a : v) var += (a - mean) * (a - mean);
            total += var / static_cast<double>(v.size());
        }
        out[name] = total / static_cast<double>(by_seed.size());
    }
    return out;
}

template <class Engine>
AnalogNetwork program_variant(const Variant& v, const DeviceConfig& cfg, Engine& rng) {
    if (v.kind == VariantKind::noise_aware) return xbar::program_float_network(v.net, cfg, 0.0, rng);
    if (!v.scheme) throw InvalidArgument(std::string("variant ") + to_string(v.kind) + " needs a quantization scheme");
    return xbar::program_network(v.net, v.layers, *v.scheme, cfg, 0.0, rng);
}

/// Programs every variant at t = 0 and advances the clock in fixed steps. Per
/// step each variant is probed and evaluated; the drift-compensated variant
/// rescales its outputs from the probe first; the self-repair variant runs the
/// trigger/identify/correct pass and is evaluated again afterwards with the
/// same read-noise stream, so pre/post accuracies differ only by the repair.
/// Rows are ordered by seed, step, then variant; everything derives from
/// `tcfg.rng_seed`.
inline TimelineLog run_timeline(const std::vector<Variant>& variants, const Dataset& data,
                                const TimelineConfig& tcfg, const DeviceConfig& dcfg, const RepairConfig& rcfg) {
    tcfg.validate();
    dcfg.validate();
    rcfg.validate();
    if (data.empty()) throw InvalidArgument("timeline needs a non-empty evaluation set");

    TimelineLog log;
    log.config = tcfg;
    for (const auto& v : variants) {
        log.series.push_back(to_string(v.kind));
        if (v.kind == VariantKind::self_repair) log.series.push_back(adjusted_series);
    }
    const Tensor inputs = data.flat();
    const std::uint64_t root = tcfg.rng_seed;

    for (int seed = 0; seed < tcfg.seeds; ++seed) {
        std::vector<AnalogNetwork> nets;
        for (std::size_t vi = 0; vi < variants.size(); ++vi) {
            Rng rng = substream(root, "device", {static_cast<std::uint64_t>(seed), vi});
            nets.push_back(program_variant(variants[vi], dcfg, rng));
        }
        for (int step = 0; step <= tcfg.steps; ++step) {
            const double t = step * tcfg.step_seconds;
            for (std::size_t vi = 0; vi < variants.size(); ++vi) {
                const VariantKind kind = variants[vi].kind;
                AnalogNetwork& anet = nets[vi];
                const std::initializer_list<std::uint64_t> key{static_cast<std::uint64_t>(seed),
                                                               static_cast<std::uint64_t>(step), vi};
                Rng probe_rng = substream(root, "probe", key);
                ProbeError err = global_error(anet, t, dcfg, probe_rng);
                if (kind == VariantKind::drift_compensated) anet.output_scales = compensation_from(anet, err.probes);

                auto evaluate_now = [&] {
                    Rng eval_rng = substream(root, "eval", key);
                    return nn::score(nn::predict(xbar::analog_forward(anet, inputs, t, dcfg, eval_rng)), data.labels,
                                     data.classes);
                };
                const nn::Metrics m = evaluate_now();
                TimelineRow row{seed, step, t, to_string(kind), m.accuracy, m.macro_f1, err.total, false, 0, 0};

                if (kind != VariantKind::self_repair) {
                    log.rows.push_back(row);
                    continue;
                }
                TimelineRow adjusted = row;
                adjusted.variant = adjusted_series;
                if (step > 0 && err.triggered(rcfg)) {
                    Rng repair_rng = substream(root, "repair", key);
                    RepairEvent ev = repair_network(anet, err, t, rcfg, dcfg, repair_rng);
                    ev.seed = seed;
                    ev.step = step;
                    ev.accuracy_pre = m.accuracy;
                    const nn::Metrics post = evaluate_now();
                    ev.accuracy_post = post.accuracy;
                    ev.post_probe_error = global_error(anet, t, dcfg, probe_rng).total;
                    row.repaired = adjusted.repaired = true;
                    row.pulses = adjusted.pulses = ev.pulses;
                    row.irreversible = adjusted.irreversible = ev.irreversible_count;
                    adjusted.accuracy = post.accuracy;
                    adjusted.f1 = post.macro_f1;
                    adjusted.probe_error = ev.post_probe_error;
                    log.events.push_back(std::move(ev));
                }
                log.rows.push_back(row);
                log.rows.push_back(adjusted);
            }
        }
    }
    log.step_variance = step_variances(log);
    return log;
}

// ---------------------------------------------------------------------------
// Layer sensitivity

/// Accuracy when only `layer` has drifted to t_now and every other tile is
/// read at its programming time.
template <class Engine>
nn::Metrics single_layer_drift_metrics(const AnalogNetwork& anet, std::size_t layer, const Dataset& data,
                                       double t_now, const DeviceConfig& cfg, Engine& rng) {
    std::vector<Tensor> w;
    for (std::size_t l = 0; l < anet.tiles.size(); ++l)
        w.push_back(xbar::identity_probe(anet.tiles[l], l == layer ? t_now : anet.t_prog, cfg, rng));
    const auto pred = nn::predict(nn::forward_with(anet.net, w, anet.output_scales, data.flat()));
    return nn::score(pred, data.labels, data.classes);
}

} // namespace pcmsr::repair
