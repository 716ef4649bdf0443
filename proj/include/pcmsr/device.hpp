#pragma once

// Differential PCM weight model: amplitude-dependent programming error,
// power-law conductance drift and additive read noise.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "error.hpp"
#include "quantizer.hpp"
#include "random.hpp"

namespace pcmsr::device {

/// Relative programming error of a pulse of the given current amplitude.
struct PulseAnchor {
    double amplitude = 0.0; // A
    double rel_std = 0.0;

    friend bool operator==(const PulseAnchor&, const PulseAnchor&) = default;
};

struct DeviceConfig {
    double g_max = 25.0;
    double read_noise_std = 0.02; // additive, relative to the tile's weight range
    double drift_nu_mean = 0.06;
    double drift_nu_std = 0.02;
    double t_ref = 1.0; // s
    PulseAnchor pulse_err_low{100e-9, 0.06};
    PulseAnchor pulse_err_high{1.28e-3, 0.002};

    void validate() const {
        if (!(g_max > 0.0)) throw InvalidArgument("device: g_max must be positive");
        if (read_noise_std < 0.0 || drift_nu_std < 0.0 || pulse_err_low.rel_std < 0.0 ||
            pulse_err_high.rel_std < 0.0)
            throw InvalidArgument("device: noise standard deviations must be non-negative");
        if (drift_nu_mean < 0.0) throw InvalidArgument("device: drift_nu_mean must be non-negative");
        if (!(t_ref > 0.0)) throw InvalidArgument("device: t_ref must be positive");
        if (!(pulse_err_low.amplitude > 0.0 && pulse_err_low.amplitude < pulse_err_high.amplitude))
            throw InvalidArgument("device: need 0 < pulse_err_low.amplitude < pulse_err_high.amplitude");
    }

    /// All stochastic effects and drift switched off.
    DeviceConfig noiseless() const {
        DeviceConfig c = *this;
        c.read_noise_std = 0.0;
        c.drift_nu_mean = 0.0;
        c.drift_nu_std = 0.0;
        c.pulse_err_low.rel_std = 0.0;
        c.pulse_err_high.rel_std = 0.0;
        return c;
    }

    friend bool operator==(const DeviceConfig&, const DeviceConfig&) = default;
};

/// One signed weight as two conductances on the positive and negative lines.
struct PcmPair {
    double g_pos = 0.0;
    double g_neg = 0.0;
    double nu_pos = 0.0;
    double nu_neg = 0.0;
    double t_prog = 0.0;
    int target_m_pos = 0;
    int target_m_neg = 0;

    friend bool operator==(const PcmPair&, const PcmPair&) = default;
};

/// Weight <-> conductance mapping of one tile. `scale` is conductance per
/// weight unit; `w_range` is the weight magnitude that maps to g_max and sets
/// the read-noise scale.
struct Calibration {
    double scale = 1.0;
    double w_range = 1.0;

    double to_conductance(double w) const noexcept { return w * scale; }
    double to_weight(double g) const noexcept { return g / scale; }

    friend bool operator==(const Calibration&, const Calibration&) = default;
};

// ---------------------------------------------------------------------------

/// Relative std of a programming pulse: log-log interpolation between the two
/// anchors, clamped outside them.
inline double pulse_error(double amplitude, const DeviceConfig& cfg) {
    if (!(amplitude > 0.0)) throw InvalidArgument("pulse amplitude must be positive");
    const PulseAnchor& lo = cfg.pulse_err_low;
    const PulseAnchor& hi = cfg.pulse_err_high;
    if (amplitude <= lo.amplitude) return lo.rel_std;
    if (amplitude >= hi.amplitude) return hi.rel_std;
    const double frac = (std::log(amplitude) - std::log(lo.amplitude)) / (std::log(hi.amplitude) - std::log(lo.amplitude));
    if (lo.rel_std > 0.0 && hi.rel_std > 0.0)
        return std::exp(std::log(lo.rel_std) + frac * (std::log(hi.rel_std) - std::log(lo.rel_std)));
    return lo.rel_std + frac * (hi.rel_std - lo.rel_std);
}

/// Pulse amplitude used to reach `fraction` of g_max, linear across the anchor range.
inline double amplitude_for(double fraction, const DeviceConfig& cfg) {
    const double lo = cfg.pulse_err_low.amplitude, hi = cfg.pulse_err_high.amplitude;
    return lo + std::clamp(fraction, 0.0, 1.0) * (hi - lo);
}

/// Programs one cell to `target_g`; returns the conductance actually reached.
template <class Engine>
double program(double target_g, const DeviceConfig& cfg, Engine& rng) {
    if (!(target_g >= 0.0 && target_g <= cfg.g_max))
        throw InvalidArgument("target conductance " + std::to_string(target_g) + " outside [0, g_max]");
    const double sigma = pulse_error(amplitude_for(target_g / cfg.g_max, cfg), cfg);
    const double eta = sigma * standard_normal(rng);
    return std::clamp(target_g * (1.0 + eta), 0.0, cfg.g_max);
}

/// Correction pulse from `current_g` towards `target_g`. The pulse amplitude
/// follows the size of the step, and the relative pulse error applies to the
/// step, so a noiseless nudge lands exactly on the target.
template <class Engine>
double nudge(double current_g, double target_g, const DeviceConfig& cfg, Engine& rng) {
    const double step = target_g - current_g;
    const double sigma = pulse_error(amplitude_for(std::abs(step) / cfg.g_max, cfg), cfg);
    const double eta = sigma * standard_normal(rng);
    return std::clamp(target_g + step * eta, 0.0, cfg.g_max);
}

/// g0 * ((t_now - t_prog + t_ref) / t_ref)^(-nu)
inline double drift(double g0, double t_prog, double t_now, double nu, double t_ref = 1.0) {
    if (t_now < t_prog)
        throw InvalidArgument("drift: t_now " + std::to_string(t_now) + " precedes programming time " +
                              std::to_string(t_prog));
    return g0 * std::pow((t_now - t_prog + t_ref) / t_ref, -nu);
}

/// Per-cell drift exponent, Normal(mean, std) truncated at 0.
template <class Engine>
double draw_nu(const DeviceConfig& cfg, Engine& rng) {
    return std::max(0.0, cfg.drift_nu_mean + cfg.drift_nu_std * standard_normal(rng));
}

/// Noise-free differential weight of a pair at `t_now`.
inline double drifted_weight(const PcmPair& p, double t_now, const DeviceConfig& cfg, const Calibration& cal) {
    const double gp = drift(p.g_pos, p.t_prog, t_now, p.nu_pos, cfg.t_ref);
    const double gn = drift(p.g_neg, p.t_prog, t_now, p.nu_neg, cfg.t_ref);
    return cal.to_weight(gp) - cal.to_weight(gn);
}

/// One read of a pair: drifted differential weight plus additive read noise.
template <class Engine>
double read(const PcmPair& p, double t_now, const DeviceConfig& cfg, const Calibration& cal, Engine& rng) {
    const double w = drifted_weight(p, t_now, cfg, cal);
    return w + cfg.read_noise_std * cal.w_range * standard_normal(rng);
}

// ---------------------------------------------------------------------------
// Calibration

/// Calibration for a quantization scheme: the largest |SQ| value maps to g_max.
/// The scale is lowered by at most a few ulps if needed so that every level
/// converts to conductance and back without rounding and never exceeds g_max.
inline Calibration weight_to_conductance(const quant::QuantizationScheme& scheme, const DeviceConfig& cfg) {
    double vmax = 0.0;
    for (const auto& e : scheme.sq) vmax = std::max(vmax, std::abs(e.value));
    if (!(vmax > 0.0) || !std::isfinite(vmax)) throw InvalidArgument("degenerate scheme: all levels are zero");

    std::vector<double> levels;
    for (int m : scheme.pos.multiples) levels.push_back(scheme.value_of(m, 0));
    for (int m : scheme.neg.multiples) levels.push_back(-scheme.value_of(0, m));

    Calibration cal{cfg.g_max / vmax, vmax};
    for (int attempt = 0; attempt < 256; ++attempt) {
        const bool exact = std::all_of(levels.begin(), levels.end(), [&](double v) {
            const double g = cal.to_conductance(v);
            return g <= cfg.g_max && cal.to_weight(g) == v;
        });
        if (exact) return cal;
        cal.scale = std::nextafter(cal.scale, 0.0);
    }
    return cal;
}

/// Calibration for an unquantized weight matrix: max|w| maps to g_max.
inline Calibration calibration_for_range(double w_max, const DeviceConfig& cfg) {
    if (!(w_max > 0.0) || !std::isfinite(w_max)) throw InvalidArgument("weight range must be positive");
    Calibration cal{cfg.g_max / w_max, w_max};
    while (cal.to_conductance(w_max) > cfg.g_max) cal.scale = std::nextafter(cal.scale, 0.0);
    return cal;
}

} // namespace pcmsr::device
