#pragma once

// Dual positive/negative multiple-based quantization.
//
// A weight is stored as the difference of two non-negative levels, one from a
// positive bin set and one from a negative bin set. Each set is a base step
// times a sorted list of integer multiples. The representable values (SQ) are
// the positive levels, the negated negative levels, and every pairwise
// difference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace pcmsr::quant {

struct BinSet {
    double base = 0.0;
    std::vector<int> multiples;

    std::size_t size() const noexcept { return multiples.size(); }
    double level(std::size_t k) const { return base * multiples.at(k); }
    int max_multiple() const { return multiples.empty() ? 0 : multiples.back(); }
    bool contains(int m) const { return std::binary_search(multiples.begin(), multiples.end(), m); }

    /// Element of {0} and the multiples closest to `units` (a value in units of
    /// base); ties go to the smaller multiple.
    int nearest_multiple(double units) const {
        int best = 0;
        double best_d = std::abs(units);
        for (int m : multiples) {
            const double d = std::abs(units - m);
            if (d < best_d) {
                best = m;
                best_d = d;
            }
        }
        return best;
    }

    static BinSet linear(double base, int n) {
        BinSet b{base, {}};
        for (int k = 1; k <= n; ++k) b.multiples.push_back(k);
        return b;
    }

    friend bool operator==(const BinSet&, const BinSet&) = default;
};

/// One representable value and the multiples that produce it.
struct SqEntry {
    double value = 0.0;
    int m_pos = 0;
    int m_neg = 0;

    friend bool operator==(const SqEntry&, const SqEntry&) = default;
};

/// The value a pair of multiples represents. Every place that turns multiples
/// into a weight goes through this expression so results agree bit for bit.
inline double combine(double pos_base, int m_pos, double neg_base, int m_neg) noexcept {
    return pos_base * m_pos - neg_base * m_neg;
}

/// Sorted SQ. Exactly equal values are merged, keeping the representation with
/// the smallest m_pos + m_neg.
inline std::vector<SqEntry> build_sq(const BinSet& pos, const BinSet& neg) {
    std::vector<SqEntry> sq;
    sq.reserve(pos.size() + neg.size() + pos.size() * neg.size());
    for (int mp : pos.multiples) sq.push_back({combine(pos.base, mp, neg.base, 0), mp, 0});
    for (int mn : neg.multiples) sq.push_back({combine(pos.base, 0, neg.base, mn), 0, mn});
    for (int mp : pos.multiples)
        for (int mn : neg.multiples) sq.push_back({combine(pos.base, mp, neg.base, mn), mp, mn});
    std::sort(sq.begin(), sq.end(), [](const SqEntry& a, const SqEntry& b) {
        if (a.value != b.value) return a.value < b.value;
        if (a.m_pos + a.m_neg != b.m_pos + b.m_neg) return a.m_pos + a.m_neg < b.m_pos + b.m_neg;
        return a.m_pos < b.m_pos;
    });
    sq.erase(std::unique(sq.begin(), sq.end(), [](const SqEntry& a, const SqEntry& b) { return a.value == b.value; }),
             sq.end());
    return sq;
}

struct QuantizationScheme {
    BinSet pos;
    BinSet neg;
    std::vector<SqEntry> sq;
    double delta_write = 0.0;
    double epsilon_read = 0.0;
    double error = 0.0; // achieved quantization error on the weights it was fitted to

    static QuantizationScheme make(BinSet pos, BinSet neg, double delta_write, double epsilon_read) {
        QuantizationScheme s;
        s.pos = std::move(pos);
        s.neg = std::move(neg);
        s.sq = build_sq(s.pos, s.neg);
        s.delta_write = delta_write;
        s.epsilon_read = epsilon_read;
        return s;
    }

    int max_multiple() const { return std::max(pos.max_multiple(), neg.max_multiple()); }
    double value_of(int m_pos, int m_neg) const { return combine(pos.base, m_pos, neg.base, m_neg); }

    friend bool operator==(const QuantizationScheme&, const QuantizationScheme&) = default;
};

// ---------------------------------------------------------------------------
// Nearest-level lookup

/// Index of the SQ entry nearest to `w`; ties go to the smaller value. Matches
/// an exhaustive scan that compares std::abs(w - value) across all entries.
inline std::size_t nearest_index(const std::vector<SqEntry>& sq, double w, std::size_t hint) {
    // hint: first index with value >= w
    const std::size_t n = sq.size();
    auto dist = [&](std::size_t k) { return std::abs(w - sq[k].value); };
    std::size_t best = n;
    double best_d = 0.0;
    if (hint > 0) {
        // Distances are monotone below w; walk left through ties so the smallest value wins.
        std::size_t k = hint - 1;
        double d = dist(k);
        while (k > 0 && dist(k - 1) <= d) d = dist(--k);
        best = k;
        best_d = d;
    }
    if (hint < n) {
        std::size_t k = hint;
        double d = dist(k);
        while (k + 1 < n && dist(k + 1) < d) d = dist(++k);
        if (best == n || d < best_d) best = k;
    }
    return best;
}

inline std::size_t nearest_index(const std::vector<SqEntry>& sq, double w) {
    if (sq.empty()) throw InvalidArgument("empty quantization set");
    const auto it = std::lower_bound(sq.begin(), sq.end(), w,
                                     [](const SqEntry& e, double v) { return e.value < v; });
    return nearest_index(sq, w, static_cast<std::size_t>(it - sq.begin()));
}

/// Mean squared distance from each weight to its nearest SQ value.
inline double quantization_error(std::span<const double> weights, const std::vector<SqEntry>& sq) {
    if (weights.empty()) throw InvalidArgument("quantization_error: no weights");
    if (sq.empty()) throw InvalidArgument("quantization_error: empty quantization set");
    double s = 0.0;
    for (double w : weights) {
        const double d = w - sq[nearest_index(sq, w)].value;
        s += d * d;
    }
    return s / static_cast<double>(weights.size());
}

// ---------------------------------------------------------------------------
// Constraints

enum class Constraint { quantization_levels, bin_set, divisibility, snr, bin_difference };

inline const char* to_string(Constraint c) {
    switch (c) {
    case Constraint::quantization_levels: return "quantization-levels";
    case Constraint::bin_set: return "bin-set";
    case Constraint::divisibility: return "divisibility";
    case Constraint::snr: return "snr";
    case Constraint::bin_difference: return "bin-difference";
    }
    return "?";
}

struct Violation {
    Constraint constraint;
    std::string message;
};

/// Empty iff the scheme satisfies all five hardware constraints.
inline std::vector<Violation> validate_constraints(const QuantizationScheme& s, double delta_write,
                                                   double epsilon_read, std::size_t n_levels = 0) {
    std::vector<Violation> out;
    auto check_levels = [&](const BinSet& b, const char* name) {
        const bool increasing = std::adjacent_find(b.multiples.begin(), b.multiples.end(),
                                                   [](int a, int c) { return a >= c; }) == b.multiples.end();
        if (b.multiples.empty() || !increasing)
            out.push_back({Constraint::quantization_levels,
                           std::string(name) + " multiples must be non-empty and strictly increasing"});
        else if (n_levels != 0 && b.size() != n_levels)
            out.push_back({Constraint::quantization_levels, std::string(name) + " set has " +
                                                                std::to_string(b.size()) + " levels, expected " +
                                                                std::to_string(n_levels)});
        if (!(b.base > 0.0) || !std::isfinite(b.base))
            out.push_back({Constraint::divisibility, std::string(name) + " base must be positive"});
        if (!b.multiples.empty()) {
            const int first = b.multiples.front();
            for (int m : b.multiples)
                if (m <= 0 || first <= 0 || m % first != 0) {
                    out.push_back({Constraint::divisibility, std::string(name) + " level multiple " +
                                                                 std::to_string(m) +
                                                                 " is not divisible by the smallest level"});
                    break;
                }
        }
        if (!(b.base > delta_write))
            out.push_back({Constraint::snr, std::string(name) + " base " + std::to_string(b.base) +
                                                " does not exceed write noise " + std::to_string(delta_write)});
    };
    check_levels(s.pos, "positive");
    check_levels(s.neg, "negative");

    if (s.sq != build_sq(s.pos, s.neg))
        out.push_back({Constraint::bin_set, "SQ does not match the positive/negative sets"});
    for (const auto& e : s.sq)
        if (e.value != s.value_of(e.m_pos, e.m_neg) || (e.m_pos != 0 && !s.pos.contains(e.m_pos)) ||
            (e.m_neg != 0 && !s.neg.contains(e.m_neg))) {
            out.push_back({Constraint::bin_set, "SQ entry " + std::to_string(e.value) + " is not reconstructible"});
            break;
        }

    if (!(std::abs(s.pos.base - s.neg.base) > epsilon_read))
        out.push_back({Constraint::bin_difference, "|pos.base - neg.base| = " +
                                                       std::to_string(std::abs(s.pos.base - s.neg.base)) +
                                                       " does not exceed read threshold " +
                                                       std::to_string(epsilon_read)});
    return out;
}

// ---------------------------------------------------------------------------
// Simulated annealing

struct AnnealConfig {
    int iterations = 4000;
    double t0 = 0.05;       // initial temperature, in units of the initial scheme's error
    double cooling = 0.998; // geometric factor per iteration
    double perturb_scale = 0.5;
    bool linear_mode = false;
    std::uint64_t rng_seed = 0;
    int n_levels = 8;
    int max_multiple = 15;

    void validate() const {
        if (iterations <= 0) throw InvalidArgument("anneal: iterations must be positive");
        if (!(cooling > 0.0 && cooling < 1.0)) throw InvalidArgument("anneal: cooling must lie in (0, 1)");
        if (!(t0 > 0.0)) throw InvalidArgument("anneal: t0 must be positive");
        if (perturb_scale < 0.0) throw InvalidArgument("anneal: perturb_scale must be non-negative");
        if (n_levels < 1) throw InvalidArgument("anneal: n_levels must be >= 1");
        if (max_multiple < n_levels) throw InvalidArgument("anneal: max_multiple must be >= n_levels");
    }
};

struct AnnealTrace {
    double initial_error = 0.0;
    double final_error = 0.0;
    int accepted = 0;
    int improved = 0;
};

namespace detail {

/// Error of `sq` over ascending weights in one merge-style sweep.
inline double sorted_error(std::span<const double> sorted_w, const std::vector<SqEntry>& sq) {
    double s = 0.0;
    std::size_t hint = 0;
    for (double w : sorted_w) {
        while (hint < sq.size() && sq[hint].value < w) ++hint;
        const double d = w - sq[nearest_index(sq, w, hint)].value;
        s += d * d;
    }
    return s / static_cast<double>(sorted_w.size());
}

inline double above(double floor_value) {
    return floor_value > 0.0 ? floor_value * (1.0 + 1e-6) : 1e-12;
}

/// Repairs a proposal in place: both bases above the write-noise floor and the
/// bases at least `epsilon_read` apart (by moving the negative base).
inline void project(BinSet& pos, BinSet& neg, double delta_write, double epsilon_read) {
    if (!(pos.base > delta_write)) pos.base = above(delta_write);
    if (!(neg.base > delta_write)) neg.base = above(delta_write);
    if (!(std::abs(pos.base - neg.base) > epsilon_read)) {
        const double gap = above(epsilon_read);
        neg.base = (neg.base >= pos.base) ? pos.base + gap : pos.base - gap;
        if (!(neg.base > delta_write)) neg.base = pos.base + gap;
    }
}

inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Replaces one multiple (never the leading 1) by an unused value in
/// [2, max_multiple], keeping the list sorted.
inline void resample_multiple(BinSet& b, int max_multiple, Rng& rng) {
    if (b.size() < 2 || static_cast<int>(b.size()) >= max_multiple) return;
    std::uniform_int_distribution<std::size_t> pick(1, b.size() - 1);
    std::uniform_int_distribution<int> value(2, max_multiple);
    const std::size_t k = pick(rng);
    int v = value(rng);
    while (b.contains(v)) v = value(rng);
    b.multiples[k] = v;
    std::sort(b.multiples.begin(), b.multiples.end());
}

} // namespace detail

/// Initial scheme the annealer starts from: linear multiples 1..N, each base
/// at max(1.5 * delta, 1st percentile of its pool's magnitudes).
inline QuantizationScheme initial_scheme(std::span<const double> weights, const AnnealConfig& cfg,
                                         double delta_write, double epsilon_read) {
    std::vector<double> pos_pool, neg_pool;
    for (double w : weights) {
        if (w > 0.0) pos_pool.push_back(w);
        if (w < 0.0) neg_pool.push_back(-w);
    }
    if (pos_pool.empty()) pos_pool = neg_pool;
    if (neg_pool.empty()) neg_pool = pos_pool;
    BinSet pos = BinSet::linear(std::max(1.5 * delta_write, detail::percentile(pos_pool, 0.01)), cfg.n_levels);
    BinSet neg = BinSet::linear(std::max(1.5 * delta_write, detail::percentile(neg_pool, 0.01)), cfg.n_levels);
    detail::project(pos, neg, delta_write, epsilon_read);
    return QuantizationScheme::make(std::move(pos), std::move(neg), delta_write, epsilon_read);
}

/// Simulated annealing over the two bases (and, outside linear mode, the
/// multiples) minimising the mean squared quantization error. Returns the best
/// scheme seen. Throws InfeasibleError when no base above `delta_write` can
/// represent the weight range.
inline QuantizationScheme anneal(std::span<const double> weights, const AnnealConfig& cfg, double delta_write,
                                 double epsilon_read, AnnealTrace* trace = nullptr) {
    cfg.validate();
    if (weights.empty()) throw InvalidArgument("anneal: no weights");
    if (delta_write < 0.0 || epsilon_read < 0.0) throw InvalidArgument("anneal: noise thresholds must be >= 0");
    double wmax = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w)) throw InvalidArgument("anneal: non-finite weight");
        wmax = std::max(wmax, std::abs(w));
    }
    if (!(delta_write < wmax))
        throw InfeasibleError("write-noise floor " + std::to_string(delta_write) +
                              " is not below the largest weight magnitude " + std::to_string(wmax) +
                              "; every level would exceed the weight range");

    std::vector<double> sorted_w(weights.begin(), weights.end());
    std::sort(sorted_w.begin(), sorted_w.end());

    Rng rng(cfg.rng_seed);
    QuantizationScheme current = initial_scheme(weights, cfg, delta_write, epsilon_read);
    double current_err = detail::sorted_error(sorted_w, current.sq);
    QuantizationScheme best = current;
    double best_err = current_err;
    const double t_start = cfg.t0 * std::max(current_err, 1e-300);

    AnnealTrace tr;
    tr.initial_error = current_err;
    double temperature = t_start;
    for (int i = 0; i < cfg.iterations; ++i) {
        temperature = (i == 0) ? t_start : temperature * cfg.cooling;
        const double sigma = cfg.perturb_scale * temperature / t_start;

        BinSet pos = current.pos, neg = current.neg;
        pos.base *= 1.0 + sigma * standard_normal(rng);
        neg.base *= 1.0 + sigma * standard_normal(rng);
        if (!cfg.linear_mode) detail::resample_multiple(uniform01(rng) < 0.5 ? pos : neg, cfg.max_multiple, rng);
        detail::project(pos, neg, delta_write, epsilon_read);
        auto proposal = QuantizationScheme::make(std::move(pos), std::move(neg), delta_write, epsilon_read);
        const double err = detail::sorted_error(sorted_w, proposal.sq);

        const double u = uniform01(rng);
        if (err < current_err || u < std::exp(-(err - current_err) / temperature)) {
            current = std::move(proposal);
            current_err = err;
            ++tr.accepted;
            if (err < best_err) {
                best = current;
                best_err = err;
                ++tr.improved;
            }
        }
    }
    best.error = quantization_error(weights, best.sq);
    tr.final_error = best.error;
    if (trace) *trace = tr;
    return best;
}

/// Linear grid spanning the weight range: pos.base = max|w+| / N, the negative
/// base likewise, then projected onto the constraints. Reference point for the
/// annealer.
inline QuantizationScheme uniform_grid(std::span<const double> weights, int n_levels, double delta_write,
                                       double epsilon_read) {
    double pmax = 0.0, nmax = 0.0;
    for (double w : weights) {
        if (w > 0.0) pmax = std::max(pmax, w);
        if (w < 0.0) nmax = std::max(nmax, -w);
    }
    if (pmax == 0.0) pmax = nmax;
    if (nmax == 0.0) nmax = pmax;
    BinSet pos = BinSet::linear(pmax / n_levels, n_levels);
    BinSet neg = BinSet::linear(nmax / n_levels, n_levels);
    detail::project(pos, neg, delta_write, epsilon_read);
    auto s = QuantizationScheme::make(std::move(pos), std::move(neg), delta_write, epsilon_read);
    if (!weights.empty()) s.error = quantization_error(weights, s.sq);
    return s;
}

// ---------------------------------------------------------------------------
// Decomposition

/// A float weight matrix replaced by two integer multiple matrices.
struct DecomposedLayer {
    IntMatrix m_pos;
    IntMatrix m_neg;

    std::size_t rows() const noexcept { return m_pos.rows; }
    std::size_t cols() const noexcept { return m_pos.cols; }

    friend bool operator==(const DecomposedLayer&, const DecomposedLayer&) = default;
};

struct Decomposition {
    DecomposedLayer layer;
    double error = 0.0; // mean squared error of the assignment
};

inline Decomposition decompose(const Tensor& weight, const QuantizationScheme& scheme) {
    if (weight.rank() != 2) throw ShapeError("decompose expects a weight matrix");
    if (scheme.sq.empty()) throw InvalidArgument("decompose: empty quantization set");
    Decomposition d;
    d.layer.m_pos = IntMatrix(weight.rows(), weight.cols());
    d.layer.m_neg = IntMatrix(weight.rows(), weight.cols());
    double s = 0.0;
    for (std::size_t k = 0; k < weight.size(); ++k) {
        const SqEntry& e = scheme.sq[nearest_index(scheme.sq, weight[k])];
        d.layer.m_pos.data[k] = e.m_pos;
        d.layer.m_neg.data[k] = e.m_neg;
        const double diff = weight[k] - e.value;
        s += diff * diff;
    }
    d.error = weight.empty() ? 0.0 : s / static_cast<double>(weight.size());
    return d;
}

/// w = pos.base * m_pos - neg.base * m_neg elementwise. Multiples must be 0 or
/// members of the corresponding level set.
inline Tensor reconstruct(const DecomposedLayer& dec, const QuantizationScheme& scheme) {
    if (dec.m_pos.rows != dec.m_neg.rows || dec.m_pos.cols != dec.m_neg.cols)
        throw ShapeError("positive and negative multiple matrices differ in shape");
    Tensor w = Tensor::matrix(dec.rows(), dec.cols());
    for (std::size_t k = 0; k < w.size(); ++k) {
        const int mp = dec.m_pos.data[k], mn = dec.m_neg.data[k];
        if ((mp != 0 && !scheme.pos.contains(mp)) || (mn != 0 && !scheme.neg.contains(mn)))
            throw InvalidArgument("multiple pair (" + std::to_string(mp) + ", " + std::to_string(mn) +
                                  ") at index " + std::to_string(k) + " is not in the scheme's level sets");
        w[k] = scheme.value_of(mp, mn);
    }
    return w;
}

} // namespace pcmsr::quant
