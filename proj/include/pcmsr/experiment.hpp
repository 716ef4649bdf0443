#pragma once

// The desk-scale experiment as a sequence of commands sharing one output
// directory: train -> quantize -> program -> run -> report.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "compress.hpp"
#include "config.hpp"
#include "crossbar.hpp"
#include "data_io.hpp"
#include "error.hpp"
#include "nn.hpp"
#include "quantizer.hpp"
#include "repair.hpp"
#include "serialize.hpp"

namespace pcmsr::cli {

namespace fs = std::filesystem;
using config::ExperimentConfig;
using Json = nlohmann::json;

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_infeasible = 3, exit_runtime = 4 };

namespace files {
inline constexpr const char* network = "network.psrb";
inline constexpr const char* network_noise_aware = "network_noise_aware.psrb";
inline constexpr const char* network_unconstrained = "network_unconstrained.psrb";
inline constexpr const char* train_log = "train_log.csv";
inline constexpr const char* train_log_noise_aware = "train_log_noise_aware.csv";
inline constexpr const char* weight_histogram = "weight_histogram.csv";
inline constexpr const char* train_summary = "train_summary.json";
inline constexpr const char* scheme = "scheme.json";
inline constexpr const char* decomposition = "decomposition.psrb";
inline constexpr const char* bins = "bins.csv";
inline constexpr const char* compression = "compression.csv";
inline constexpr const char* quantize_summary = "quantize_summary.json";
inline constexpr const char* analog = "analog.psrb";
inline constexpr const char* program_summary = "program_summary.json";
inline constexpr const char* timeline_csv = "timeline.csv";
inline constexpr const char* timeline_json = "timeline.json";
inline constexpr const char* report_dir = "report";
} // namespace files

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_json(const fs::path& p, const Json& j) { io::write_atomic(p, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Data

struct Splits {
    Dataset train;
    Dataset test;
    std::string source; // what was actually loaded
};

inline Splits load_data(const ExperimentConfig& c, std::ostream& log) {
    const auto& d = c.dataset;
    auto synthetic = [&] {
        return Splits{io::synthetic_digits(c.stage_seed("data.train"), d.n_train),
                      io::synthetic_digits(c.stage_seed("data.test"), d.n_test), "synthetic"};
    };
    if (d.source == "synthetic") return synthetic();

    const bool present = !d.train_images.empty() && !d.train_labels.empty() && !d.test_images.empty() &&
                         !d.test_labels.empty() && fs::exists(d.train_images) && fs::exists(d.train_labels) &&
                         fs::exists(d.test_images) && fs::exists(d.test_labels);
    if (!present) {
        if (!d.synthetic_fallback)
            throw io::IdxError(io::IdxError::Reason::missing_file, d.train_images, "IDX dataset files not found");
        log << "IDX files not found; falling back to synthetic digits\n";
        return synthetic();
    }
    Splits s{io::load_idx(d.train_images, d.train_labels), io::load_idx(d.test_images, d.test_labels), "idx"};
    if (d.max_train) s.train = s.train.head(d.max_train);
    if (d.max_test) s.test = s.test.head(d.max_test);
    return s;
}

inline Dataset eval_split(const ExperimentConfig& c, const Splits& s) {
    return c.timeline.eval_samples ? s.test.head(c.timeline.eval_samples) : s.test;
}

inline nn::Network fresh_network(const ExperimentConfig& c, const Dataset& data) {
    nn::Architecture a;
    a.height = data.height();
    a.width = data.width();
    a.conv_channels = c.network.conv_channels;
    a.hidden = c.network.hidden;
    a.classes = static_cast<std::size_t>(data.classes);
    return nn::make_network(a, c.stage_seed("network"));
}

inline double fraction_below(const nn::Network& net, double eps) {
    const auto w = net.all_weights();
    if (w.empty()) return 0.0;
    return static_cast<double>(std::count_if(w.begin(), w.end(), [&](double v) { return std::abs(v) < eps; })) /
           static_cast<double>(w.size());
}

// ---------------------------------------------------------------------------
// train

/// Histogram of all weights of several networks on a shared grid of width
/// epsilon/5 centred on zero.
inline std::string weight_histogram_csv(const std::vector<std::pair<std::string, const nn::Network*>>& nets,
                                        double epsilon) {
    const double width = epsilon / 5.0;
    double wmax = 0.0;
    for (const auto& [name, net] : nets)
        for (double v : net->all_weights()) wmax = std::max(wmax, std::abs(v));
    const auto half = static_cast<long>(std::ceil(wmax / width)) + 1;
    std::vector<std::vector<std::size_t>> counts(nets.size(), std::vector<std::size_t>(2 * half, 0));
    for (std::size_t n = 0; n < nets.size(); ++n)
        for (double v : nets[n].second->all_weights()) {
            const auto b = static_cast<long>(std::floor(v / width)) + half;
            ++counts[n][static_cast<std::size_t>(std::clamp(b, 0L, 2 * half - 1))];
        }
    std::string out = "bin_low,bin_high";
    for (const auto& [name, net] : nets) out += "," + name;
    out += "\n";
    for (long b = 0; b < 2 * half; ++b) {
        out += fmt((b - half) * width) + "," + fmt((b - half + 1) * width);
        for (std::size_t n = 0; n < nets.size(); ++n) out += "," + std::to_string(counts[n][b]);
        out += "\n";
    }
    return out;
}

inline Json cmd_train(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = c.out;
    const Splits data = load_data(c, log);
    const nn::Network init = fresh_network(c, data.train);

    auto run = [&](const char* name, const nn::TrainConfig& cfg, const char* csv_name) {
        std::string csv = "epoch,loss,accuracy\n";
        nn::Network net = nn::train(init, data.train, cfg, [&](const nn::EpochStats& s) {
            csv += std::to_string(s.epoch) + "," + fmt(s.loss) + "," + fmt(s.accuracy) + "\n";
        });
        if (csv_name) io::write_atomic(out / csv_name, csv);
        const auto test = nn::evaluate(net, data.test);
        log << name << ": test accuracy " << test.accuracy << ", macro-F1 " << test.macro_f1 << "\n";
        return std::pair{net, Json{{"train_accuracy", nn::evaluate(net, data.train).accuracy},
                                   {"test_accuracy", test.accuracy},
                                   {"test_f1", test.macro_f1},
                                   {"fraction_below_epsilon", fraction_below(net, cfg.epsilon_small)}}};
    };

    Json summary{{"dataset", data.source},
                 {"n_train", data.train.size()},
                 {"n_test", data.test.size()},
                 {"epsilon_small", c.train.train.epsilon_small}};
    std::vector<std::pair<std::string, const nn::Network*>> hist;

    const auto [net, s] = run("constrained", c.train.train, files::train_log);
    io::save_network(out / files::network, net);
    summary["constrained"] = s;
    hist.emplace_back("constrained", &net);

    nn::Network noise_aware, unconstrained;
    if (c.train.noise_aware_baseline) {
        nn::TrainConfig cfg = c.train.train;
        cfg.noise_aware = true;
        cfg.lambda_small = cfg.lambda_large = 0.0;
        auto [n, js] = run("noise_aware", cfg, files::train_log_noise_aware);
        noise_aware = std::move(n);
        io::save_network(out / files::network_noise_aware, noise_aware);
        summary["noise_aware"] = js;
        hist.emplace_back("noise_aware", &noise_aware);
    }
    if (c.train.unconstrained_reference) {
        nn::TrainConfig cfg = c.train.train;
        cfg.lambda_small = cfg.lambda_large = 0.0;
        auto [n, js] = run("unconstrained", cfg, nullptr);
        unconstrained = std::move(n);
        io::save_network(out / files::network_unconstrained, unconstrained);
        summary["unconstrained"] = js;
        hist.emplace_back("unconstrained", &unconstrained);
    }
    io::write_atomic(out / files::weight_histogram, weight_histogram_csv(hist, c.train.train.epsilon_small));
    write_json(out / files::train_summary, summary);
    return summary;
}

// ---------------------------------------------------------------------------
// quantize

/// One row per SQ entry: value, multiples and the number of weights assigned to it.
inline std::string bins_csv(const quant::QuantizationScheme& s, const nn::Network& net) {
    std::vector<std::size_t> count(s.sq.size(), 0);
    for (double w : net.all_weights()) ++count[quant::nearest_index(s.sq, w)];
    std::string out = "value,m_pos,m_neg,count\n";
    for (std::size_t k = 0; k < s.sq.size(); ++k)
        out += fmt(s.sq[k].value) + "," + std::to_string(s.sq[k].m_pos) + "," + std::to_string(s.sq[k].m_neg) + "," +
               std::to_string(count[k]) + "\n";
    return out;
}

inline std::string compression_csv(const std::vector<quant::DecomposedLayer>& layers,
                                   const quant::QuantizationScheme& s) {
    std::string out = "layer,polarity,rows,cols,bits,packed_bytes,baseline_bytes,ratio,entropy_bits\n";
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto r = compress::compression_report(layers[l], s);
        for (const auto& [name, m] : {std::pair{"pos", &r.pos}, std::pair{"neg", &r.neg}})
            out += std::to_string(l) + "," + name + "," + std::to_string(layers[l].rows()) + "," +
                   std::to_string(layers[l].cols()) + "," + std::to_string(m->bits) + "," +
                   std::to_string(m->packed_bytes) + "," + std::to_string(m->baseline_bytes) + "," + fmt(m->ratio) +
                   "," + fmt(m->entropy_bits) + "\n";
    }
    return out;
}

inline Json cmd_quantize(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = c.out;
    const nn::Network net = io::load_network(out / files::network);
    const auto weights = net.all_weights();
    quant::AnnealConfig acfg = c.anneal.anneal;
    acfg.rng_seed = c.stage_seed("anneal");
    const double delta = c.anneal.delta_write, eps = c.anneal.epsilon_read;

    quant::AnnealTrace trace;
    const auto scheme = quant::anneal(weights, acfg, delta, eps, &trace);
    const auto violations = quant::validate_constraints(scheme, delta, eps, acfg.n_levels);
    if (!violations.empty())
        throw Error(std::string("annealed scheme violates the ") + quant::to_string(violations.front().constraint) +
                    " constraint: " + violations.front().message);
    const auto uniform = quant::uniform_grid(weights, acfg.n_levels, delta, eps);
    const auto layers = xbar::decompose_network(net, scheme);

    io::save_scheme(out / files::scheme, scheme);
    io::write_atomic(out / files::decomposition,
                     io::encode_decomposition(layers, io::hex(compress::scheme_digest(scheme))));
    io::write_atomic(out / files::bins, bins_csv(scheme, net));
    io::write_atomic(out / files::compression, compression_csv(layers, scheme));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto [pos, neg] = compress::encode(layers[l], scheme);
        io::write_atomic(out / "packed" / ("layer" + std::to_string(l) + "_pos.pqw"), compress::to_bytes(pos));
        io::write_atomic(out / "packed" / ("layer" + std::to_string(l) + "_neg.pqw"), compress::to_bytes(neg));
    }

    Splits data = load_data(c, log);
    const auto float_m = nn::evaluate(net, data.test);
    const auto quant_m = nn::evaluate(xbar::quantized_network(net, layers, scheme), data.test);
    Json summary{{"initial_error", trace.initial_error},
                 {"final_error", scheme.error},
                 {"uniform_grid_error", uniform.error},
                 {"accepted", trace.accepted},
                 {"sq_size", scheme.sq.size()},
                 {"float_accuracy", float_m.accuracy},
                 {"quantized_accuracy", quant_m.accuracy},
                 {"accuracy_drop", float_m.accuracy - quant_m.accuracy}};
    write_json(out / files::quantize_summary, summary);
    log << "scheme: pos base " << scheme.pos.base << ", neg base " << scheme.neg.base << ", |SQ| " << scheme.sq.size()
        << ", error " << scheme.error << " (uniform grid " << uniform.error << ")\n";
    log << "accuracy: float " << float_m.accuracy << ", quantized " << quant_m.accuracy << "\n";
    return summary;
}

// ---------------------------------------------------------------------------
// program

struct Artifacts {
    nn::Network net;
    quant::QuantizationScheme scheme;
    std::vector<quant::DecomposedLayer> layers;
};

inline Artifacts load_artifacts(const fs::path& out) {
    Artifacts a;
    a.net = io::load_network(out / files::network);
    a.scheme = io::load_scheme(out / files::scheme);
    auto dec = io::decode_decomposition(io::read_bytes(out / files::decomposition));
    if (dec.scheme_digest != io::hex(compress::scheme_digest(a.scheme)))
        throw FormatError((out / files::decomposition).string(), "decomposition was made with a different scheme");
    a.layers = std::move(dec.layers);
    return a;
}

inline Json cmd_program(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = c.out;
    const Artifacts a = load_artifacts(out);
    Rng rng = substream(c.stage_seed("program"), "device");
    const auto anet = xbar::program_network(a.net, a.layers, a.scheme, c.device, 0.0, rng);
    io::write_atomic(out / files::analog, io::encode_analog(anet));

    const Splits data = load_data(c, log);
    Rng eval_rng = substream(c.stage_seed("program"), "eval");
    const auto m = xbar::analog_evaluate(anet, eval_split(c, data), 0.0, c.device, eval_rng);
    Json summary{{"tiles", anet.tiles.size()},
                 {"scale", anet.tiles.empty() ? 0.0 : anet.tiles[0].calibration.scale},
                 {"w_range", anet.tiles.empty() ? 0.0 : anet.tiles[0].calibration.w_range},
                 {"accuracy_t0", m.accuracy},
                 {"f1_t0", m.macro_f1}};
    write_json(out / files::program_summary, summary);
    log << "programmed " << anet.tiles.size() << " tiles; accuracy at t=0: " << m.accuracy << "\n";
    return summary;
}

// ---------------------------------------------------------------------------
// run

inline repair::TimelineLog cmd_run(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = c.out;
    const Artifacts a = load_artifacts(out);
    std::vector<repair::Variant> variants;
    for (const auto& name : c.variants) {
        repair::Variant v;
        v.kind = repair::variant_from_string(name);
        if (v.kind == repair::VariantKind::noise_aware) {
            v.net = io::load_network(out / files::network_noise_aware);
        } else {
            v.net = a.net;
            v.scheme = a.scheme;
            v.layers = a.layers;
        }
        variants.push_back(std::move(v));
    }
    const Splits data = load_data(c, log);
    const repair::TimelineConfig tcfg{c.timeline.steps, c.timeline.step_seconds, c.timeline.seeds,
                                      c.stage_seed("timeline")};
    const auto tl = repair::run_timeline(variants, eval_split(c, data), tcfg, c.device, c.repair);
    io::write_atomic(out / files::timeline_csv, io::timeline_csv(tl));
    io::write_atomic(out / files::timeline_json, io::timeline_json(tl).dump(1) + "\n");
    log << "timeline: " << tl.rows.size() << " rows, " << tl.events.size() << " repair events\n";
    for (const auto& [name, v] : tl.step_variance) log << "  inter-step accuracy variance " << name << ": " << v << "\n";
    return tl;
}

// ---------------------------------------------------------------------------
// report

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct SeriesStep {
    double t = 0.0;
    std::vector<double> accuracy, f1, probe_error;
};

/// series -> step -> samples over seeds
inline std::map<std::string, std::map<int, SeriesStep>> group_rows(const repair::TimelineLog& log) {
    std::map<std::string, std::map<int, SeriesStep>> g;
    for (const auto& r : log.rows) {
        auto& s = g[r.variant][r.step];
        s.t = r.t;
        s.accuracy.push_back(r.accuracy);
        s.f1.push_back(r.f1);
        s.probe_error.push_back(r.probe_error);
    }
    return g;
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline Json cmd_report(const ExperimentConfig& c, std::ostream& log) {
    const fs::path out = c.out;
    const fs::path dir = out / files::report_dir;
    const auto tl = io::timeline_from(io::parse_json(io::read_text(out / files::timeline_json), files::timeline_json));
    const auto groups = group_rows(tl);

    std::string summary = "series,step,t,n,mean_accuracy,median_accuracy,min_accuracy,max_accuracy,mean_f1,"
                          "mean_probe_error\n";
    for (const auto& [series, steps] : groups)
        for (const auto& [step, s] : steps)
            summary += series + "," + std::to_string(step) + "," + fmt(s.t) + "," +
                       std::to_string(s.accuracy.size()) + "," + fmt(mean(s.accuracy)) + "," +
                       fmt(median(s.accuracy)) + "," +
                       fmt(*std::min_element(s.accuracy.begin(), s.accuracy.end())) + "," +
                       fmt(*std::max_element(s.accuracy.begin(), s.accuracy.end())) + "," + fmt(mean(s.f1)) + "," +
                       fmt(mean(s.probe_error)) + "\n";
    io::write_atomic(dir / "summary.csv", summary);

    std::string events = "seed,step,t,layers,weights_touched,pulses,irreversible,pre_probe_error,post_probe_error,"
                         "accuracy_pre,accuracy_post\n";
    std::size_t not_worse = 0;
    for (const auto& e : tl.events) {
        std::string layers;
        for (std::size_t l : e.layers_repaired) layers += (layers.empty() ? "" : ";") + std::to_string(l);
        events += std::to_string(e.seed) + "," + std::to_string(e.step) + "," + fmt(e.t) + "," + layers + "," +
                  std::to_string(e.weights_touched) + "," + std::to_string(e.pulses) + "," +
                  std::to_string(e.irreversible_count) + "," + fmt(e.pre_probe_error) + "," +
                  fmt(e.post_probe_error) + "," + fmt(e.accuracy_pre) + "," + fmt(e.accuracy_post) + "\n";
        not_worse += e.accuracy_post >= e.accuracy_pre;
    }
    io::write_atomic(dir / "events.csv", events);

    std::string variance = "series,step_variance\n";
    for (const auto& [name, v] : tl.step_variance) variance += name + "," + fmt(v) + "\n";
    io::write_atomic(dir / "variance.csv", variance);

    // gnuplot: one block, first column t, then mean accuracy (or probe error) per series
    std::string acc_dat = "# t", probe_dat = "# t";
    for (const auto& name : tl.series) {
        acc_dat += " " + name;
        probe_dat += " " + name;
    }
    acc_dat += "\n";
    probe_dat += "\n";
    std::map<int, double> times;
    for (const auto& r : tl.rows) times[r.step] = r.t;
    for (const auto& [step, t] : times) {
        acc_dat += fmt(t);
        probe_dat += fmt(t);
        for (const auto& name : tl.series) {
            auto g = groups.find(name);
            const SeriesStep* s = nullptr;
            if (g != groups.end())
                if (auto it = g->second.find(step); it != g->second.end()) s = &it->second;
            acc_dat += " " + (s ? fmt(mean(s->accuracy)) : std::string("NaN"));
            probe_dat += " " + (s ? fmt(mean(s->probe_error)) : std::string("NaN"));
        }
        acc_dat += "\n";
        probe_dat += "\n";
    }
    io::write_atomic(dir / "accuracy.dat", acc_dat);
    io::write_atomic(dir / "probe_error.dat", probe_dat);

    Json final_median = Json::object();
    for (const auto& [series, steps] : groups)
        if (!steps.empty()) final_median[series] = median(steps.rbegin()->second.accuracy);

    Json result{{"rows", tl.rows.size()},
                {"events", tl.events.size()},
                {"events_not_worse", not_worse},
                {"final_median_accuracy", final_median},
                {"step_variance", tl.step_variance}};

    if (fs::exists(out / files::scheme) && fs::exists(out / files::decomposition)) {
        const Artifacts a = load_artifacts(out);
        io::write_atomic(dir / "compression.csv", compression_csv(a.layers, a.scheme));
        std::size_t packed = 0, baseline = 0;
        for (const auto& l : a.layers) {
            const auto r = compress::compression_report(l, a.scheme);
            packed += r.file_bytes;
            baseline += r.float_weight_bytes;
        }
        result["compression"] = {{"packed_bytes", packed}, {"float32_bytes", baseline}};
    }

    std::string text = "rows: " + std::to_string(tl.rows.size()) + "\n" +
                       "repair events: " + std::to_string(tl.events.size()) + " (accuracy not lower after repair in " +
                       std::to_string(not_worse) + ")\n";
    for (const auto& [series, acc] : final_median.items()) text += "final median accuracy " + series + ": " + fmt(acc.get<double>()) + "\n";
    for (const auto& [name, v] : tl.step_variance) text += "inter-step accuracy variance " + name + ": " + fmt(v) + "\n";
    io::write_atomic(dir / "report.txt", text);
    write_json(dir / "report.json", result);
    log << text;
    return result;
}

// ---------------------------------------------------------------------------
// gradcheck

/// Finite-difference check of backward() on a small random conv + dense
/// network with both penalty terms active.
inline nn::GradCheck cmd_gradcheck(const ExperimentConfig& c, std::ostream& log) {
    const std::uint64_t seed = c.stage_seed("gradcheck");
    nn::Architecture arch{5, 5, 2, 6, 3};
    nn::Network net = nn::make_network(arch, seed);
    Rng rng = substream(seed, "inputs");
    Tensor batch({4, arch.height * arch.width});
    for (double& v : batch.values()) v = uniform01(rng);
    std::vector<int> labels;
    for (int k = 0; k < 4; ++k) labels.push_back(k % 3);
    nn::TrainConfig cfg = c.train.train;
    cfg.epsilon_small = 0.3;
    cfg.theta_large = 0.6;
    cfg.lambda_small = cfg.lambda_large = 0.05;
    const auto r = nn::gradient_check(net, batch, labels, cfg);
    log << "gradcheck: " << r.parameters << " parameters, max relative error " << r.max_rel_error << " (layer "
        << r.worst_layer << ", index " << r.worst_index << ")\n";
    return r;
}

// ---------------------------------------------------------------------------
// formats

inline const char* formats_text() {
    return R"(FILE FORMATS

All multi-byte integers in binary files are little-endian unless noted.

timeline.csv
  One row per (seed, step, series), ordered by seed, then step, then series.
  columns: seed,step,t,variant,accuracy,f1,probe_error,repaired,pulses,irreversible
    seed          timeline seed index (0-based)
    step          time step (0 = right after programming)
    t             simulated seconds since programming
    variant       self_repair | self_repair_adjusted | no_repair | noise_aware | drift_compensated
                  self_repair is measured before that step's repair, self_repair_adjusted after it
    accuracy, f1  accuracy and macro-F1 on the evaluation split
    probe_error   sum |identity probe - baseline| over all tiles
                  (self_repair_adjusted: after the repair)
    repaired      1 if the self-repair pass ran at this step
    pulses        correction pulses issued at this step
    irreversible  corrected cells whose drifted line had a different nearest multiple
  Floats are printed with %.17g.

timeline.json
  {"format": "pcmsr.timeline", "version": 1, "config": {...}, "series": [...],
   "step_variance": {series: value}, "rows": [...same fields as the CSV...],
   "events": [{seed, step, t, layers_repaired, weights_touched, pulses,
               irreversible_count, pre_probe_error, post_probe_error,
               accuracy_pre, accuracy_post}]}
  step_variance: mean over seeds of the population variance of accuracy over steps >= 1.

scheme.json
  {"format": "pcmsr.scheme", "version": 1, "digest": hex,
   "pos": {"base": f, "multiples": [ints]}, "neg": {...},
   "delta_write": f, "epsilon_read": f, "error": f, "sq": [[value, m_pos, m_neg], ...]}
  sq is sorted by value and must equal the set rebuilt from pos/neg; digest is
  the first six bytes (hex, in order) of the scheme digest below.

scheme digest
  FNV-1a 64 over the ASCII text
    "pos:" + hex16(bits(pos.base)) + ",m1,m2,...;" + "neg:" + hex16(bits(neg.base)) + ",m1,...;"
  where hex16 is the lower-case 16-digit hex of the IEEE-754 bit pattern.
  The 64-bit hash is taken little-endian; the first six bytes form the prefix.

*.pqw  packed multiple matrix (one polarity of one layer)
  offset size  field
  0      4     magic "PQW1"
  4      2     rows (u16)
  6      2     cols (u16)
  8      1     bits per entry = ceil(log2(M + 1)), M = largest multiple of the scheme
  9      1     polarity: 0 positive line, 1 negative line
  10     6     scheme digest prefix
  16     n     payload, n = ceil(rows * cols * bits / 8)
  Entries are row-major. Entry k occupies stream bits [k*bits, (k+1)*bits),
  least significant bit first; stream bit i is bit (i mod 8) of payload byte
  floor(i / 8). Unused trailing bits are zero.

*.psrb  tagged binary container (networks, decompositions, tile dumps)
  magic "PSRB" | u32 version (1) | str kind | u32 field count | fields
  field: str name | u8 type | u64 count | elements
    type 1 f64 (IEEE-754 bit pattern, 8 bytes each)
    type 2 i64 (two's complement, 8 bytes each)
    type 3 bytes (1 byte each)
  str: u32 length | bytes
  kind "network": rng_seed, layer_count, layer.<i>.{kind, activation, shape,
    geometry = [in_channels, in_height, in_width, kernel], weight, bias}
    kind 0 dense, 1 conv (weight lowered to out_channels x in_channels*k*k);
    activation 0 none, 1 relu.
  kind "decomposition": scheme_digest (hex text), layer_count,
    layer.<i>.m_pos, layer.<i>.m_pos.shape, layer.<i>.m_neg, layer.<i>.m_neg.shape
  kind "analog_network": net.* (as "network"), t_prog, output_scales,
    scheme (scheme.json text, empty if unquantized), tile_count,
    tile.<i>.{shape, calibration = [scale, w_range], g_pos, g_neg, nu_pos,
    nu_neg, t_prog, target_m_pos, target_m_neg, baseline_probe}

IDX (dataset input)
  Big-endian. Images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, u8 pixels.
  Labels: u32 magic 0x00000801, u32 count, u8 labels. Pixels are scaled by 1/255.

train_log*.csv          epoch,loss,accuracy (training split, after each epoch)
weight_histogram.csv    bin_low,bin_high,<network>... (bin width epsilon_small/5)
bins.csv                value,m_pos,m_neg,count (one row per SQ entry)
compression.csv         layer,polarity,rows,cols,bits,packed_bytes,baseline_bytes,ratio,entropy_bits
                        baseline_bytes = 4 * entries; entropy in bits per entry
report/summary.csv      series,step,t,n,mean_accuracy,median_accuracy,min_accuracy,max_accuracy,mean_f1,mean_probe_error
report/events.csv       seed,step,t,layers,weights_touched,pulses,irreversible,pre_probe_error,post_probe_error,accuracy_pre,accuracy_post
report/variance.csv     series,step_variance
report/accuracy.dat     gnuplot table: t then mean accuracy per series
report/probe_error.dat  gnuplot table: t then mean probe error per series

Exit codes: 0 success, 2 configuration error, 3 infeasible quantization
constraints, 4 runtime failure (missing or malformed files, divergence, ...).
)";
}

} // namespace pcmsr::cli
