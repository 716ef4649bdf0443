#pragma once

// Experiment configuration: one JSON document with a section per component.
// Unknown keys are rejected; `key.path=value` overrides are applied to the
// document before it is interpreted, so they get the same checks.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "device.hpp"
#include "error.hpp"
#include "nn.hpp"
#include "quantizer.hpp"
#include "repair.hpp"

namespace pcmsr::config {

using Json = nlohmann::json;

struct DatasetConfig {
    std::string source = "synthetic"; // "synthetic" or "idx"
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    bool synthetic_fallback = true; // use synthetic data when IDX files are missing
    std::size_t n_train = 4000;     // synthetic sample counts
    std::size_t n_test = 500;
    std::size_t max_train = 0; // cap on IDX samples, 0 = all
    std::size_t max_test = 0;
};

struct NetworkConfig {
    std::size_t conv_channels = 8;
    std::size_t hidden = 64;
};

struct TrainSection {
    nn::TrainConfig train;
    bool noise_aware_baseline = true;     // also train the noise-aware comparison network
    bool unconstrained_reference = false; // also train with zero penalties, for the weight histogram
};

struct AnnealSection {
    quant::AnnealConfig anneal;
    double delta_write = 0.01;
    double epsilon_read = 0.005;
};

struct TimelineSection {
    int steps = 20;
    double step_seconds = 300.0;
    int seeds = 20;
    std::size_t eval_samples = 0; // 0 = whole test split
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out = "out";
    DatasetConfig dataset;
    NetworkConfig network;
    TrainSection train;
    AnnealSection anneal;
    device::DeviceConfig device;
    repair::RepairConfig repair;
    TimelineSection timeline;
    std::vector<std::string> variants{"self_repair", "no_repair", "noise_aware", "drift_compensated"};

    /// Seeds of the independent stages, all derived from `seed`.
    std::uint64_t stage_seed(const char* stage) const { return substream_seed(seed, stage); }

    void validate() const;
};

// ---------------------------------------------------------------------------

namespace detail {

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline void only_keys(const Json& j, const std::string& path, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError((path.empty() ? std::string("<root>") : path) + ": expected an object");
    std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("unknown key '" + join(path, k) + "'");
}

template <class T>
void read(const Json& j, const std::string& path, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(join(path, key) + ": wrong type (" + it->dump() + ")");
    }
}

inline void read_anchor(const Json& j, const std::string& path, const char* key, device::PulseAnchor& a) {
    auto it = j.find(key);
    if (it == j.end()) return;
    const std::string p = join(path, key);
    only_keys(*it, p, {"amplitude", "rel_std"});
    read(*it, p, "amplitude", a.amplitude);
    read(*it, p, "rel_std", a.rel_std);
}

} // namespace detail

inline const char* to_string(repair::Scope s) { return s == repair::Scope::per_layer ? "per_layer" : "whole_network"; }
inline const char* to_string(repair::ThresholdMode m) { return m == repair::ThresholdMode::step ? "step" : "level"; }

inline Json to_json(const ExperimentConfig& c) {
    const auto& t = c.train.train;
    const auto& a = c.anneal.anneal;
    const auto& d = c.device;
    const auto& r = c.repair;
    return {
        {"seed", c.seed},
        {"out", c.out},
        {"dataset",
         {{"source", c.dataset.source},
          {"train_images", c.dataset.train_images},
          {"train_labels", c.dataset.train_labels},
          {"test_images", c.dataset.test_images},
          {"test_labels", c.dataset.test_labels},
          {"synthetic_fallback", c.dataset.synthetic_fallback},
          {"n_train", c.dataset.n_train},
          {"n_test", c.dataset.n_test},
          {"max_train", c.dataset.max_train},
          {"max_test", c.dataset.max_test}}},
        {"network", {{"conv_channels", c.network.conv_channels}, {"hidden", c.network.hidden}}},
        {"train",
         {{"epsilon_small", t.epsilon_small},
          {"theta_large", t.theta_large},
          {"lambda_small", t.lambda_small},
          {"lambda_large", t.lambda_large},
          {"lr", t.lr},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"nw_std_rel", t.nw_std_rel},
          {"pdrop", t.pdrop},
          {"noise_aware_baseline", c.train.noise_aware_baseline},
          {"unconstrained_reference", c.train.unconstrained_reference}}},
        {"anneal",
         {{"iterations", a.iterations},
          {"t0", a.t0},
          {"cooling", a.cooling},
          {"perturb_scale", a.perturb_scale},
          {"linear_mode", a.linear_mode},
          {"n_levels", a.n_levels},
          {"max_multiple", a.max_multiple},
          {"delta_write", c.anneal.delta_write},
          {"epsilon_read", c.anneal.epsilon_read}}},
        {"device",
         {{"g_max", d.g_max},
          {"read_noise_std", d.read_noise_std},
          {"drift_nu_mean", d.drift_nu_mean},
          {"drift_nu_std", d.drift_nu_std},
          {"t_ref", d.t_ref},
          {"pulse_err_low", {{"amplitude", d.pulse_err_low.amplitude}, {"rel_std", d.pulse_err_low.rel_std}}},
          {"pulse_err_high", {{"amplitude", d.pulse_err_high.amplitude}, {"rel_std", d.pulse_err_high.rel_std}}}}},
        {"repair",
         {{"global_threshold", r.global_threshold},
          {"layer_threshold_dt", r.layer_threshold_dt},
          {"deviation_fraction", r.deviation_fraction},
          {"scope", to_string(r.scope)},
          {"threshold_mode", to_string(r.threshold_mode)},
          {"probe_period", r.probe_period}}},
        {"timeline",
         {{"steps", c.timeline.steps},
          {"step_seconds", c.timeline.step_seconds},
          {"seeds", c.timeline.seeds},
          {"eval_samples", c.timeline.eval_samples}}},
        {"variants", c.variants},
    };
}

inline ExperimentConfig from_json(const Json& j) {
    using detail::only_keys;
    using detail::read;
    ExperimentConfig c;
    only_keys(j, "", {"seed", "out", "dataset", "network", "train", "anneal", "device", "repair", "timeline", "variants"});
    read(j, "", "seed", c.seed);
    read(j, "", "out", c.out);
    read(j, "", "variants", c.variants);

    if (auto it = j.find("dataset"); it != j.end()) {
        only_keys(*it, "dataset", {"source", "train_images", "train_labels", "test_images", "test_labels",
                                   "synthetic_fallback", "n_train", "n_test", "max_train", "max_test"});
        auto& d = c.dataset;
        read(*it, "dataset", "source", d.source);
        read(*it, "dataset", "train_images", d.train_images);
        read(*it, "dataset", "train_labels", d.train_labels);
        read(*it, "dataset", "test_images", d.test_images);
        read(*it, "dataset", "test_labels", d.test_labels);
        read(*it, "dataset", "synthetic_fallback", d.synthetic_fallback);
        read(*it, "dataset", "n_train", d.n_train);
        read(*it, "dataset", "n_test", d.n_test);
        read(*it, "dataset", "max_train", d.max_train);
        read(*it, "dataset", "max_test", d.max_test);
    }
    if (auto it = j.find("network"); it != j.end()) {
        only_keys(*it, "network", {"conv_channels", "hidden"});
        read(*it, "network", "conv_channels", c.network.conv_channels);
        read(*it, "network", "hidden", c.network.hidden);
    }
    if (auto it = j.find("train"); it != j.end()) {
        only_keys(*it, "train", {"epsilon_small", "theta_large", "lambda_small", "lambda_large", "lr", "epochs",
                                 "batch_size", "nw_std_rel", "pdrop", "noise_aware_baseline",
                                 "unconstrained_reference"});
        auto& t = c.train.train;
        read(*it, "train", "epsilon_small", t.epsilon_small);
        read(*it, "train", "theta_large", t.theta_large);
        read(*it, "train", "lambda_small", t.lambda_small);
        read(*it, "train", "lambda_large", t.lambda_large);
        read(*it, "train", "lr", t.lr);
        read(*it, "train", "epochs", t.epochs);
        read(*it, "train", "batch_size", t.batch_size);
        read(*it, "train", "nw_std_rel", t.nw_std_rel);
        read(*it, "train", "pdrop", t.pdrop);
        read(*it, "train", "noise_aware_baseline", c.train.noise_aware_baseline);
        read(*it, "train", "unconstrained_reference", c.train.unconstrained_reference);
    }
    if (auto it = j.find("anneal"); it != j.end()) {
        only_keys(*it, "anneal", {"iterations", "t0", "cooling", "perturb_scale", "linear_mode", "n_levels",
                                  "max_multiple", "delta_write", "epsilon_read"});
        auto& a = c.anneal.anneal;
        read(*it, "anneal", "iterations", a.iterations);
        read(*it, "anneal", "t0", a.t0);
        read(*it, "anneal", "cooling", a.cooling);
        read(*it, "anneal", "perturb_scale", a.perturb_scale);
        read(*it, "anneal", "linear_mode", a.linear_mode);
        read(*it, "anneal", "n_levels", a.n_levels);
        read(*it, "anneal", "max_multiple", a.max_multiple);
        read(*it, "anneal", "delta_write", c.anneal.delta_write);
        read(*it, "anneal", "epsilon_read", c.anneal.epsilon_read);
    }
    if (auto it = j.find("device"); it != j.end()) {
        only_keys(*it, "device", {"g_max", "read_noise_std", "drift_nu_mean", "drift_nu_std", "t_ref",
                                  "pulse_err_low", "pulse_err_high"});
        auto& d = c.device;
        read(*it, "device", "g_max", d.g_max);
        read(*it, "device", "read_noise_std", d.read_noise_std);
        read(*it, "device", "drift_nu_mean", d.drift_nu_mean);
        read(*it, "device", "drift_nu_std", d.drift_nu_std);
        read(*it, "device", "t_ref", d.t_ref);
        detail::read_anchor(*it, "device", "pulse_err_low", d.pulse_err_low);
        detail::read_anchor(*it, "device", "pulse_err_high", d.pulse_err_high);
    }
    if (auto it = j.find("repair"); it != j.end()) {
        only_keys(*it, "repair", {"global_threshold", "layer_threshold_dt", "deviation_fraction", "scope",
                                  "threshold_mode", "probe_period"});
        auto& r = c.repair;
        read(*it, "repair", "global_threshold", r.global_threshold);
        read(*it, "repair", "layer_threshold_dt", r.layer_threshold_dt);
        read(*it, "repair", "deviation_fraction", r.deviation_fraction);
        read(*it, "repair", "probe_period", r.probe_period);
        std::string scope = to_string(r.scope), mode = to_string(r.threshold_mode);
        read(*it, "repair", "scope", scope);
        read(*it, "repair", "threshold_mode", mode);
        if (scope == "per_layer") r.scope = repair::Scope::per_layer;
        else if (scope == "whole_network") r.scope = repair::Scope::whole_network;
        else throw ConfigError("repair.scope: expected per_layer or whole_network, got '" + scope + "'");
        if (mode == "step") r.threshold_mode = repair::ThresholdMode::step;
        else if (mode == "level") r.threshold_mode = repair::ThresholdMode::level;
        else throw ConfigError("repair.threshold_mode: expected step or level, got '" + mode + "'");
    }
    if (auto it = j.find("timeline"); it != j.end()) {
        only_keys(*it, "timeline", {"steps", "step_seconds", "seeds", "eval_samples"});
        read(*it, "timeline", "steps", c.timeline.steps);
        read(*it, "timeline", "step_seconds", c.timeline.step_seconds);
        read(*it, "timeline", "seeds", c.timeline.seeds);
        read(*it, "timeline", "eval_samples", c.timeline.eval_samples);
    }
    c.validate();
    return c;
}

inline void ExperimentConfig::validate() const {
    try {
        train.train.validate();
        anneal.anneal.validate();
        device.validate();
        repair.validate();
        repair::TimelineConfig{timeline.steps, timeline.step_seconds, timeline.seeds, 0}.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    if (dataset.source != "synthetic" && dataset.source != "idx")
        throw ConfigError("dataset.source: expected synthetic or idx, got '" + dataset.source + "'");
    if (dataset.n_train == 0 || dataset.n_test == 0) throw ConfigError("dataset: sample counts must be positive");
    if (network.conv_channels == 0 || network.hidden == 0) throw ConfigError("network: layer sizes must be positive");
    if (!(anneal.delta_write > 0.0) || !(anneal.epsilon_read >= 0.0))
        throw ConfigError("anneal: need delta_write > 0 and epsilon_read >= 0");
    if (variants.empty()) throw ConfigError("variants: at least one variant is required");
    std::set<std::string> seen;
    for (const auto& v : variants) {
        try {
            repair::variant_from_string(v);
        } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("variants: ") + e.what());
        }
        if (!seen.insert(v).second) throw ConfigError("variants: '" + v + "' listed twice");
    }
}

// ---------------------------------------------------------------------------
// Overrides

/// Parses the right-hand side of an override: JSON when it parses as JSON,
/// otherwise a plain string.
inline Json override_value(const std::string& text) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        return text;
    }
}

/// Applies `a.b.c=value` to the document. Intermediate objects must already
/// exist in the defaults, so a misspelled section is an error rather than a
/// silently ignored new key.
inline void apply_override(Json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    Json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        if (!node->is_object() || !node->contains(part))
            throw ConfigError("unknown key '" + key.substr(0, dot == std::string::npos ? key.size() : dot) + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = override_value(assignment.substr(eq + 1));
}

/// Defaults, then the file (if any), then the overrides in order.
inline ExperimentConfig load(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    Json doc = to_json(ExperimentConfig{});
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw ConfigError("cannot open config file " + file.string());
        Json user;
        try {
            user = Json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(file.string() + ": " + e.what());
        }
        from_json(user); // rejects unknown keys before merging
        doc.merge_patch(user);
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return from_json(doc);
}

} // namespace pcmsr::config
