#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <pcmsr/cli.hpp>

using namespace pcmsr;
using namespace pcmsr::cli;
using config::ExperimentConfig;
namespace fs = std::filesystem;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Small enough that a full train -> report pipeline takes a few seconds.
const std::vector<std::string> small{
    "dataset.n_train=600", "dataset.n_test=120", "network.conv_channels=2", "network.hidden=16",
    "train.epochs=2",      "anneal.iterations=300", "timeline.steps=3",   "timeline.seeds=2",
};

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pcmsr_cli_" + name);
    fs::remove_all(p);
    return p;
}

struct Result {
    int code;
    std::string out, err;
};

Result run(const std::string& command, const fs::path& out_dir, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"pcmsr", command, "--out", out_dir.string()};
    for (const auto& s : small) args.insert(args.end(), {"--set", s});
    for (auto& s : extra) args.push_back(std::move(s));
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

void pipeline(const fs::path& dir, const std::vector<std::string>& extra = {}) {
    for (const char* c : {"train", "quantize", "program", "run"}) {
        const auto r = run(c, dir, extra);
        INFO(c << ": " << r.err);
        REQUIRE(r.code == 0);
    }
}

} // namespace

TEST_CASE("config: defaults, overrides and unknown keys") {
    const auto c = config::load({}, {"repair.global_threshold=12.5", "train.epochs=3", "repair.scope=whole_network"});
    CHECK(c.repair.global_threshold == 12.5);
    CHECK(c.train.train.epochs == 3);
    CHECK(c.repair.scope == repair::Scope::whole_network);
    CHECK(c.repair.layer_threshold_dt == 10.0);

    try {
        config::load({}, {"a.b=1"});
        FAIL("unknown key accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("unknown key 'a'") != std::string::npos);
    }
    CHECK_THROWS_AS(config::load({}, {"train.epoch=3"}), ConfigError);
    CHECK_THROWS_AS(config::load({}, {"train.epochs"}), ConfigError);
    CHECK_THROWS_AS(config::load({}, {"train.lr=-1"}), ConfigError);
    CHECK_THROWS_AS(config::load({}, {"variants=[\"self_repair\",\"self_repair\"]"}), ConfigError);

    auto doc = config::to_json(ExperimentConfig{});
    doc["device"]["g_maxx"] = 1.0;
    CHECK_THROWS_AS(config::from_json(doc), ConfigError);
    const auto defaults = config::to_json(ExperimentConfig{});
    CHECK(config::to_json(config::from_json(defaults)) == defaults);

    const fs::path dir = scratch("cfgfile");
    fs::create_directories(dir);
    std::ofstream(dir / "c.json") << R"({"timeline": {"steps": 7}, "seed": 9})";
    const auto f = config::load(dir / "c.json", {"seed=11"});
    CHECK(f.timeline.steps == 7);
    CHECK(f.seed == 11);
    std::ofstream(dir / "bad.json") << R"({"timeline": {"stepz": 7}})";
    CHECK_THROWS_AS(config::load(dir / "bad.json", {}), ConfigError);
}

TEST_CASE("stage seeds are distinct and depend on the root seed") {
    ExperimentConfig a, b;
    b.seed = 2;
    CHECK(a.stage_seed("train") != a.stage_seed("anneal"));
    CHECK(a.stage_seed("train") != b.stage_seed("train"));
    const ExperimentConfig c;
    CHECK(a.stage_seed("timeline") == c.stage_seed("timeline"));
}

TEST_CASE("exit codes") {
    const fs::path dir = scratch("codes");
    CHECK(run("formats", dir, {"--set", "no.such=1"}).code == exit_config);
    CHECK(run("formats", dir, {"--bogus"}).code == exit_config);
    CHECK(run("formats", dir, {"--set", "train.batch_size=0"}).code == exit_config);
    // nothing trained yet
    CHECK(run("quantize", dir).code == exit_runtime);
    CHECK(run("report", dir).code == exit_runtime);

    REQUIRE(run("train", dir).code == 0);
    const auto r = run("quantize", dir, {"--set", "anneal.delta_write=5.0"});
    CHECK(r.code == exit_infeasible);
    CHECK_FALSE(r.err.empty());
    CHECK(run("gradcheck", dir).code == 0);
}

TEST_CASE("formats lists the schemas and the default configuration") {
    const auto r = run("formats", scratch("formats"));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("seed,step,t,variant,accuracy,f1,probe_error,repaired,pulses,irreversible") != std::string::npos);
    CHECK(r.out.find("DEFAULT CONFIGURATION") != std::string::npos);
    const auto json_start = r.out.find('{', r.out.find("DEFAULT CONFIGURATION"));
    const auto defaults = config::to_json(ExperimentConfig{});
    CHECK(config::Json::parse(r.out.substr(json_start)) == defaults);
}

TEST_CASE("missing IDX files fall back to synthetic data") {
    const fs::path dir = scratch("fallback");
    const auto r = run("train", dir, {"--set", "dataset.source=idx", "--set", "dataset.train_images=\"/nonexistent\""});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("falling back") != std::string::npos);
    CHECK(config::Json::parse(slurp(dir / "train_summary.json"))["dataset"] == "synthetic");

    const auto strict = run("train", dir, {"--set", "dataset.source=idx", "--set", "dataset.synthetic_fallback=false"});
    CHECK(strict.code == exit_runtime);
}

TEST_CASE("constrained training depletes the band below epsilon") {
    const fs::path dir = scratch("hist");
    // a short run needs a stronger penalty than the default to show the band
    REQUIRE(run("train", dir,
                {"--set", "train.unconstrained_reference=true", "--set", "train.epochs=4", "--set",
                 "train.lambda_small=1.0"})
                .code == 0);
    const auto rows = csv_rows(slurp(dir / "weight_histogram.csv"));
    REQUIRE(rows.size() > 2);
    const auto& head = rows[0];
    std::size_t ci = 0, ui = 0;
    for (std::size_t k = 0; k < head.size(); ++k) {
        if (head[k] == "constrained") ci = k;
        if (head[k] == "unconstrained") ui = k;
    }
    REQUIRE(ci > 0);
    REQUIRE(ui > 0);
    const double eps = config::load({}, {}).train.train.epsilon_small;
    double c_in = 0, c_all = 0, u_in = 0, u_all = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const double lo = std::stod(rows[r][0]), hi = std::stod(rows[r][1]);
        const double cc = std::stod(rows[r][ci]), uc = std::stod(rows[r][ui]);
        c_all += cc;
        u_all += uc;
        if (lo >= -eps - 1e-12 && hi <= eps + 1e-12) {
            c_in += cc;
            u_in += uc;
        }
    }
    CHECK(c_all == u_all);
    CHECK(c_in / c_all < u_in / u_all);
}

TEST_CASE("full pipeline: outputs, report consistency and reproducibility") {
    const fs::path a = scratch("pipe_a"), b = scratch("pipe_b");
    pipeline(a);

    // bins.csv: one row per SQ entry
    const auto scheme = io::load_scheme(a / "scheme.json");
    CHECK(csv_rows(slurp(a / "bins.csv")).size() == scheme.sq.size() + 1);

    const auto rows = csv_rows(slurp(a / "timeline.csv"));
    REQUIRE(!rows.empty());
    CHECK(rows[0] == std::vector<std::string>{"seed", "step", "t", "variant", "accuracy", "f1", "probe_error",
                                              "repaired", "pulses", "irreversible"});

    REQUIRE(run("report", a).code == 0);
    const auto report = config::Json::parse(slurp(a / "report" / "report.json"));
    const auto log = io::timeline_from(config::Json::parse(slurp(a / "timeline.json")));
    CHECK(report["events"].get<std::size_t>() == log.events.size());
    CHECK(csv_rows(slurp(a / "report" / "events.csv")).size() == log.events.size() + 1);

    // independent aggregation of timeline.csv
    std::map<std::pair<std::string, int>, std::pair<double, int>> sums;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        auto& s = sums[{rows[r][3], std::stoi(rows[r][1])}];
        s.first += std::stod(rows[r][4]);
        s.second += 1;
    }
    const auto summary = csv_rows(slurp(a / "report" / "summary.csv"));
    REQUIRE(summary.size() == sums.size() + 1);
    for (std::size_t r = 1; r < summary.size(); ++r) {
        const auto& s = sums.at({summary[r][0], std::stoi(summary[r][1])});
        CHECK(std::stoi(summary[r][3]) == s.second);
        CHECK_THAT(std::stod(summary[r][4]), WithinAbs(s.first / s.second, 1e-12));
    }

    pipeline(b);
    CHECK(slurp(a / "network.psrb") == slurp(b / "network.psrb"));
    CHECK(slurp(a / "scheme.json") == slurp(b / "scheme.json"));
    CHECK(slurp(a / "timeline.csv") == slurp(b / "timeline.csv"));

    const fs::path c = scratch("pipe_c");
    pipeline(c, {"--seed", "2"});
    CHECK(slurp(a / "network.psrb") != slurp(c / "network.psrb"));
}

TEST_CASE("steps=0 gives the header plus t=0 rows and an empty-but-valid report") {
    const fs::path dir = scratch("zero");
    pipeline(dir, {"--set", "timeline.steps=0"});
    const auto rows = csv_rows(slurp(dir / "timeline.csv"));
    REQUIRE(rows.size() > 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        CHECK(rows[r][1] == "0");
        CHECK(std::stod(rows[r][2]) == 0.0);
    }
    REQUIRE(run("report", dir).code == 0);
    const auto report = config::Json::parse(slurp(dir / "report" / "report.json"));
    CHECK(report["events"] == 0);
    CHECK(csv_rows(slurp(dir / "report" / "events.csv")).size() == 1);
}

TEST_CASE("the installed binary reports exit codes") {
    const char* exe = std::getenv("PCMSR_CLI");
    if (!exe) SKIP("PCMSR_CLI not set");
    const std::string q = std::string("\"") + exe + "\"";
    auto code = [](const std::string& cmd) {
        const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    CHECK(code(q + " formats") == 0);
    CHECK(code(q + " formats --set nope=1") == 2);
    CHECK(code(q + " report --out " + scratch("bin").string()) == 4);
    CHECK(code(q) == 2);
}
