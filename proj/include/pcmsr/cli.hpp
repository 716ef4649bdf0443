#pragma once

// Command-line front end: pcmsr <command> [--config FILE] [--seed N] [--out DIR] [--set key=value]...

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "error.hpp"
#include "experiment.hpp"

namespace pcmsr::cli {

/// Exit code of an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return exit_config;
    if (dynamic_cast<const InfeasibleError*>(&e)) return exit_infeasible;
    return exit_runtime;
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"PCM crossbar self-repair simulator"};
    app.require_subcommand(1);
    std::string config_file;
    std::vector<std::string> overrides;
    std::string seed, out_dir;
    app.add_option("--config", config_file, "JSON experiment configuration");
    app.add_option("--seed", seed, "root seed (overrides the config)");
    app.add_option("--out", out_dir, "output directory (overrides the config)");
    app.add_option("--set", overrides, "dotted key=value override, e.g. --set repair.scope=whole_network");

    struct Command {
        const char* name;
        const char* help;
    };
    const std::vector<Command> commands{
        {"train", "train the constrained network (and the noise-aware baseline)"},
        {"quantize", "anneal the quantization scheme, decompose and pack the weights"},
        {"program", "program the quantized network onto simulated crossbars"},
        {"run", "run the drift/repair timeline over all variants"},
        {"report", "summarize a timeline into tables and gnuplot data"},
        {"gradcheck", "check analytic gradients against finite differences"},
        {"formats", "print file formats, CSV schemas and the default configuration"},
    };
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return exit_config;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        std::vector<std::string> all = overrides;
        if (!seed.empty()) all.push_back("seed=" + seed);
        if (!out_dir.empty()) all.push_back("out=" + config::Json(out_dir).dump());
        const ExperimentConfig cfg = config::load(config_file, all);

        if (command == "formats") {
            out << formats_text() << "\nDEFAULT CONFIGURATION\n" << config::to_json(ExperimentConfig{}).dump(2) << "\n";
        } else if (command == "train") {
            cmd_train(cfg, out);
        } else if (command == "quantize") {
            cmd_quantize(cfg, out);
        } else if (command == "program") {
            cmd_program(cfg, out);
        } else if (command == "run") {
            cmd_run(cfg, out);
        } else if (command == "report") {
            cmd_report(cfg, out);
        } else if (command == "gradcheck") {
            const auto r = cmd_gradcheck(cfg, out);
            if (!(r.max_rel_error < 1e-4)) {
                err << "gradcheck failed: relative error " << r.max_rel_error << " >= 1e-4\n";
                return exit_runtime;
            }
        }
        return exit_ok;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

} // namespace pcmsr::cli
