#include "rootopt/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    rootopt::CommandSpec spec;
    CLI::App app{"Root growth optimization: irrigation plans, state and adjoint solves, measure ascent"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    app.add_option("--config", spec.config, "Configuration file (key = value)");
    app.add_option("--out", spec.out_dir, "Output directory")->capture_default_str();
    app.add_option("--set", spec.overrides, "Override a configuration key, KEY=VALUE (repeatable)");
    auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config)");
    app.add_option("--threads", spec.threads, "Worker threads for parallel-safe inner work")->capture_default_str();

    const std::pair<const char*, const char*> commands[] = {
        {"irrigate", "Plan the irrigation tree; write its cost, landscape and an SVG"},
        {"solve", "Solve the state equation; write u and the harvest"},
        {"adjoint", "Solve the adjoint equation; write psi and Phi"},
        {"optimize", "Run the measure ascent; write the trace and the final report"},
        {"verify", "Check a stored tree and measure against the identities and bounds"},
        {"report", "Tabulate the support density of the measure"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? rootopt::exit_ok : rootopt::exit_validation;
    }
    spec.subcommand = app.get_subcommands().front()->get_name();
    if (*seed_opt) spec.seed = seed;
    return rootopt::run(spec, std::cout, std::cerr);
}
