// Command-line entry point: spikegan run <config> [--seed N] [--out DIR] [--preset paper|desk]
//
// Exit codes: 0 success, 1 configuration/data error, 2 numeric failure,
// 3 failed gradcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "spikegan/config.hpp"
#include "spikegan/experiments.hpp"

using namespace spikegan;

int main(int argc, char** argv) {
    CLI::App app{"Spiking GAN laboratory"};
    app.require_subcommand(1);
    auto* run = app.add_subcommand("run", "Run one experiment described by a config file");
    std::string config_path, out, preset;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    bool resume = false;
    run->add_option("config", config_path, "INI config file")->required();
    run->add_option("--seed", seed, "Override experiment.seed");
    run->add_option("--out", out, "Output directory (default runs/<id>-seed<seed>)");
    run->add_option("--preset", preset, "Apply a named preset section")->check(CLI::IsMember({"paper", "desk"}));
    run->add_flag("--resume", resume, "Continue from the checkpoints in the output directory");
    run->add_option("--set", sets, "Override a key: section.key=value (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (seed) sets.push_back("experiment.seed=" + std::to_string(*seed));
        const auto loaded = config::load(config_path, preset, sets);
        const auto dir = out.empty() ? experiments::default_out(loaded.config) : std::filesystem::path(out);
        std::cerr << "running " << loaded.config.id << " (seed " << loaded.config.seed << ") into " << dir.string()
                  << '\n';
        const auto outcome = experiments::run(loaded.config, loaded.base_dir, dir, resume);
        for (const auto& r : outcome.reports)
            std::printf("%-32s %.6g%s%s\n", r.metric.c_str(), r.value, r.note.empty() ? "" : "  ", r.note.c_str());
        if (outcome.exit_code == 3) std::fprintf(stderr, "gradcheck FAILED\n");
        return outcome.exit_code;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
