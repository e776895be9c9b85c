// dsr-topo: batch runner for reconstruction, pruning and topology experiments.

#include "dsr/experiment.hpp"
#include "dsr/io.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"Sparse PLRNN reconstruction, pruning and topology experiments"};
    std::string command, config, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    app.add_option("command", command, "simulate | train | prune | topo-train | analyze | report")
      ->required()
      ->check(CLI::IsMember(dsr::command_names()));
    app.add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out, "Output directory (overrides out_dir)");
    app.add_option("--seed", seed, "Master seed (overrides seed)");
    app.add_option("--threads", threads, "Worker threads; 1 gives bit-reproducible output")
      ->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    try {
        dsr::ExperimentConfig cfg = dsr::load_config(config);
        if (!cfg.command.empty() && cfg.command != command)
            fmt::print(stderr, "note: config command '{}' overridden by '{}'\n", cfg.command, command);
        cfg.command = command;
        if (!out.empty()) cfg.out_dir = out;
        if (seed) cfg.seed = *seed;
        if (threads) cfg.threads = *threads;
        const int status = dsr::run_experiment(cfg);
        if (status != 0) fmt::print(stderr, "some runs failed; see {}/events.jsonl\n", cfg.out_dir);
        return status;
    } catch (const dsr::ConfigError& e) {
        fmt::print(stderr, "configuration error: {}\n", e.what());
        return 64;
    } catch (const dsr::ParseError& e) {
        fmt::print(stderr, "parse error: {}\n", e.what());
        return 65;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
}
