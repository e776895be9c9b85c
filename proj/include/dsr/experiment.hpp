#pragma once

// Config-driven batch runner behind the dsr-topo command line tool.

#include "dsr/dynamics.hpp"
#include "dsr/graphs.hpp"
#include "dsr/pruning.hpp"
#include "dsr/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dsr {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataSpec {
    /// Benchmark system preset; ignored when `dataset` or `raw_series` is set.
    std::string system = "lorenz63";
    long n_samples = 100000;
    long transient = 1000;
    double noise_pct = 0.05;
    std::vector<double> initial_state;  // empty: system default
    /// Sidecar JSON of a dataset written by `simulate`.
    std::string dataset;
    /// Raw 1-D series (e.g. ECG) run through the smoothing/embedding pipeline.
    std::string raw_series;
    PreprocessOptions preprocess;
};

struct TopologySpec {
    std::string kind;  // erdos_renyi, watts_strogatz, barabasi_albert, geohub
    int k = 0;         // degree parameter; 0 derives it from the target entry count
    double p = 0.1;    // rewiring probability (watts_strogatz)
    int n_readout = 0; // geohub readout nodes; 0 uses n_dim
};

struct ExperimentConfig {
    std::string command;
    DataSpec data;
    std::string preset = "lorenz63";
    TrainConfig train;
    int n_seeds = 1;
    /// Optional mask file applied by `train`.
    std::string mask;

    std::vector<std::string> criteria{"geometric", "magnitude", "random"};
    PruneSchedule schedule;
    GeometricConfig geometric;
    /// Fixed-mask retrainings from theta0 and a redrawn theta per pruning trace.
    int reinit_seeds = 0;

    std::vector<TopologySpec> topologies;
    long target_nnz = 300;

    std::vector<std::string> masks;
    int n_readout = 0;  // 0 uses n_dim
    int n_random_refs = 10;

    std::vector<std::string> inputs;

    std::uint64_t seed = 0;
    int threads = 1;
    std::string out_dir = "out";
};

std::vector<std::string> command_names();

/// Reads a JSON config. Training values start from `preset` and are overridden by the
/// keys of the "train" object. Unknown keys are rejected.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& json_text);
/// Fully resolved config as JSON text.
std::string config_snapshot(const ExperimentConfig& cfg);

/// Stochastic components get their seeds from the master seed and a component tag.
std::uint64_t component_seed(const ExperimentConfig& cfg, const std::string& tag, std::uint64_t index);

Dataset build_dataset(const ExperimentConfig& cfg);
DirectedGraph build_topology(const TopologySpec& spec, int m_dim, int n_dim, long target_nnz,
                             std::uint64_t seed);

/// Runs cfg.command and writes every product below cfg.out_dir. Returns 0 on success,
/// 2 when some runs failed (their outputs are flagged).
int run_experiment(const ExperimentConfig& cfg);

}  // namespace dsr
