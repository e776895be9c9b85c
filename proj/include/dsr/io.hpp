#pragma once

// File formats: trajectory CSV with JSON sidecar, raw series, mask files,
// parameter checkpoints and the result tables.

#include "dsr/common.hpp"
#include "dsr/dynamics.hpp"
#include "dsr/metrics.hpp"
#include "dsr/plrnn.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace dsr::io {

namespace fs = std::filesystem;

/// Shortest decimal form that reads back to the same double.
std::string format_exact(double v);
/// Fixed-width form for result tables.
std::string format_result(double v);

/// Header `t,dim0,...`; column t is the row index times dt.
void write_trajectory_csv(const fs::path& path, const Trajectory& traj);
Trajectory read_trajectory_csv(const fs::path& path, double dt);

/// Writes <stem>.csv, <stem>.clean.csv and the <stem>.json sidecar.
void write_dataset(const fs::path& stem, const Dataset& data);
/// Reads a dataset back from its sidecar path.
Dataset read_dataset(const fs::path& sidecar);

/// Single-column CSV (an optional non-numeric header line is skipped) or one value per line.
std::vector<double> read_raw_series(const fs::path& path);

/// First line `M=<m> sparsity=<s>`, then M rows of 0/1 characters.
void write_mask(const fs::path& path, const TopologyMask& mask);
TopologyMask read_mask(const fs::path& path);
TopologyMask parse_mask(const std::string& text, const std::string& origin = "<string>");

void write_checkpoint(const fs::path& path, const PlrnnParams& p, const TopologyMask& mask);
struct Checkpoint {
    PlrnnParams params;
    TopologyMask mask;
};
Checkpoint read_checkpoint(const fs::path& path);

/// Minimal CSV writer; fields are written as given.
class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::vector<std::string>& header);
    void row(const std::vector<std::string>& fields);

private:
    std::ofstream out_;
    std::size_t width_;
};

inline const std::vector<std::string> kResultsHeader = {
  "run_id", "criterion", "sparsity", "d_stsp", "d_hellinger", "pe20", "diverged", "epoch_best"};
inline const std::vector<std::string> kTraceHeader = {"iter",        "sparsity", "d_stsp",
                                                      "d_hellinger", "pe20",     "status"};
inline const std::vector<std::string> kGraphStatsHeader = {
  "graph_id", "n", "edges", "L", "C", "swi", "unreachable_frac", "max_in_deg", "max_out_deg"};

std::vector<std::string> results_row(const std::string& run_id, const std::string& criterion,
                                     const EvalReport& r, int epoch_best);

}  // namespace dsr::io
