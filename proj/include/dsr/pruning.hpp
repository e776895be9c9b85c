#pragma once

// Iterative pruning with magnitude, random and geometric importance, plus the
// additivity and reinitialization experiments.

#include "dsr/common.hpp"
#include "dsr/metrics.hpp"
#include "dsr/plrnn.hpp"
#include "dsr/training.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dsr {

enum class Criterion { Magnitude, Random, Geometric };

std::string to_string(Criterion c);
/// "magnitude", "random", "geometric"; throws InvalidArgument otherwise.
Criterion parse_criterion(const std::string& name);

inline constexpr double kMaskedScore = std::numeric_limits<double>::infinity();

struct ImportanceScores {
    Matrix scores;  // aligned with W; +inf for masked entries
    Criterion criterion = Criterion::Magnitude;
};

ImportanceScores importance_magnitude(const PlrnnParams& p, const TopologyMask& mask);
ImportanceScores importance_random(const TopologyMask& mask, std::uint64_t seed);

struct GeometricConfig {
    long orbit_len = 5000;
    long transient = 500;
    int bins = 0;
    double pseudo_count = kDefaultPseudoCount;
    /// Worker threads for candidate evaluation (results do not depend on it).
    int threads = 1;
};

/// |D_stsp(without w_ij) - D_stsp(baseline)| for every unmasked entry. A candidate
/// whose orbit diverges scores +inf. Throws InvalidArgument if the baseline diverges.
ImportanceScores importance_geometric(const PlrnnParams& p, const TopologyMask& mask,
                                      const Dataset& data, const GeometricConfig& cfg);

/// D_stsp of the model's orbit with the given entries removed from the mask.
double removal_d_stsp(const PlrnnParams& p, const TopologyMask& mask, const Dataset& data,
                      const GeometricConfig& cfg,
                      const std::vector<std::pair<int, int>>& removed);

/// Unmasked entries ordered by ascending score, ties by (row, col).
std::vector<std::pair<int, int>> prune_order(const ImportanceScores& scores,
                                             const TopologyMask& mask);

/// Entries kept after one pruning step: floor((1 - fraction) * remaining).
long remaining_after_prune(long remaining, double fraction);

/// Drop the lowest-scoring entries so that remaining_after_prune entries survive.
TopologyMask prune_mask(const ImportanceScores& scores, const TopologyMask& mask, double fraction);

struct PruneSchedule {
    double fraction_per_iter = 0.2;
    int n_iters = 12;
    int retrain_epochs = 500;

    void validate() const;
};

enum class IterationStatus { Ok, Failed };

struct PruneIteration {
    int iter = 0;
    TopologyMask mask;  // mask the model was trained with
    double sparsity = 0.0;
    EvalReport report;
    IterationStatus status = IterationStatus::Ok;
    std::string failure;
    int epoch_best = -1;
    PlrnnParams trained;
};

struct PruneTrace {
    Criterion criterion = Criterion::Magnitude;
    PlrnnParams theta0;
    std::vector<PruneIteration> iterations;
    /// Mask produced by the last successful scoring step.
    TopologyMask final_mask;
    bool complete = false;
};

struct PruneOptions {
    GeometricConfig geometric;
    /// Seed for the random criterion; iteration index is mixed in.
    std::uint64_t score_seed = 0;
};

/// Train from theta0 with the current mask, score, prune, reset to theta0; repeat.
/// A failed training halts the run with a partial trace.
PruneTrace iterative_prune(const Dataset& data, const TrainConfig& cfg, Criterion criterion,
                           const PruneSchedule& schedule, const PlrnnParams& theta0,
                           const PruneOptions& opts = {});

struct AdditivityRecord {
    std::pair<int, int> first;
    std::pair<int, int> second;
    double delta_first = 0.0;
    double delta_second = 0.0;
    double delta_joint = 0.0;
};

/// Signed D_stsp changes for removing each entry of a pair alone and both together.
std::vector<AdditivityRecord> additivity_check(
  const PlrnnParams& p, const TopologyMask& mask, const Dataset& data, const GeometricConfig& cfg,
  const std::vector<std::pair<std::pair<int, int>, std::pair<int, int>>>& pairs);

struct ReinitResult {
    std::vector<double> d_stsp_original;
    std::vector<double> d_stsp_redrawn;
    std::vector<bool> failed;
};

/// For each seed, train the fixed mask from theta0 and from a freshly drawn theta*.
ReinitResult reinit_experiment(const Dataset& data, const TrainConfig& cfg,
                               const TopologyMask& mask, const PlrnnParams& theta0, int n_seeds);

}  // namespace dsr
