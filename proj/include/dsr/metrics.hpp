#pragma once

// Reconstruction quality measures: binned state-space KL divergence, spectral
// Hellinger distance and n-step prediction error.

#include "dsr/common.hpp"
#include "dsr/dynamics.hpp"
#include "dsr/plrnn.hpp"
#include "dsr/training.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace dsr {

struct BinnedHistogram {
    std::vector<std::uint32_t> counts;  // size k^N, dimension 0 varies fastest
    std::vector<std::vector<double>> edges;
    int k = 0;
    int n_dims = 0;

    std::uint64_t total() const;
};

/// 30 bins per dimension up to N = 3, 12 for N = 4, 8 for N = 5.
int default_bins(int n_dims);

/// Per-dimension equal-width edges spanning [min, max] of `reference` widened by 5% of
/// the range on each side.
std::vector<std::vector<double>> bin_edges(const Matrix& reference, int k);

/// Count rows into the grid; points outside the edges land in the boundary bins.
BinnedHistogram bin_states(const Matrix& states, const std::vector<std::vector<double>>& edges);

/// KL(p || q) in nats for two distributions on the same support.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Value assigned to a diverged or empty generated orbit: ln(k^N).
double d_stsp_sentinel(int k, int n_dims);

/// Binned KL divergence between the state distributions of the true and generated
/// series. Both histograms get `pseudo_count` added per bin before normalization.
double d_stsp(const Trajectory& true_traj, const Trajectory& gen_traj, int k = 0,
              double pseudo_count = kDefaultPseudoCount);

/// Normalized, Gaussian-smoothed periodogram of the mean-removed series over the
/// frequency bins 0..n/2. Throws DegenerateData for a constant series.
std::vector<double> power_spectrum(std::span<const double> series, double smooth_sigma_bins);

/// sqrt(1 - sum sqrt(f g)), clamped to [0, 1].
double hellinger(std::span<const double> f, std::span<const double> g);

/// Mean over dimensions of the Hellinger distance between power spectra. Series are
/// truncated to the shorter length. Diverged generation gives 1.
double d_hellinger(const Trajectory& true_traj, const Trajectory& gen_traj,
                   double smooth_sigma_bins = 20.0);

struct PredErrorOptions {
    int n_steps = 20;
    int n_starts = 1000;
};

/// Mean squared n-step-ahead error from forced initial states at evenly spaced starts.
double pred_error(const PlrnnParams& p, const TopologyMask& mask, const Matrix& data,
                  const PredErrorOptions& opts = {});

struct EvalReport {
    double d_stsp = 0.0;
    double d_hellinger = 0.0;
    double pred_error_20 = 0.0;
    double sparsity = 0.0;
    bool diverged = false;
};

/// Reference series the generated orbits are compared against.
const Matrix& evaluation_reference(const Dataset& data);

/// Free-running orbit seeded from the first reference row.
Trajectory evaluation_orbit(const StepKernel& kernel, const Dataset& data, const EvalConfig& cfg);

/// State-space divergence of a single model against the dataset.
double evaluate_d_stsp(const PlrnnParams& p, const TopologyMask& mask, const Dataset& data,
                       const EvalConfig& cfg);

/// All measures for one model.
EvalReport evaluate(const PlrnnParams& p, const TopologyMask& mask, const Dataset& data,
                    const EvalConfig& cfg);

}  // namespace dsr
