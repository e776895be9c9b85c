#pragma once

// BPTT with sparse identity teacher forcing, RAdam, and the training loop.

#include "dsr/common.hpp"
#include "dsr/dynamics.hpp"
#include "dsr/plrnn.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace dsr {

/// Forcing interval meaning "force only the initial state".
inline constexpr int kNoForcing = std::numeric_limits<int>::max();

struct EvalConfig {
    long orbit_len = 10000;
    long transient = 500;
    /// Bins per dimension for the state-space divergence; 0 picks the default for N.
    int bins = 0;
    /// Per-bin pseudo-count added to both histograms.
    double pseudo_count = kDefaultPseudoCount;
    /// Gaussian smoothing of power spectra, in frequency bins.
    double spectrum_sigma = 20.0;
    int pred_steps = 20;
    int pred_starts = 1000;
    /// Reference rows used for the divergence (0 = whole reference series).
    long reference_len = 0;
};

struct TrainConfig {
    int m_dim = 50;
    int n_dim = 3;
    int seq_len = 200;
    int tau = 16;
    int batch_size = 16;
    int batches_per_epoch = 50;
    int epochs = 2000;
    double lr_start = 1e-2;
    double lr_end = 1e-5;
    double init_sigma = 0.01;
    int eval_every = 20;
    std::uint64_t seed = 0;
    /// Global gradient-norm clip; <= 0 disables clipping.
    double grad_clip = 10.0;
    /// Stop as soon as an evaluation reaches the threshold.
    bool stop_at_threshold = false;
    double threshold = 1.0;
    EvalConfig eval;

    void validate() const;
};

/// Hyperparameter presets: lorenz63, lorenz96, rossler, bursting_neuron, ecg.
TrainConfig train_preset(const std::string& name);
std::vector<std::string> train_preset_names();

/// Geometric annealing from lr_start (epoch 0) to lr_end (epoch epochs-1).
double learning_rate(const TrainConfig& cfg, int epoch);

struct ParamGrads {
    Vector a_diag;
    Matrix w;
    Vector h;

    static ParamGrads zeros(int m);
    double squared_norm() const;
    void scale(double f);
    bool all_finite() const;
};

PlrnnParams init_params(int m_dim, int n_dim, double init_sigma, std::uint64_t seed);

struct StfOutput {
    ColMatrix latents;      // T~ x M; row t is the state before forcing at t
    ColMatrix predictions;  // (T~-1) x N; observe(z_t) for t = 2..T~
};

/// Forward pass with forcing at t = 1 and every t = n*tau (1-based); the
/// prediction at a forced step is recorded before the replacement.
StfOutput stf_forward(const PlrnnParams& p, const TopologyMask& mask, const Matrix& seq, int tau);

/// Mean squared row error: sum ||pred - target||^2 / rows.
double mse_loss(const ColMatrix& predictions, const ColMatrix& targets);

/// Batch loss 1/(S (T~-1)) sum_p sum_t ||x_t - xhat_t||^2.
double batch_loss(const PlrnnParams& p, const TopologyMask& mask, const std::vector<Matrix>& batch,
                  int tau);

struct LossAndGrads {
    double loss = 0.0;
    ParamGrads grads;
};

/// Exact reverse-mode gradient of batch_loss. Throws TrainingFailure on non-finite values.
LossAndGrads bptt_grads(const PlrnnParams& p, const TopologyMask& mask,
                        const std::vector<Matrix>& batch, int tau);

struct RadamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct RadamState {
    ParamGrads m;
    ParamGrads v;
    long t = 0;

    static RadamState zeros(int m_dim);
};

/// One rectified-Adam update. Returns the new parameters; `state` is advanced.
PlrnnParams radam_step(RadamState& state, const PlrnnParams& params, const ParamGrads& grads,
                       double lr, const RadamConfig& cfg = {});

/// Start indices uniform in [0, T - seq_len] for every batch of every epoch.
std::vector<std::vector<long>> batch_schedule(long series_len, const TrainConfig& cfg, int epoch);

enum class TrainStatus { Ok, Failed };

struct TrainResult {
    PlrnnParams best_params;
    double best_d_stsp = std::numeric_limits<double>::infinity();
    std::vector<double> loss_history;
    std::vector<int> eval_epochs;
    std::vector<double> d_stsp_history;
    std::optional<int> epoch_of_threshold;
    int epoch_best = -1;
    TrainStatus status = TrainStatus::Ok;
    std::string failure;
};

/// Train `init` (masked by `mask`) on the dataset. A non-finite loss ends the run
/// with status Failed and whatever best checkpoint was found so far.
TrainResult train(const Dataset& data, const TopologyMask& mask, const TrainConfig& cfg,
                  const PlrnnParams& init);
TrainResult train(const Dataset& data, const TopologyMask& mask, const TrainConfig& cfg);

}  // namespace dsr
