#pragma once

// Benchmark dynamical systems, RK4 integration and training-set preparation.

#include "dsr/common.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dsr {

/// A T x N series of states sampled at a fixed time step.
struct Trajectory {
    Matrix data;  // rows are time points
    double dt = 1.0;
    std::string source;
    /// Set when the producer stopped early because the state left the finite range.
    bool diverged = false;

    long length() const { return data.rows(); }
    long dims() const { return data.cols(); }
};

struct Lorenz63 {
    double sigma = 10.0;
    double rho = 28.0;
    double beta = 8.0 / 3.0;
};

struct Lorenz96 {
    double forcing = 8.0;
    int dim = 5;
};

struct Rossler {
    double a = 0.2;
    double b = 0.2;
    double c = 5.7;
};

/// Three-variable biophysical neuron (V, n, h) with a slow M-current gate.
/// Units: mV, ms, uF, mS.
struct BurstingNeuron {
    double c_m = 6.0;
    double g_l = 8.0;
    double e_l = -80.0;
    double g_na = 20.0;
    double e_na = 60.0;
    double v_h_na = -20.0;
    double k_na = 15.0;
    double g_k = 10.0;
    double e_k = -90.0;
    double v_h_k = -25.0;
    double k_k = 5.0;
    double tau_n = 1.0;
    double g_m = 25.0;
    double v_h_m = -15.0;
    double k_m = 5.0;
    double tau_h = 200.0;
    double g_nmda = 10.2;
    double e_nmda = 0.0;

    double m_inf(double v) const;
    double n_inf(double v) const;
    double h_inf(double v) const;
};

using SystemParams = std::variant<Lorenz63, Lorenz96, Rossler, BurstingNeuron>;

struct SystemSpec {
    SystemParams params;
    double dt = 0.01;

    int state_dim() const;
    std::string name() const;
    /// Default initial condition for this system (overridable by callers).
    Vector default_initial_state() const;
};

/// Benchmark presets with the published parameter sets and step sizes.
SystemSpec lorenz63_spec();
SystemSpec lorenz96_spec(int dim = 5);
SystemSpec rossler_spec();
SystemSpec bursting_neuron_spec();

/// Preset by name: lorenz63, lorenz96, rossler, bursting_neuron.
/// Throws InvalidArgument listing the valid names.
SystemSpec system_preset(const std::string& name);
std::vector<std::string> system_preset_names();

Vector vector_field(const SystemSpec& spec, const Vector& state);

using VectorField = std::function<Vector(const Vector&)>;

/// Classic fixed-step fourth-order Runge-Kutta. Returns n_steps + 1 rows, row 0 = x0.
/// Throws Diverged on the first non-finite state.
Trajectory integrate_rk4(const VectorField& field, const Vector& x0, double dt, long n_steps);
Trajectory integrate_rk4(const SystemSpec& spec, const Vector& x0, long n_steps);

/// Integrate, drop the first `transient` steps, and keep `n_steps` rows.
Trajectory simulate(const SystemSpec& spec, const Vector& x0, long n_steps, long transient = 1000);

struct Dataset {
    Trajectory series;  // standardized, noise added
    Trajectory clean;   // standardized, before noise
    Vector per_dim_mean;
    Vector per_dim_std;
    double noise_pct = 0.0;
    std::uint64_t seed = 0;

    long length() const { return series.length(); }
    long dims() const { return series.dims(); }
};

/// Standardize each dimension (population statistics), then add i.i.d. Gaussian noise
/// with standard deviation `noise_pct` in standardized units.
Dataset make_dataset(const Trajectory& traj, double noise_pct, std::uint64_t seed);

/// Map standardized rows back into the original units.
Matrix destandardize(const Matrix& standardized, const Vector& mean, const Vector& std);

/// Normalized Gaussian kernel of `length` taps centered on the middle tap.
std::vector<double> gaussian_kernel(double sigma, int length);

/// Convolve with a normalized Gaussian kernel; borders replicate the edge sample.
std::vector<double> gaussian_smooth(std::span<const double> raw, double sigma, int window);

/// Time-delay embedding: row t = (x_t, x_{t+lag}, ..., x_{t+(dim-1)lag}).
Matrix delay_embed(std::span<const double> series, int embed_dim, int lag);

struct PreprocessOptions {
    double smooth_sigma = 6.0;
    int window = 49;
    int embed_dim = 5;
    int lag = 10;
};

/// Scalar recording pipeline: Gaussian smoothing, standardization, delay embedding.
Dataset preprocess_timeseries(std::span<const double> raw, const PreprocessOptions& opts = {});

}  // namespace dsr
