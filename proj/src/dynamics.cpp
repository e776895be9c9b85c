#include "dsr/dynamics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace dsr {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace

double BurstingNeuron::m_inf(double v) const { return sigmoid((v - v_h_na) / k_na); }
double BurstingNeuron::n_inf(double v) const { return sigmoid((v - v_h_k) / k_k); }
double BurstingNeuron::h_inf(double v) const { return sigmoid((v - v_h_m) / k_m); }

int SystemSpec::state_dim() const
{
    return std::visit(overloaded{[](const Lorenz96& p) { return p.dim; },
                                 [](const auto&) { return 3; }},
                      params);
}

std::string SystemSpec::name() const
{
    return std::visit(overloaded{[](const Lorenz63&) { return std::string("lorenz63"); },
                                 [](const Lorenz96&) { return std::string("lorenz96"); },
                                 [](const Rossler&) { return std::string("rossler"); },
                                 [](const BurstingNeuron&) {
                                     return std::string("bursting_neuron");
                                 }},
                      params);
}

Vector SystemSpec::default_initial_state() const
{
    return std::visit(overloaded{[](const Lorenz63&) { return Vector(Vector::Constant(3, 0.1)); },
                                 [](const Lorenz96& p) {
                                     Vector x = Vector::Constant(p.dim, p.forcing);
                                     x(0) += 0.01;
                                     return x;
                                 },
                                 [](const Rossler&) { return Vector(Vector::Ones(3)); },
                                 [](const BurstingNeuron& p) {
                                     Vector x(3);
                                     x << -60.0, p.n_inf(-60.0), p.h_inf(-60.0);
                                     return x;
                                 }},
                      params);
}

SystemSpec lorenz63_spec() { return {Lorenz63{}, 0.01}; }

SystemSpec lorenz96_spec(int dim)
{
    if (dim < 4) throw InvalidArgument("lorenz96 needs at least 4 dimensions");
    return {Lorenz96{8.0, dim}, 0.04};
}

SystemSpec rossler_spec() { return {Rossler{}, 0.08}; }

SystemSpec bursting_neuron_spec() { return {BurstingNeuron{}, 0.05}; }

std::vector<std::string> system_preset_names()
{
    return {"lorenz63", "lorenz96", "rossler", "bursting_neuron"};
}

SystemSpec system_preset(const std::string& name)
{
    if (name == "lorenz63") return lorenz63_spec();
    if (name == "lorenz96") return lorenz96_spec();
    if (name == "rossler") return rossler_spec();
    if (name == "bursting_neuron") return bursting_neuron_spec();
    throw InvalidArgument(fmt::format("unknown system preset '{}'; valid presets: {}", name,
                                      fmt::join(system_preset_names(), ", ")));
}

Vector vector_field(const SystemSpec& spec, const Vector& x)
{
    if (x.size() != spec.state_dim())
        throw InvalidArgument(fmt::format("{} state has {} components, expected {}", spec.name(),
                                          x.size(), spec.state_dim()));
    return std::visit(
      overloaded{
        [&](const Lorenz63& p) {
            Vector d(3);
            d << p.sigma * (x(1) - x(0)), x(0) * (p.rho - x(2)) - x(1), x(0) * x(1) - p.beta * x(2);
            return d;
        },
        [&](const Lorenz96& p) {
            const int n = p.dim;
            Vector d(n);
            for (int i = 0; i < n; ++i) {
                const double next = x((i + 1) % n);
                const double prev = x((i + n - 1) % n);
                const double prev2 = x((i + n - 2) % n);
                d(i) = (next - prev2) * prev - x(i) + p.forcing;
            }
            return d;
        },
        [&](const Rossler& p) {
            Vector d(3);
            d << -x(1) - x(2), x(0) + p.a * x(1), p.b + x(2) * (x(0) - p.c);
            return d;
        },
        [&](const BurstingNeuron& p) {
            const double v = x(0), n = x(1), h = x(2);
            const double currents = p.g_l * (v - p.e_l) + p.g_na * p.m_inf(v) * (v - p.e_na) +
                                    p.g_k * n * (v - p.e_k) + p.g_m * h * (v - p.e_k) +
                                    p.g_nmda / (1.0 + 0.33 * std::exp(-0.0625 * v)) * (v - p.e_nmda);
            Vector d(3);
            d << -currents / p.c_m, (p.n_inf(v) - n) / p.tau_n, (p.h_inf(v) - h) / p.tau_h;
            return d;
        }},
      spec.params);
}

Trajectory integrate_rk4(const VectorField& f, const Vector& x0, double dt, long n_steps)
{
    if (n_steps < 1) throw InvalidArgument("integrate_rk4 needs n_steps >= 1");
    if (!(dt > 0.0)) throw InvalidArgument("integrate_rk4 needs dt > 0");
    if (!all_finite(x0)) throw InvalidArgument("integrate_rk4 initial state is not finite");

    Trajectory out;
    out.dt = dt;
    out.data.resize(n_steps + 1, x0.size());
    out.data.row(0) = x0.transpose();
    Vector x = x0;
    for (long t = 1; t <= n_steps; ++t) {
        const Vector k1 = f(x);
        const Vector k2 = f(x + 0.5 * dt * k1);
        const Vector k3 = f(x + 0.5 * dt * k2);
        const Vector k4 = f(x + dt * k3);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!all_finite(x))
            throw Diverged(fmt::format("RK4 state became non-finite at step {}", t), t - 1);
        out.data.row(t) = x.transpose();
    }
    return out;
}

Trajectory integrate_rk4(const SystemSpec& spec, const Vector& x0, long n_steps)
{
    if (x0.size() != spec.state_dim())
        throw InvalidArgument(fmt::format("{} initial state has {} components, expected {}",
                                          spec.name(), x0.size(), spec.state_dim()));
    auto traj = integrate_rk4([&spec](const Vector& x) { return vector_field(spec, x); }, x0,
                              spec.dt, n_steps);
    traj.source = spec.name();
    return traj;
}

Trajectory simulate(const SystemSpec& spec, const Vector& x0, long n_steps, long transient)
{
    if (transient < 0) throw InvalidArgument("transient must be >= 0");
    auto full = integrate_rk4(spec, x0, n_steps + transient - 1);
    Trajectory out;
    out.dt = full.dt;
    out.source = full.source;
    out.data = full.data.bottomRows(n_steps);
    return out;
}

Dataset make_dataset(const Trajectory& traj, double noise_pct, std::uint64_t seed)
{
    if (traj.length() < 2) throw InvalidArgument("dataset needs at least two time points");
    if (!traj.data.allFinite()) throw InvalidArgument("trajectory contains non-finite values");
    if (noise_pct < 0.0 || noise_pct > 1.0) throw InvalidArgument("noise_pct must lie in [0, 1]");

    const long n = traj.dims();
    const double rows = static_cast<double>(traj.length());
    Dataset ds;
    ds.noise_pct = noise_pct;
    ds.seed = seed;
    ds.per_dim_mean = traj.data.colwise().mean().transpose();
    ds.per_dim_std.resize(n);
    Matrix standardized(traj.length(), n);
    for (long d = 0; d < n; ++d) {
        const auto centered = traj.data.col(d).array() - ds.per_dim_mean(d);
        const double sd = std::sqrt(centered.square().sum() / rows);
        if (!(sd > 0.0) || sd < 1e-12 * std::max(1.0, std::abs(ds.per_dim_mean(d))))
            throw DegenerateData(fmt::format("dimension {} has zero variance", d));
        ds.per_dim_std(d) = sd;
        standardized.col(d) = centered / sd;
    }

    ds.clean.data = standardized;
    ds.clean.dt = traj.dt;
    ds.clean.source = traj.source;
    ds.series = ds.clean;
    if (noise_pct > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, noise_pct);
        for (long t = 0; t < standardized.rows(); ++t)
            for (long d = 0; d < n; ++d) ds.series.data(t, d) += noise(rng);
    }
    return ds;
}

Matrix destandardize(const Matrix& standardized, const Vector& mean, const Vector& std)
{
    if (standardized.cols() != mean.size() || mean.size() != std.size())
        throw InvalidArgument("standardization statistics do not match the data width");
    Matrix out = standardized;
    for (long d = 0; d < out.cols(); ++d)
        out.col(d) = out.col(d).array() * std(d) + mean(d);
    return out;
}

std::vector<double> gaussian_kernel(double sigma, int length)
{
    if (!(sigma > 0.0)) throw InvalidArgument("kernel sigma must be positive");
    if (length < 1 || length % 2 == 0) throw InvalidArgument("kernel length must be odd");
    const int half = length / 2;
    std::vector<double> k(length);
    double sum = 0.0;
    for (int i = 0; i < length; ++i) {
        const double x = i - half;
        k[i] = std::exp(-0.5 * x * x / (sigma * sigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

std::vector<double> gaussian_smooth(std::span<const double> raw, double sigma, int window)
{
    const auto kernel = gaussian_kernel(sigma, window);
    const long n = static_cast<long>(raw.size());
    const long half = window / 2;
    std::vector<double> out(raw.size(), 0.0);
    for (long t = 0; t < n; ++t) {
        double acc = 0.0;
        for (long i = 0; i < window; ++i) {
            const long src = std::clamp(t + i - half, 0L, n - 1);
            acc += kernel[i] * raw[src];
        }
        out[t] = acc;
    }
    return out;
}

Matrix delay_embed(std::span<const double> series, int embed_dim, int lag)
{
    if (embed_dim < 1) throw InvalidArgument("embedding dimension must be >= 1");
    if (lag < 1) throw InvalidArgument("embedding lag must be >= 1");
    const long span = static_cast<long>(embed_dim - 1) * lag;
    const long rows = static_cast<long>(series.size()) - span;
    if (rows < 2) throw InvalidArgument("series too short for the requested embedding");
    Matrix out(rows, embed_dim);
    for (long t = 0; t < rows; ++t)
        for (int d = 0; d < embed_dim; ++d) out(t, d) = series[t + static_cast<long>(d) * lag];
    return out;
}

Dataset preprocess_timeseries(std::span<const double> raw, const PreprocessOptions& opts)
{
    if (!(opts.smooth_sigma > 0.0)) throw InvalidArgument("smooth_sigma must be positive");
    if (opts.lag < 1) throw InvalidArgument("lag must be >= 1");
    if (opts.embed_dim < 1) throw InvalidArgument("embed_dim must be >= 1");
    const long needed = opts.window + static_cast<long>(opts.embed_dim - 1) * opts.lag;
    if (static_cast<long>(raw.size()) <= needed)
        throw InvalidArgument(fmt::format("series of length {} is too short; need more than {}",
                                          raw.size(), needed));
    for (double v : raw)
        if (!std::isfinite(v)) throw InvalidArgument("raw series contains non-finite values");

    auto smoothed = gaussian_smooth(raw, opts.smooth_sigma, opts.window);
    const double n = static_cast<double>(smoothed.size());
    double mean = 0.0;
    for (double v : smoothed) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : smoothed) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
        throw DegenerateData("smoothed series has zero variance");
    for (auto& v : smoothed) v = (v - mean) / sd;

    Dataset ds;
    ds.series.data = delay_embed(smoothed, opts.embed_dim, opts.lag);
    ds.series.dt = 1.0;
    ds.series.source = "timeseries";
    ds.clean = ds.series;
    ds.per_dim_mean = Vector::Constant(opts.embed_dim, mean);
    ds.per_dim_std = Vector::Constant(opts.embed_dim, sd);
    return ds;
}

}  // namespace dsr
