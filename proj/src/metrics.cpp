#include "dsr/metrics.hpp"

#include <fftw3.h>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

namespace dsr {
namespace {

std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

// |X_k|^2 for k = 0..n/2 of a real series.
std::vector<double> periodogram(std::span<const double> x)
{
    const int n = static_cast<int>(x.size());
    const int bins = n / 2 + 1;
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(bins);
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    }
    std::copy(x.begin(), x.end(), in);
    fftw_execute(plan);
    std::vector<double> power(bins);
    for (int k = 0; k < bins; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
    return power;
}

std::vector<double> smooth_and_normalize(std::vector<double> spectrum, double sigma)
{
    if (sigma > 0.0) {
        const int half = static_cast<int>(std::ceil(4.0 * sigma));
        std::vector<double> kernel(2 * half + 1);
        for (int i = -half; i <= half; ++i)
            kernel[i + half] = std::exp(-0.5 * i * i / (sigma * sigma));
        const int n = static_cast<int>(spectrum.size());
        std::vector<double> out(n, 0.0);
        for (int k = 0; k < n; ++k) {
            double acc = 0.0;
            for (int i = -half; i <= half; ++i) {
                const int src = k + i;
                if (src >= 0 && src < n) acc += kernel[i + half] * spectrum[src];
            }
            out[k] = acc;
        }
        spectrum = std::move(out);
    }
    const double total = std::accumulate(spectrum.begin(), spectrum.end(), 0.0);
    for (auto& v : spectrum) v /= total;
    return spectrum;
}

std::vector<double> column(const Matrix& m, long c, long rows)
{
    std::vector<double> out(rows);
    for (long t = 0; t < rows; ++t) out[t] = m(t, c);
    return out;
}

bool is_constant(std::span<const double> x)
{
    if (x.empty()) return true;
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return *hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi));
}

// Normalized delta at the zero-frequency bin.
std::vector<double> delta_spectrum(long rows)
{
    std::vector<double> out(rows / 2 + 1, 0.0);
    out[0] = 1.0;
    return out;
}

}  // namespace

std::uint64_t BinnedHistogram::total() const
{
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

int default_bins(int n_dims)
{
    if (n_dims < 2 || n_dims > 5)
        throw InvalidArgument(fmt::format("no default bin count for {} dimensions", n_dims));
    if (n_dims <= 3) return 30;
    if (n_dims == 4) return 12;
    return 8;
}

std::vector<std::vector<double>> bin_edges(const Matrix& reference, int k)
{
    if (k < 1) throw InvalidArgument("need at least one bin per dimension");
    if (reference.rows() < 1) throw InvalidArgument("empty reference for bin edges");
    std::vector<std::vector<double>> edges(reference.cols());
    for (long d = 0; d < reference.cols(); ++d) {
        double lo = reference.col(d).minCoeff();
        double hi = reference.col(d).maxCoeff();
        double range = hi - lo;
        if (!(range > 0.0)) range = 1.0;
        lo -= 0.05 * range;
        hi += 0.05 * range;
        edges[d].resize(k + 1);
        for (int b = 0; b <= k; ++b) edges[d][b] = lo + (hi - lo) * b / k;
    }
    return edges;
}

BinnedHistogram bin_states(const Matrix& states, const std::vector<std::vector<double>>& edges)
{
    if (static_cast<long>(edges.size()) != states.cols())
        throw InvalidArgument("bin edges do not match the state dimension");
    BinnedHistogram hist;
    hist.n_dims = static_cast<int>(edges.size());
    hist.k = static_cast<int>(edges.front().size()) - 1;
    hist.edges = edges;
    std::size_t cells = 1;
    for (int d = 0; d < hist.n_dims; ++d) cells *= static_cast<std::size_t>(hist.k);
    hist.counts.assign(cells, 0);
    for (long t = 0; t < states.rows(); ++t) {
        std::size_t index = 0, stride = 1;
        for (int d = 0; d < hist.n_dims; ++d) {
            const double lo = edges[d].front();
            const double width = (edges[d].back() - lo) / hist.k;
            long b = static_cast<long>(std::floor((states(t, d) - lo) / width));
            b = std::clamp(b, 0L, static_cast<long>(hist.k - 1));
            index += static_cast<std::size_t>(b) * stride;
            stride *= static_cast<std::size_t>(hist.k);
        }
        ++hist.counts[index];
    }
    return hist;
}

double kl_divergence(std::span<const double> p, std::span<const double> q)
{
    if (p.size() != q.size()) throw InvalidArgument("distributions differ in support size");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) kl += p[i] * std::log(p[i] / q[i]);
    return std::max(kl, 0.0);
}

double d_stsp_sentinel(int k, int n_dims) { return n_dims * std::log(static_cast<double>(k)); }

double d_stsp(const Trajectory& true_traj, const Trajectory& gen_traj, int k, double pseudo_count)
{
    const int n = static_cast<int>(true_traj.dims());
    if (n < 2 || n > 5)
        throw InvalidArgument(fmt::format(
          "binned state-space divergence supports 2 to 5 dimensions, got {}", n));
    if (gen_traj.length() > 0 && gen_traj.dims() != n)
        throw InvalidArgument("true and generated trajectories differ in dimension");
    if (true_traj.length() < 1) throw InvalidArgument("empty true trajectory");
    if (k <= 0) k = default_bins(n);
    if (gen_traj.diverged || gen_traj.length() == 0 || !gen_traj.data.allFinite())
        return d_stsp_sentinel(k, n);

    const auto edges = bin_edges(true_traj.data, k);
    const auto hp = bin_states(true_traj.data, edges);
    const auto hq = bin_states(gen_traj.data, edges);
    const double cells = static_cast<double>(hp.counts.size());
    const double tp = static_cast<double>(true_traj.length()) + pseudo_count * cells;
    const double tq = static_cast<double>(gen_traj.length()) + pseudo_count * cells;
    double kl = 0.0;
    for (std::size_t i = 0; i < hp.counts.size(); ++i) {
        const double p = (hp.counts[i] + pseudo_count) / tp;
        const double q = (hq.counts[i] + pseudo_count) / tq;
        if (p > 0.0) kl += p * std::log(p / q);
    }
    return std::max(kl, 0.0);
}

std::vector<double> power_spectrum(std::span<const double> series, double smooth_sigma_bins)
{
    if (series.size() < 64) throw InvalidArgument("power spectrum needs at least 64 samples");
    if (is_constant(series)) throw DegenerateData("constant series has no power spectrum");
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / series.size();
    std::vector<double> centered(series.begin(), series.end());
    for (auto& v : centered) v -= mean;
    auto power = periodogram(centered);
    power[0] = 0.0;
    return smooth_and_normalize(std::move(power), smooth_sigma_bins);
}

double hellinger(std::span<const double> f, std::span<const double> g)
{
    if (f.size() != g.size()) throw InvalidArgument("spectra differ in length");
    double bc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) bc += std::sqrt(std::max(f[i], 0.0) * std::max(g[i], 0.0));
    return std::sqrt(std::clamp(1.0 - bc, 0.0, 1.0));
}

double d_hellinger(const Trajectory& true_traj, const Trajectory& gen_traj,
                   double smooth_sigma_bins)
{
    if (gen_traj.diverged || gen_traj.length() == 0 || !gen_traj.data.allFinite()) return 1.0;
    if (true_traj.dims() != gen_traj.dims())
        throw InvalidArgument("true and generated trajectories differ in dimension");
    const long rows = std::min(true_traj.length(), gen_traj.length());
    if (rows < 64) return 1.0;
    double total = 0.0;
    for (long d = 0; d < true_traj.dims(); ++d) {
        const auto x = column(true_traj.data, d, rows);
        const auto y = column(gen_traj.data, d, rows);
        const auto f = power_spectrum(x, smooth_sigma_bins);
        const auto g = is_constant(y) ? delta_spectrum(rows) : power_spectrum(y, smooth_sigma_bins);
        total += hellinger(f, g);
    }
    return total / static_cast<double>(true_traj.dims());
}

double pred_error(const PlrnnParams& p, const TopologyMask& mask, const Matrix& data,
                  const PredErrorOptions& opts)
{
    if (opts.n_steps < 1) throw InvalidArgument("prediction horizon must be >= 1");
    if (data.cols() != p.n_dim) throw InvalidArgument("dataset width does not match n_dim");
    const long last_start = data.rows() - 1 - opts.n_steps;
    if (last_start < 0) throw InvalidArgument("dataset too short for the prediction horizon");
    const long starts = std::min<long>(std::max(opts.n_starts, 1), last_start + 1);

    // All starts advance together as columns of one batch.
    const StepKernel kernel(p, mask);
    ColMatrix z = ColMatrix::Zero(p.m_dim, starts);
    std::vector<long> origin(starts);
    for (long s = 0; s < starts; ++s) {
        origin[s] = starts == 1 ? 0 : (last_start * s) / (starts - 1);
        z.col(s).head(p.n_dim) = data.row(origin[s]).transpose();
    }
    ColMatrix next;
    for (int k = 0; k < opts.n_steps; ++k) {
        kernel.step_batch(z, next);
        z.swap(next);
    }
    double sq = 0.0;
    for (long s = 0; s < starts; ++s) {
        const auto diff = z.col(s).head(p.n_dim) - data.row(origin[s] + opts.n_steps).transpose();
        const double e = diff.squaredNorm();
        sq += std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
    }
    return sq / (static_cast<double>(starts) * p.n_dim);
}

const Matrix& evaluation_reference(const Dataset& data)
{
    return data.clean.length() > 0 ? data.clean.data : data.series.data;
}

Trajectory evaluation_orbit(const StepKernel& kernel, const Dataset& data, const EvalConfig& cfg)
{
    const Matrix& ref = evaluation_reference(data);
    const Vector z1 = forced_initial_state(ref.row(0).transpose(), kernel.m_dim());
    try {
        return generate(kernel, z1, cfg.orbit_len, GenerateOptions{cfg.transient});
    } catch (const Diverged&) {
        Trajectory t;
        t.diverged = true;
        t.data.resize(0, kernel.n_dim());
        return t;
    }
}

namespace {

Trajectory reference_trajectory(const Dataset& data, const EvalConfig& cfg)
{
    const Matrix& ref = evaluation_reference(data);
    Trajectory t;
    t.dt = data.series.dt;
    const long rows = cfg.reference_len > 0 ? std::min(cfg.reference_len, ref.rows()) : ref.rows();
    t.data = ref.topRows(rows);
    return t;
}

}  // namespace

double evaluate_d_stsp(const PlrnnParams& p, const TopologyMask& mask, const Dataset& data,
                       const EvalConfig& cfg)
{
    const StepKernel kernel(p, mask);
    const auto orbit = evaluation_orbit(kernel, data, cfg);
    return d_stsp(reference_trajectory(data, cfg), orbit, cfg.bins, cfg.pseudo_count);
}

EvalReport evaluate(const PlrnnParams& p, const TopologyMask& mask, const Dataset& data,
                    const EvalConfig& cfg)
{
    const StepKernel kernel(p, mask);
    const auto orbit = evaluation_orbit(kernel, data, cfg);
    const auto reference = reference_trajectory(data, cfg);
    EvalReport r;
    r.sparsity = mask.sparsity();
    r.diverged = orbit.diverged;
    r.d_stsp = d_stsp(reference, orbit, cfg.bins, cfg.pseudo_count);
    r.d_hellinger = d_hellinger(reference, orbit, cfg.spectrum_sigma);
    r.pred_error_20 = pred_error(p, mask, data.series.data,
                                 PredErrorOptions{cfg.pred_steps, cfg.pred_starts});
    return r;
}

}  // namespace dsr
