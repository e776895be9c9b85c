#include "dsr/pruning.hpp"

#include "dsr/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

namespace dsr {

std::string to_string(Criterion c)
{
    switch (c) {
    case Criterion::Magnitude: return "magnitude";
    case Criterion::Random: return "random";
    case Criterion::Geometric: return "geometric";
    }
    return "unknown";
}

Criterion parse_criterion(const std::string& name)
{
    if (name == "magnitude") return Criterion::Magnitude;
    if (name == "random") return Criterion::Random;
    if (name == "geometric") return Criterion::Geometric;
    throw InvalidArgument(
      fmt::format("unknown pruning criterion '{}'; valid: geometric, magnitude, random", name));
}

ImportanceScores importance_magnitude(const PlrnnParams& p, const TopologyMask& mask)
{
    if (mask.size() != p.m_dim) throw InvalidArgument("mask size does not match m_dim");
    ImportanceScores s{Matrix::Constant(p.m_dim, p.m_dim, kMaskedScore), Criterion::Magnitude};
    for (int i = 0; i < p.m_dim; ++i)
        for (int j = 0; j < p.m_dim; ++j)
            if (mask(i, j)) s.scores(i, j) = std::abs(p.w(i, j));
    return s;
}

ImportanceScores importance_random(const TopologyMask& mask, std::uint64_t seed)
{
    const int m = mask.size();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImportanceScores s{Matrix::Constant(m, m, kMaskedScore), Criterion::Random};
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const double draw = u(rng);
            if (mask(i, j)) s.scores(i, j) = draw;
        }
    return s;
}

namespace {

using Removal = std::vector<std::pair<int, int>>;

constexpr long kCandidateBlock = 64;

struct RemovalOrbit {
    Trajectory orbit;
    // False when every correction was exactly zero, so the orbit is the baseline's.
    bool touched = false;
};

// Free-running orbits for many variants of one model, each removing a few mask
// entries. Variants advance together: one dense product per step, then a per-column
// correction for the removed couplings.
std::vector<RemovalOrbit> removal_orbits(const PlrnnParams& p, const TopologyMask& mask,
                                       const Vector& z1, const std::vector<Removal>& variants,
                                       long transient, long len, int threads)
{
    const int m = p.m_dim, n = p.n_dim;
    const ColMatrix w_eff = p.w.cwiseProduct(mask.as_matrix());
    std::vector<RemovalOrbit> out(variants.size());
    const long blocks = (static_cast<long>(variants.size()) + kCandidateBlock - 1) / kCandidateBlock;

    parallel_for(blocks, threads, [&](long block) {
        const long first = block * kCandidateBlock;
        const long width = std::min<long>(kCandidateBlock, static_cast<long>(variants.size()) - first);
        ColMatrix z = z1.replicate(1, width);
        ColMatrix phi(m, width), y(m, width);
        std::vector<char> dead(width, 0), touched(width, 0);
        std::vector<Matrix> records(width, Matrix(len, n));
        for (long t = 0; t < transient + len; ++t) {
            const Eigen::RowVectorXd mu = z.colwise().mean();
            phi = (z.rowwise() - mu).cwiseMax(0.0);
            y.noalias() = w_eff * phi;
            for (long c = 0; c < width; ++c)
                for (const auto& [i, j] : variants[first + c]) {
                    const double removed = w_eff(i, j) * phi(j, c);
                    if (removed != 0.0) touched[c] = 1;
                    y(i, c) -= removed;
                }
            z = p.a_diag.asDiagonal() * z + y;
            z.colwise() += p.h;
            for (long c = 0; c < width; ++c) {
                if (dead[c]) {
                    z.col(c).setZero();
                    continue;
                }
                if (!z.col(c).allFinite() || z.col(c).cwiseAbs().maxCoeff() > kDivergenceBound) {
                    dead[c] = 1;
                    z.col(c).setZero();
                    continue;
                }
                if (t >= transient) records[c].row(t - transient) = z.col(c).head(n).transpose();
            }
        }
        for (long c = 0; c < width; ++c) {
            out[first + c].touched = touched[c] != 0;
            Trajectory& tr = out[first + c].orbit;
            tr.source = "plrnn";
            tr.diverged = dead[c] != 0;
            if (!tr.diverged) tr.data = std::move(records[c]);
            else tr.data.resize(0, n);
        }
    });
    return out;
}

Vector orbit_start(const PlrnnParams& p, const Dataset& data)
{
    return forced_initial_state(evaluation_reference(data).row(0).transpose(), p.m_dim);
}

Trajectory reference_of(const Dataset& data)
{
    Trajectory t;
    t.data = evaluation_reference(data);
    t.dt = data.series.dt;
    return t;
}

void check_removals(const TopologyMask& mask, const Removal& removed)
{
    for (const auto& [i, j] : removed) {
        if (i < 0 || j < 0 || i >= mask.size() || j >= mask.size())
            throw InvalidArgument(fmt::format("entry ({}, {}) is outside the mask", i, j));
        if (!mask(i, j)) throw InvalidArgument(fmt::format("entry ({}, {}) is already masked", i, j));
    }
}

}  // namespace

ImportanceScores importance_geometric(const PlrnnParams& p, const TopologyMask& mask,
                                      const Dataset& data, const GeometricConfig& cfg)
{
    if (mask.size() != p.m_dim) throw InvalidArgument("mask size does not match m_dim");
    ImportanceScores s{Matrix::Constant(p.m_dim, p.m_dim, kMaskedScore), Criterion::Geometric};
    const Trajectory reference = reference_of(data);
    const Vector z1 = orbit_start(p, data);

    std::vector<Removal> variants{{}};
    std::vector<std::pair<int, int>> entries;
    for (int i = 0; i < p.m_dim; ++i)
        for (int j = 0; j < p.m_dim; ++j) {
            if (!mask(i, j)) continue;
            // Removing a zero weight leaves the orbit unchanged.
            if (p.w(i, j) == 0.0) {
                s.scores(i, j) = 0.0;
                continue;
            }
            entries.emplace_back(i, j);
            variants.push_back({{i, j}});
        }
    const auto orbits = removal_orbits(p, mask, z1, variants, cfg.transient, cfg.orbit_len,
                                       cfg.threads);
    if (orbits.front().orbit.diverged)
        throw InvalidArgument("baseline model diverges; geometric importance is undefined");
    const double baseline = d_stsp(reference, orbits.front().orbit, cfg.bins, cfg.pseudo_count);
    std::vector<double> d(entries.size(), baseline);
    parallel_for(static_cast<long>(entries.size()), cfg.threads, [&](long e) {
        const auto& r = orbits[e + 1];
        if (r.touched) d[e] = d_stsp(reference, r.orbit, cfg.bins, cfg.pseudo_count);
    });
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const auto [i, j] = entries[e];
        s.scores(i, j) = orbits[e + 1].orbit.diverged ? kMaskedScore : std::abs(d[e] - baseline);
    }
    return s;
}

double removal_d_stsp(const PlrnnParams& p, const TopologyMask& mask, const Dataset& data,
                      const GeometricConfig& cfg, const std::vector<std::pair<int, int>>& removed)
{
    check_removals(mask, removed);
    const auto orbits =
      removal_orbits(p, mask, orbit_start(p, data), {removed}, cfg.transient, cfg.orbit_len, 1);
    return d_stsp(reference_of(data), orbits.front().orbit, cfg.bins, cfg.pseudo_count);
}

std::vector<std::pair<int, int>> prune_order(const ImportanceScores& scores,
                                             const TopologyMask& mask)
{
    std::vector<std::tuple<double, int, int>> keyed;
    for (int i = 0; i < mask.size(); ++i)
        for (int j = 0; j < mask.size(); ++j)
            if (mask(i, j)) keyed.emplace_back(scores.scores(i, j), i, j);
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::pair<int, int>> out;
    out.reserve(keyed.size());
    for (const auto& [score, i, j] : keyed) out.emplace_back(i, j);
    return out;
}

long remaining_after_prune(long remaining, double fraction)
{
    return static_cast<long>(std::floor((1.0 - fraction) * static_cast<double>(remaining) + 1e-9));
}

TopologyMask prune_mask(const ImportanceScores& scores, const TopologyMask& mask, double fraction)
{
    if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidArgument("prune fraction must lie in (0, 1)");
    if (scores.scores.rows() != mask.size()) throw InvalidArgument("scores do not match the mask");
    const auto order = prune_order(scores, mask);
    const long remove = static_cast<long>(order.size()) -
                        remaining_after_prune(static_cast<long>(order.size()), fraction);
    TopologyMask out = mask;
    for (long e = 0; e < remove; ++e) out.set(order[e].first, order[e].second, false);
    return out;
}

void PruneSchedule::validate() const
{
    if (!(fraction_per_iter > 0.0 && fraction_per_iter < 1.0))
        throw InvalidArgument("fraction_per_iter must lie in (0, 1)");
    if (n_iters < 1) throw InvalidArgument("n_iters must be >= 1");
    if (retrain_epochs < 1) throw InvalidArgument("retrain_epochs must be >= 1");
}

PruneTrace iterative_prune(const Dataset& data, const TrainConfig& cfg, Criterion criterion,
                           const PruneSchedule& schedule, const PlrnnParams& theta0,
                           const PruneOptions& opts)
{
    schedule.validate();
    TrainConfig train_cfg = cfg;
    train_cfg.epochs = schedule.retrain_epochs;
    train_cfg.stop_at_threshold = false;

    PruneTrace trace;
    trace.criterion = criterion;
    trace.theta0 = theta0;
    TopologyMask mask = TopologyMask::full(cfg.m_dim);
    for (int k = 0; k < schedule.n_iters; ++k) {
        PruneIteration it;
        it.iter = k;
        it.mask = mask;
        it.sparsity = mask.sparsity();
        const auto res = train(data, mask, train_cfg, theta0);
        it.epoch_best = res.epoch_best;
        it.trained = res.best_params;
        if (res.status == TrainStatus::Failed) {
            it.status = IterationStatus::Failed;
            it.failure = res.failure;
            trace.iterations.push_back(std::move(it));
            trace.final_mask = mask;
            return trace;
        }
        it.report = evaluate(res.best_params, mask, data, cfg.eval);

        ImportanceScores scores;
        try {
            switch (criterion) {
            case Criterion::Magnitude: scores = importance_magnitude(res.best_params, mask); break;
            case Criterion::Random:
                scores = importance_random(mask, derive_seed(opts.score_seed, "random-scores", k));
                break;
            case Criterion::Geometric:
                scores = importance_geometric(res.best_params, mask, data, opts.geometric);
                break;
            }
        } catch (const InvalidArgument& e) {
            it.status = IterationStatus::Failed;
            it.failure = e.what();
            trace.iterations.push_back(std::move(it));
            trace.final_mask = mask;
            return trace;
        }
        trace.iterations.push_back(std::move(it));
        mask = prune_mask(scores, mask, schedule.fraction_per_iter);
    }
    trace.final_mask = mask;
    trace.complete = true;
    return trace;
}

std::vector<AdditivityRecord> additivity_check(
  const PlrnnParams& p, const TopologyMask& mask, const Dataset& data, const GeometricConfig& cfg,
  const std::vector<std::pair<std::pair<int, int>, std::pair<int, int>>>& pairs)
{
    std::vector<Removal> variants{{}};
    for (const auto& [a, b] : pairs) {
        if (a == b) throw InvalidArgument("additivity pair repeats one entry");
        check_removals(mask, {a, b});
        variants.push_back({a});
        variants.push_back({b});
        variants.push_back({a, b});
    }
    const auto orbits = removal_orbits(p, mask, orbit_start(p, data), variants, cfg.transient,
                                       cfg.orbit_len, cfg.threads);
    const Trajectory reference = reference_of(data);
    std::vector<double> d(orbits.size());
    parallel_for(static_cast<long>(orbits.size()), cfg.threads, [&](long k) {
        if (k == 0 || orbits[k].touched)
            d[k] = d_stsp(reference, orbits[k].orbit, cfg.bins, cfg.pseudo_count);
    });
    for (std::size_t k = 1; k < orbits.size(); ++k)
        if (!orbits[k].touched) d[k] = d[0];
    std::vector<AdditivityRecord> out;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        AdditivityRecord r;
        r.first = pairs[k].first;
        r.second = pairs[k].second;
        r.delta_first = d[1 + 3 * k] - d[0];
        r.delta_second = d[2 + 3 * k] - d[0];
        r.delta_joint = d[3 + 3 * k] - d[0];
        out.push_back(r);
    }
    return out;
}

ReinitResult reinit_experiment(const Dataset& data, const TrainConfig& cfg,
                               const TopologyMask& mask, const PlrnnParams& theta0, int n_seeds)
{
    if (n_seeds < 0) throw InvalidArgument("n_seeds must be >= 0");
    ReinitResult out;
    for (int s = 0; s < n_seeds; ++s) {
        TrainConfig run = cfg;
        run.seed = derive_seed(cfg.seed, "reinit-batches", s);
        const auto original = train(data, mask, run, theta0);
        const auto redrawn_init =
          init_params(cfg.m_dim, cfg.n_dim, cfg.init_sigma, derive_seed(cfg.seed, "reinit-theta", s));
        const auto redrawn = train(data, mask, run, redrawn_init);
        out.d_stsp_original.push_back(original.best_d_stsp);
        out.d_stsp_redrawn.push_back(redrawn.best_d_stsp);
        out.failed.push_back(original.status == TrainStatus::Failed ||
                             redrawn.status == TrainStatus::Failed);
    }
    return out;
}

}  // namespace dsr
