#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsr/pruning.hpp"
#include "support/oracles.hpp"

#include <algorithm>
#include <random>
#include <set>

using namespace dsr;

namespace {

const Dataset& lorenz_data()
{
    static const Dataset data = [] {
        const auto spec = lorenz63_spec();
        return make_dataset(simulate(spec, spec.default_initial_state(), 8000), 0.05, 5);
    }();
    return data;
}

PlrnnParams random_model(int m, std::uint64_t seed, double sigma = 0.3)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    PlrnnParams p = init_params(m, 3, sigma, rng());
    for (int i = 0; i < m; ++i) p.h(i) = 0.1 * g(rng);
    return p;
}

TrainConfig tiny_config(int m)
{
    TrainConfig cfg = train_preset("lorenz63");
    cfg.m_dim = m;
    cfg.seq_len = 30;
    cfg.batch_size = 4;
    cfg.batches_per_epoch = 5;
    cfg.epochs = 4;
    cfg.eval_every = 2;
    cfg.eval.orbit_len = 600;
    cfg.eval.transient = 50;
    cfg.eval.pred_starts = 20;
    cfg.seed = 9;
    return cfg;
}

GeometricConfig small_geometric()
{
    GeometricConfig g;
    g.orbit_len = 800;
    g.transient = 100;
    return g;
}

std::set<std::pair<int, int>> bottom_set(const ImportanceScores& s, const TopologyMask& mask, std::size_t n)
{
    const auto order = prune_order(s, mask);
    return {order.begin(), order.begin() + static_cast<long>(n)};
}

}  // namespace

TEST_CASE("criterion names round trip")
{
    for (auto c : {Criterion::Magnitude, Criterion::Random, Criterion::Geometric})
        CHECK(parse_criterion(to_string(c)) == c);
    CHECK_THROWS_AS(parse_criterion("hessian"), InvalidArgument);
}

TEST_CASE("magnitude importance")
{
    PlrnnParams p = random_model(6, 1);
    p.w(2, 3) = 0.0;
    TopologyMask mask = TopologyMask::full(6);
    mask.set(4, 1, false);
    const auto s = importance_magnitude(p, mask);
    CHECK(s.criterion == Criterion::Magnitude);
    CHECK(s.scores(2, 3) == 0.0);
    CHECK(s.scores(4, 1) == kMaskedScore);
    CHECK(prune_order(s, mask).front() == std::pair{2, 3});

    PlrnnParams flipped = p;
    flipped.w = -p.w;
    CHECK(importance_magnitude(flipped, mask).scores == s.scores);

    // Sort oracle: order by |w| then index, computed independently.
    std::vector<std::tuple<double, int, int>> brute;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            if (mask(i, j)) brute.emplace_back(std::abs(p.w(i, j)), i, j);
    std::sort(brute.begin(), brute.end());
    const auto order = prune_order(s, mask);
    REQUIRE(order.size() == brute.size());
    for (std::size_t k = 0; k < order.size(); ++k)
        CHECK(order[k] == std::pair{std::get<1>(brute[k]), std::get<2>(brute[k])});
}

TEST_CASE("ties are broken by row then column")
{
    ImportanceScores s;
    s.scores = Matrix::Constant(3, 3, 1.0);
    s.scores(2, 0) = 0.5;
    const auto order = prune_order(s, TopologyMask::full(3));
    CHECK(order[0] == std::pair{2, 0});
    CHECK(order[1] == std::pair{0, 0});
    CHECK(order[2] == std::pair{0, 1});
    CHECK(order[3] == std::pair{0, 2});
    CHECK(order[4] == std::pair{1, 0});
}

TEST_CASE("random importance")
{
    TopologyMask mask = TopologyMask::full(10);
    for (int j = 0; j < 10; ++j) mask.set(7, j, false);
    const auto a = importance_random(mask, 42);
    CHECK(a.scores == importance_random(mask, 42).scores);
    CHECK(a.criterion == Criterion::Random);
    for (int j = 0; j < 10; ++j) CHECK(a.scores(7, j) == kMaskedScore);

    // The bottom 20% of 90 entries (18) coincide by chance with probability ~1/C(90,18).
    const auto base = bottom_set(a, mask, 18);
    int differ = 0;
    for (std::uint64_t s = 1; s <= 10; ++s) differ += bottom_set(importance_random(mask, 42 + s), mask, 18) != base;
    CHECK(differ >= 9);

    const auto pruned = prune_mask(a, mask, 0.5);
    CHECK(pruned.is_subset_of(mask));
    for (int j = 0; j < 10; ++j) CHECK(!pruned(7, j));
}

TEST_CASE("pruning counts follow floor rounding")
{
    CHECK(remaining_after_prune(100, 0.2) == 80);
    CHECK(remaining_after_prune(80, 0.2) == 64);
    CHECK(remaining_after_prune(64, 0.2) == 51);
    CHECK(remaining_after_prune(10, 0.5) == 5);
    CHECK(remaining_after_prune(0, 0.3) == 0);

    PlrnnParams p = random_model(10, 2);
    TopologyMask mask = TopologyMask::full(10);
    std::vector<long> counts{mask.nnz()};
    for (int k = 0; k < 3; ++k) {
        const auto next = prune_mask(importance_magnitude(p, mask), mask, 0.2);
        CHECK(next.is_subset_of(mask));
        mask = next;
        counts.push_back(mask.nnz());
    }
    CHECK(counts == std::vector<long>{100, 80, 64, 51});
    CHECK_THROWS_AS(prune_mask(importance_magnitude(p, mask), mask, 0.0), InvalidArgument);
    CHECK_THROWS_AS(prune_mask(importance_magnitude(p, mask), mask, 1.0), InvalidArgument);
}

TEST_CASE("schedule validation")
{
    PruneSchedule s;
    CHECK_NOTHROW(s.validate());
    s.fraction_per_iter = 1.2;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = PruneSchedule{};
    s.n_iters = 0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
}

TEST_CASE("geometric importance basics")
{
    PlrnnParams p = random_model(6, 3);
    p.w(1, 4) = 0.0;
    TopologyMask mask = TopologyMask::full(6);
    mask.set(0, 5, false);
    const auto cfg = small_geometric();
    const auto s = importance_geometric(p, mask, lorenz_data(), cfg);
    CHECK(s.criterion == Criterion::Geometric);
    CHECK(s.scores(1, 4) == 0.0);
    CHECK(s.scores(0, 5) == kMaskedScore);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            if (mask(i, j)) CHECK(s.scores(i, j) >= 0.0);

    // Each score equals the direct removal divergence difference. Untouched deltas are zero.
    const double base = removal_d_stsp(p, mask, lorenz_data(), cfg, {});
    for (auto [i, j] : std::vector<std::pair<int, int>>{{0, 0}, {2, 3}, {5, 1}})
        CHECK(s.scores(i, j) == std::abs(removal_d_stsp(p, mask, lorenz_data(), cfg, {{i, j}}) - base));

    auto cfg4 = cfg;
    cfg4.threads = 3;
    CHECK(importance_geometric(p, mask, lorenz_data(), cfg4).scores == s.scores);
    CHECK(importance_geometric(p, mask, lorenz_data(), cfg).scores == s.scores);
    CHECK_THROWS_AS(removal_d_stsp(p, mask, lorenz_data(), cfg, {{0, 5}}), InvalidArgument);
}

TEST_CASE("geometric score of a dead unit's self-entry is zero")
{
    // Unit 4 is disconnected and pinned far below the mean, so its ReLU input is always
    // zero and its self-weight never contributes.
    PlrnnParams p = random_model(6, 4);
    TopologyMask mask = TopologyMask::full(6);
    for (int j = 0; j < 6; ++j)
        if (j != 4) mask.set(4, j, false), mask.set(j, 4, false);
    p.a_diag(4) = 0.0;
    p.h(4) = -50.0;
    p.w(4, 4) = 0.7;
    // Mirror x and y (a symmetry of the system) so the first reference row has a positive
    // mean and the unit also starts below the ReLU threshold.
    Dataset data = lorenz_data();
    for (auto* t : {&data.series, &data.clean}) t->data.leftCols(2) *= -1.0;
    const Vector obs = evaluation_reference(data).row(0).transpose();
    REQUIRE(obs.sum() > 0.0);
    const auto z1 = forced_initial_state(obs, 6);
    TopologyMask without = mask;
    without.set(4, 4, false);
    const auto with_entry = generate(p, mask, z1, 400);
    const auto without_entry = generate(p, without, z1, 400);
    REQUIRE(!with_entry.diverged);
    CHECK(with_entry.data == without_entry.data);
    CHECK(importance_geometric(p, mask, data, small_geometric()).scores(4, 4) == 0.0);
}

TEST_CASE("geometric scoring rejects a diverged baseline and ranks diverging removals last")
{
    PlrnnParams p = random_model(4, 5, 0.0);
    p.a_diag.setConstant(1.5);
    CHECK_THROWS_AS(importance_geometric(p, TopologyMask::full(4), lorenz_data(), small_geometric()),
                    InvalidArgument);

    // Unit 0's self-inhibition keeps it bounded; removing it lets the orbit blow up.
    PlrnnParams q = random_model(4, 6, 0.0);
    q.a_diag.setConstant(0.5);
    q.a_diag(0) = 1.1;
    q.w(0, 0) = -0.5;
    q.h(0) = 1.0;
    TopologyMask only_self = TopologyMask::empty(4);
    only_self.set(0, 0, true);
    only_self.set(1, 2, true);
    const auto s = importance_geometric(q, only_self, lorenz_data(), small_geometric());
    CHECK(s.scores(0, 0) == kMaskedScore);
    CHECK(s.scores(1, 2) == 0.0);
    const auto order = prune_order(s, only_self);
    CHECK(order.back() == std::pair{0, 0});
}

TEST_CASE("additivity report")
{
    PlrnnParams p = random_model(6, 7);
    p.w(0, 1) = 0.0;
    p.w(2, 2) = 0.0;
    const auto mask = TopologyMask::full(6);
    const auto cfg = small_geometric();
    const auto rep = additivity_check(p, mask, lorenz_data(), cfg, {{{0, 1}, {2, 2}}, {{3, 4}, {5, 0}}});
    REQUIRE(rep.size() == 2);
    CHECK(rep[0].delta_first == 0.0);
    CHECK(rep[0].delta_second == 0.0);
    CHECK(rep[0].delta_joint == 0.0);
    const double base = removal_d_stsp(p, mask, lorenz_data(), cfg, {});
    CHECK(rep[1].first == std::pair{3, 4});
    CHECK(rep[1].delta_first == removal_d_stsp(p, mask, lorenz_data(), cfg, {{3, 4}}) - base);
    CHECK(rep[1].delta_joint == removal_d_stsp(p, mask, lorenz_data(), cfg, {{3, 4}, {5, 0}}) - base);
    CHECK(additivity_check(p, mask, lorenz_data(), cfg, {}).empty());
}

TEST_CASE("iterative pruning resets to theta0 and nests masks")
{
    const auto cfg = tiny_config(6);
    const PlrnnParams theta0 = init_params(6, 3, cfg.init_sigma, 77);
    PruneSchedule sched;
    sched.fraction_per_iter = 0.25;
    sched.n_iters = 3;
    sched.retrain_epochs = 3;
    PruneOptions opts;
    opts.geometric = small_geometric();
    opts.score_seed = 5;

    const auto mag = iterative_prune(lorenz_data(), cfg, Criterion::Magnitude, sched, theta0, opts);
    REQUIRE(mag.complete);
    REQUIRE(mag.iterations.size() == 3);
    CHECK(mag.theta0.w == theta0.w);
    std::vector<long> nnz;
    for (std::size_t k = 0; k < mag.iterations.size(); ++k) {
        const auto& it = mag.iterations[k];
        nnz.push_back(it.mask.nnz());
        CHECK(it.sparsity == doctest::Approx(it.mask.sparsity()));
        if (k) CHECK(it.mask.is_subset_of(mag.iterations[k - 1].mask));
        // Training from theta0 with this mask reproduces the iteration's model exactly.
        TrainConfig direct = cfg;
        direct.epochs = sched.retrain_epochs;
        const auto res = train(lorenz_data(), it.mask, direct, theta0);
        CHECK(res.best_params.w == it.trained.w);
        CHECK(res.best_params.a_diag == it.trained.a_diag);
    }
    CHECK(nnz == std::vector<long>{36, 27, 20});
    CHECK(mag.final_mask.nnz() == 15);
    CHECK(mag.final_mask.is_subset_of(mag.iterations.back().mask));

    // Criteria share theta0, schedule and batches: first iteration is identical.
    const auto rnd = iterative_prune(lorenz_data(), cfg, Criterion::Random, sched, theta0, opts);
    const auto geo = iterative_prune(lorenz_data(), cfg, Criterion::Geometric, sched, theta0, opts);
    for (const auto* t : {&rnd, &geo}) {
        REQUIRE(t->complete);
        CHECK(t->iterations[0].trained.w == mag.iterations[0].trained.w);
        CHECK(t->iterations[0].report.d_stsp == mag.iterations[0].report.d_stsp);
        for (std::size_t k = 0; k < 3; ++k) CHECK(t->iterations[k].mask.nnz() == nnz[k]);
    }
    const auto again = iterative_prune(lorenz_data(), cfg, Criterion::Random, sched, theta0, opts);
    CHECK(again.final_mask == rnd.final_mask);
}

TEST_CASE("iterative pruning halts on a failed training")
{
    auto cfg = tiny_config(4);
    cfg.lr_start = cfg.lr_end = 1e6;
    cfg.grad_clip = 0.0;
    PlrnnParams theta0 = init_params(4, 3, 0.5, 3);
    theta0.a_diag.setConstant(1.5);
    PruneSchedule sched;
    sched.n_iters = 4;
    sched.retrain_epochs = 3;
    const auto t = iterative_prune(lorenz_data(), cfg, Criterion::Magnitude, sched, theta0);
    CHECK(!t.complete);
    REQUIRE(!t.iterations.empty());
    CHECK(t.iterations.back().status == IterationStatus::Failed);
    CHECK(!t.iterations.back().failure.empty());
    CHECK(t.iterations.size() < 4);
}

TEST_CASE("reinitialization experiment")
{
    const auto cfg = tiny_config(5);
    const auto theta0 = init_params(5, 3, cfg.init_sigma, 1);
    const auto mask = TopologyMask::full(5);
    const auto none = reinit_experiment(lorenz_data(), cfg, mask, theta0, 0);
    CHECK(none.d_stsp_original.empty());
    CHECK(none.d_stsp_redrawn.empty());
    CHECK(none.failed.empty());

    const auto two = reinit_experiment(lorenz_data(), cfg, mask, theta0, 2);
    REQUIRE(two.d_stsp_original.size() == 2);
    REQUIRE(two.d_stsp_redrawn.size() == 2);
    REQUIRE(two.failed.size() == 2);
    for (int s = 0; s < 2; ++s) {
        CHECK(two.d_stsp_original[s] >= 0.0);
        CHECK(two.d_stsp_redrawn[s] >= 0.0);
    }
}
