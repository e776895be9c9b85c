#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsr/metrics.hpp"
#include "dsr/training.hpp"
#include "support/oracles.hpp"

#include <random>

using namespace dsr;

namespace {

const Dataset& lorenz_data()
{
    static const Dataset data = [] {
        const auto spec = lorenz63_spec();
        return make_dataset(simulate(spec, spec.default_initial_state(), 6000), 0.05, 3);
    }();
    return data;
}

std::vector<Matrix> lorenz_batch(int s, int len, long offset = 100)
{
    std::vector<Matrix> batch;
    for (int b = 0; b < s; ++b) batch.push_back(lorenz_data().series.data.middleRows(offset + 397 * b, len));
    return batch;
}

PlrnnParams random_model(int m, int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    PlrnnParams p = init_params(m, n, 0.3, rng());
    for (int i = 0; i < m; ++i) p.h(i) = 0.1 * g(rng);
    return p;
}

}  // namespace

TEST_CASE("init_params")
{
    const auto p = init_params(20, 3, 0.01, 5);
    CHECK(p.h == Vector::Zero(20));
    CHECK(p.a_diag.minCoeff() > 0.0);
    CHECK(p.a_diag.maxCoeff() <= 1.0);
    const auto q = init_params(20, 3, 0.01, 5);
    CHECK(p.w == q.w);
    CHECK(p.a_diag == q.a_diag);
    CHECK(p.w != init_params(20, 3, 0.01, 6).w);
    const double sd = std::sqrt(p.w.array().square().mean());
    CHECK(sd == doctest::Approx(0.01).epsilon(0.15));
    CHECK_THROWS_AS(init_params(2, 3, 0.01, 1), InvalidArgument);
}

TEST_CASE("learning-rate annealing endpoints")
{
    TrainConfig c;
    c.epochs = 137, c.lr_start = 1e-2, c.lr_end = 1e-5;
    CHECK(learning_rate(c, 0) == 1e-2);
    CHECK(std::abs(learning_rate(c, 136) - 1e-5) / 1e-5 < 1e-12);
    CHECK(learning_rate(c, 68) < learning_rate(c, 67));
}

TEST_CASE("stf_forward with forcing at every step gives one-step predictions")
{
    const auto p = random_model(6, 3, 1);
    const auto mask = TopologyMask::full(6);
    const Matrix seq = lorenz_batch(1, 12).front();
    const auto out = stf_forward(p, mask, seq, 1);
    REQUIRE(out.predictions.rows() == 11);
    Vector z = forced_initial_state(seq.row(0).transpose(), 6);
    for (int t = 1; t < 12; ++t) {
        z = plrnn_step(p, mask, z);
        CHECK((out.predictions.row(t - 1).transpose() - observe(z, 3)).cwiseAbs().maxCoeff() < 1e-12);
        z.head(3) = seq.row(t).transpose();
    }
}

TEST_CASE("stf_forward without forcing equals free generation")
{
    const auto p = random_model(6, 3, 2);
    const auto mask = TopologyMask::full(6);
    const Matrix seq = lorenz_batch(1, 15).front();
    const Vector z1 = forced_initial_state(seq.row(0).transpose(), 6);
    const auto free = generate(p, mask, z1, 14);
    for (int tau : {15, 40, kNoForcing}) {
        const auto out = stf_forward(p, mask, seq, tau);
        CHECK((out.predictions - free.data).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("forcing never overwrites hidden components")
{
    const auto p = random_model(3, 2, 3);
    const auto mask = TopologyMask::full(3);
    Matrix seq = lorenz_batch(1, 10).front().leftCols(2);
    const auto forced = stf_forward(p, mask, seq, 2);
    // Hidden component trajectory from a manual run with forcing at 0-based t = 0 and (t+1) % 2 == 0.
    Vector z = forced_initial_state(seq.row(0).transpose(), 3);
    for (int t = 1; t < 10; ++t) {
        z = plrnn_step(p, mask, z);
        CHECK(forced.latents(t, 2) == doctest::Approx(z(2)).epsilon(1e-12));
        if ((t + 1) % 2 == 0) z.head(2) = seq.row(t).transpose();
    }
}

TEST_CASE("mse_loss")
{
    ColMatrix a(1, 1), b(1, 1);
    a << 0.0;
    b << 2.0;
    CHECK(mse_loss(a, b) == 4.0);
    CHECK(mse_loss(b, b) == 0.0);
    ColMatrix p(2, 1), t(2, 1);
    p << 1.0, 3.0;
    t << 0.0, 0.0;
    CHECK(mse_loss(p, t) == 5.0);
    CHECK_THROWS_AS(mse_loss(p, a), InvalidArgument);
}

TEST_CASE("BPTT gradients match central finite differences")
{
    for (int m : {4, 8})
        for (int tau : {1, 3, kNoForcing}) {
            const auto p = random_model(m, 3, 10 * m + (tau % 7));
            auto mask = TopologyMask::full(m);
            mask.set(0, 1, false);
            mask.set(m - 1, m - 1, false);
            const auto check = oracle::fd_gradient_check(p, mask, lorenz_batch(3, 20), tau, 1e-5, 1e-12);
            CAPTURE(m);
            CAPTURE(tau);
            CHECK(check.coordinates == 2 * m + m * m);
            CHECK(check.max_rel_error < 1e-5);
        }
}

TEST_CASE("masked weights receive exactly zero gradient")
{
    const auto p = random_model(8, 3, 4);
    auto mask = TopologyMask::full(8);
    mask.set(2, 5, false);
    mask.set(0, 0, false);
    const auto g = bptt_grads(p, mask, lorenz_batch(4, 20), 3).grads;
    CHECK(g.w(2, 5) == 0.0);
    CHECK(g.w(0, 0) == 0.0);
    CHECK(g.w(5, 2) != 0.0);
}

TEST_CASE("bias gradient of the forced linear model has a closed form")
{
    auto p = random_model(5, 3, 5);
    p.w.setZero();
    p.a_diag.setOnes();
    const auto batch = lorenz_batch(3, 20);
    const auto g = bptt_grads(p, TopologyMask::full(5), batch, 1).grads;
    Vector expected = Vector::Zero(5);
    for (const auto& seq : batch)
        for (int t = 0; t + 1 < 20; ++t)
            expected.head(3) += seq.row(t).transpose() + p.h.head(3) - seq.row(t + 1).transpose();
    expected *= 2.0 / (3.0 * 19.0);
    CHECK((g.h - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient is the derivative of the reported loss")
{
    const auto p = random_model(6, 3, 6);
    const auto batch = lorenz_batch(2, 30);
    const auto lg = bptt_grads(p, TopologyMask::full(6), batch, 4);
    CHECK(lg.loss == doctest::Approx(batch_loss(p, TopologyMask::full(6), batch, 4)).epsilon(1e-14));
}

TEST_CASE("RAdam")
{
    const int m = 3;
    auto p = random_model(m, 1, 7);
    RadamState zero_state = RadamState::zeros(m);
    auto unchanged = p;
    for (int k = 0; k < 10; ++k) unchanged = radam_step(zero_state, unchanged, ParamGrads::zeros(m), 1e-2);
    CHECK(unchanged.w == p.w);
    CHECK(unchanged.a_diag == p.a_diag);

    ParamGrads g = ParamGrads::zeros(m);
    g.w.setConstant(0.5);
    g.w(1, 2) = -3.0;
    g.h.setConstant(-0.25);
    g.a_diag.setConstant(2.0);
    RadamState s = RadamState::zeros(m);
    const auto one = radam_step(s, p, g, 1e-3);
    CHECK((one.w - (p.w - 1e-3 * g.w)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((one.h - (p.h - 1e-3 * g.h)).cwiseAbs().maxCoeff() < 1e-15);

    RadamState s1 = RadamState::zeros(m), s2 = RadamState::zeros(m);
    CHECK(radam_step(s1, p, g, 1e-3).w == radam_step(s2, p, g, 1e-3).w);

    // Scalar reference recursion over enough steps to enter the rectified regime.
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 1e-3;
    double theta = p.w(1, 2), mm = 0.0, vv = 0.0;
    RadamState st = RadamState::zeros(m);
    auto q = p;
    const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    for (int t = 1; t <= 12; ++t) {
        ParamGrads gt = ParamGrads::zeros(m);
        const double grad = std::sin(0.7 * t) + 0.2;
        gt.w(1, 2) = grad;
        q = radam_step(st, q, gt, lr);
        mm = b1 * mm + (1 - b1) * grad;
        vv = b2 * vv + (1 - b2) * grad * grad;
        const double m_hat = mm / (1 - std::pow(b1, t));
        const double rho = rho_inf - 2.0 * t * std::pow(b2, t) / (1 - std::pow(b2, t));
        if (rho > 4.0) {
            const double r = std::sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho));
            theta -= lr * r * m_hat / (std::sqrt(vv / (1 - std::pow(b2, t))) + eps);
        } else {
            theta -= lr * m_hat;
        }
        CHECK(q.w(1, 2) == doctest::Approx(theta).epsilon(1e-13));
    }
}

TEST_CASE("batch schedule is seeded and in range")
{
    TrainConfig c;
    c.seq_len = 50, c.batch_size = 4, c.batches_per_epoch = 7, c.seed = 42;
    const auto a = batch_schedule(500, c, 3);
    CHECK(a == batch_schedule(500, c, 3));
    CHECK(a != batch_schedule(500, c, 4));
    REQUIRE(a.size() == 7);
    for (const auto& b : a) {
        REQUIRE(b.size() == 4);
        for (long s : b) {
            CHECK(s >= 0);
            CHECK(s <= 450);
        }
    }
    CHECK_THROWS_AS(batch_schedule(50, c, 0), InvalidArgument);
}

TEST_CASE("training reaches the fixed point of a constant-zero series")
{
    Dataset zero;
    zero.series.data = Matrix::Zero(400, 2);
    zero.clean = zero.series;
    zero.per_dim_mean = Vector::Zero(2);
    zero.per_dim_std = Vector::Ones(2);
    TrainConfig c;
    c.m_dim = 8, c.n_dim = 2, c.seq_len = 20, c.tau = 5, c.batch_size = 4, c.batches_per_epoch = 5;
    c.epochs = 50, c.lr_start = 1e-2, c.eval_every = 10;
    c.eval.orbit_len = 200;
    const auto res = train(zero, TopologyMask::full(8), c);
    CHECK(res.status == TrainStatus::Ok);
    CHECK(res.loss_history.size() == 50);
    CHECK(res.loss_history.back() < 1e-6);
}

TEST_CASE("training bookkeeping and mask preservation")
{
    TrainConfig c = train_preset("lorenz63");
    c.m_dim = 10, c.epochs = 12, c.batches_per_epoch = 5, c.eval_every = 4, c.seed = 3;
    c.eval.orbit_len = 2000;
    TopologyMask mask = TopologyMask::full(10);
    for (int i = 0; i < 10; ++i) mask.set(i, (i + 3) % 10, false);
    auto init = init_params(10, 3, 0.1, 8);
    const auto res = train(lorenz_data(), mask, c, init);
    REQUIRE(res.status == TrainStatus::Ok);
    CHECK(res.loss_history.size() == 12);
    CHECK(res.eval_epochs == std::vector<int>{4, 8, 12});
    CHECK(res.best_d_stsp == *std::min_element(res.d_stsp_history.begin(), res.d_stsp_history.end()));
    for (int i = 0; i < 10; ++i) CHECK(res.best_params.w(i, (i + 3) % 10) == 0.0);

    const auto again = train(lorenz_data(), mask, c, init);
    CHECK(again.loss_history == res.loss_history);
    CHECK(again.best_params.w == res.best_params.w);
}

TEST_CASE("presets carry the published hyperparameters")
{
    const auto l = train_preset("lorenz63");
    CHECK(l.m_dim == 50);
    CHECK(l.tau == 16);
    CHECK(l.seq_len == 200);
    CHECK(l.batch_size == 16);
    CHECK(l.batches_per_epoch == 50);
    CHECK(l.init_sigma == 0.01);
    for (const auto& name : train_preset_names()) CHECK_NOTHROW(train_preset(name).validate());
    CHECK_THROWS_AS(train_preset("nope"), InvalidArgument);
}
