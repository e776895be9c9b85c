#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsr/plrnn.hpp"
#include "dsr/training.hpp"

#include <random>

using namespace dsr;

namespace {

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<long>(v.size()));
    long i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

PlrnnParams random_params(int m, int n, std::uint64_t seed, double w_scale = 0.3)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.2, 0.95);
    PlrnnParams p;
    p.m_dim = m, p.n_dim = n;
    p.a_diag = Vector::NullaryExpr(m, [&] { return u(rng); });
    p.w = Matrix::NullaryExpr(m, m, [&] { return w_scale * g(rng); });
    p.h = Vector::NullaryExpr(m, [&] { return 0.1 * g(rng); });
    return p;
}

TopologyMask random_mask(int m, double keep, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(keep);
    TopologyMask mask = TopologyMask::empty(m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) mask.set(i, j, b(rng));
    return mask;
}

}  // namespace

TEST_CASE("mean_center")
{
    CHECK(mean_center(Vector::Constant(4, 3.5)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(mean_center(vec({1, -1, 0})) == vec({1, -1, 0}));
    CHECK(mean_center(vec({3, 0, 0})) == vec({2, -1, -1}));
    CHECK(std::abs(mean_center(vec({0.3, 7.1, -2.2, 5.0})).sum()) < 1e-12);
}

TEST_CASE("plrnn_step examples")
{
    PlrnnParams p;
    p.m_dim = 2, p.n_dim = 2;
    p.a_diag = vec({0.5, 0.5});
    p.w = Matrix{{0.0, 1.0}, {1.0, 0.0}};
    p.h = Vector::Zero(2);
    CHECK(plrnn_step(p, TopologyMask::full(2), vec({2, 0})) == vec({1, 1}));

    auto q = random_params(5, 2, 1);
    q.w.setZero(), q.h.setZero(), q.a_diag.setOnes();
    const Vector z = vec({1, -2, 3, 0.5, 9});
    CHECK(plrnn_step(q, TopologyMask::full(5), z) == z);

    const auto r = random_params(5, 2, 2);
    CHECK(plrnn_step(r, TopologyMask::empty(5), z) ==
          Vector(r.a_diag.cwiseProduct(z) + r.h));
}

TEST_CASE("observe")
{
    const Vector z = vec({1, 2, 3, 4, 5});
    CHECK(observe(z, 3) == vec({1, 2, 3}));
    CHECK(observe(z, 5) == z);
    CHECK(observe(z, 1) == vec({1}));
    CHECK_THROWS_AS(observe(z, 6), InvalidArgument);
    CHECK_THROWS_AS(observe(z, 0), InvalidArgument);
}

TEST_CASE("masking idempotence and zeroed-weight equivalence")
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto p = random_params(7, 3, s);
        const auto mask = random_mask(7, 0.5, 100 + s);
        const auto pm = apply_mask(p, mask);
        std::mt19937_64 rng(s);
        std::normal_distribution<double> g(0.0, 2.0);
        const Vector z = Vector::NullaryExpr(7, [&] { return g(rng); });
        CHECK(plrnn_step(pm, TopologyMask::full(7), z) == plrnn_step(p, mask, z));
        CHECK(plrnn_step(pm, mask, z) == plrnn_step(p, mask, z));
    }
}

TEST_CASE("affine within a fixed activation region")
{
    const int m = 6;
    const auto p = random_params(m, 2, 4);
    const auto mask = random_mask(m, 0.7, 5);
    const Matrix w = p.w.cwiseProduct(mask.as_matrix());
    const Matrix center = Matrix::Identity(m, m) - Matrix::Constant(m, m, 1.0 / m);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 1.0);
    // Constant vectors center to zero, so the nonlinearity is inactive.
    for (int k = 0; k < 10; ++k) {
        const Vector z = Vector::Constant(m, g(rng));
        const Vector expected = p.a_diag.cwiseProduct(z) + p.h;
        CHECK((plrnn_step(p, mask, z) - expected).cwiseAbs().maxCoeff() < 1e-14);
    }
    // General region: D selects units with positive centered input.
    for (int k = 0; k < 10; ++k) {
        const Vector z0 = Vector::NullaryExpr(m, [&] { return g(rng); });
        const Vector c0 = center * z0;
        Matrix d = Matrix::Zero(m, m);
        for (int i = 0; i < m; ++i) d(i, i) = c0(i) > 0.0 ? 1.0 : 0.0;
        const Matrix affine = Matrix(p.a_diag.asDiagonal()) + w * d * center;
        const Vector dz = 1e-3 * Vector::NullaryExpr(m, [&] { return g(rng); });
        const Vector z = z0 + dz;
        const Vector c = center * z;
        bool same = true;
        for (int i = 0; i < m; ++i) same &= (c(i) > 0.0) == (c0(i) > 0.0);
        if (!same) continue;
        CHECK((plrnn_step(p, mask, z) - (affine * z + p.h)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("StepKernel agrees with the reference step, dense and sparse")
{
    for (double keep : {1.0, 0.5, 0.1}) {
        const auto p = random_params(12, 3, 7);
        const auto mask = random_mask(12, keep, 9);
        const StepKernel kernel(p, mask);
        std::mt19937_64 rng(3);
        std::normal_distribution<double> g(0.0, 1.0);
        ColMatrix zs(12, 4), out;
        for (int c = 0; c < 4; ++c) zs.col(c) = Vector::NullaryExpr(12, [&] { return g(rng); });
        kernel.step_batch(zs, out);
        for (int c = 0; c < 4; ++c) {
            Vector single;
            kernel.step(zs.col(c), single);
            const Vector ref = plrnn_step(p, mask, zs.col(c));
            CHECK((single - ref).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((out.col(c) - ref).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("generate")
{
    auto p = random_params(4, 2, 1);
    p.w.setZero(), p.h.setZero(), p.a_diag.setOnes();
    const Vector z1 = vec({0.5, -1, 2, 3});
    const auto tr = generate(p, TopologyMask::full(4), z1, 25);
    CHECK(tr.length() == 25);
    CHECK(tr.dims() == 2);
    CHECK(!tr.diverged);
    for (long t = 0; t < 25; ++t) CHECK(tr.data.row(t) == observe(z1, 2).transpose());

    auto q = random_params(4, 4, 2);
    q.a_diag.setZero(), q.h.setOnes();
    const auto fixed = generate(q, TopologyMask::empty(4), z1, 10);
    CHECK(fixed.data == Matrix::Ones(10, 4));

    const auto r = random_params(10, 3, 3);
    const auto mask = random_mask(10, 0.6, 4);
    const Vector z = Vector::LinSpaced(10, -1, 1);
    GenerateOptions opts;
    opts.transient = 7;
    CHECK(generate(r, mask, z, 300, opts).data == generate(r, mask, z, 300, opts).data);
    CHECK(generate(r, mask, z, 300, opts).data == generate(r, mask, z, 307).data.bottomRows(300));
}

TEST_CASE("generate flags divergence")
{
    auto p = random_params(3, 3, 5);
    p.w.setZero(), p.h.setZero();
    p.a_diag = Vector::Constant(3, 3.0);
    const auto tr = generate(p, TopologyMask::full(3), Vector::Ones(3), 100);
    CHECK(tr.diverged);
    CHECK(tr.length() < 100);
    CHECK(tr.data.allFinite());
    CHECK(tr.data.cwiseAbs().maxCoeff() <= kDivergenceBound);

    p.a_diag = Vector::Constant(3, 1e7);
    CHECK_THROWS_AS(generate(p, TopologyMask::full(3), Vector::Ones(3), 100), Diverged);
}

TEST_CASE("parameter validation")
{
    auto p = random_params(4, 2, 1);
    CHECK_NOTHROW(p.validate());
    p.w(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    auto q = random_params(4, 2, 1);
    q.n_dim = 5;
    CHECK_THROWS_AS(q.validate(), InvalidArgument);
}

TEST_CASE("TopologyMask basics")
{
    auto m = TopologyMask::full(10);
    CHECK(m.nnz() == 100);
    CHECK(m.sparsity() == 0.0);
    m.set(3, 4, false);
    CHECK(m.nnz() == 99);
    CHECK(m.sparsity() == doctest::Approx(0.01));
    CHECK(m.is_subset_of(TopologyMask::full(10)));
    CHECK(!TopologyMask::full(10).is_subset_of(m));
    CHECK(TopologyMask::from_matrix(m.as_matrix()) == m);
}
