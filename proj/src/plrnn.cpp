#include "dsr/plrnn.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace dsr {

void PlrnnParams::validate() const
{
    if (m_dim < 1 || n_dim < 1 || n_dim > m_dim)
        throw InvalidArgument(fmt::format("need 1 <= n_dim <= m_dim, got N={} M={}", n_dim, m_dim));
    if (a_diag.size() != m_dim || h.size() != m_dim || w.rows() != m_dim || w.cols() != m_dim)
        throw InvalidArgument("PLRNN parameter shapes do not match m_dim");
    if (!a_diag.allFinite() || !w.allFinite() || !h.allFinite())
        throw InvalidArgument("PLRNN parameters contain non-finite values");
}

TopologyMask::TopologyMask(int m, bool value)
  : m_(m), bits_(static_cast<std::size_t>(m) * m, value ? 1 : 0)
{
    if (m < 0) throw InvalidArgument("mask size must be non-negative");
}

TopologyMask TopologyMask::from_matrix(const Matrix& bits)
{
    if (bits.rows() != bits.cols()) throw InvalidArgument("mask matrix must be square");
    TopologyMask mask(static_cast<int>(bits.rows()), false);
    for (int i = 0; i < mask.m_; ++i)
        for (int j = 0; j < mask.m_; ++j) mask.set(i, j, bits(i, j) != 0.0);
    return mask;
}

long TopologyMask::nnz() const { return std::count(bits_.begin(), bits_.end(), 1); }

double TopologyMask::sparsity() const
{
    if (m_ == 0) return 0.0;
    return 1.0 - static_cast<double>(nnz()) / (static_cast<double>(m_) * m_);
}

Matrix TopologyMask::as_matrix() const
{
    Matrix out(m_, m_);
    for (int i = 0; i < m_; ++i)
        for (int j = 0; j < m_; ++j) out(i, j) = (*this)(i, j) ? 1.0 : 0.0;
    return out;
}

bool TopologyMask::is_subset_of(const TopologyMask& outer) const
{
    if (outer.m_ != m_) return false;
    for (std::size_t k = 0; k < bits_.size(); ++k)
        if (bits_[k] && !outer.bits_[k]) return false;
    return true;
}

Vector mean_center(const Vector& z) { return (z.array() - z.mean()).matrix(); }

namespace {

void check_dims(const PlrnnParams& p, const TopologyMask& mask, long z_size)
{
    if (mask.size() != p.m_dim) throw InvalidArgument("mask size does not match m_dim");
    if (z_size != p.m_dim)
        throw InvalidArgument(fmt::format("state has {} components, expected {}", z_size, p.m_dim));
}

}  // namespace

Vector plrnn_step(const PlrnnParams& p, const TopologyMask& mask, const Vector& z)
{
    check_dims(p, mask, z.size());
    const Vector phi = mean_center(z).cwiseMax(0.0);
    const Matrix w_eff = p.w.cwiseProduct(mask.as_matrix());
    return p.a_diag.cwiseProduct(z) + w_eff * phi + p.h;
}

Vector observe(const Vector& z, int n_dim)
{
    if (n_dim < 1 || n_dim > z.size())
        throw InvalidArgument(fmt::format("cannot observe {} of {} components", n_dim, z.size()));
    return z.head(n_dim);
}

StepKernel::StepKernel(const PlrnnParams& p, const TopologyMask& mask)
  : m_(p.m_dim), n_(p.n_dim), a_(p.a_diag), h_(p.h)
{
    p.validate();
    if (mask.size() != p.m_dim) throw InvalidArgument("mask size does not match m_dim");
    w_eff_ = p.w.cwiseProduct(mask.as_matrix());
    // Below ~one third density the coupling list beats the dense product.
    sparse_ = mask.nnz() * 3 < static_cast<long>(m_) * m_;
    if (sparse_) {
        row_start_.assign(m_ + 1, 0);
        for (int i = 0; i < m_; ++i) {
            for (int j = 0; j < m_; ++j) {
                if (mask(i, j)) {
                    col_.push_back(j);
                    val_.push_back(p.w(i, j));
                }
            }
            row_start_[i + 1] = static_cast<int>(col_.size());
        }
    }
}

void StepKernel::step(const Vector& z, Vector& out) const
{
    const double mu = z.mean();
    const Vector phi = (z.array() - mu).cwiseMax(0.0).matrix();
    if (sparse_) {
        out.resize(m_);
        for (int i = 0; i < m_; ++i) {
            double acc = 0.0;
            for (int k = row_start_[i]; k < row_start_[i + 1]; ++k) acc += val_[k] * phi(col_[k]);
            out(i) = a_(i) * z(i) + acc + h_(i);
        }
    } else {
        out.noalias() = w_eff_ * phi;
        out.array() += a_.array() * z.array() + h_.array();
    }
}

void StepKernel::step_batch(const ColMatrix& z, ColMatrix& out) const
{
    const Eigen::RowVectorXd mu = z.colwise().mean();
    const ColMatrix phi = (z.rowwise() - mu).cwiseMax(0.0);
    if (sparse_) {
        out.resize(m_, z.cols());
        for (int i = 0; i < m_; ++i) {
            out.row(i) = a_(i) * z.row(i);
            out.row(i).array() += h_(i);
            for (int k = row_start_[i]; k < row_start_[i + 1]; ++k)
                out.row(i) += val_[k] * phi.row(col_[k]);
        }
    } else {
        out.noalias() = w_eff_ * phi;
        out += a_.asDiagonal() * z;
        out.colwise() += h_;
    }
}

Trajectory generate(const StepKernel& kernel, const Vector& z1, long n_steps,
                    const GenerateOptions& opts)
{
    if (n_steps < 1) throw InvalidArgument("generate needs n_steps >= 1");
    if (z1.size() != kernel.m_dim()) throw InvalidArgument("initial state has the wrong size");
    const auto bad = [](const Vector& z) {
        return !z.allFinite() || z.cwiseAbs().maxCoeff() > kDivergenceBound;
    };

    Trajectory out;
    out.source = "plrnn";
    out.data.resize(n_steps, kernel.n_dim());
    Vector z = z1;
    Vector next(kernel.m_dim());
    for (long t = 0; t < opts.transient; ++t) {
        kernel.step(z, next);
        std::swap(z, next);
        if (bad(z)) {
            if (t == 0) throw Diverged("generated state diverged at the first step", -1);
            out.data.resize(0, kernel.n_dim());
            out.diverged = true;
            return out;
        }
    }
    for (long t = 0; t < n_steps; ++t) {
        kernel.step(z, next);
        std::swap(z, next);
        if (bad(z)) {
            if (t == 0 && opts.transient == 0)
                throw Diverged("generated state diverged at the first step", -1);
            out.data.conservativeResize(t, Eigen::NoChange);
            out.diverged = true;
            return out;
        }
        out.data.row(t) = z.head(kernel.n_dim()).transpose();
    }
    return out;
}

Trajectory generate(const PlrnnParams& p, const TopologyMask& mask, const Vector& z1, long n_steps,
                    const GenerateOptions& opts)
{
    check_dims(p, mask, z1.size());
    return generate(StepKernel(p, mask), z1, n_steps, opts);
}

Vector forced_initial_state(const Vector& obs, int m_dim)
{
    if (obs.size() > m_dim) throw InvalidArgument("observation is wider than the latent state");
    Vector z = Vector::Zero(m_dim);
    z.head(obs.size()) = obs;
    return z;
}

PlrnnParams apply_mask(const PlrnnParams& p, const TopologyMask& mask)
{
    if (mask.size() != p.m_dim) throw InvalidArgument("mask size does not match m_dim");
    PlrnnParams out = p;
    out.w = p.w.cwiseProduct(mask.as_matrix());
    return out;
}

}  // namespace dsr
