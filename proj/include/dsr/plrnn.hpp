#pragma once

// Masked mean-centered piecewise-linear RNN with identity readout.

#include "dsr/common.hpp"
#include "dsr/dynamics.hpp"

#include <vector>

namespace dsr {

struct PlrnnParams {
    Vector a_diag;  // diagonal of A
    Matrix w;       // M x M, w(i, j) couples unit j into unit i
    Vector h;
    int m_dim = 0;
    int n_dim = 0;

    /// Throws InvalidArgument if shapes disagree or any entry is non-finite.
    void validate() const;
};

/// Binary M x M mask over W. Entry (i, j) = 1 keeps w(i, j).
class TopologyMask {
public:
    TopologyMask() = default;
    explicit TopologyMask(int m, bool value = true);
    static TopologyMask full(int m) { return TopologyMask(m, true); }
    static TopologyMask empty(int m) { return TopologyMask(m, false); }
    /// Any nonzero entry of `bits` becomes 1.
    static TopologyMask from_matrix(const Matrix& bits);

    int size() const { return m_; }
    bool operator()(int i, int j) const { return bits_[index(i, j)] != 0; }
    void set(int i, int j, bool on) { bits_[index(i, j)] = on ? 1 : 0; }

    long nnz() const;
    /// 1 - nnz / M^2.
    double sparsity() const;
    /// 0/1 matrix for elementwise products.
    Matrix as_matrix() const;
    /// True where every bit set in *this is also set in `outer`.
    bool is_subset_of(const TopologyMask& outer) const;

    bool operator==(const TopologyMask& other) const = default;

private:
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * m_ + j; }

    int m_ = 0;
    std::vector<unsigned char> bits_;
};

/// z - mean(z).
Vector mean_center(const Vector& z);

/// z' = A z + (m .* W) relu(mean_center(z)) + h.
Vector plrnn_step(const PlrnnParams& p, const TopologyMask& mask, const Vector& z);

/// First n_dim components of z.
Vector observe(const Vector& z, int n_dim);

/// Magnitude above which a free-running state counts as diverged.
inline constexpr double kDivergenceBound = 1e6;

/// Precomputed step operator for repeated stepping of one (params, mask) pair.
/// Uses a sparse coupling list when the mask is sparse.
class StepKernel {
public:
    StepKernel(const PlrnnParams& p, const TopologyMask& mask);

    int m_dim() const { return m_; }
    int n_dim() const { return n_; }

    /// One step on a single state; `out` may not alias `z`.
    void step(const Vector& z, Vector& out) const;
    /// One step on S states stored as columns of an M x S matrix.
    void step_batch(const ColMatrix& z, ColMatrix& out) const;

private:
    int m_;
    int n_;
    Vector a_;
    Vector h_;
    ColMatrix w_eff_;
    bool sparse_ = false;
    std::vector<int> row_start_;
    std::vector<int> col_;
    std::vector<double> val_;
};

struct GenerateOptions {
    /// Steps iterated and dropped before recording starts.
    long transient = 0;
};

/// Free-running generation from z1 with no forcing. Emits observe(z_t) for the
/// n_steps states following z1. On divergence the result is truncated and flagged;
/// divergence at the very first step throws Diverged.
Trajectory generate(const PlrnnParams& p, const TopologyMask& mask, const Vector& z1, long n_steps,
                    const GenerateOptions& opts = {});
Trajectory generate(const StepKernel& kernel, const Vector& z1, long n_steps,
                    const GenerateOptions& opts = {});

/// Latent state with the first N components set to `obs` and the rest zero.
Vector forced_initial_state(const Vector& obs, int m_dim);

/// Copy of p with w replaced by mask .* w.
PlrnnParams apply_mask(const PlrnnParams& p, const TopologyMask& mask);

}  // namespace dsr
