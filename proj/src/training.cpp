#include "dsr/training.hpp"

#include "dsr/metrics.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>

namespace dsr {

void TrainConfig::validate() const
{
    if (m_dim < 1 || n_dim < 1 || n_dim > m_dim)
        throw InvalidArgument(fmt::format("need 1 <= n_dim <= m_dim, got N={} M={}", n_dim, m_dim));
    if (tau < 1) throw InvalidArgument("tau must be >= 1");
    if (seq_len < 2) throw InvalidArgument("seq_len must be >= 2");
    if (batch_size < 1 || batches_per_epoch < 1) throw InvalidArgument("empty batch layout");
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (!(lr_end > 0.0) || lr_start < lr_end) throw InvalidArgument("need lr_start >= lr_end > 0");
    if (eval_every < 1) throw InvalidArgument("eval_every must be >= 1");
    if (!(init_sigma >= 0.0)) throw InvalidArgument("init_sigma must be >= 0");
}

std::vector<std::string> train_preset_names()
{
    return {"lorenz63", "lorenz96", "rossler", "bursting_neuron", "ecg"};
}

TrainConfig train_preset(const std::string& name)
{
    TrainConfig c;
    c.lr_end = 1e-5;
    c.batch_size = 16;
    c.batches_per_epoch = 50;
    c.init_sigma = 0.01;
    if (name == "lorenz63") {
        c.m_dim = 50, c.n_dim = 3, c.tau = 16, c.seq_len = 200, c.lr_start = 1e-2, c.epochs = 2000;
    } else if (name == "ecg") {
        c.m_dim = 100, c.n_dim = 5, c.tau = 10, c.seq_len = 50, c.lr_start = 1e-3, c.epochs = 3000;
    } else if (name == "bursting_neuron") {
        c.m_dim = 100, c.n_dim = 3, c.tau = 5, c.seq_len = 50, c.lr_start = 1e-3, c.epochs = 4000;
    } else if (name == "rossler") {
        c.m_dim = 50, c.n_dim = 3, c.tau = 8, c.seq_len = 300, c.lr_start = 5e-3, c.epochs = 3000;
    } else if (name == "lorenz96") {
        c.m_dim = 100, c.n_dim = 5, c.tau = 8, c.seq_len = 200, c.lr_start = 5e-3, c.epochs = 3000;
    } else {
        throw InvalidArgument(fmt::format("unknown training preset '{}'; valid presets: {}", name,
                                          fmt::join(train_preset_names(), ", ")));
    }
    return c;
}

double learning_rate(const TrainConfig& cfg, int epoch)
{
    if (cfg.epochs <= 1) return cfg.lr_start;
    const double frac = static_cast<double>(epoch) / (cfg.epochs - 1);
    return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, frac);
}

ParamGrads ParamGrads::zeros(int m)
{
    return {Vector::Zero(m), Matrix::Zero(m, m), Vector::Zero(m)};
}

double ParamGrads::squared_norm() const
{
    return a_diag.squaredNorm() + w.squaredNorm() + h.squaredNorm();
}

void ParamGrads::scale(double f)
{
    a_diag *= f;
    w *= f;
    h *= f;
}

bool ParamGrads::all_finite() const { return a_diag.allFinite() && w.allFinite() && h.allFinite(); }

PlrnnParams init_params(int m_dim, int n_dim, double init_sigma, std::uint64_t seed)
{
    if (m_dim < 1 || n_dim < 1 || n_dim > m_dim)
        throw InvalidArgument(fmt::format("need 1 <= n_dim <= m_dim, got N={} M={}", n_dim, m_dim));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> std_normal(0.0, 1.0);

    ColMatrix r(m_dim, m_dim);
    for (int i = 0; i < m_dim; ++i)
        for (int j = 0; j < m_dim; ++j) r(i, j) = std_normal(rng);
    const ColMatrix gram = r * r.transpose();
    Eigen::SelfAdjointEigenSolver<ColMatrix> eig(gram, Eigen::EigenvaluesOnly);
    const double largest = eig.eigenvalues().maxCoeff();

    PlrnnParams p;
    p.m_dim = m_dim;
    p.n_dim = n_dim;
    p.a_diag = gram.diagonal() / largest;
    p.w.resize(m_dim, m_dim);
    for (int i = 0; i < m_dim; ++i)
        for (int j = 0; j < m_dim; ++j) p.w(i, j) = init_sigma * std_normal(rng);
    p.h = Vector::Zero(m_dim);
    return p;
}

namespace {

// Forced at 1-based t = 1 and t = n * tau, i.e. 0-based index t where t == 0 or
// (t + 1) % tau == 0.
bool forced_at(long t, int tau) { return t == 0 || (tau != kNoForcing && (t + 1) % tau == 0); }

// Masked coupling m .* W in dense or compressed-row form.
class Coupling {
public:
    Coupling(const PlrnnParams& p, const TopologyMask& mask) : m_(p.m_dim)
    {
        dense_ = p.w.cwiseProduct(mask.as_matrix());
        sparse_ = mask.nnz() * 3 < static_cast<long>(m_) * m_;
        if (sparse_) {
            for (int i = 0; i < m_; ++i)
                for (int j = 0; j < m_; ++j)
                    if (mask(i, j)) entries_.push_back({i, j, p.w(i, j)});
        }
    }

    // out = W' x
    void apply(const ColMatrix& x, ColMatrix& out) const
    {
        if (!sparse_) {
            out.noalias() = dense_ * x;
            return;
        }
        out.setZero(m_, x.cols());
        for (const auto& e : entries_) out.row(e.i) += e.v * x.row(e.j);
    }

    // out = W'^T g
    void apply_transpose(const ColMatrix& g, ColMatrix& out) const
    {
        if (!sparse_) {
            out.noalias() = dense_.transpose() * g;
            return;
        }
        out.setZero(m_, g.cols());
        for (const auto& e : entries_) out.row(e.j) += e.v * g.row(e.i);
    }

    // dW = (G Phi^T) .* mask
    void accumulate_grad(const ColMatrix& g_all, const ColMatrix& phi_all, const TopologyMask& mask,
                         Matrix& dw) const
    {
        if (!sparse_) {
            dw.noalias() = g_all * phi_all.transpose();
            dw = dw.cwiseProduct(mask.as_matrix());
            return;
        }
        dw.setZero(m_, m_);
        for (const auto& e : entries_) dw(e.i, e.j) = g_all.row(e.i).dot(phi_all.row(e.j));
    }

private:
    struct Entry {
        int i;
        int j;
        double v;
    };
    int m_;
    Matrix dense_;
    bool sparse_ = false;
    std::vector<Entry> entries_;
};

struct BatchTensors {
    long steps = 0;  // T~ - 1 transitions
    long width = 0;  // batch size S
    ColMatrix x_all;    // N x (T~ S), column block t holds observations at t
    ColMatrix z_all;    // M x (T~ S), pre-forcing states
    ColMatrix u_all;    // M x ((T~-1) S), post-forcing inputs of each transition
    ColMatrix phi_all;  // M x ((T~-1) S)
    double loss = 0.0;
};

void check_batch(const PlrnnParams& p, const TopologyMask& mask, const std::vector<Matrix>& batch)
{
    p.validate();
    if (mask.size() != p.m_dim) throw InvalidArgument("mask size does not match m_dim");
    if (batch.empty()) throw InvalidArgument("batch is empty");
    const long len = batch.front().rows();
    if (len < 2) throw InvalidArgument("sequences need at least two rows");
    for (const auto& s : batch) {
        if (s.rows() != len) throw InvalidArgument("sequences in a batch must share their length");
        if (s.cols() != p.n_dim)
            throw InvalidArgument(fmt::format("sequence width {} does not match n_dim {}",
                                              s.cols(), p.n_dim));
    }
}

BatchTensors forward_batch(const PlrnnParams& p, const Coupling& coupling,
                           const std::vector<Matrix>& batch, int tau)
{
    const int m = p.m_dim, n = p.n_dim;
    const long len = batch.front().rows();
    const long s = static_cast<long>(batch.size());
    BatchTensors bt;
    bt.steps = len - 1;
    bt.width = s;
    bt.x_all.resize(n, len * s);
    for (long t = 0; t < len; ++t)
        for (long b = 0; b < s; ++b) bt.x_all.col(t * s + b) = batch[b].row(t).transpose();
    bt.z_all.resize(m, len * s);
    bt.u_all.resize(m, bt.steps * s);
    bt.phi_all.resize(m, bt.steps * s);

    ColMatrix z = ColMatrix::Zero(m, s);
    z.topRows(n) = bt.x_all.middleCols(0, s);
    bt.z_all.middleCols(0, s) = z;
    ColMatrix wphi(m, s);
    double sq = 0.0;
    for (long t = 0; t + 1 < len; ++t) {
        if (forced_at(t, tau)) z.topRows(n) = bt.x_all.middleCols(t * s, s);
        bt.u_all.middleCols(t * s, s) = z;
        const Eigen::RowVectorXd mu = z.colwise().mean();
        auto phi = bt.phi_all.middleCols(t * s, s);
        phi = (z.rowwise() - mu).cwiseMax(0.0);
        coupling.apply(phi, wphi);
        ColMatrix next = p.a_diag.asDiagonal() * z + wphi;
        next.colwise() += p.h;
        z = std::move(next);
        bt.z_all.middleCols((t + 1) * s, s) = z;
        sq += (z.topRows(n) - bt.x_all.middleCols((t + 1) * s, s)).squaredNorm();
    }
    bt.loss = sq / (static_cast<double>(s) * bt.steps);
    return bt;
}

}  // namespace

StfOutput stf_forward(const PlrnnParams& p, const TopologyMask& mask, const Matrix& seq, int tau)
{
    if (tau < 1) throw InvalidArgument("tau must be >= 1");
    const std::vector<Matrix> batch{seq};
    check_batch(p, mask, batch);
    const Coupling coupling(p, mask);
    const auto bt = forward_batch(p, coupling, batch, tau);
    StfOutput out;
    out.latents = bt.z_all.transpose();
    out.predictions = bt.z_all.rightCols(bt.steps).topRows(p.n_dim).transpose();
    return out;
}

double mse_loss(const ColMatrix& predictions, const ColMatrix& targets)
{
    if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
        throw InvalidArgument("prediction and target shapes differ");
    if (predictions.rows() == 0) return 0.0;
    return (predictions - targets).squaredNorm() / static_cast<double>(predictions.rows());
}

double batch_loss(const PlrnnParams& p, const TopologyMask& mask, const std::vector<Matrix>& batch,
                  int tau)
{
    if (tau < 1) throw InvalidArgument("tau must be >= 1");
    check_batch(p, mask, batch);
    return forward_batch(p, Coupling(p, mask), batch, tau).loss;
}

LossAndGrads bptt_grads(const PlrnnParams& p, const TopologyMask& mask,
                        const std::vector<Matrix>& batch, int tau)
{
    if (tau < 1) throw InvalidArgument("tau must be >= 1");
    check_batch(p, mask, batch);
    const Coupling coupling(p, mask);
    const auto bt = forward_batch(p, coupling, batch, tau);
    const int m = p.m_dim, n = p.n_dim;
    const long s = bt.width;
    const double scale = 2.0 / (static_cast<double>(s) * bt.steps);

    LossAndGrads out;
    out.loss = bt.loss;
    if (!std::isfinite(out.loss)) throw TrainingFailure("non-finite loss", -1, -1);

    // g_all block t holds dL/dz_{t+1}, the gradient at the output of transition t.
    ColMatrix g_all(m, bt.steps * s);
    ColMatrix g = ColMatrix::Zero(m, s);
    g.topRows(n) = scale * (bt.z_all.rightCols(s).topRows(n) - bt.x_all.rightCols(s));
    ColMatrix q(m, s);
    for (long t = bt.steps - 1; t >= 0; --t) {
        g_all.middleCols(t * s, s) = g;
        if (t == 0) break;
        const auto phi = bt.phi_all.middleCols(t * s, s);
        coupling.apply_transpose(g, q);
        q = q.cwiseProduct((phi.array() > 0.0).cast<double>().matrix());
        const Eigen::RowVectorXd q_mean = q.colwise().mean();
        ColMatrix du = p.a_diag.asDiagonal() * g;
        du += q.rowwise() - q_mean;
        if (forced_at(t, tau)) du.topRows(n).setZero();
        du.topRows(n) += scale * (bt.z_all.middleCols(t * s, s).topRows(n) -
                                  bt.x_all.middleCols(t * s, s));
        g = std::move(du);
    }

    out.grads.a_diag = g_all.cwiseProduct(bt.u_all).rowwise().sum();
    out.grads.h = g_all.rowwise().sum();
    coupling.accumulate_grad(g_all, bt.phi_all, mask, out.grads.w);
    if (!out.grads.all_finite()) throw TrainingFailure("non-finite gradient", -1, -1);
    return out;
}

RadamState RadamState::zeros(int m_dim)
{
    return {ParamGrads::zeros(m_dim), ParamGrads::zeros(m_dim), 0};
}

PlrnnParams radam_step(RadamState& state, const PlrnnParams& params, const ParamGrads& grads,
                       double lr, const RadamConfig& cfg)
{
    if (state.m.a_diag.size() != params.m_dim || grads.a_diag.size() != params.m_dim)
        throw InvalidArgument("optimizer state does not match the parameters");
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double b1t = std::pow(cfg.beta1, t);
    const double b2t = std::pow(cfg.beta2, t);
    const double rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    const bool rectified = rho_t > 4.0;
    const double r = rectified ? std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                                           ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                               : 0.0;

    PlrnnParams out = params;
    const auto update = [&](auto& theta, auto& m, auto& v, const auto& g) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        const auto m_hat = m / (1.0 - b1t);
        if (rectified) {
            const auto v_hat = (v / (1.0 - b2t)).cwiseSqrt().array() + cfg.eps;
            theta.array() -= lr * r * m_hat.array() / v_hat;
        } else {
            theta -= lr * m_hat;
        }
    };
    update(out.a_diag, state.m.a_diag, state.v.a_diag, grads.a_diag);
    update(out.w, state.m.w, state.v.w, grads.w);
    update(out.h, state.m.h, state.v.h, grads.h);
    return out;
}

std::vector<std::vector<long>> batch_schedule(long series_len, const TrainConfig& cfg, int epoch)
{
    if (series_len <= cfg.seq_len)
        throw InvalidArgument(fmt::format("series of length {} is not longer than seq_len {}",
                                          series_len, cfg.seq_len));
    std::mt19937_64 rng(derive_seed(cfg.seed, "batches", static_cast<std::uint64_t>(epoch)));
    std::uniform_int_distribution<long> start(0, series_len - cfg.seq_len);
    std::vector<std::vector<long>> out(cfg.batches_per_epoch);
    for (auto& b : out) {
        b.resize(cfg.batch_size);
        for (auto& s : b) s = start(rng);
    }
    return out;
}

TrainResult train(const Dataset& data, const TopologyMask& mask, const TrainConfig& cfg,
                  const PlrnnParams& init)
{
    cfg.validate();
    init.validate();
    if (init.m_dim != cfg.m_dim || init.n_dim != cfg.n_dim)
        throw InvalidArgument("initial parameters do not match the configured dimensions");
    if (data.dims() != cfg.n_dim)
        throw InvalidArgument(fmt::format("dataset has {} dimensions, model reads out {}",
                                          data.dims(), cfg.n_dim));
    if (data.length() <= cfg.seq_len)
        throw InvalidArgument("dataset is not longer than the subsequence length");
    if (!data.series.data.allFinite()) throw DegenerateData("dataset contains non-finite values");

    TrainResult res;
    PlrnnParams params = apply_mask(init, mask);
    res.best_params = params;
    RadamState opt = RadamState::zeros(cfg.m_dim);
    const Matrix& series = data.series.data;
    std::vector<Matrix> batch(cfg.batch_size);

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate(cfg, epoch);
        const auto schedule = batch_schedule(data.length(), cfg, epoch);
        double epoch_loss = 0.0;
        for (const auto& starts : schedule) {
            for (std::size_t b = 0; b < starts.size(); ++b)
                batch[b] = series.middleRows(starts[b], cfg.seq_len);
            LossAndGrads lg;
            try {
                lg = bptt_grads(params, mask, batch, cfg.tau);
            } catch (const TrainingFailure& e) {
                res.status = TrainStatus::Failed;
                res.failure = fmt::format("{} at epoch {} step {}", e.what(), epoch, step);
                return res;
            }
            if (cfg.grad_clip > 0.0) {
                const double norm = std::sqrt(lg.grads.squared_norm());
                if (norm > cfg.grad_clip) lg.grads.scale(cfg.grad_clip / norm);
            }
            params = radam_step(opt, params, lg.grads, lr);
            epoch_loss += lg.loss;
            ++step;
        }
        epoch_loss /= static_cast<double>(schedule.size());
        res.loss_history.push_back(epoch_loss);
        if (!std::isfinite(epoch_loss) || !params.w.allFinite() || !params.a_diag.allFinite() ||
            !params.h.allFinite()) {
            res.status = TrainStatus::Failed;
            res.failure = fmt::format("non-finite loss at epoch {}", epoch);
            return res;
        }

        const bool last = epoch + 1 == cfg.epochs;
        if ((epoch + 1) % cfg.eval_every == 0 || last) {
            const double d = evaluate_d_stsp(params, mask, data, cfg.eval);
            res.eval_epochs.push_back(epoch + 1);
            res.d_stsp_history.push_back(d);
            if (d < res.best_d_stsp) {
                res.best_d_stsp = d;
                res.best_params = params;
                res.epoch_best = epoch + 1;
            }
            if (d < cfg.threshold && !res.epoch_of_threshold) {
                res.epoch_of_threshold = epoch + 1;
                if (cfg.stop_at_threshold) break;
            }
        }
    }
    return res;
}

TrainResult train(const Dataset& data, const TopologyMask& mask, const TrainConfig& cfg)
{
    return train(data, mask, cfg,
                 init_params(cfg.m_dim, cfg.n_dim, cfg.init_sigma, derive_seed(cfg.seed, "init")));
}

}  // namespace dsr
