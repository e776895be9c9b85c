#include "dsr/experiment.hpp"

#include "dsr/io.hpp"
#include "dsr/metrics.hpp"
#include "dsr/parallel.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

namespace dsr {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> command_names()
{
    return {"simulate", "train", "prune", "topo-train", "analyze", "report"};
}

namespace {

// Copies known keys from a JSON object and rejects the rest.
class Reader {
public:
    Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where))
    {
        if (!obj_.is_object()) throw ConfigError(fmt::format("{}: expected an object", where_));
    }
    ~Reader() noexcept(false)
    {
        if (std::uncaught_exceptions()) return;
        for (const auto& [key, value] : obj_.items())
            if (!seen_.count(key))
                throw ConfigError(fmt::format("{}: unknown key '{}'", where_, key));
    }

    template <class T>
    void get(const char* key, T& field)
    {
        seen_.insert(key);
        if (!obj_.contains(key)) return;
        try {
            field = obj_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(fmt::format("{}.{}: {}", where_, key, e.what()));
        }
    }

    const json* child(const char* key)
    {
        seen_.insert(key);
        return obj_.contains(key) ? &obj_.at(key) : nullptr;
    }

private:
    const json& obj_;
    std::string where_;
    std::set<std::string> seen_;
};

void read_eval(const json& j, EvalConfig& e)
{
    Reader r(j, "train.eval");
    r.get("orbit_len", e.orbit_len);
    r.get("transient", e.transient);
    r.get("bins", e.bins);
    r.get("pseudo_count", e.pseudo_count);
    r.get("spectrum_sigma", e.spectrum_sigma);
    r.get("pred_steps", e.pred_steps);
    r.get("pred_starts", e.pred_starts);
    r.get("reference_len", e.reference_len);
}

json eval_json(const EvalConfig& e)
{
    return {{"orbit_len", e.orbit_len},       {"transient", e.transient},
            {"bins", e.bins},                 {"pseudo_count", e.pseudo_count},
            {"spectrum_sigma", e.spectrum_sigma}, {"pred_steps", e.pred_steps},
            {"pred_starts", e.pred_starts},   {"reference_len", e.reference_len}};
}

void read_train(const json& j, TrainConfig& c)
{
    Reader r(j, "train");
    r.get("m_dim", c.m_dim);
    r.get("n_dim", c.n_dim);
    r.get("seq_len", c.seq_len);
    if (const json* tau = r.child("tau")) {
        if (tau->is_string() && tau->get<std::string>() == "inf") c.tau = kNoForcing;
        else if (tau->is_number_integer()) c.tau = tau->get<int>();
        else throw ConfigError("train.tau: expected an integer or \"inf\"");
    }
    r.get("batch_size", c.batch_size);
    r.get("batches_per_epoch", c.batches_per_epoch);
    r.get("epochs", c.epochs);
    r.get("lr_start", c.lr_start);
    r.get("lr_end", c.lr_end);
    r.get("init_sigma", c.init_sigma);
    r.get("eval_every", c.eval_every);
    r.get("grad_clip", c.grad_clip);
    r.get("stop_at_threshold", c.stop_at_threshold);
    r.get("threshold", c.threshold);
    if (const json* e = r.child("eval")) read_eval(*e, c.eval);
}

json train_json(const TrainConfig& c)
{
    json tau = c.tau == kNoForcing ? json("inf") : json(c.tau);
    return {{"m_dim", c.m_dim},
            {"n_dim", c.n_dim},
            {"seq_len", c.seq_len},
            {"tau", tau},
            {"batch_size", c.batch_size},
            {"batches_per_epoch", c.batches_per_epoch},
            {"epochs", c.epochs},
            {"lr_start", c.lr_start},
            {"lr_end", c.lr_end},
            {"init_sigma", c.init_sigma},
            {"eval_every", c.eval_every},
            {"grad_clip", c.grad_clip},
            {"stop_at_threshold", c.stop_at_threshold},
            {"threshold", c.threshold},
            {"eval", eval_json(c.eval)}};
}

void read_geometric(const json& j, GeometricConfig& g)
{
    Reader r(j, "prune.geometric");
    r.get("orbit_len", g.orbit_len);
    r.get("transient", g.transient);
    r.get("bins", g.bins);
    r.get("pseudo_count", g.pseudo_count);
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text)
{
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
    }
    ExperimentConfig cfg;
    Reader r(root, "config");
    r.get("command", cfg.command);
    r.get("preset", cfg.preset);
    try {
        cfg.train = train_preset(cfg.preset);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    if (const json* d = r.child("data")) {
        Reader dr(*d, "data");
        dr.get("system", cfg.data.system);
        dr.get("n_samples", cfg.data.n_samples);
        dr.get("transient", cfg.data.transient);
        dr.get("noise_pct", cfg.data.noise_pct);
        dr.get("initial_state", cfg.data.initial_state);
        dr.get("dataset", cfg.data.dataset);
        dr.get("raw_series", cfg.data.raw_series);
        if (const json* p = dr.child("preprocess")) {
            Reader pr(*p, "data.preprocess");
            pr.get("smooth_sigma", cfg.data.preprocess.smooth_sigma);
            pr.get("window", cfg.data.preprocess.window);
            pr.get("embed_dim", cfg.data.preprocess.embed_dim);
            pr.get("lag", cfg.data.preprocess.lag);
        }
    }
    if (const json* t = r.child("train")) read_train(*t, cfg.train);
    r.get("n_seeds", cfg.n_seeds);
    r.get("mask", cfg.mask);
    if (const json* p = r.child("prune")) {
        Reader pr(*p, "prune");
        pr.get("criteria", cfg.criteria);
        pr.get("fraction_per_iter", cfg.schedule.fraction_per_iter);
        pr.get("n_iters", cfg.schedule.n_iters);
        pr.get("retrain_epochs", cfg.schedule.retrain_epochs);
        pr.get("reinit_seeds", cfg.reinit_seeds);
        if (const json* g = pr.child("geometric")) read_geometric(*g, cfg.geometric);
    }
    if (const json* t = r.child("topology")) {
        Reader tr(*t, "topology");
        tr.get("target_nnz", cfg.target_nnz);
        if (const json* gens = tr.child("generators")) {
            if (!gens->is_array()) throw ConfigError("topology.generators: expected an array");
            for (const auto& g : *gens) {
                TopologySpec spec;
                Reader gr(g, "topology.generators[]");
                gr.get("kind", spec.kind);
                gr.get("k", spec.k);
                gr.get("p", spec.p);
                gr.get("n_readout", spec.n_readout);
                cfg.topologies.push_back(spec);
            }
        }
    }
    if (const json* a = r.child("analyze")) {
        Reader ar(*a, "analyze");
        ar.get("masks", cfg.masks);
        ar.get("n_readout", cfg.n_readout);
        ar.get("n_random_refs", cfg.n_random_refs);
    }
    r.get("inputs", cfg.inputs);
    r.get("seed", cfg.seed);
    r.get("threads", cfg.threads);
    r.get("out_dir", cfg.out_dir);
    r.child("rules");
    return cfg;
}

ExperimentConfig load_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    ExperimentConfig cfg = parse_config(ss.str());
    // Relative data paths resolve against the config's directory.
    const auto resolve = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (path.parent_path() / p).string();
    };
    resolve(cfg.data.dataset);
    resolve(cfg.data.raw_series);
    resolve(cfg.mask);
    for (auto& m : cfg.masks) resolve(m);
    for (auto& i : cfg.inputs) resolve(i);
    return cfg;
}

std::string config_snapshot(const ExperimentConfig& cfg)
{
    json topologies = json::array();
    for (const auto& t : cfg.topologies)
        topologies.push_back({{"kind", t.kind}, {"k", t.k}, {"p", t.p}, {"n_readout", t.n_readout}});
    json j;
    j["command"] = cfg.command;
    j["preset"] = cfg.preset;
    j["data"] = {{"system", cfg.data.system},
                 {"n_samples", cfg.data.n_samples},
                 {"transient", cfg.data.transient},
                 {"noise_pct", cfg.data.noise_pct},
                 {"initial_state", cfg.data.initial_state},
                 {"dataset", cfg.data.dataset},
                 {"raw_series", cfg.data.raw_series},
                 {"preprocess",
                  {{"smooth_sigma", cfg.data.preprocess.smooth_sigma},
                   {"window", cfg.data.preprocess.window},
                   {"embed_dim", cfg.data.preprocess.embed_dim},
                   {"lag", cfg.data.preprocess.lag}}}};
    j["train"] = train_json(cfg.train);
    j["n_seeds"] = cfg.n_seeds;
    j["mask"] = cfg.mask;
    j["prune"] = {{"criteria", cfg.criteria},
                  {"fraction_per_iter", cfg.schedule.fraction_per_iter},
                  {"n_iters", cfg.schedule.n_iters},
                  {"retrain_epochs", cfg.schedule.retrain_epochs},
                  {"reinit_seeds", cfg.reinit_seeds},
                  {"geometric",
                   {{"orbit_len", cfg.geometric.orbit_len},
                    {"transient", cfg.geometric.transient},
                    {"bins", cfg.geometric.bins},
                    {"pseudo_count", cfg.geometric.pseudo_count}}}};
    j["topology"] = {{"target_nnz", cfg.target_nnz}, {"generators", topologies}};
    j["analyze"] = {{"masks", cfg.masks},
                    {"n_readout", cfg.n_readout},
                    {"n_random_refs", cfg.n_random_refs}};
    j["inputs"] = cfg.inputs;
    j["seed"] = cfg.seed;
    // Fixed rules, recorded for the reader; parse_config skips this object.
    j["rules"] = {{"standardization", "population mean/std per dimension"},
                  {"lr_schedule", "geometric, lr_start*(lr_end/lr_start)^(e/(epochs-1))"},
                  {"optimizer", "radam beta1=0.9 beta2=0.999 eps=1e-8"},
                  {"prune_count", "keep floor((1-fraction)*remaining)"},
                  {"prune_tie_break", "lowest (row, col) first"},
                  {"divergence_bound", kDivergenceBound},
                  {"bin_margin", 0.05},
                  {"diverged_d_stsp", "ln(k^N)"},
                  {"diverged_d_hellinger", 1.0},
                  {"seed_derivation", "splitmix64(master ^ fnv1a64(tag)) mixed with the index"}};
    j["threads"] = cfg.threads;
    j["out_dir"] = cfg.out_dir;
    return j.dump(2) + "\n";
}

std::uint64_t component_seed(const ExperimentConfig& cfg, const std::string& tag, std::uint64_t index)
{
    return derive_seed(cfg.seed, tag, index);
}

Dataset build_dataset(const ExperimentConfig& cfg)
{
    const DataSpec& d = cfg.data;
    if (!d.dataset.empty()) return io::read_dataset(d.dataset);
    if (!d.raw_series.empty()) {
        const auto raw = io::read_raw_series(d.raw_series);
        return preprocess_timeseries(raw, d.preprocess);
    }
    SystemSpec spec;
    try {
        spec = system_preset(d.system);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    Vector x0 = spec.default_initial_state();
    if (!d.initial_state.empty()) {
        if (static_cast<int>(d.initial_state.size()) != spec.state_dim())
            throw ConfigError(fmt::format("data.initial_state needs {} entries", spec.state_dim()));
        x0 = Eigen::Map<const Vector>(d.initial_state.data(), spec.state_dim());
    }
    const Trajectory traj = simulate(spec, x0, d.n_samples, d.transient);
    return make_dataset(traj, d.noise_pct, component_seed(cfg, "noise", 0));
}

namespace {

int even_degree(long target_nnz, int m)
{
    return std::max(2, static_cast<int>(std::lround(static_cast<double>(target_nnz) / m / 2.0)) * 2);
}

// Seed-clique size for which the attachment model lands closest to the undirected target.
int ba_degree(long target_nnz, int m)
{
    int best = 1;
    double best_gap = 1e300;
    for (int k = 1; k < m; ++k) {
        const double edges = k * (k - 1) / 2.0 + static_cast<double>(m - k) * k;
        const double gap = std::abs(2.0 * edges - static_cast<double>(target_nnz));
        if (gap < best_gap) best_gap = gap, best = k;
    }
    return best;
}

}  // namespace

DirectedGraph build_topology(const TopologySpec& spec, int m_dim, int n_dim, long target_nnz,
                             std::uint64_t seed)
{
    if (target_nnz <= 0 && spec.k <= 0 && spec.kind != "erdos_renyi")
        throw ConfigError(fmt::format("topology '{}' needs k or target_nnz", spec.kind));
    DirectedGraph g;
    try {
        if (spec.kind == "erdos_renyi") {
            if (target_nnz <= 0) throw ConfigError("erdos_renyi needs target_nnz");
            g = gen_erdos_renyi(m_dim, target_nnz / 2, seed);
        } else if (spec.kind == "watts_strogatz") {
            g = gen_watts_strogatz(m_dim, spec.k > 0 ? spec.k : even_degree(target_nnz, m_dim),
                                   spec.p, seed);
        } else if (spec.kind == "barabasi_albert") {
            g = gen_barabasi_albert(m_dim, spec.k > 0 ? spec.k : ba_degree(target_nnz, m_dim), seed);
        } else if (spec.kind == "geohub") {
            g = gen_geohub(m_dim, spec.k > 0 ? spec.k : even_degree(target_nnz, m_dim),
                           spec.n_readout > 0 ? spec.n_readout : n_dim, seed);
        } else {
            throw ConfigError(fmt::format(
              "unknown topology '{}'; valid: erdos_renyi, watts_strogatz, barabasi_albert, geohub",
              spec.kind));
        }
    } catch (const InvalidArgument& e) {
        throw ConfigError(fmt::format("topology '{}': {}", spec.kind, e.what()));
    }
    if (target_nnz > 0 && g.edge_count() != target_nnz) {
        const double gap = std::abs(static_cast<double>(g.edge_count() - target_nnz)) / target_nnz;
        if (gap > 0.1)
            throw ConfigError(fmt::format("topology '{}' gives {} entries, too far from target {}",
                                          spec.kind, g.edge_count(), target_nnz));
        g = match_edge_count(g, target_nnz, derive_seed(seed, "match"));
    }
    return g;
}

namespace {

class EventLog {
public:
    explicit EventLog(const fs::path& path)
        : out_(path), start_(std::chrono::steady_clock::now())
    {
    }

    void emit(const std::string& event, json fields = json::object())
    {
        fields["event"] = event;
        fields["elapsed_s"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::lock_guard lock(mutex_);
        out_ << fields.dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
    std::mutex mutex_;
    std::chrono::steady_clock::time_point start_;
};

struct Context {
    const ExperimentConfig& cfg;
    fs::path out;
    EventLog& log;
};

std::string seed_tag(int s) { return fmt::format("seed{}", s); }

TrainConfig seeded_train(const ExperimentConfig& cfg, int s)
{
    TrainConfig t = cfg.train;
    t.seed = component_seed(cfg, "run", s);
    return t;
}

void write_history(const fs::path& path, const TrainResult& res)
{
    io::CsvWriter w(path, {"epoch", "loss", "d_stsp"});
    std::size_t k = 0;
    for (std::size_t e = 0; e < res.loss_history.size(); ++e) {
        std::string d;
        if (k < res.eval_epochs.size() && res.eval_epochs[k] == static_cast<int>(e + 1))
            d = io::format_result(res.d_stsp_history[k++]);
        w.row({std::to_string(e + 1), io::format_exact(res.loss_history[e]), d});
    }
}

EvalReport failed_report(const Dataset& data, const TopologyMask& mask, const EvalConfig& e)
{
    EvalReport r;
    r.diverged = true;
    r.sparsity = mask.sparsity();
    const int k = e.bins > 0 ? e.bins : default_bins(static_cast<int>(data.dims()));
    r.d_stsp = d_stsp_sentinel(k, static_cast<int>(data.dims()));
    r.d_hellinger = 1.0;
    r.pred_error_20 = std::numeric_limits<double>::infinity();
    return r;
}

int run_simulate(Context& ctx)
{
    const Dataset data = build_dataset(ctx.cfg);
    io::write_dataset(ctx.out / "dataset", data);
    ctx.log.emit("dataset_written", {{"rows", data.length()}, {"dims", data.dims()}});
    return 0;
}

int run_train(Context& ctx, const Dataset& data)
{
    const auto& cfg = ctx.cfg;
    const TopologyMask mask =
      cfg.mask.empty() ? TopologyMask::full(cfg.train.m_dim) : io::read_mask(cfg.mask);
    if (mask.size() != cfg.train.m_dim) throw ConfigError("mask size does not match train.m_dim");
    struct Cell {
        TrainResult res;
        EvalReport report;
    };
    std::vector<Cell> cells(cfg.n_seeds);
    parallel_for(cfg.n_seeds, cfg.threads, [&](long s) {
        ctx.log.emit("train_start", {{"seed", s}});
        cells[s].res = train(data, mask, seeded_train(cfg, static_cast<int>(s)));
        const auto& res = cells[s].res;
        cells[s].report = res.epoch_best >= 0 ? evaluate(res.best_params, mask, data, cfg.train.eval)
                                              : failed_report(data, mask, cfg.train.eval);
        ctx.log.emit(res.status == TrainStatus::Ok ? "train_done" : "train_failed",
                     {{"seed", s}, {"best_d_stsp", res.best_d_stsp}, {"failure", res.failure}});
    });
    io::CsvWriter results(ctx.out / "results.csv", io::kResultsHeader);
    io::CsvWriter thresholds(ctx.out / "threshold.csv",
                             {"run_id", "epoch_of_threshold", "best_d_stsp", "status"});
    int failures = 0;
    for (int s = 0; s < cfg.n_seeds; ++s) {
        const auto& [res, report] = cells[s];
        failures += res.status == TrainStatus::Failed;
        io::write_checkpoint(ctx.out / "checkpoints" / (seed_tag(s) + ".json"), res.best_params, mask);
        write_history(ctx.out / "history" / (seed_tag(s) + ".csv"), res);
        results.row(io::results_row(seed_tag(s), "none", report, res.epoch_best));
        thresholds.row({seed_tag(s),
                        res.epoch_of_threshold ? std::to_string(*res.epoch_of_threshold) : "",
                        io::format_result(res.best_d_stsp),
                        res.status == TrainStatus::Ok ? "ok" : "failed"});
    }
    return failures ? 2 : 0;
}

int run_prune(Context& ctx, const Dataset& data)
{
    const auto& cfg = ctx.cfg;
    std::vector<Criterion> criteria;
    for (const auto& c : cfg.criteria) {
        try {
            criteria.push_back(parse_criterion(c));
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
    }
    cfg.schedule.validate();
    const int n_crit = static_cast<int>(criteria.size());
    std::vector<PlrnnParams> theta0(cfg.n_seeds);
    for (int s = 0; s < cfg.n_seeds; ++s) {
        theta0[s] = init_params(cfg.train.m_dim, cfg.train.n_dim, cfg.train.init_sigma,
                                component_seed(cfg, "theta0", s));
        io::write_checkpoint(ctx.out / "checkpoints" / fmt::format("theta0_{}.json", seed_tag(s)),
                             theta0[s], TopologyMask::full(cfg.train.m_dim));
    }
    std::vector<PruneTrace> traces(static_cast<std::size_t>(n_crit) * cfg.n_seeds);
    std::vector<ReinitResult> reinit(traces.size());
    parallel_for(static_cast<long>(traces.size()), cfg.threads, [&](long cell) {
        const int c = static_cast<int>(cell / cfg.n_seeds), s = static_cast<int>(cell % cfg.n_seeds);
        const std::string crit = to_string(criteria[c]);
        ctx.log.emit("prune_start", {{"criterion", crit}, {"seed", s}});
        PruneOptions opts;
        opts.geometric = cfg.geometric;
        opts.score_seed = component_seed(cfg, "random-scores", s);
        traces[cell] = iterative_prune(data, seeded_train(cfg, s), criteria[c], cfg.schedule,
                                       theta0[s], opts);
        for (const auto& it : traces[cell].iterations)
            ctx.log.emit(it.status == IterationStatus::Ok ? "prune_iteration" : "prune_failed",
                         {{"criterion", crit},
                          {"seed", s},
                          {"iter", it.iter},
                          {"sparsity", it.sparsity},
                          {"d_stsp", it.report.d_stsp},
                          {"failure", it.failure}});
        if (cfg.reinit_seeds > 0 && traces[cell].complete) {
            TrainConfig t = seeded_train(cfg, s);
            t.epochs = cfg.schedule.retrain_epochs;
            reinit[cell] = reinit_experiment(data, t, traces[cell].final_mask, theta0[s],
                                             cfg.reinit_seeds);
        }
    });

    io::CsvWriter results(ctx.out / "results.csv", io::kResultsHeader);
    std::unique_ptr<io::CsvWriter> reinit_csv;
    if (cfg.reinit_seeds > 0)
        reinit_csv = std::make_unique<io::CsvWriter>(
          ctx.out / "reinit.csv",
          std::vector<std::string>{"criterion", "seed", "reinit", "sparsity", "d_stsp_theta0",
                                   "d_stsp_redrawn", "failed"});
    int failures = 0;
    for (int c = 0; c < n_crit; ++c)
        for (int s = 0; s < cfg.n_seeds; ++s) {
            const auto& trace = traces[static_cast<std::size_t>(c) * cfg.n_seeds + s];
            const std::string crit = to_string(criteria[c]);
            const std::string run = fmt::format("{}_{}", crit, seed_tag(s));
            io::CsvWriter tr(ctx.out / "traces" / (run + ".csv"), io::kTraceHeader);
            for (const auto& it : trace.iterations) {
                const bool ok = it.status == IterationStatus::Ok;
                const EvalReport rep =
                  ok ? it.report : failed_report(data, it.mask, cfg.train.eval);
                io::write_mask(ctx.out / "masks" / fmt::format("{}_iter{:02d}.mask", run, it.iter),
                               it.mask);
                tr.row({std::to_string(it.iter), io::format_result(it.sparsity),
                        io::format_result(rep.d_stsp), io::format_result(rep.d_hellinger),
                        io::format_result(rep.pred_error_20), ok ? "ok" : "failed"});
                results.row(io::results_row(fmt::format("{}_iter{:02d}", run, it.iter), crit, rep,
                                            it.epoch_best));
            }
            if (trace.complete) io::write_mask(ctx.out / "masks" / (run + "_final.mask"), trace.final_mask);
            else ++failures;
            if (reinit_csv) {
                const auto& r = reinit[static_cast<std::size_t>(c) * cfg.n_seeds + s];
                for (std::size_t k = 0; k < r.failed.size(); ++k)
                    reinit_csv->row({crit, std::to_string(s), std::to_string(k),
                                     io::format_result(trace.final_mask.sparsity()),
                                     io::format_result(r.d_stsp_original[k]),
                                     io::format_result(r.d_stsp_redrawn[k]), r.failed[k] ? "1" : "0"});
            }
        }
    return failures ? 2 : 0;
}

int run_topo_train(Context& ctx, const Dataset& data)
{
    const auto& cfg = ctx.cfg;
    if (cfg.topologies.empty()) throw ConfigError("topology.generators is empty");
    const int n_top = static_cast<int>(cfg.topologies.size());
    std::vector<TopologyMask> masks(static_cast<std::size_t>(n_top) * cfg.n_seeds);
    for (int t = 0; t < n_top; ++t)
        for (int s = 0; s < cfg.n_seeds; ++s) {
            const auto& spec = cfg.topologies[t];
            const auto g = build_topology(spec, cfg.train.m_dim, cfg.train.n_dim, cfg.target_nnz,
                                          component_seed(cfg, "topology:" + spec.kind, s));
            masks[static_cast<std::size_t>(t) * cfg.n_seeds + s] = g.to_mask();
        }
    struct Cell {
        TrainResult res;
        EvalReport report;
    };
    std::vector<Cell> cells(masks.size());
    parallel_for(static_cast<long>(masks.size()), cfg.threads, [&](long cell) {
        const int t = static_cast<int>(cell / cfg.n_seeds), s = static_cast<int>(cell % cfg.n_seeds);
        const std::string kind = cfg.topologies[t].kind;
        ctx.log.emit("topo_train_start", {{"topology", kind}, {"seed", s}, {"nnz", masks[cell].nnz()}});
        cells[cell].res = train(data, masks[cell], seeded_train(cfg, s));
        const auto& res = cells[cell].res;
        cells[cell].report = res.epoch_best >= 0
                               ? evaluate(res.best_params, masks[cell], data, cfg.train.eval)
                               : failed_report(data, masks[cell], cfg.train.eval);
        ctx.log.emit(res.status == TrainStatus::Ok ? "topo_train_done" : "topo_train_failed",
                     {{"topology", kind}, {"seed", s}, {"best_d_stsp", res.best_d_stsp},
                      {"failure", res.failure}});
    });
    io::CsvWriter results(ctx.out / "results.csv", io::kResultsHeader);
    io::CsvWriter thresholds(ctx.out / "threshold.csv",
                             {"topology", "seed", "nnz", "epoch_of_threshold", "best_d_stsp", "status"});
    int failures = 0;
    for (int t = 0; t < n_top; ++t)
        for (int s = 0; s < cfg.n_seeds; ++s) {
            const std::size_t cell = static_cast<std::size_t>(t) * cfg.n_seeds + s;
            const auto& [res, report] = cells[cell];
            const std::string kind = cfg.topologies[t].kind;
            const std::string run = fmt::format("{}_{}", kind, seed_tag(s));
            failures += res.status == TrainStatus::Failed;
            io::write_mask(ctx.out / "masks" / (run + ".mask"), masks[cell]);
            results.row(io::results_row(run, kind, report, res.epoch_best));
            thresholds.row({kind, std::to_string(s), std::to_string(masks[cell].nnz()),
                            res.epoch_of_threshold ? std::to_string(*res.epoch_of_threshold) : "",
                            io::format_result(res.best_d_stsp),
                            res.status == TrainStatus::Ok ? "ok" : "failed"});
        }
    return failures ? 2 : 0;
}

std::vector<fs::path> expand_masks(const std::vector<std::string>& entries)
{
    std::vector<fs::path> out;
    for (const auto& e : entries) {
        if (fs::is_directory(e)) {
            std::vector<fs::path> found;
            for (const auto& f : fs::directory_iterator(e))
                if (f.path().extension() == ".mask") found.push_back(f.path());
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.emplace_back(e);
        }
    }
    return out;
}

int run_analyze(Context& ctx)
{
    const auto& cfg = ctx.cfg;
    const auto paths = expand_masks(cfg.masks);
    if (paths.empty()) throw ConfigError("analyze.masks lists no mask files");
    std::vector<TopologyMask> masks;
    for (const auto& p : paths) masks.push_back(io::read_mask(p));
    std::vector<GraphStats> stats(masks.size());
    const int n_readout = cfg.n_readout > 0 ? cfg.n_readout : cfg.train.n_dim;
    parallel_for(static_cast<long>(masks.size()), cfg.threads, [&](long k) {
        const auto g = DirectedGraph::from_mask(masks[k]);
        stats[k] = graph_stats(g, std::min(n_readout, g.size()), cfg.n_random_refs,
                               component_seed(cfg, "swi", k));
    });
    io::CsvWriter w(ctx.out / "graph_stats.csv", io::kGraphStatsHeader);
    io::CsvWriter deg(ctx.out / "degrees.csv",
                      {"graph_id", "readout_mean_in", "hidden_mean_in", "readout_mean_out",
                       "hidden_mean_out"});
    for (std::size_t k = 0; k < masks.size(); ++k) {
        const auto& s = stats[k];
        const std::string id = paths[k].stem().string();
        const int max_in = s.degrees.in_degrees.empty()
                             ? 0 : *std::max_element(s.degrees.in_degrees.begin(), s.degrees.in_degrees.end());
        const int max_out = s.degrees.out_degrees.empty()
                              ? 0 : *std::max_element(s.degrees.out_degrees.begin(), s.degrees.out_degrees.end());
        w.row({id, std::to_string(s.n), std::to_string(s.edges), io::format_result(s.path.mean),
               io::format_result(s.clustering), std::isnan(s.swi) ? "nan" : io::format_result(s.swi),
               io::format_result(s.path.unreachable_fraction), std::to_string(max_in),
               std::to_string(max_out)});
        deg.row({id, io::format_result(s.degrees.readout_mean_in),
                 io::format_result(s.degrees.hidden_mean_in),
                 io::format_result(s.degrees.readout_mean_out),
                 io::format_result(s.degrees.hidden_mean_out)});
        ctx.log.emit("graph_analyzed", {{"graph_id", id}, {"edges", s.edges}});
    }
    return 0;
}

double median(std::vector<double> v)
{
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path, std::size_t width)
{
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(in, line);
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        if (fields.size() != width)
            throw ParseError(fmt::format("{}:{}: expected {} fields, found {}", path.string(),
                                         line_no, width, fields.size()));
        rows.push_back(std::move(fields));
    }
    return rows;
}

double parse_number(const std::string& s)
{
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
}

int run_report(Context& ctx)
{
    const auto& cfg = ctx.cfg;
    std::vector<fs::path> dirs;
    for (const auto& i : cfg.inputs) dirs.emplace_back(i);
    if (dirs.empty()) dirs.push_back(ctx.out);

    // (criterion, sparsity) -> metric columns
    struct Group {
        std::vector<double> d_stsp, d_h, pe;
        int runs = 0, diverged = 0;
    };
    std::map<std::pair<std::string, std::string>, Group> groups;
    struct Threshold {
        std::vector<double> epochs, d_stsp;
        int reached = 0, runs = 0;
    };
    std::map<std::string, Threshold> topo;
    for (const auto& dir : dirs) {
        if (fs::exists(dir / "results.csv"))
            for (const auto& r : read_csv_rows(dir / "results.csv", io::kResultsHeader.size())) {
                auto& g = groups[{r[1], r[2]}];
                ++g.runs;
                g.diverged += r[6] == "1";
                g.d_stsp.push_back(parse_number(r[3]));
                g.d_h.push_back(parse_number(r[4]));
                g.pe.push_back(parse_number(r[5]));
            }
        if (fs::exists(dir / "threshold.csv")) {
            std::ifstream probe(dir / "threshold.csv");
            std::string header;
            std::getline(probe, header);
            if (header.rfind("topology,", 0) == 0)
                for (const auto& r : read_csv_rows(dir / "threshold.csv", 6)) {
                    auto& t = topo[r[0]];
                    ++t.runs;
                    t.d_stsp.push_back(parse_number(r[4]));
                    // Runs that never reach the threshold rank last.
                    if (r[3].empty()) t.epochs.push_back(std::numeric_limits<double>::infinity());
                    else t.epochs.push_back(parse_number(r[3])), ++t.reached;
                }
        }
    }
    io::CsvWriter w(ctx.out / "summary.csv",
                    {"criterion", "sparsity", "runs", "diverged", "median_d_stsp",
                     "median_d_hellinger", "median_pe20"});
    for (const auto& [key, g] : groups)
        w.row({key.first, key.second, std::to_string(g.runs), std::to_string(g.diverged),
               io::format_result(median(g.d_stsp)), io::format_result(median(g.d_h)),
               io::format_result(median(g.pe))});
    if (!topo.empty()) {
        io::CsvWriter t(ctx.out / "threshold_summary.csv",
                        {"topology", "runs", "reached", "median_epoch_of_threshold", "median_best_d_stsp"});
        for (const auto& [kind, v] : topo) {
            const double me = median(v.epochs);
            t.row({kind, std::to_string(v.runs), std::to_string(v.reached),
                   std::isinf(me) ? "inf" : io::format_result(me), io::format_result(median(v.d_stsp))});
        }
    }
    ctx.log.emit("report_written", {{"groups", groups.size()}});
    return 0;
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg)
{
    const auto names = command_names();
    if (std::find(names.begin(), names.end(), cfg.command) == names.end())
        throw ConfigError(fmt::format("unknown command '{}'; valid: {}", cfg.command,
                                      fmt::join(names, ", ")));
    if (cfg.n_seeds < 0) throw ConfigError("n_seeds must be >= 0");
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
    try {
        cfg.train.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(fmt::format("train: {}", e.what()));
    }
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    {
        std::ofstream snap(out / "config.json", std::ios::binary);
        snap << config_snapshot(cfg);
    }
    EventLog log(out / "events.jsonl");
    Context ctx{cfg, out, log};
    log.emit("start", {{"command", cfg.command}, {"seed", cfg.seed}, {"threads", cfg.threads}});
    int status = 0;
    try {
        if (cfg.command == "simulate") status = run_simulate(ctx);
        else if (cfg.command == "analyze") status = run_analyze(ctx);
        else if (cfg.command == "report") status = run_report(ctx);
        else {
            const Dataset data = build_dataset(cfg);
            log.emit("dataset_ready", {{"rows", data.length()}, {"dims", data.dims()}});
            if (data.dims() != cfg.train.n_dim)
                throw ConfigError(fmt::format("dataset has {} dimensions but train.n_dim is {}",
                                              data.dims(), cfg.train.n_dim));
            if (cfg.command == "train") status = run_train(ctx, data);
            else if (cfg.command == "prune") status = run_prune(ctx, data);
            else status = run_topo_train(ctx, data);
        }
    } catch (const std::exception& e) {
        log.emit("error", {{"what", e.what()}});
        throw;
    }
    log.emit("done", {{"status", status}});
    return status;
}

}  // namespace dsr
