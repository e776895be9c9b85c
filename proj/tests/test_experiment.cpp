#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsr/experiment.hpp"
#include "dsr/io.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace dsr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir()
    {
        std::random_device rd;
        path = fs::temp_directory_path() / ("dsr-exp-" + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const fs::path& p)
{
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> column(const fs::path& csv, std::size_t col)
{
    std::vector<std::string> out;
    const auto rows = lines(csv);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        std::stringstream ss(rows[r]);
        std::string field;
        for (std::size_t c = 0; c <= col; ++c) std::getline(ss, field, ',');
        out.push_back(field);
    }
    return out;
}

std::string config_error(const std::string& text)
{
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("config parsing")
{
    const auto cfg = parse_config(R"({"command": "train", "preset": "rossler",
        "train": {"m_dim": 20, "tau": "inf", "eval": {"orbit_len": 3000}}, "seed": 4})");
    const auto preset = train_preset("rossler");
    CHECK(cfg.command == "train");
    CHECK(cfg.train.m_dim == 20);
    CHECK(cfg.train.tau == kNoForcing);
    CHECK(cfg.train.eval.orbit_len == 3000);
    CHECK(cfg.train.seq_len == preset.seq_len);
    CHECK(cfg.train.epochs == preset.epochs);
    CHECK(cfg.seed == 4);

    CHECK(config_error(R"({"command": "train", "trian": {}})").find("trian") != std::string::npos);
    CHECK(config_error(R"({"train": {"m_dim": "big"}})").find("m_dim") != std::string::npos);
    CHECK(!config_error("{not json").empty());
    const auto bad_preset = config_error(R"({"preset": "lorenz64"})");
    CHECK(bad_preset.find("lorenz64") != std::string::npos);
}

TEST_CASE("config snapshot records resolved settings")
{
    auto cfg = parse_config(R"({"command": "prune", "prune": {"n_iters": 7}})");
    const auto j = nlohmann::json::parse(config_snapshot(cfg));
    CHECK(j["prune"]["n_iters"] == 7);
    CHECK(j["prune"]["fraction_per_iter"] == 0.2);
    CHECK(j["rules"].contains("prune_count"));
    CHECK(j["rules"].contains("prune_tie_break"));
    CHECK(j["prune"]["geometric"]["orbit_len"] == 5000);
    CHECK(j["train"]["grad_clip"] == 10.0);
    CHECK(j["train"]["eval"]["pseudo_count"] == kDefaultPseudoCount);
    CHECK(j["rules"].contains("divergence_bound"));
    CHECK(j["rules"].contains("seed_derivation"));
    // The snapshot is itself a valid config that resolves to the same values.
    const auto again = parse_config(config_snapshot(cfg));
    CHECK(config_snapshot(again) == config_snapshot(cfg));
}

TEST_CASE("default Lorenz-63 dataset")
{
    ExperimentConfig cfg;
    const auto d = build_dataset(cfg);
    CHECK(d.dims() == 3);
    CHECK(d.length() == 100000);
    cfg.data.system = "lorenz64";
    CHECK_THROWS_AS(build_dataset(cfg), ConfigError);
}

TEST_CASE("topologies matched to 300 entries at M=50")
{
    std::vector<long> counts;
    for (const char* kind : {"erdos_renyi", "watts_strogatz", "barabasi_albert", "geohub"}) {
        TopologySpec spec;
        spec.kind = kind;
        const auto g = build_topology(spec, 50, 3, 300, 7);
        CHECK(g.size() == 50);
        counts.push_back(g.edge_count());
        CHECK(build_topology(spec, 50, 3, 300, 7) == g);
    }
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(static_cast<double>(*hi - *lo) <= 0.02 * static_cast<double>(*lo));
    TopologySpec unknown;
    unknown.kind = "lattice";
    CHECK_THROWS_AS(build_topology(unknown, 50, 3, 300, 1), ConfigError);
}

TEST_CASE("twelve pruning iterations at 0.2 reach about 93% sparsity")
{
    long r = 2500;
    for (int k = 0; k < 12; ++k) r = remaining_after_prune(r, 0.2);
    CHECK(1.0 - r / 2500.0 == doctest::Approx(0.931).epsilon(0.002));
}

TEST_CASE("simulate is reproducible")
{
    TempDir tmp;
    auto cfg = parse_config(R"({"command": "simulate", "data": {"n_samples": 2000}, "seed": 3})");
    cfg.out_dir = (tmp.path / "a").string();
    CHECK(run_experiment(cfg) == 0);
    cfg.out_dir = (tmp.path / "b").string();
    CHECK(run_experiment(cfg) == 0);
    for (const char* f : {"dataset.csv", "dataset.clean.csv", "dataset.json"}) {
        CHECK(fs::exists(tmp.path / "a" / f));
        CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
    }
    CHECK(lines(tmp.path / "a" / "dataset.csv").size() == 2001);
    CHECK(fs::exists(tmp.path / "a" / "config.json"));
    CHECK(fs::exists(tmp.path / "a" / "events.jsonl"));

    auto bad = cfg;
    bad.command = "fit";
    CHECK_THROWS_AS(run_experiment(bad), ConfigError);
}

TEST_CASE("prune traces share their sparsity column")
{
    TempDir tmp;
    auto cfg = parse_config(R"({"command": "prune",
        "data": {"n_samples": 3000},
        "train": {"m_dim": 6, "seq_len": 30, "batch_size": 4, "batches_per_epoch": 3, "eval_every": 2,
                  "eval": {"orbit_len": 600, "transient": 50, "pred_starts": 20}},
        "prune": {"n_iters": 3, "retrain_epochs": 2, "geometric": {"orbit_len": 500, "transient": 50}},
        "n_seeds": 1, "seed": 2})");
    cfg.out_dir = tmp.path.string();
    REQUIRE(run_experiment(cfg) == 0);
    const auto geo = column(tmp.path / "traces" / "geometric_seed0.csv", 1);
    CHECK(geo.size() == 3);
    CHECK(column(tmp.path / "traces" / "magnitude_seed0.csv", 1) == geo);
    CHECK(column(tmp.path / "traces" / "random_seed0.csv", 1) == geo);
    CHECK(lines(tmp.path / "results.csv").size() == 1 + 3 * 3);
    CHECK(fs::exists(tmp.path / "masks" / "geometric_seed0_final.mask"));
}

TEST_CASE("analyze emits one row per mask")
{
    TempDir tmp;
    io::write_mask(tmp.path / "full.mask", TopologyMask::full(8));
    TopologyMask ring(8, false);
    for (int i = 0; i < 8; ++i) ring.set(i, (i + 1) % 8, true);
    io::write_mask(tmp.path / "ring.mask", ring);
    auto cfg = parse_config(R"({"command": "analyze", "analyze": {"n_random_refs": 3}})");
    cfg.masks = {(tmp.path / "full.mask").string(), (tmp.path / "ring.mask").string()};
    cfg.out_dir = (tmp.path / "out").string();
    REQUIRE(run_experiment(cfg) == 0);
    const auto rows = lines(tmp.path / "out" / "graph_stats.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "graph_id,n,edges,L,C,swi,unreachable_frac,max_in_deg,max_out_deg");
    CHECK(rows[1].rfind("full,8,56,1.000000,1.000000,", 0) == 0);
    CHECK(rows[2].rfind("ring,8,8,4.000000,0.000000,", 0) == 0);

    std::ofstream(tmp.path / "broken.mask") << "M=2 sparsity=0\n11\n1?\n";
    cfg.masks = {(tmp.path / "broken.mask").string()};
    CHECK_THROWS_AS(run_experiment(cfg), ParseError);
}
