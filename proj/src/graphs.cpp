#include "dsr/graphs.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace dsr {

DirectedGraph::DirectedGraph(int n) : n_(n), adj_(static_cast<std::size_t>(n) * n, 0)
{
    if (n < 0) throw InvalidArgument("graph size must be non-negative");
}

DirectedGraph DirectedGraph::from_mask(const TopologyMask& mask)
{
    DirectedGraph g(mask.size());
    for (int i = 0; i < g.n_; ++i)
        for (int j = 0; j < g.n_; ++j)
            if (i != j && mask(i, j)) g.add_edge(i, j);
    return g;
}

TopologyMask DirectedGraph::to_mask() const
{
    TopologyMask mask = TopologyMask::empty(n_);
    for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j)
            if (has_edge(i, j)) mask.set(i, j, true);
    return mask;
}

void DirectedGraph::add_edge(int i, int j)
{
    if (i != j) adj_[index(i, j)] = 1;
}

void DirectedGraph::remove_edge(int i, int j) { adj_[index(i, j)] = 0; }

long DirectedGraph::edge_count() const { return std::count(adj_.begin(), adj_.end(), 1); }

bool DirectedGraph::is_symmetric() const
{
    for (int i = 0; i < n_; ++i)
        for (int j = i + 1; j < n_; ++j)
            if (has_edge(i, j) != has_edge(j, i)) return false;
    return true;
}

std::vector<std::vector<int>> floyd_warshall(const DirectedGraph& g)
{
    const int n = g.size();
    std::vector<std::vector<int>> d(n, std::vector<int>(n, kUnreachable));
    for (int i = 0; i < n; ++i) {
        d[i][i] = 0;
        for (int j = 0; j < n; ++j)
            if (g.has_edge(i, j)) d[i][j] = 1;
    }
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < n; ++i) {
            if (d[i][k] == kUnreachable) continue;
            for (int j = 0; j < n; ++j) {
                if (d[k][j] == kUnreachable) continue;
                const int via = d[i][k] + d[k][j];
                if (via < d[i][j]) d[i][j] = via;
            }
        }
    }
    return d;
}

PathLength avg_path_length(const DirectedGraph& g)
{
    const int n = g.size();
    if (n < 2) throw InvalidArgument("path length needs at least two nodes");
    const auto d = floyd_warshall(g);
    long reachable = 0;
    double total = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j || d[i][j] == kUnreachable) continue;
            total += d[i][j];
            ++reachable;
        }
    const double pairs = static_cast<double>(n) * (n - 1);
    PathLength out;
    out.mean = reachable > 0 ? total / reachable : 0.0;
    out.unreachable_fraction = 1.0 - reachable / pairs;
    return out;
}

std::vector<long> directed_triangles(const DirectedGraph& g)
{
    const int n = g.size();
    // S = A + A^T, then (S^3)_ii = sum_j (S^2)_ij S_ji.
    std::vector<long> s(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) s[i * n + j] = g.has_edge(i, j) + g.has_edge(j, i);
    std::vector<long> s2(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const long sik = s[i * n + k];
            if (sik == 0) continue;
            for (int j = 0; j < n; ++j) s2[i * n + j] += sik * s[k * n + j];
        }
    std::vector<long> out(n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out[i] += s2[i * n + j] * s[j * n + i];
    return out;
}

std::vector<double> node_clustering(const DirectedGraph& g)
{
    const int n = g.size();
    const auto tri = directed_triangles(g);
    std::vector<double> c(n, 0.0);
    for (int i = 0; i < n; ++i) {
        long k_tot = 0, k_bi = 0;
        for (int j = 0; j < n; ++j) {
            k_tot += g.has_edge(i, j) + g.has_edge(j, i);
            k_bi += g.has_edge(i, j) && g.has_edge(j, i);
        }
        const long denom = 2 * (k_tot * (k_tot - 1) - 2 * k_bi);
        if (denom > 0) c[i] = static_cast<double>(tri[i]) / static_cast<double>(denom);
    }
    return c;
}

double clustering(const DirectedGraph& g)
{
    if (g.size() < 3) throw InvalidArgument("clustering needs at least three nodes");
    const auto c = node_clustering(g);
    return std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
}

namespace {

std::vector<std::pair<double, double>> cumulative(const std::vector<int>& degrees, int n)
{
    std::map<int, int> hist;
    for (int d : degrees) ++hist[d];
    std::vector<std::pair<double, double>> out;
    int seen = 0;
    const double norm = n > 1 ? n - 1.0 : 1.0;
    for (const auto& [deg, count] : hist) {
        seen += count;
        out.emplace_back(deg / norm, static_cast<double>(seen) / degrees.size());
    }
    return out;
}

double mean_of(const std::vector<int>& v, int begin, int end)
{
    if (end <= begin) return 0.0;
    return std::accumulate(v.begin() + begin, v.begin() + end, 0.0) / (end - begin);
}

}  // namespace

DegreeStats degree_stats(const DirectedGraph& g, int n_readout)
{
    const int n = g.size();
    if (n_readout < 0 || n_readout > n) throw InvalidArgument("readout count exceeds node count");
    DegreeStats s;
    s.in_degrees.assign(n, 0);
    s.out_degrees.assign(n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (g.has_edge(i, j)) {
                ++s.out_degrees[i];
                ++s.in_degrees[j];
            }
    s.in_cdf = cumulative(s.in_degrees, n);
    s.out_cdf = cumulative(s.out_degrees, n);
    s.readout_mean_in = mean_of(s.in_degrees, 0, n_readout);
    s.hidden_mean_in = mean_of(s.in_degrees, n_readout, n);
    s.readout_mean_out = mean_of(s.out_degrees, 0, n_readout);
    s.hidden_mean_out = mean_of(s.out_degrees, n_readout, n);
    return s;
}

namespace {

void add_undirected(DirectedGraph& g, int i, int j)
{
    g.add_edge(i, j);
    g.add_edge(j, i);
}

void remove_undirected(DirectedGraph& g, int i, int j)
{
    g.remove_edge(i, j);
    g.remove_edge(j, i);
}

int pick_weighted(const std::vector<double>& weights, std::mt19937_64& rng)
{
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    return pick(rng);
}

}  // namespace

DirectedGraph ring_lattice(int n, int k)
{
    if (k < 0 || k % 2 != 0) throw InvalidArgument("ring lattice degree must be even");
    if (k >= n) throw InvalidArgument("ring lattice degree must be below the node count");
    DirectedGraph g(n);
    for (int i = 0; i < n; ++i)
        for (int off = 1; off <= k / 2; ++off) add_undirected(g, i, (i + off) % n);
    return g;
}

DirectedGraph gen_erdos_renyi(int n, long k_edges, std::uint64_t seed)
{
    if (n < 2) throw InvalidArgument("Erdos-Renyi graph needs at least two nodes");
    const long max_edges = static_cast<long>(n) * (n - 1) / 2;
    if (k_edges < 0 || k_edges > max_edges)
        throw InvalidArgument(fmt::format("{} edges requested but at most {} fit on {} nodes",
                                          k_edges, max_edges, n));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> node(0, n - 1);
    DirectedGraph g(n);
    long edges = 0;
    while (edges < k_edges) {
        const int i = node(rng), j = node(rng);
        if (i == j || g.has_edge(i, j)) continue;
        add_undirected(g, i, j);
        ++edges;
    }
    return g;
}

DirectedGraph gen_watts_strogatz(int n, int k, double p, std::uint64_t seed)
{
    if (k < 2 || k % 2 != 0 || k >= n)
        throw InvalidArgument(fmt::format("Watts-Strogatz needs even k with 2 <= k < n, got k={}", k));
    if (p < 0.0 || p > 1.0) throw InvalidArgument("rewiring probability must lie in [0, 1]");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> node(0, n - 1);
    DirectedGraph g = ring_lattice(n, k);
    for (int i = 0; i < n; ++i) {
        for (int off = 1; off <= k / 2; ++off) {
            const int j = (i + off) % n;
            if (!(coin(rng) < p)) continue;
            if (!g.has_edge(i, j)) continue;
            int degree = 0;
            for (int v = 0; v < n; ++v) degree += g.has_edge(i, v);
            if (degree >= n - 1) continue;
            int target;
            do target = node(rng);
            while (target == i || g.has_edge(i, target));
            remove_undirected(g, i, j);
            add_undirected(g, i, target);
        }
    }
    return g;
}

DirectedGraph gen_barabasi_albert(int n, int k, std::uint64_t seed)
{
    if (k < 1 || k >= n)
        throw InvalidArgument(fmt::format("Barabasi-Albert needs 1 <= k < n, got k={} n={}", k, n));
    std::mt19937_64 rng(seed);
    DirectedGraph g(n);
    std::vector<double> degree(n, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            add_undirected(g, i, j);
            degree[i] += 1.0;
            degree[j] += 1.0;
        }
    for (int v = k; v < n; ++v) {
        std::vector<double> weights(degree.begin(), degree.begin() + v);
        if (std::accumulate(weights.begin(), weights.end(), 0.0) <= 0.0)
            std::fill(weights.begin(), weights.end(), 1.0);
        std::vector<int> targets;
        while (static_cast<int>(targets.size()) < k) {
            const int t = pick_weighted(weights, rng);
            if (std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
        }
        for (int t : targets) {
            add_undirected(g, v, t);
            degree[v] += 1.0;
            degree[t] += 1.0;
        }
    }
    return g;
}

DirectedGraph gen_geohub(int n, int k, int n_readout, std::uint64_t seed, GeoHubInfo* info)
{
    if (k < 2 || k % 2 != 0) throw InvalidArgument("GeoHub degree k must be even and >= 2");
    if (n_readout < 1 || n_readout > n)
        throw InvalidArgument(fmt::format("GeoHub needs 1 <= n_readout <= n, got {} of {}",
                                          n_readout, n));
    constexpr int kRetries = 50;
    constexpr double kStability = 0.05;
    std::mt19937_64 rng(seed);
    DirectedGraph g(n);
    std::vector<double> k_in(n, 0.0), k_out(n, 0.0);
    const auto connect = [&](int from, int to) {
        g.add_edge(from, to);
        k_out[from] += 1.0;
        k_in[to] += 1.0;
    };
    for (int i = 0; i < n_readout; ++i)
        for (int j = 0; j < n_readout; ++j)
            if (i != j) connect(i, j);

    long skipped = 0;
    const double half = k / 2.0;
    std::vector<double> weights(n);
    // Phase 1: each node sends k/2 edges to targets chosen by in-degree, readout boosted.
    for (int i = 0; i < n; ++i) {
        for (int l = 0; l < k / 2; ++l) {
            for (int j = 0; j < n; ++j)
                weights[j] = k_in[j] + kStability + (j < n_readout ? half : 0.0);
            bool placed = false;
            for (int attempt = 0; attempt < kRetries && !placed; ++attempt) {
                const int j = pick_weighted(weights, rng);
                if (j == i || g.has_edge(i, j)) continue;
                connect(i, j);
                placed = true;
            }
            if (!placed) ++skipped;
        }
    }
    // Phase 2: each node receives k/2 edges from sources chosen by total degree.
    for (int i = 0; i < n; ++i) {
        for (int l = 0; l < k / 2; ++l) {
            for (int j = 0; j < n; ++j)
                weights[j] = (k_in[j] + kStability) + (k_out[j] + kStability) + k / 4.0;
            bool placed = false;
            for (int attempt = 0; attempt < kRetries && !placed; ++attempt) {
                const int j = pick_weighted(weights, rng);
                if (j == i || g.has_edge(j, i)) continue;
                connect(j, i);
                placed = true;
            }
            if (!placed) ++skipped;
        }
    }
    if (info) info->skipped_edges = skipped;
    return g;
}

DirectedGraph match_edge_count(const DirectedGraph& g, long target, std::uint64_t seed)
{
    const int n = g.size();
    const bool symmetric = g.is_symmetric();
    if (symmetric) target -= target % 2;
    if (target < 0 || target > static_cast<long>(n) * (n - 1))
        throw InvalidArgument(fmt::format("cannot place {} edges on {} nodes", target, n));
    std::mt19937_64 rng(seed);
    DirectedGraph out = g;
    std::vector<std::pair<int, int>> present, absent;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j || (symmetric && j < i)) continue;
            (out.has_edge(i, j) ? present : absent).emplace_back(i, j);
        }
    const long unit = symmetric ? 2 : 1;
    long count = out.edge_count();
    if (count > target) {
        std::shuffle(present.begin(), present.end(), rng);
        for (std::size_t e = 0; count > target; ++e) {
            const auto [i, j] = present[e];
            out.remove_edge(i, j);
            if (symmetric) out.remove_edge(j, i);
            count -= unit;
        }
    } else if (count < target) {
        std::shuffle(absent.begin(), absent.end(), rng);
        for (std::size_t e = 0; count < target; ++e) {
            const auto [i, j] = absent[e];
            out.add_edge(i, j);
            if (symmetric) out.add_edge(j, i);
            count += unit;
        }
    }
    return out;
}

SwiResult small_world_index(const DirectedGraph& g, int n_random_refs, std::uint64_t seed)
{
    const int n = g.size();
    const long edges = g.edge_count();
    if (edges < 1) throw InvalidArgument("small-world index needs at least one edge");
    if (n_random_refs < 1) throw InvalidArgument("need at least one random reference graph");

    SwiResult r;
    r.l = avg_path_length(g).mean;
    r.c = clustering(g);

    const long und_edges = edges / 2;
    for (int s = 0; s < n_random_refs; ++s) {
        const auto er = gen_erdos_renyi(n, und_edges, derive_seed(seed, "swi-er", s));
        r.l_random += avg_path_length(er).mean;
        r.c_random += clustering(er);
    }
    r.l_random /= n_random_refs;
    r.c_random /= n_random_refs;

    int k_lattice = static_cast<int>(std::lround(static_cast<double>(edges) / n / 2.0)) * 2;
    k_lattice = std::clamp(k_lattice, 2, ((n - 1) / 2) * 2);
    const auto lattice = ring_lattice(n, k_lattice);
    r.l_lattice = avg_path_length(lattice).mean;
    r.c_lattice = clustering(lattice);

    const double dl = r.l_random - r.l_lattice;
    const double dc = r.c_lattice - r.c_random;
    if (std::abs(dl) < 1e-12 || std::abs(dc) < 1e-12)
        throw InvalidArgument("degenerate small-world references (L_r = L_l or C_l = C_r)");
    // max(0.0, .) also maps -0.0 to +0.0.
    const auto clip = [](double v) { return std::max(0.0, std::min(1.0, v)); };
    r.path_factor = clip((r.l - r.l_lattice) / dl);
    r.clustering_factor = clip((r.c - r.c_random) / dc);
    r.swi = clip(r.path_factor * r.clustering_factor);
    return r;
}

double swi(const DirectedGraph& g, int n_random_refs, std::uint64_t seed)
{
    return small_world_index(g, n_random_refs, seed).swi;
}

GraphStats graph_stats(const DirectedGraph& g, int n_readout, int n_random_refs,
                       std::uint64_t seed)
{
    GraphStats s;
    s.n = g.size();
    s.edges = g.edge_count();
    s.path = avg_path_length(g);
    s.clustering = clustering(g);
    s.degrees = degree_stats(g, n_readout);
    try {
        s.swi = swi(g, n_random_refs, seed);
    } catch (const InvalidArgument&) {
        s.swi = std::numeric_limits<double>::quiet_NaN();
    }
    return s;
}

}  // namespace dsr
