#pragma once

// Directed-graph view of topology masks, graph statistics, and topology generators.

#include "dsr/common.hpp"
#include "dsr/plrnn.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace dsr {

/// n x n 0/1 adjacency, entry (i, j) is the edge i -> j. The diagonal is always zero.
class DirectedGraph {
public:
    DirectedGraph() = default;
    explicit DirectedGraph(int n);

    /// Copies the off-diagonal bits of the mask (A^adj = m).
    static DirectedGraph from_mask(const TopologyMask& mask);
    /// Off-diagonal bits; the diagonal is left empty.
    TopologyMask to_mask() const;

    int size() const { return n_; }
    bool has_edge(int i, int j) const { return adj_[index(i, j)] != 0; }
    /// Self-loops are ignored.
    void add_edge(int i, int j);
    void remove_edge(int i, int j);
    long edge_count() const;
    bool is_symmetric() const;

    bool operator==(const DirectedGraph& other) const = default;

private:
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * n_ + j; }

    int n_ = 0;
    std::vector<unsigned char> adj_;
};

inline constexpr int kUnreachable = std::numeric_limits<int>::max();

/// All-pairs directed hop distances; kUnreachable where no path exists, 0 on the diagonal.
std::vector<std::vector<int>> floyd_warshall(const DirectedGraph& g);

struct PathLength {
    double mean = 0.0;  // over reachable ordered pairs i != j
    double unreachable_fraction = 0.0;
};

PathLength avg_path_length(const DirectedGraph& g);

/// Directed-triangle count (A + A^T)^3_ii, i.e. twice the Fagiolo t_i.
std::vector<long> directed_triangles(const DirectedGraph& g);
/// Per-node directed clustering; zero-denominator nodes give 0.
std::vector<double> node_clustering(const DirectedGraph& g);
/// Mean of node_clustering.
double clustering(const DirectedGraph& g);

struct DegreeStats {
    std::vector<int> in_degrees;
    std::vector<int> out_degrees;
    /// Cumulative distributions F(k') = P(k / (n - 1) <= k') at each distinct k'.
    std::vector<std::pair<double, double>> in_cdf;
    std::vector<std::pair<double, double>> out_cdf;
    double readout_mean_in = 0.0;
    double hidden_mean_in = 0.0;
    double readout_mean_out = 0.0;
    double hidden_mean_out = 0.0;
};

/// Degree vectors and distributions; the first n_readout nodes are readout units.
DegreeStats degree_stats(const DirectedGraph& g, int n_readout = 0);

/// Undirected ring lattice with k nearest neighbours (k even), symmetrized.
DirectedGraph ring_lattice(int n, int k);

/// Exactly k_edges distinct undirected edges drawn uniformly, symmetrized.
DirectedGraph gen_erdos_renyi(int n, long k_edges, std::uint64_t seed);
/// Ring lattice with each lattice edge rewired with probability p, symmetrized.
DirectedGraph gen_watts_strogatz(int n, int k, double p, std::uint64_t seed);
/// Complete seed on k nodes, then preferential attachment of k edges per new node.
DirectedGraph gen_barabasi_albert(int n, int k, std::uint64_t seed);

struct GeoHubInfo {
    long skipped_edges = 0;
};

/// Directed hub/small-world generator: complete seed on the readout nodes,
/// preferential in-edges with a readout boost, then degree-balanced out-edges.
DirectedGraph gen_geohub(int n, int k, int n_readout, std::uint64_t seed,
                         GeoHubInfo* info = nullptr);

/// Add or remove uniformly chosen edges until edge_count() == target. Symmetric inputs
/// are adjusted in reciprocal pairs (target rounded down to even).
DirectedGraph match_edge_count(const DirectedGraph& g, long target, std::uint64_t seed);

struct SwiResult {
    double swi = 0.0;
    double path_factor = 0.0;
    double clustering_factor = 0.0;
    double l = 0.0;
    double c = 0.0;
    double l_random = 0.0;
    double c_random = 0.0;
    double l_lattice = 0.0;
    double c_lattice = 0.0;
};

/// Small-world index against matched ER and ring-lattice references, clipped to [0, 1].
/// Throws InvalidArgument for an empty graph or degenerate references.
SwiResult small_world_index(const DirectedGraph& g, int n_random_refs, std::uint64_t seed);
double swi(const DirectedGraph& g, int n_random_refs, std::uint64_t seed);

struct GraphStats {
    int n = 0;
    long edges = 0;
    PathLength path;
    double clustering = 0.0;
    double swi = 0.0;
    DegreeStats degrees;
};

GraphStats graph_stats(const DirectedGraph& g, int n_readout, int n_random_refs,
                       std::uint64_t seed);

}  // namespace dsr
