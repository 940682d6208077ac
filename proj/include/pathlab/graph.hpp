#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pathlab/common.hpp"

namespace pathlab {

// Directed graph on nodes 0..n-1 (printed 1-based in every file format).
struct Graph {
  int n = 0;
  BoolMatrix adj;
  std::vector<std::string> labels;  // empty, or one entry per node

  explicit Graph(int nodes = 0) : n(nodes), adj(nodes) {}

  bool has_edge(int i, int k) const { return adj(i, k); }
  std::size_t edge_count() const { return adj.count(); }
  std::vector<std::pair<int, int>> edges() const;
  std::vector<int> out_neighbors(int i) const;
  bool is_acyclic() const;
};

// reach(t, k) is true iff k can reach t (reflexive: reach(t, t) always holds).
struct ReachabilityMatrix {
  BoolMatrix reach;

  bool operator()(int t, int k) const { return reach(t, k); }
  int size() const { return reach.size(); }
};

Graph generate_random_dag(int n, double p, std::uint64_t seed);

ReachabilityMatrix true_reachability(const Graph& g);

// Every configuration of `num_blocks` labeled blocks arranged in stacks; an edge
// for every single move of a clear block onto the table or onto another clear block.
// States are ordered by (number of stacks, lexicographic stack content), so the
// single-tower states come first.
Graph build_blocksworld(int num_blocks);

constexpr int kMaxBlocks = 6;

// Number of states of the blocks world, counted by recursion rather than enumeration.
std::uint64_t blocksworld_state_count(int num_blocks);

// Token convention shared by every module: node i has token id i, the end-of-path
// token is n, the padding token (model input only) is n + 1.
inline int end_token(int n) { return n; }
inline int pad_token(int n) { return n + 1; }

enum class PathVerdict { valid, syntax_error, edge_error, endpoint_error };

const char* to_string(PathVerdict v);

// Checks "s t s u1 ... t <end>" against g.
PathVerdict validate_path(const Graph& g, std::span<const int> tokens, int s, int t);

// Text graph format: "n <count>", one "i j" per edge (1-based), optional "# label i <text>".
void write_graph(std::ostream& out, const Graph& g);
Graph read_graph(std::istream& in);
void save_graph(const std::string& path, const Graph& g);
Graph load_graph(const std::string& path);

}  // namespace pathlab
