#include "pathlab/graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pathlab {

std::vector<std::pair<int, int>> Graph::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k)
      if (adj(i, k)) out.emplace_back(i, k);
  return out;
}

std::vector<int> Graph::out_neighbors(int i) const {
  std::vector<int> out;
  for (int k = 0; k < n; ++k)
    if (adj(i, k)) out.push_back(k);
  return out;
}

bool Graph::is_acyclic() const {
  // Kahn's algorithm.
  std::vector<int> indeg(n, 0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k)
      if (adj(i, k)) ++indeg[k];
  std::deque<int> ready;
  for (int i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.push_back(i);
  int seen = 0;
  while (!ready.empty()) {
    int i = ready.front();
    ready.pop_front();
    ++seen;
    for (int k = 0; k < n; ++k)
      if (adj(i, k) && --indeg[k] == 0) ready.push_back(k);
  }
  return seen == n;
}

Graph generate_random_dag(int n, double p, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_random_dag: node count must be >= 1");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("generate_random_dag: p must lie in [0, 1]");
  Graph g(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (unit(rng) < p) g.adj.set(i, j);
  return g;
}

ReachabilityMatrix true_reachability(const Graph& g) {
  ReachabilityMatrix r{BoolMatrix(g.n)};
  std::vector<std::vector<int>> out(g.n);
  for (int i = 0; i < g.n; ++i) out[i] = g.out_neighbors(i);
  std::vector<char> seen(g.n);
  std::deque<int> queue;
  for (int k = 0; k < g.n; ++k) {
    std::fill(seen.begin(), seen.end(), 0);
    seen[k] = 1;
    queue.assign(1, k);
    while (!queue.empty()) {
      int u = queue.front();
      queue.pop_front();
      r.reach.set(u, k);
      for (int v : out[u])
        if (!seen[v]) {
          seen[v] = 1;
          queue.push_back(v);
        }
    }
  }
  return r;
}

namespace {

using Stack = std::vector<int>;
using BlockState = std::vector<Stack>;  // stacks bottom-to-top, stacks sorted

BlockState canonical(BlockState s) {
  std::erase_if(s, [](const Stack& st) { return st.empty(); });
  std::sort(s.begin(), s.end());
  return s;
}

bool state_less(const BlockState& a, const BlockState& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

std::vector<BlockState> successors(const BlockState& s) {
  std::vector<BlockState> out;
  for (std::size_t from = 0; from < s.size(); ++from) {
    // onto the table (only meaningful when the block sits on another block)
    if (s[from].size() > 1) {
      BlockState next = s;
      int block = next[from].back();
      next[from].pop_back();
      next.push_back(Stack{block});
      out.push_back(canonical(std::move(next)));
    }
    for (std::size_t to = 0; to < s.size(); ++to) {
      if (to == from) continue;
      BlockState next = s;
      int block = next[from].back();
      next[from].pop_back();
      next[to].push_back(block);
      out.push_back(canonical(std::move(next)));
    }
  }
  return out;
}

std::string block_label(const BlockState& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += '|';
    for (int b : s[i]) out += static_cast<char>('A' + b);
  }
  return out;
}

}  // namespace

std::uint64_t blocksworld_state_count(int num_blocks) {
  if (num_blocks < 1) return 0;
  // a(k) = (2k-1) a(k-1) - (k-1)(k-2) a(k-2), a(0) = a(1) = 1
  std::uint64_t prev = 1, cur = 1;
  for (std::uint64_t k = 2; k <= static_cast<std::uint64_t>(num_blocks); ++k) {
    std::uint64_t next = (2 * k - 1) * cur - (k - 1) * (k - 2) * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

Graph build_blocksworld(int num_blocks) {
  if (num_blocks < 1 || num_blocks > kMaxBlocks)
    throw std::invalid_argument("build_blocksworld: num_blocks must lie in [1, " +
                                std::to_string(kMaxBlocks) + "]");
  BlockState start;
  for (int b = 0; b < num_blocks; ++b) start.push_back(Stack{b});
  start = canonical(start);

  std::map<BlockState, int> seen{{start, 0}};
  std::deque<BlockState> queue{start};
  while (!queue.empty()) {
    BlockState s = queue.front();
    queue.pop_front();
    for (auto& next : successors(s))
      if (seen.emplace(next, 0).second) queue.push_back(next);
  }

  std::vector<BlockState> states;
  states.reserve(seen.size());
  for (auto& [s, _] : seen) states.push_back(s);
  std::sort(states.begin(), states.end(), state_less);
  for (std::size_t i = 0; i < states.size(); ++i) seen[states[i]] = static_cast<int>(i);

  Graph g(static_cast<int>(states.size()));
  g.labels.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    g.labels.push_back(block_label(states[i]));
    for (auto& next : successors(states[i])) g.adj.set(static_cast<int>(i), seen.at(next));
  }
  return g;
}

const char* to_string(PathVerdict v) {
  switch (v) {
    case PathVerdict::valid: return "valid";
    case PathVerdict::syntax_error: return "syntax-error";
    case PathVerdict::edge_error: return "edge-error";
    case PathVerdict::endpoint_error: return "endpoint-error";
  }
  return "unknown";
}

PathVerdict validate_path(const Graph& g, std::span<const int> tokens, int s, int t) {
  const int n = g.n;
  auto is_node = [n](int x) { return x >= 0 && x < n; };
  if (!is_node(s) || !is_node(t)) return PathVerdict::syntax_error;
  if (tokens.size() < 5) return PathVerdict::syntax_error;
  if (tokens[0] != s || tokens[1] != t || tokens[2] != s) return PathVerdict::syntax_error;
  if (tokens.back() != end_token(n)) return PathVerdict::syntax_error;
  const std::size_t last = tokens.size() - 2;
  for (std::size_t i = 2; i <= last; ++i)
    if (!is_node(tokens[i])) return PathVerdict::syntax_error;
  for (std::size_t i = 2; i < last; ++i)
    if (!g.has_edge(tokens[i], tokens[i + 1])) return PathVerdict::edge_error;
  if (tokens[last] != t) return PathVerdict::endpoint_error;
  return PathVerdict::valid;
}

void write_graph(std::ostream& out, const Graph& g) {
  out << "n " << g.n << '\n';
  for (auto [i, k] : g.edges()) out << i + 1 << ' ' << k + 1 << '\n';
  for (std::size_t i = 0; i < g.labels.size(); ++i)
    out << "# label " << i + 1 << ' ' << g.labels[i] << '\n';
}

Graph read_graph(std::istream& in) {
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("graph file line " + std::to_string(lineno) + ": " + what);
  };
  Graph g;
  bool have_header = false;
  std::map<int, std::string> labels;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') fail("CRLF line endings are not accepted");
    if (line.empty()) continue;
    if (!have_header) {
      std::istringstream ss(line);
      std::string tag;
      int n = 0;
      if (!(ss >> tag >> n) || tag != "n" || n < 1) fail("expected header 'n <count>'");
      g = Graph(n);
      have_header = true;
      continue;
    }
    if (line[0] == '#') {
      const std::string prefix = "# label ";
      if (line.rfind(prefix, 0) == 0) {
        std::istringstream ss(line.substr(prefix.size()));
        int i = 0;
        if (!(ss >> i) || i < 1 || i > g.n) fail("bad label index");
        std::string text;
        std::getline(ss, text);
        if (!text.empty() && text[0] == ' ') text.erase(0, 1);
        labels[i - 1] = text;
      }
      continue;
    }
    std::istringstream ss(line);
    int i = 0, k = 0;
    std::string extra;
    if (!(ss >> i >> k) || (ss >> extra)) fail("expected 'i j'");
    if (i < 1 || i > g.n || k < 1 || k > g.n) fail("edge endpoint out of range");
    if (i == k) fail("self-loops are not allowed");
    g.adj.set(i - 1, k - 1);
  }
  if (!have_header) throw std::runtime_error("graph file: missing header");
  if (!labels.empty()) {
    g.labels.assign(g.n, "");
    for (auto& [i, text] : labels) g.labels[i] = text;
  }
  return g;
}

void save_graph(const std::string& path, const Graph& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_graph(out, g);
}

Graph load_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_graph(in);
}

}  // namespace pathlab
