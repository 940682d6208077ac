#include "pathlab/corpus.hpp"

#include <algorithm>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace pathlab {

std::size_t Corpus::max_len() const {
  std::size_t best = 0;
  for (auto& s : sequences) best = std::max(best, s.size());
  return best;
}

void CountsTensor::add(int i, int j, int k, double c) {
  if (i < 0 || j < 0 || k < 0 || i >= vocab_ || j >= vocab_ || k >= vocab_)
    throw std::out_of_range("CountsTensor::add: token id out of range");
  counts_[{i, j, k}] += c;
}

double CountsTensor::at(int i, int j, int k) const {
  auto it = counts_.find({i, j, k});
  return it == counts_.end() ? 0.0 : it->second;
}

double CountsTensor::marginal(int i, int j) const {
  double sum = 0.0;
  for (auto it = counts_.lower_bound({i, j, 0}); it != counts_.end(); ++it) {
    if (it->first[0] != i || it->first[1] != j) break;
    sum += it->second;
  }
  return sum;
}

double CountsTensor::total() const {
  double sum = 0.0;
  for (auto& [_, c] : counts_) sum += c;
  return sum;
}

std::vector<CountsTensor::Group> CountsTensor::groups() const {
  std::vector<Group> out;
  for (auto& [key, c] : counts_) {
    if (out.empty() || out.back().current != key[0] || out.back().target != key[1])
      out.push_back(Group{key[0], key[1], 0.0, {}});
    out.back().total += c;
    out.back().next.emplace_back(key[2], c);
  }
  return out;
}

CountsTensor CountsTensor::scaled(double factor) const {
  CountsTensor out(vocab_);
  for (auto& [key, c] : counts_) out.counts_[key] = c * factor;
  return out;
}

const char* to_string(DegreeClass d) {
  switch (d) {
    case DegreeClass::deg0: return "deg0";
    case DegreeClass::deg1: return "deg1";
    case DegreeClass::deg2: return "deg2";
    case DegreeClass::deg3plus: return "deg3p";
  }
  return "unknown";
}

PairSplit split_pairs(const Graph& g, const ReachabilityMatrix& r, std::uint64_t seed,
                      double train_probability) {
  if (r.size() != g.n) throw std::invalid_argument("split_pairs: reachability size mismatch");
  PairSplit split;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int s = 0; s < g.n; ++s)
    for (int t = 0; t < g.n; ++t) {
      if (s == t || !r(t, s)) continue;
      // draw for every pair so that the stream does not depend on edge membership
      bool coin = unit(rng) < train_probability;
      if (g.has_edge(s, t) || coin)
        split.train.emplace_back(s, t);
      else
        split.test.emplace_back(s, t);
    }
  return split;
}

PathSequence make_sequence(int n, const std::vector<int>& path_nodes) {
  PathSequence seq;
  seq.tokens.reserve(path_nodes.size() + 3);
  seq.tokens.push_back(path_nodes.front());
  seq.tokens.push_back(path_nodes.back());
  seq.tokens.insert(seq.tokens.end(), path_nodes.begin(), path_nodes.end());
  seq.tokens.push_back(end_token(n));
  return seq;
}

std::optional<PathSequence> sample_path(const Graph& g, const ReachabilityMatrix& r, int s, int t,
                                        std::mt19937_64& rng, int max_attempts) {
  if (s == t || !r(t, s)) throw std::invalid_argument("sample_path: (s, t) is not a valid pair");
  std::vector<char> visited(g.n);
  std::vector<int> path, candidates;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::fill(visited.begin(), visited.end(), 0);
    path.assign(1, s);
    visited[s] = 1;
    int i = s;
    while (i != t) {
      candidates.clear();
      for (int k = 0; k < g.n; ++k)
        if (g.has_edge(i, k) && r(t, k) && !visited[k]) candidates.push_back(k);
      if (candidates.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      i = candidates[pick(rng)];
      visited[i] = 1;
      path.push_back(i);
    }
    if (i == t) return make_sequence(g.n, path);
  }
  return std::nullopt;
}

namespace {

void append_pair_paths(const Graph& g, const ReachabilityMatrix& r, NodePair pair, int count,
                       std::mt19937_64& rng, Corpus& c) {
  for (int j = 0; j < count; ++j) {
    auto seq = sample_path(g, r, pair.first, pair.second, rng);
    if (!seq) {
      std::cerr << "warning: no acyclic path found for pair (" << pair.first + 1 << ", "
                << pair.second + 1 << "); pair skipped\n";
      ++c.skipped_pairs;
      return;
    }
    c.sequences.push_back(std::move(*seq));
  }
}

}  // namespace

Corpus build_corpus(const Graph& g, const ReachabilityMatrix& r, const PairSplit& split, int m,
                    std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("build_corpus: m must be >= 1");
  Corpus c;
  c.n = g.n;
  c.split = split;
  for (auto pair : split.train) {
    if (g.has_edge(pair.first, pair.second))
      c.sequences.push_back(make_sequence(g.n, {pair.first, pair.second}));
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(pair.first),
                                    static_cast<std::uint64_t>(pair.second)));
    append_pair_paths(g, r, pair, m, rng, c);
  }
  return c;
}

Corpus build_corpus_sampled(const Graph& g, const ReachabilityMatrix& r, const PairSplit& split,
                            std::size_t total, std::uint64_t seed) {
  if (split.train.empty()) throw std::invalid_argument("build_corpus_sampled: no train pairs");
  Corpus c;
  c.n = g.n;
  c.split = split;
  for (auto pair : split.train)
    if (g.has_edge(pair.first, pair.second))
      c.sequences.push_back(make_sequence(g.n, {pair.first, pair.second}));
  std::mt19937_64 pick_rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, split.train.size() - 1);
  std::uint64_t draw = 0;
  std::size_t failures = 0;
  while (c.sequences.size() < total) {
    NodePair pair = split.train[pick(pick_rng)];
    std::mt19937_64 rng(derive_seed(seed, draw++, 0x5eed));
    auto seq = sample_path(g, r, pair.first, pair.second, rng);
    if (seq) {
      c.sequences.push_back(std::move(*seq));
    } else if (++failures > total) {
      throw std::runtime_error("build_corpus_sampled: path sampling keeps failing");
    } else {
      ++c.skipped_pairs;
    }
  }
  return c;
}

ObservedMatrices observed_matrices(int n, const std::vector<PathSequence>& sequences) {
  ObservedMatrices obs{BoolMatrix(n), BoolMatrix(n)};
  auto is_node = [n](int x) { return x >= 0 && x < n; };
  for (auto& seq : sequences) {
    const auto& u = seq.tokens;
    const std::size_t N = u.size();
    if (N < 3) continue;
    // 1-based positions: adjacency from n in [3, N-1], reachability from n in [4, N]
    for (std::size_t p = 3; p + 1 <= N; ++p) {
      int a = u[p - 1], b = u[p];
      if (is_node(a) && is_node(b)) obs.a_obs.set(a, b);
    }
    int t = u[1];
    if (!is_node(t)) continue;
    for (std::size_t p = 4; p <= N; ++p)
      if (is_node(u[p - 1])) obs.r_obs.set(t, u[p - 1]);
  }
  return obs;
}

ObservedMatrices observed_matrices(const Corpus& c) { return observed_matrices(c.n, c.sequences); }

CountsTensor counts_tensor(int n, const std::vector<PathSequence>& sequences) {
  CountsTensor counts(n + 1);
  for (auto& seq : sequences) {
    const auto& u = seq.tokens;
    for (std::size_t p = 3; p + 1 <= u.size(); ++p) counts.add(u[p - 1], u[1], u[p]);
  }
  return counts;
}

CountsTensor counts_tensor(const Corpus& c) { return counts_tensor(c.n, c.sequences); }

DegreeClass classify_degree(NodePair pair, const BoolMatrix& a_obs, const BoolMatrix& r_obs) {
  const auto [s, t] = pair;
  const int n = a_obs.size();
  auto degree01 = [&](int u) {
    if (r_obs(t, u)) return 0;
    for (int w = 0; w < n; ++w)
      if (a_obs(u, w) && r_obs(t, w)) return 1;
    return 2;
  };
  int base = degree01(s);
  if (base < 2) return static_cast<DegreeClass>(base);
  for (int u = 0; u < n; ++u)
    if (a_obs(s, u) && degree01(u) == 1) return DegreeClass::deg2;
  return DegreeClass::deg3plus;
}

std::vector<LabeledPair> label_test_pairs(const PairSplit& split, const ObservedMatrices& obs) {
  std::vector<LabeledPair> out;
  out.reserve(split.test.size());
  for (auto pair : split.test) out.push_back({pair, classify_degree(pair, obs.a_obs, obs.r_obs)});
  return out;
}

std::vector<PathSequence> enumerate_all_paths(const Graph& g) {
  std::vector<PathSequence> out;
  std::vector<int> path;
  std::vector<char> on_path(g.n);
  // depth-first over simple paths starting at s; every prefix of length >= 2 is a path
  auto dfs = [&](auto&& self, int u) -> void {
    for (int v = 0; v < g.n; ++v) {
      if (!g.has_edge(u, v) || on_path[v]) continue;
      path.push_back(v);
      on_path[v] = 1;
      out.push_back(make_sequence(g.n, path));
      self(self, v);
      on_path[v] = 0;
      path.pop_back();
    }
  };
  for (int s = 0; s < g.n; ++s) {
    path.assign(1, s);
    on_path[s] = 1;
    dfs(dfs, s);
    on_path[s] = 0;
  }
  return out;
}

void write_corpus(std::ostream& out, const std::vector<PathSequence>& sequences) {
  for (auto& seq : sequences) {
    const auto& u = seq.tokens;
    if (u.empty()) continue;
    for (std::size_t i = 0; i + 1 < u.size(); ++i) out << (i ? " " : "") << u[i] + 1;
    out << '\n';
  }
}

std::vector<PathSequence> read_corpus(std::istream& in, int n) {
  std::vector<PathSequence> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    PathSequence seq;
    int id = 0;
    while (ss >> id) {
      if (id < 1 || id > n)
        throw std::runtime_error("corpus line " + std::to_string(lineno) + ": node id out of range");
      seq.tokens.push_back(id - 1);
    }
    if (!ss.eof()) throw std::runtime_error("corpus line " + std::to_string(lineno) + ": bad token");
    seq.tokens.push_back(end_token(n));
    out.push_back(std::move(seq));
  }
  return out;
}

void write_split(std::ostream& out, const PairSplit& split) {
  for (auto [s, t] : split.train) out << "train " << s + 1 << ' ' << t + 1 << '\n';
  for (auto [s, t] : split.test) out << "test " << s + 1 << ' ' << t + 1 << '\n';
}

PairSplit read_split(std::istream& in, int n) {
  PairSplit split;
  std::string line, tag;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int s = 0, t = 0;
    if (!(ss >> tag >> s >> t) || s < 1 || t < 1 || s > n || t > n)
      throw std::runtime_error("split line " + std::to_string(lineno) + ": malformed");
    if (tag == "train")
      split.train.emplace_back(s - 1, t - 1);
    else if (tag == "test")
      split.test.emplace_back(s - 1, t - 1);
    else
      throw std::runtime_error("split line " + std::to_string(lineno) + ": unknown tag " + tag);
  }
  return split;
}

}  // namespace pathlab
