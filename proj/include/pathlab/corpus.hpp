#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pathlab/graph.hpp"

namespace pathlab {

// "s t s u1 ... t <end>" as token ids (see end_token()).
struct PathSequence {
  std::vector<int> tokens;

  int source() const { return tokens.at(0); }
  int target() const { return tokens.at(1); }
  std::size_t size() const { return tokens.size(); }
  bool operator==(const PathSequence&) const = default;
};

using NodePair = std::pair<int, int>;  // (source, target)

struct PairSplit {
  std::vector<NodePair> train;
  std::vector<NodePair> test;
};

struct Corpus {
  int n = 0;  // node count of the generating graph
  std::vector<PathSequence> sequences;
  PairSplit split;
  std::size_t skipped_pairs = 0;  // pairs dropped after exhausting resampling

  std::size_t max_len() const;
};

struct ObservedMatrices {
  BoolMatrix a_obs;  // a_obs(i, k): edge i -> k seen inside some path
  BoolMatrix r_obs;  // r_obs(t, k): k seen at position >= 4 of a path targeting t
};

// N_{i,j,k}: positions whose current token is i, target j, next token k. Token ids
// cover nodes and the end token, so the vocabulary is n + 1.
class CountsTensor {
 public:
  using Key = std::array<int, 3>;  // (current, target, next)

  CountsTensor() = default;
  explicit CountsTensor(int vocab) : vocab_(vocab) {}

  int vocab() const { return vocab_; }
  void add(int i, int j, int k, double c = 1.0);
  double at(int i, int j, int k) const;
  double marginal(int i, int j) const;  // N_{i,j}
  double total() const;
  bool empty() const { return counts_.empty(); }
  const std::map<Key, double>& entries() const { return counts_; }

  // Groups with N_{i,j} > 0: the count vector over k for every (i, j).
  struct Group {
    int current;
    int target;
    double total;
    std::vector<std::pair<int, double>> next;  // (k, N_{i,j,k}) with positive counts
  };
  std::vector<Group> groups() const;

  CountsTensor scaled(double factor) const;

 private:
  int vocab_ = 0;
  std::map<Key, double> counts_;
};

enum class DegreeClass { deg0 = 0, deg1 = 1, deg2 = 2, deg3plus = 3 };
const char* to_string(DegreeClass d);

// Edge pairs always go to train; every other reachable pair goes to train with
// probability `train_probability`.
PairSplit split_pairs(const Graph& g, const ReachabilityMatrix& r, std::uint64_t seed,
                      double train_probability = 0.5);

// Candidate rule: uniform over {k : adj(i,k), reach(t,k), k not yet on the path}.
// Dead ends restart the walk; nullopt once `max_attempts` walks have failed.
std::optional<PathSequence> sample_path(const Graph& g, const ReachabilityMatrix& r, int s, int t,
                                        std::mt19937_64& rng, int max_attempts = 100);

// m sampled paths per train pair plus the forced one-edge sequence for each edge pair.
// Pair (s, t) draws from its own stream derived from (seed, s, t).
Corpus build_corpus(const Graph& g, const ReachabilityMatrix& r, const PairSplit& split, int m,
                    std::uint64_t seed);

// Fixed-size variant: the forced one-edge sequences, then sequences for uniformly drawn
// train pairs until `total` sequences exist.
Corpus build_corpus_sampled(const Graph& g, const ReachabilityMatrix& r, const PairSplit& split,
                            std::size_t total, std::uint64_t seed);

ObservedMatrices observed_matrices(const Corpus& c);
ObservedMatrices observed_matrices(int n, const std::vector<PathSequence>& sequences);

CountsTensor counts_tensor(const Corpus& c);
CountsTensor counts_tensor(int n, const std::vector<PathSequence>& sequences);

DegreeClass classify_degree(NodePair pair, const BoolMatrix& a_obs, const BoolMatrix& r_obs);

struct LabeledPair {
  NodePair pair;
  DegreeClass degree;
};
std::vector<LabeledPair> label_test_pairs(const PairSplit& split, const ObservedMatrices& obs);

// Every simple path between every reachable ordered pair (exhaustive; small graphs only).
std::vector<PathSequence> enumerate_all_paths(const Graph& g);

PathSequence make_sequence(int n, const std::vector<int>& path_nodes);

// Corpus file: one sequence per line, 1-based node ids separated by single spaces,
// the line terminator standing in for the end token.
void write_corpus(std::ostream& out, const std::vector<PathSequence>& sequences);
std::vector<PathSequence> read_corpus(std::istream& in, int n);
void write_split(std::ostream& out, const PairSplit& split);
PairSplit read_split(std::istream& in, int n);

}  // namespace pathlab
