#pragma once

#include <random>
#include <stdexcept>
#include <vector>

#include "pathlab/gpt.hpp"
#include "pathlab/graph.hpp"

namespace pathlab {

struct ConstructionParams {
  double c0 = 40.0;  // positional flag on the target slot: drives attention onto it
  double c1 = 40.0;  // reachability scale in the value path
  double c2 = 40.0;  // adjacency scale in the feed-forward output

  static ConstructionParams uniform(double c) { return {c, c, c}; }
  void validate() const;
};

// {k : adj(i, k) and reach(t, k)}, ascending.
std::vector<int> algorithm1_next_candidates(const BoolMatrix& adj, const ReachabilityMatrix& reach, int i, int t);

struct Algorithm1Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Walks from s to t choosing uniformly among the candidates at every step. Returns the
// node sequence s, ..., t. Throws Algorithm1Error when a step has no candidate or the
// walk exceeds `max_steps` (only possible with inconsistent matrices or on cycles).
std::vector<int> run_algorithm1(const BoolMatrix& adj, const ReachabilityMatrix& reach, int s, int t,
                                std::mt19937_64& rng, int max_steps = 100000);

// One layer, one head, identity norms, d = n + 2, M = n + 1. The adjacency and reachability
// matrices sit in the FFN output and the value map; the target slot carries a c0 flag.
// max_len defaults to 2n + 4.
GptParams<double> build_construction(const Graph& g, const ReachabilityMatrix& reach, const ConstructionParams& c,
                                     int max_len = 0);

// Next-token distribution at the last position of `tokens` (softmax of the final logits).
std::vector<double> next_token_distribution(const GptParams<double>& params, std::span<const int> tokens);

// Total-variation distance between `dist` and the uniform distribution on `support`.
double tv_to_uniform(std::span<const double> dist, std::span<const int> support);

}  // namespace pathlab
