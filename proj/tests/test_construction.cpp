#include "doctest.h"

#include "pathlab/construction.hpp"
#include "pathlab/corpus.hpp"

using namespace pathlab;

namespace {

Graph chain3() {
  Graph g(3);
  g.adj.set(0, 1);
  g.adj.set(1, 2);
  return g;
}

Graph diamond() {
  Graph g(4);
  g.adj.set(0, 1);
  g.adj.set(0, 2);
  g.adj.set(1, 3);
  g.adj.set(2, 3);
  return g;
}

}  // namespace

TEST_CASE("candidate sets on hand-checked graphs") {
  auto c = chain3();
  auto r = true_reachability(c);
  CHECK(algorithm1_next_candidates(c.adj, r, 0, 2) == std::vector<int>{1});
  auto d = diamond();
  auto rd = true_reachability(d);
  CHECK(algorithm1_next_candidates(d.adj, rd, 0, 3) == std::vector<int>{1, 2});
  CHECK(algorithm1_next_candidates(d.adj, rd, 0, 1) == std::vector<int>{1});
}

TEST_CASE("Algorithm 1 always produces valid paths with true matrices") {
  auto g = generate_random_dag(30, 0.2, 3);
  auto r = true_reachability(g);
  std::mt19937_64 rng(4);
  int runs = 0;
  for (int s = 0; s < g.n; ++s)
    for (int t = 0; t < g.n; ++t) {
      if (s == t || !r(t, s)) continue;
      auto path = run_algorithm1(g.adj, r, s, t, rng);
      auto seq = make_sequence(g.n, path);
      CHECK(validate_path(g, seq.tokens, s, t) == PathVerdict::valid);
      ++runs;
    }
  CHECK(runs > 50);
}

TEST_CASE("Algorithm 1 error paths") {
  auto g = chain3();
  std::mt19937_64 rng(1);
  ReachabilityMatrix none{BoolMatrix(3)};
  none.reach.set(2, 0);  // claims 0 reaches 2 but nothing else
  CHECK_THROWS_AS(run_algorithm1(g.adj, none, 0, 2, rng), Algorithm1Error);
  CHECK_THROWS_AS(run_algorithm1(g.adj, true_reachability(g), 2, 0, rng), std::invalid_argument);
  Graph e(2);
  e.adj.set(0, 1);
  CHECK(run_algorithm1(e.adj, true_reachability(e), 0, 1, rng) == std::vector<int>{0, 1});
}

TEST_CASE("construction: chain puts nearly all mass on the only successor") {
  auto g = chain3();
  auto P = build_construction(g, true_reachability(g), ConstructionParams::uniform(40));
  std::vector<int> u{0, 2, 0};
  auto p = next_token_distribution(P, u);
  CHECK(p[1] >= 0.999);
}

TEST_CASE("construction: diamond is near uniform over both branches, diffuse at c = 1") {
  auto g = diamond();
  auto r = true_reachability(g);
  std::vector<int> u{0, 3, 0}, support{1, 2};
  auto sharp = next_token_distribution(build_construction(g, r, ConstructionParams::uniform(40)), u);
  CHECK(tv_to_uniform(sharp, support) <= 0.01);
  auto soft = next_token_distribution(build_construction(g, r, ConstructionParams::uniform(1)), u);
  CHECK(tv_to_uniform(soft, support) > 0.05);
}

TEST_CASE("construction sharpens monotonically in c and keeps mass on the candidate set") {
  auto g = generate_random_dag(15, 0.3, 11);
  auto r = true_reachability(g);
  auto P3 = build_construction(g, r, ConstructionParams::uniform(3));
  auto P10 = build_construction(g, r, ConstructionParams::uniform(10));
  auto P40 = build_construction(g, r, ConstructionParams::uniform(40));
  std::mt19937_64 rng(2);
  int states = 0;
  for (int s = 0; s < g.n; ++s)
    for (int t = 0; t < g.n; ++t) {
      if (s == t || !r(t, s)) continue;
      auto path = run_algorithm1(g.adj, r, s, t, rng);
      std::vector<int> prefix{s, t};
      for (std::size_t k = 0; k + 1 < path.size(); ++k) {
        prefix.push_back(path[k]);
        auto S = algorithm1_next_candidates(g.adj, r, path[k], t);
        auto d3 = next_token_distribution(P3, prefix), d10 = next_token_distribution(P10, prefix),
             d40 = next_token_distribution(P40, prefix);
        const double a = tv_to_uniform(d3, S), b = tv_to_uniform(d10, S), c = tv_to_uniform(d40, S);
        CHECK(c <= b + 1e-12);
        CHECK(b <= a + 1e-12);
        double in_s = 0;
        for (int k2 : S) in_s += d40[static_cast<std::size_t>(k2)];
        CHECK(in_s >= 1.0 - 1e-3);
        ++states;
      }
    }
  CHECK(states > 20);
}

TEST_CASE("construction decode yields valid paths") {
  auto g = generate_random_dag(20, 0.3, 5);
  auto r = true_reachability(g);
  auto P = build_construction(g, r, ConstructionParams::uniform(40));
  auto opts = decode_options_for(P.config, 1.0);
  std::mt19937_64 rng(9);
  int total = 0, ok = 0;
  for (int s = 0; s < g.n; ++s)
    for (int t = 0; t < g.n; ++t) {
      if (s == t || !r(t, s)) continue;
      auto res = decode(P, s, t, opts, rng);
      ok += validate_path(g, res.tokens, s, t) == PathVerdict::valid;
      ++total;
    }
  CHECK(total > 20);
  CHECK(ok == total);
}

TEST_CASE("construction constants are validated") {
  auto g = chain3();
  auto r = true_reachability(g);
  CHECK_THROWS_AS(build_construction(g, r, {40, 40, 30}), std::invalid_argument);
  CHECK_THROWS_AS(build_construction(g, r, {0, 40, 40}), std::invalid_argument);
}
