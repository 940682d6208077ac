#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "pathlab/analysis.hpp"
#include "pathlab/construction.hpp"
#include "pathlab/experiments.hpp"

using namespace pathlab;

namespace {

SimplifiedParams random_simplified(int M, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto p = SimplifiedParams::zeros(M);
  for (int i = 0; i < M * M; ++i) {
    p.wm.data()[i] = nd(rng);
    p.wv.data()[i] = nd(rng);
  }
  return p;
}

// Pairwise-comparison AUC, the definition rather than the rank formula.
double auc_oracle(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0, total = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        total += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / total;
}

}  // namespace

TEST_CASE("extraction recovers an embedded simplified model: W^M + I and W^V") {
  const int M = 7;
  auto s = random_simplified(M, 3);
  auto P = embed_simplified(s);
  for (auto mode : {ExtractMode::normalized, ExtractMode::raw}) {
    MatrixD wm = extract_wm_prime(P, mode), wv = extract_wv_prime(P, mode);
    REQUIRE(wm.rows() == M);
    CHECK((wm - s.wm - MatrixD::Identity(M, M)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((wv - s.wv).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("embedded model logits equal W^M row + identity + W^V row once attention is pinned") {
  const int M = 6;
  auto s = random_simplified(M, 8);
  auto P = embed_simplified(s);
  std::vector<int> tokens{0, 4, 0, 2, 3, 4};
  auto logits = forward_logits<double>(P, tokens);
  const int t = tokens[1];
  for (int pos = 2; pos < static_cast<int>(tokens.size()); ++pos) {
    Eigen::RowVectorXd want = s.wm.row(tokens[pos]) + s.wv.row(t);
    want(tokens[pos]) += 1.0;
    CHECK((logits.row(pos) - want).cwiseAbs().maxCoeff() < 1e-9);
  }
  auto A = attention_map<double>(P, tokens, 0, 0);
  for (int r = 1; r < A.rows(); ++r) CHECK(A(r, 1) > 1.0 - 1e-12);
}

TEST_CASE("cosine check: 1 for a linear FFN, skipped when the FFN is zero, below 1 otherwise") {
  const int M = 6;
  auto P = embed_simplified(random_simplified(M, 4));
  // make the FFN read the value block as well, still linear: relu(x) - relu(-x)
  auto& L = P.layers[0];
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 1.0);
  const int d = P.config.d_model;
  MatrixD A = MatrixD::Zero(d, 8), B = MatrixD::Zero(8, M);
  for (int i = 0; i < d - 1; ++i)
    for (int j = 0; j < 8; ++j) A(i, j) = nd(rng);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < M; ++j) B(i, j) = nd(rng);
  L.w1.setZero();
  L.w2.setZero();
  L.w1.block(0, 0, d, 8) = A;
  L.w1.block(0, 8, d, 8) = -A;
  L.w2.block(0, 0, 8, M) = B;
  L.w2.block(8, 0, 8, M) = -B;
  auto pairs = all_target_current_pairs(M - 1);
  CHECK(pairs.size() == static_cast<std::size_t>((M - 1) * (M - 2)));
  for (auto mode : {ExtractMode::normalized, ExtractMode::raw}) {
    auto rep = cosine_similarity_check(P, pairs, mode);
    CHECK(rep.used == pairs.size());
    CHECK(rep.average == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto Z = P;
  Z.layers[0].w2.setZero();
  auto zero = cosine_similarity_check(Z, pairs, ExtractMode::raw);
  CHECK(zero.used == 0);
  CHECK(zero.skipped == pairs.size());

  auto N = P;
  N.layers[0].w1.block(0, 8, d, 8).setZero();  // plain relu(xA) B is not additive
  auto rep = cosine_similarity_check(N, pairs, ExtractMode::raw);
  CHECK(rep.used > 0);
  CHECK(rep.average < 1.0 - 1e-6);
}

TEST_CASE("AUC: rank formula agrees with pairwise counting, including ties") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> v(0, 5);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> s(40);
    std::vector<std::uint8_t> y(40);
    for (int i = 0; i < 40; ++i) {
      s[i] = v(rng);
      y[i] = static_cast<std::uint8_t>(i % 3 == 0);
    }
    CHECK(roc_auc(s, y) == doctest::Approx(auc_oracle(s, y)).epsilon(1e-12));
  }
  std::vector<double> s{1, 2};
  std::vector<std::uint8_t> y{1, 1};
  CHECK_THROWS(roc_auc(s, y));
}

TEST_CASE("edge and lower-triangle AUC on exact indicators") {
  auto g = generate_random_dag(15, 0.3, 6);
  auto r = true_reachability(g);
  CHECK(edge_auc(g.adj.as_double(), g.adj) == 1.0);
  CHECK(edge_auc(-g.adj.as_double(), g.adj) == 0.0);
  CHECK(lower_triangle_auc(r.reach.as_double(), r.reach) == 1.0);
}

TEST_CASE("weight gap and reachability averages by hand") {
  Graph g(3);
  g.adj.set(0, 1);
  MatrixD w(3, 3);
  w << 0, 5, 1,  //
      0, 0, 3,   //
      0, 0, 0;
  // edge (0,1)=5; non-edges (0,2)=1, (1,2)=3
  CHECK(weight_gap(w, g) == doctest::Approx(5.0 - 2.0));
  Graph empty(3);
  CHECK_THROWS(weight_gap(w, empty));

  BoolMatrix obs(2), tru(2);
  obs.set(0, 0);
  tru.set(0, 0);
  tru.set(1, 0);
  MatrixD v(2, 2);
  v << 4, 0, 2, 7;
  auto avg = reachability_weight_averages(v, obs, tru);
  REQUIRE(avg.obs.mean);
  CHECK(*avg.obs.mean == 4.0);
  CHECK(*avg.real_minus_obs.mean == 2.0);
  CHECK(*avg.non.mean == 7.0);
  obs.set(1, 0);
  CHECK_FALSE(reachability_weight_averages(v, obs, tru).real_minus_obs.mean.has_value());
}

TEST_CASE("Wilson interval") {
  auto ci = wilson_interval(8, 10);
  CHECK(ci.lo == doctest::Approx(0.4902).epsilon(1e-3));
  CHECK(ci.hi == doctest::Approx(0.9433).epsilon(1e-3));
  auto all = wilson_interval(50, 50);
  CHECK(all.hi == doctest::Approx(1.0));
  CHECK(all.lo < 1.0);
}

TEST_CASE("matrix CSV: header, bit-identical reload") {
  MatrixD m(3, 4);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 12; ++i) m.data()[i] = nd(rng);
  m(0, 0) = static_cast<double>(0.1f);
  m(1, 1) = 0.0;
  std::stringstream ss;
  write_matrix_csv(ss, m);
  std::string header;
  std::getline(ss, header);
  CHECK(header == "row,1,2,3,4");
  ss.seekg(0);
  auto back = read_matrix_csv(ss);
  CHECK(back == m);
  std::stringstream bad("row,1\n1,abc\n");
  CHECK_THROWS(read_matrix_csv(bad));
}

TEST_CASE("average attention: per-row mean over the sequences that reach the row") {
  auto P = init_params<double>(model_config_for(6, 8), 3);
  std::vector<PathSequence> seqs{make_sequence(6, {0, 2, 5}), make_sequence(6, {1, 3}), make_sequence(6, {0, 1, 2, 4})};
  auto avg = average_attention(P, seqs);
  // inputs drop the final token
  MatrixD sum = MatrixD::Zero(avg.rows(), avg.cols());
  std::vector<int> present(static_cast<std::size_t>(avg.rows()), 0);
  for (auto& s : seqs) {
    std::vector<int> in(s.tokens.begin(), s.tokens.end() - 1);
    auto A = attention_map<double>(P, in, 0, 0);
    sum.topLeftCorner(A.rows(), A.cols()) += A;
    for (int r = 0; r < A.rows(); ++r) ++present[static_cast<std::size_t>(r)];
  }
  REQUIRE(avg.rows() == 6);
  for (int r = 0; r < avg.rows(); ++r)
    for (int c = 0; c < avg.cols(); ++c) CHECK(avg(r, c) == doctest::Approx(sum(r, c) / present[r]).epsilon(1e-12));

  MatrixD a = MatrixD::Zero(3, 3);
  a << 1, 0, 0, 0.5, 0.5, 0, 0.2, 0.6, 0.2;
  CHECK(column_mass(a) == doctest::Approx(0.55));
}

TEST_CASE("accuracy evaluation: near-perfect for the construction, independent of thread count") {
  auto g = generate_random_dag(20, 0.3, 2);
  auto r = true_reachability(g);
  auto P = build_construction(g, r, ConstructionParams{});
  std::vector<LabeledPair> pairs;
  for (int s = 0; s < g.n; ++s)
    for (int t = 0; t < g.n; ++t)
      if (s != t && r(t, s)) pairs.push_back({{s, t}, s % 2 ? DegreeClass::deg1 : DegreeClass::deg0});
  auto a = evaluate_accuracy(P, g, pairs, 300, 1.0, 5, 1);
  auto b = evaluate_accuracy(P, g, pairs, 300, 1.0, 5, 3);
  CHECK(a.accuracy() >= 0.99);
  CHECK(a.overall.correct == b.overall.correct);
  CHECK(a.by_degree[0].trials == b.by_degree[0].trials);
  CHECK(a.by_degree[0].trials + a.by_degree[1].trials == 300);
  CHECK(a.verdicts == b.verdicts);

  // an untrained model is mostly wrong
  auto cfg = model_config_for(20, 16);
  auto u = evaluate_accuracy(init_params<float>(cfg, 1), g, pairs, 100, 1.0, 5);
  CHECK(u.accuracy() < 0.5);
}
