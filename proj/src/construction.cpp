#include "pathlab/construction.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pathlab {

void ConstructionParams::validate() const {
  if (!(c0 > 0.0 && c1 > 0.0 && c2 > 0.0)) throw std::invalid_argument("construction constants must be positive");
  if (c1 != c2) throw std::invalid_argument("construction requires c1 == c2");
}

std::vector<int> algorithm1_next_candidates(const BoolMatrix& adj, const ReachabilityMatrix& reach, int i, int t) {
  const int n = adj.size();
  if (i < 0 || i >= n || t < 0 || t >= n) throw std::out_of_range("algorithm1_next_candidates: node out of range");
  std::vector<int> s;
  for (int k = 0; k < n; ++k)
    if (adj(i, k) && reach(t, k)) s.push_back(k);
  return s;
}

std::vector<int> run_algorithm1(const BoolMatrix& adj, const ReachabilityMatrix& reach, int s, int t,
                                std::mt19937_64& rng, int max_steps) {
  if (!reach(t, s)) throw std::invalid_argument("run_algorithm1: t is not reachable from s");
  std::vector<int> path{s};
  int i = s;
  while (i != t) {
    if (static_cast<int>(path.size()) > max_steps)
      throw Algorithm1Error("run_algorithm1: no arrival after " + std::to_string(max_steps) + " steps");
    const auto cand = algorithm1_next_candidates(adj, reach, i, t);
    if (cand.empty())
      throw Algorithm1Error("run_algorithm1: empty candidate set at node " + std::to_string(i) + " for target " +
                            std::to_string(t));
    std::uniform_int_distribution<std::size_t> pick(0, cand.size() - 1);
    i = cand[pick(rng)];
    path.push_back(i);
  }
  return path;
}

GptParams<double> build_construction(const Graph& g, const ReachabilityMatrix& reach, const ConstructionParams& c,
                                     int max_len) {
  c.validate();
  const int n = g.n;
  GptConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.d_model = n + 2;
  cfg.vocab = n + 1;
  cfg.max_len = max_len > 0 ? max_len : 2 * n + 4;
  cfg.identity_norm = true;
  cfg.construction = true;
  auto P = GptParams<double>::zeros(cfg);
  const int d = cfg.d_model, M = cfg.vocab, flag = d - 1;

  // W_t = (I_M | 0); the padding row stays zero
  for (int k = 0; k < M; ++k) P.tok_emb(k, k) = 1.0;
  // W_p: c0 in the flag column of the target slot (second position)
  if (cfg.max_len >= 2) P.pos_emb(1, flag) = c.c0;

  auto& L = P.layers[0];
  L.wq[0] = MatrixD::Identity(d, d) * std::sqrt(static_cast<double>(d));
  L.wk[0].row(flag).setOnes();
  for (int t = 0; t < n; ++t)
    for (int k = 0; k < n; ++k) L.wv[0](t, k) = reach(t, k) ? c.c1 : 0.0;

  L.w1.leftCols(d) = MatrixD::Identity(d, d);
  L.b1.setConstant(-c.c1);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) L.w2(i, k) = g.has_edge(i, k) ? c.c2 : 0.0;

  // norms are bypassed in identity mode; keep the gains at 1 so the tensors stay meaningful
  L.ln1_g.setOnes();
  L.ln2_g.setOnes();
  P.lnf_g.setOnes();

  // W_o = (I_M | 0)^T
  for (int k = 0; k < M; ++k) P.w_out(k, k) = 1.0;
  return P;
}

std::vector<double> next_token_distribution(const GptParams<double>& params, std::span<const int> tokens) {
  MatrixD logits = forward_logits<double>(params, tokens);
  Eigen::RowVectorXd row = logits.row(logits.rows() - 1);
  row.array() -= row.maxCoeff();
  row = row.array().exp();
  row /= row.sum();
  return {row.data(), row.data() + row.size()};
}

double tv_to_uniform(std::span<const double> dist, std::span<const int> support) {
  if (support.empty()) throw std::invalid_argument("tv_to_uniform: empty support");
  std::vector<double> u(dist.size(), 0.0);
  for (int k : support) u.at(static_cast<std::size_t>(k)) = 1.0 / static_cast<double>(support.size());
  double tv = 0.0;
  for (std::size_t k = 0; k < dist.size(); ++k) tv += std::abs(dist[k] - u[k]);
  return 0.5 * tv;
}

}  // namespace pathlab
