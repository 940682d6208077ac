#include "pathlab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pathlab {

namespace {

ScenarioData finish(Graph g, ReachabilityMatrix r, Corpus c) {
  ScenarioData d{std::move(g), std::move(r), std::move(c), {}, {}};
  d.observed = observed_matrices(d.corpus);
  d.test = label_test_pairs(d.corpus.split, d.observed);
  return d;
}

}  // namespace

ScenarioData prepare_dag(const DagScenario& s) {
  Graph g = generate_random_dag(s.n, s.p, derive_seed(s.seed, 1, 0));
  ReachabilityMatrix r = true_reachability(g);
  PairSplit split = split_pairs(g, r, derive_seed(s.seed, 2, 0), s.train_probability);
  Corpus c = build_corpus(g, r, split, s.m, derive_seed(s.seed, 3, 0));
  return finish(std::move(g), std::move(r), std::move(c));
}

ScenarioData prepare_blocksworld(const BlocksworldScenario& s) {
  Graph g = build_blocksworld(s.blocks);
  ReachabilityMatrix r = true_reachability(g);
  PairSplit split = split_pairs(g, r, derive_seed(s.seed, 2, 0), s.train_probability);
  Corpus c = build_corpus_sampled(g, r, split, s.sequences, derive_seed(s.seed, 3, 0));
  return finish(std::move(g), std::move(r), std::move(c));
}

GptConfig model_config_for(int n, int d_model, int layers, int heads) {
  GptConfig c;
  c.layers = layers;
  c.heads = heads;
  c.d_model = d_model;
  c.vocab = n + 1;
  c.max_len = 2 * n + 4;
  c.validate();
  return c;
}

TenNodeStudy ten_node_study(std::uint64_t seed, double p, double longer_fraction) {
  TenNodeStudy st;
  st.graph = generate_random_dag(10, p, seed);
  st.reach = true_reachability(st.graph);
  st.d3 = enumerate_all_paths(st.graph);
  std::vector<PathSequence> longer;
  for (auto& seq : st.d3) {
    // "s t s t <end>" has 5 tokens; anything longer uses at least two edges
    if (seq.size() == 5)
      st.d1.push_back(seq);
    else
      longer.push_back(seq);
  }
  std::mt19937_64 rng(derive_seed(seed, 0xd2, 0));
  std::shuffle(longer.begin(), longer.end(), rng);
  const auto keep = static_cast<std::size_t>(std::lround(longer_fraction * static_cast<double>(longer.size())));
  st.d2 = st.d1;
  st.d2.insert(st.d2.end(), longer.begin(), longer.begin() + static_cast<std::ptrdiff_t>(keep));
  return st;
}

const std::vector<PathSequence>& study_dataset(const TenNodeStudy& study, const std::string& name) {
  if (name == "D1") return study.d1;
  if (name == "D2") return study.d2;
  if (name == "D3") return study.d3;
  throw std::invalid_argument("dataset must be D1, D2 or D3, got '" + name + "'");
}

SimplifiedStudyOutcome run_simplified_study(const TenNodeStudy& study, const std::string& dataset, int steps,
                                            double lr) {
  const auto& seqs = study_dataset(study, dataset);
  const int n = study.graph.n;
  SimplifiedStudyOutcome o;
  o.dataset = dataset;
  o.counts = counts_tensor(n, seqs);
  o.observed = observed_matrices(n, seqs);
  const auto init = SimplifiedParams::zeros(n + 1);
  o.signs = gradient_sign_report(o.counts, init);
  o.fit = train_simplified(o.counts, steps, lr, init);
  o.edge_auc = edge_auc(o.fit.params.wm, study.graph.adj);
  bool pos = false, neg = false;
  for (int t = 0; t < n; ++t)
    for (int k = 0; k <= t; ++k) (o.observed.r_obs(t, k) ? pos : neg) = true;
  if (pos && neg) o.reach_auc = lower_triangle_auc(o.fit.params.wv, o.observed.r_obs);
  o.reach = reachability_weight_averages(o.fit.params.wv, o.observed.r_obs, study.reach.reach);
  return o;
}

}  // namespace pathlab
