// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance [--workdir DIR] [--criterion N]... [--prepare NAME]... [--report]
//
// Every verdict line is also appended to DIR/results.log; --report prints the latest line
// per criterion so a single ctest entry can show the whole gate.
// Training runs live under the work directory and are reused when a finished run with the
// same config is already there, so ctest can train once (fixture) and check several
// criteria against the same model.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pathlab/checkpoint.hpp"
#include "pathlab/construction.hpp"
#include "pathlab/experiments.hpp"
#include "pathlab/gradcheck.hpp"
#include "pathlab/pipeline.hpp"

using namespace pathlab;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(what + (ok ? "" : " [x]"));
  }
  void info(const std::string& what) { notes.push_back(what); }
};

fs::path g_workdir = "acceptance_runs";

// ---- training runs shared between criteria ----

RunConfig dag100_config() {
  RunConfig c;  // n=100, p=0.1, m=20, d=120, 1 layer, 1 head, adam 1e-3, batch 64, 20000 steps
  return c;
}

RunConfig dag50_quick_config() {
  RunConfig c;
  c.dag.n = 50;
  c.d_model = 64;
  return c;
}

RunConfig fig4_config() {
  RunConfig c;
  // sparser graph: more held-out pairs need composition through unseen pairs
  c.dag.p = 0.05;
  return c;
}

RunConfig blocksworld_config() {
  RunConfig c;
  c.scenario = "blocksworld";
  return c;
}

const std::map<std::string, std::function<RunConfig()>>& run_table() {
  static const std::map<std::string, std::function<RunConfig()>> t{{"dag100", dag100_config},
                                                                     {"dag50_quick", dag50_quick_config},
                                                                     {"fig4", fig4_config},
                                                                     {"blocksworld", blocksworld_config}};
  return t;
}

fs::path run_dir(const std::string& name) { return g_workdir / name; }

void ensure_run(const std::string& name, const fs::path& dir) {
  const RunConfig c = run_table().at(name)();
  if (completed_run_matches(c, dir)) return;
  std::fprintf(stderr, "[acceptance] training %s into %s\n", name.c_str(), dir.string().c_str());
  run_training(c, dir, [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); });
}

struct TrainedRun {
  RunConfig config;
  ScenarioData data;
  GptParams<float> params;
  MetricsLog metrics;
  double train_seconds = 0.0;
};

TrainedRun load_run(const std::string& name) {
  const fs::path dir = run_dir(name);
  ensure_run(name, dir);
  TrainedRun r;
  r.config = run_table().at(name)();
  r.data = prepare_scenario(r.config);
  r.params = load_checkpoint<float>(dir / "checkpoint" / "final.ckpt").params;
  std::ifstream in(dir / "metrics.jsonl");
  r.metrics = MetricsLog::read_jsonl(in);
  r.train_seconds = r.metrics.records.back().wall_seconds;
  return r;
}

AccuracyReport final_accuracy(const TrainedRun& r) {
  return evaluate_accuracy(r.params, r.data.graph, r.data.test, r.config.eval_trials, r.config.eval_temperature,
                           r.config.eval_seed);
}

// ---- criteria ----

SimplifiedParams random_point(int M, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  auto p = SimplifiedParams::zeros(M);
  for (int i = 0; i < M * M; ++i) {
    p.wm.data()[i] = nd(rng);
    p.wv.data()[i] = nd(rng);
  }
  return p;
}

Verdict criterion1() {
  const auto t0 = Clock::now();
  Verdict v;
  const auto st = ten_node_study();
  std::size_t violations = 0, checked = 0;
  std::mt19937_64 rng(2024);
  for (const char* name : {"D1", "D2", "D3"}) {
    const auto counts = counts_tensor(st.graph.n, study_dataset(st, name));
    const int M = counts.vocab();
    std::size_t zero = 0, pos = 0, neg = 0;
    for (int point = 0; point <= 20; ++point) {
      const auto params = point == 0 ? SimplifiedParams::zeros(M) : random_point(M, rng);
      const auto rep = gradient_sign_report(counts, params);
      violations += rep.violations;
      checked += rep.entries.size();
      zero = rep.count(GradientCase::always_zero);
      pos = rep.count(GradientCase::always_positive);
      neg = rep.count(GradientCase::negative_at_minus_infinity);
    }
    v.info(fmt("%s classes zero/positive/negative %zu/%zu/%zu", name, zero, pos, neg));
  }
  const double secs = seconds_since(t0);
  v.require(violations == 0, fmt("%zu violations over %zu entry checks (zero point + 20 random points)", violations, checked));
  v.require(secs < 10.0, fmt("%.2f s < 10 s", secs));
  return v;
}

Verdict criterion2() {
  const auto t0 = Clock::now();
  Verdict v;
  const auto s = simplified_gradient_check();
  v.require(s.max_rel_error <= 1e-6, fmt("simplified f64 max rel err %.2e <= 1e-6 (%zu coords)", s.max_rel_error, s.checked));
  const auto g32 = gpt_gradient_check(Precision::f32, 400);
  v.require(g32.max_rel_error <= 1e-3 && g32.checked >= 200,
            fmt("gpt f32 %.2e <= 1e-3 (%zu coords)", g32.max_rel_error, g32.checked));
  const auto g64 = gpt_gradient_check(Precision::f64, 400);
  v.require(g64.max_rel_error <= 1e-6 && g64.checked >= 200,
            fmt("gpt f64 %.2e <= 1e-6 (%zu coords, %zu kink draws skipped)", g64.max_rel_error, g64.checked, g64.skipped));
  const double secs = seconds_since(t0);
  v.require(secs < 60.0, fmt("%.1f s < 60 s", secs));
  return v;
}

std::vector<NodePair> valid_pairs(const Graph& g, const ReachabilityMatrix& r) {
  std::vector<NodePair> out;
  for (int s = 0; s < g.n; ++s)
    for (int t = 0; t < g.n; ++t)
      if (s != t && r(t, s)) out.emplace_back(s, t);
  return out;
}

Verdict criterion3() {
  const auto t0 = Clock::now();
  Verdict v;
  double worst_valid = 1.0, worst_tv = 0.0;
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Graph g = generate_random_dag(20, 0.3, derive_seed(3, k, 0));
    const auto r = true_reachability(g);
    const auto params = build_construction(g, r, ConstructionParams::uniform(40.0));
    std::vector<LabeledPair> pairs;
    for (auto p : valid_pairs(g, r)) pairs.push_back({p, DegreeClass::deg0});
    const auto acc = evaluate_accuracy(params, g, pairs, 1000, 1.0, derive_seed(3, k, 1));
    worst_valid = std::min(worst_valid, acc.accuracy());

    // 50 states: a prefix of an Algorithm-1 walk, compared with uniform over its candidates
    std::mt19937_64 rng(derive_seed(3, k, 2));
    const auto vp = valid_pairs(g, r);
    std::uniform_int_distribution<std::size_t> pick(0, vp.size() - 1);
    for (int state = 0; state < 50; ++state) {
      const auto [s, t] = vp[pick(rng)];
      const auto walk = run_algorithm1(g.adj, r, s, t, rng);
      std::uniform_int_distribution<std::size_t> cut(0, walk.size() - 2);
      const std::size_t at = cut(rng);
      std::vector<int> tokens{s, t};
      tokens.insert(tokens.end(), walk.begin(), walk.begin() + static_cast<std::ptrdiff_t>(at) + 1);
      const auto dist = next_token_distribution(params, tokens);
      const auto support = algorithm1_next_candidates(g.adj, r, walk[at], t);
      worst_tv = std::max(worst_tv, tv_to_uniform(dist, support));
    }
  }
  const double secs = seconds_since(t0);
  v.require(worst_valid >= 0.99, fmt("worst valid-path rate %.4f >= 0.99 (5 DAGs x 1000 decodes)", worst_valid));
  v.require(worst_tv <= 0.01, fmt("worst TV to uniform %.2e <= 0.01 (5 x 50 states)", worst_tv));
  v.require(secs < 60.0, fmt("%.1f s < 60 s", secs));
  return v;
}

Verdict criterion4() {
  const auto t0 = Clock::now();
  Verdict v;
  const Graph g = generate_random_dag(100, 0.1, 41);
  const auto r = true_reachability(g);
  const auto vp = valid_pairs(g, r);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> pick(0, vp.size() - 1);
  int valid = 0;
  for (int run = 0; run < 1000; ++run) {
    const auto [s, t] = vp[pick(rng)];
    const auto seq = make_sequence(g.n, run_algorithm1(g.adj, r, s, t, rng));
    valid += validate_path(g, seq.tokens, s, t) == PathVerdict::valid;
  }
  const double secs = seconds_since(t0);
  v.require(valid == 1000, fmt("%d/1000 valid paths", valid));
  v.require(secs < 5.0, fmt("%.2f s < 5 s", secs));
  return v;
}

std::string reach_line(const ReachAverages& r) {
  auto m = [](const CategoryMean& c) { return c.mean ? fmt("%.3f", *c.mean) : std::string("n/a"); };
  return "obs " + m(r.obs) + ", real-obs " + m(r.real_minus_obs) + ", non " + m(r.non);
}

bool reach_condition(const ReachAverages& r) {
  if (!r.obs.mean || !r.non.mean) return false;
  // an empty real-minus-obs class satisfies the bound vacuously
  if (!r.real_minus_obs.mean) return true;
  return *r.real_minus_obs.mean - *r.non.mean <= 0.25 * (*r.obs.mean - *r.non.mean);
}

Verdict criterion5() {
  const auto t0 = Clock::now();
  Verdict v;
  const auto st = ten_node_study();
  const auto d3 = run_simplified_study(st, "D3", 5000, 0.5);
  v.require(d3.edge_auc >= 0.99, fmt("D3 W^M edge AUC %.4f >= 0.99", d3.edge_auc));
  v.require(d3.reach_auc && *d3.reach_auc >= 0.95, fmt("D3 W^V observed-reach AUC %.4f >= 0.95", d3.reach_auc.value_or(0)));
  v.require(reach_condition(d3.reach), "D3 real-obs minus non <= 0.25 (obs minus non): " + reach_line(d3.reach));
  const double secs = seconds_since(t0);
  v.require(secs < 60.0, fmt("%.1f s < 60 s", secs));
  const auto d2 = run_simplified_study(st, "D2", 5000, 0.5);
  v.info(fmt("D2 (info) edge AUC %.4f, reach AUC %.4f, ", d2.edge_auc, d2.reach_auc.value_or(NAN)) + reach_line(d2.reach));
  // other graph seeds, reported rather than gated: the gauge freedom between W^M columns and
  // W^V columns lets a few edges hide in W^V on some graphs
  for (std::uint64_t seed : {1, 2, 4, 5}) {
    const auto o = run_simplified_study(ten_node_study(seed), "D3", 5000, 0.5);
    v.info(fmt("seed %llu (info) edge AUC %.4f, reach AUC %.4f, reach bound %s", static_cast<unsigned long long>(seed),
               o.edge_auc, o.reach_auc.value_or(NAN), reach_condition(o.reach) ? "holds" : "fails"));
  }
  return v;
}

Verdict criterion6() {
  Verdict v;
  const auto full = load_run("dag100");
  const auto acc = final_accuracy(full);
  const auto ci = acc.interval();
  v.require(acc.accuracy() >= 0.90, fmt("n=100 d=120 accuracy %.4f >= 0.90 (95%% CI %.3f-%.3f, %zu trials, T=1)",
                                        acc.accuracy(), ci.lo, ci.hi, acc.overall.trials));
  v.require(full.train_seconds <= 3600.0, fmt("training %.0f s <= 3600 s", full.train_seconds));
  const auto quick = load_run("dag50_quick");
  const auto qa = final_accuracy(quick);
  v.require(qa.accuracy() >= 0.90, fmt("quick n=50 d=64 accuracy %.4f >= 0.90", qa.accuracy()));
  v.require(quick.train_seconds <= 600.0, fmt("quick training %.0f s <= 600 s", quick.train_seconds));
  return v;
}

Verdict criterion7() {
  Verdict v;
  const auto r = load_run("dag100");
  const auto avg = average_attention(r.params, r.data.corpus.sequences);
  const double mass = column_mass(avg, 1, 1);
  v.require(mass >= 0.8, fmt("mean attention on column 2 over rows >= 2: %.4f >= 0.8", mass));
  double diag = 0;
  int rows = 0;
  for (int i = 1; i < avg.rows(); ++i, ++rows) diag += avg(i, i);
  v.info(fmt("mean attention on the current token (diagonal): %.4f", rows ? diag / rows : 0.0));
  return v;
}

Verdict criterion8() {
  Verdict v;
  const auto r = load_run("dag100");
  const auto& rec = r.metrics.records;
  const double g0 = rec.front().weight_gap, gend = rec.back().weight_gap;
  double gmax = -INFINITY;
  for (auto& x : rec) gmax = std::max(gmax, x.weight_gap);
  v.require(gend >= 5.0 * std::abs(g0), fmt("final gap %.4f >= 5 x |initial gap %.4f|", gend, g0));
  v.require(gend >= 0.95 * gmax, fmt("final gap within 5%% of the series maximum %.4f", gmax));
  return v;
}

Verdict criterion9() {
  Verdict v;
  const auto r = load_run("fig4");
  std::size_t deg2p = 0;
  for (auto& lp : r.data.test) deg2p += lp.degree == DegreeClass::deg2 || lp.degree == DegreeClass::deg3plus;
  v.require(deg2p >= 30, fmt("%zu degree-2+ test pairs >= 30 (n=100, p=0.05)", deg2p));
  const auto acc = final_accuracy(r);
  const auto& d0 = acc.by_degree[0];
  ClassTally d2;
  for (std::size_t k : {2u, 3u}) {
    d2.trials += acc.by_degree[k].trials;
    d2.correct += acc.by_degree[k].correct;
  }
  v.require(d2.trials > 0 && d2.rate() <= d0.rate() - 0.20,
            fmt("degree-2+ accuracy %.4f (%zu trials) <= degree-0 %.4f (%zu trials) - 0.20", d2.rate(), d2.trials,
                d0.rate(), d0.trials));
  v.info(fmt("degree-1 accuracy %.4f (%zu trials); overall %.4f", acc.by_degree[1].rate(), acc.by_degree[1].trials,
             acc.accuracy()));
  return v;
}

Verdict criterion10() {
  Verdict v;
  const auto r = load_run("dag100");
  const auto pairs = all_target_current_pairs(r.data.graph.n);
  const auto cos = cosine_similarity_check(r.params, pairs);
  v.require(cos.average >= 0.8, fmt("average cosine %.4f >= 0.8 over %zu pairs", cos.average, cos.used));
  const auto raw = cosine_similarity_check(r.params, pairs, ExtractMode::raw);
  v.info(fmt("norm-free variant %.4f", raw.average));
  return v;
}

Verdict criterion11() {
  Verdict v;
  const Graph g = build_blocksworld(4);
  const auto reach = true_reachability(g);
  bool symmetric = true;
  for (int i = 0; i < g.n; ++i)
    for (int k = 0; k < g.n; ++k) symmetric = symmetric && g.adj(i, k) == g.adj(k, i);
  v.require(g.n == 73, fmt("%d states == 73", g.n));
  v.require(symmetric, "symmetric adjacency");
  v.require(reach.reach.count() == 73u * 73u, "all pairs reachable");
  const auto r = load_run("blocksworld");
  const double train_frac = static_cast<double>(r.data.corpus.split.train.size()) / (73.0 * 72.0);
  v.info(fmt("train pair fraction %.3f, %zu sequences", train_frac, r.data.corpus.sequences.size()));
  const auto acc = final_accuracy(r);
  v.require(acc.accuracy() >= 0.95, fmt("test accuracy %.4f >= 0.95", acc.accuracy()));
  const double mass = column_mass(average_attention(r.params, r.data.corpus.sequences), 1, 1);
  v.require(mass >= 0.8, fmt("attention on column 2 %.4f >= 0.8", mass));
  v.require(r.train_seconds <= 3600.0, fmt("training %.0f s <= 3600 s", r.train_seconds));
  return v;
}

std::map<std::string, std::string> manifest_of(const fs::path& dir) {
  std::map<std::string, std::string> out;
  std::ifstream in(dir / "MANIFEST");
  std::string line;
  while (std::getline(in, line)) {
    const auto sp = line.find(' ');
    out[line.substr(0, sp)] = line.substr(sp + 1);
  }
  return out;
}

Verdict criterion12() {
  Verdict v;
  // in-process criteria: recompute and compare bit for bit
  {
    const auto st = ten_node_study();
    const auto a = run_simplified_study(st, "D3", 5000, 0.5), b = run_simplified_study(st, "D3", 5000, 0.5);
    v.require(a.fit.params.wm == b.fit.params.wm && a.fit.params.wv == b.fit.params.wv &&
                  a.fit.loss_trace == b.fit.loss_trace,
              "simplified-model fit identical");
    const Graph g = generate_random_dag(20, 0.3, derive_seed(3, 0, 0));
    const auto r = true_reachability(g);
    const auto P = build_construction(g, r, ConstructionParams::uniform(40.0));
    std::vector<LabeledPair> pairs;
    for (auto p : valid_pairs(g, r)) pairs.push_back({p, DegreeClass::deg0});
    const auto x = evaluate_accuracy(P, g, pairs, 500, 1.0, 9), y = evaluate_accuracy(P, g, pairs, 500, 1.0, 9);
    v.require(x.overall.correct == y.overall.correct && x.verdicts == y.verdicts, "construction decodes identical");
  }
  // training runs: repeat into a sibling directory and compare every non-timing output
  for (const std::string name : {"dag100", "dag50_quick", "fig4", "blocksworld"}) {
    const fs::path first = run_dir(name), again = g_workdir / "repeat" / name;
    ensure_run(name, first);
    ensure_run(name, again);
    const auto ma = manifest_of(first), mb = manifest_of(again);
    std::size_t compared = 0, differing = 0;
    for (auto& [path, entry] : ma) {
      if (entry.ends_with(" timing")) continue;
      ++compared;
      differing += !mb.count(path) || mb.at(path) != entry;
    }
    std::ifstream ia(first / "metrics.jsonl"), ib(again / "metrics.jsonl");
    const bool metrics_same = MetricsLog::read_jsonl(ia).same_results(MetricsLog::read_jsonl(ib));
    const bool ckpt_same = ma.count("checkpoint/final.ckpt") && ma.at("checkpoint/final.ckpt") == mb.at("checkpoint/final.ckpt");
    v.require(differing == 0 && metrics_same && ckpt_same && ma.size() == mb.size(),
              fmt("%s: %zu files compared, %zu differ; checkpoint %s; metrics %s", name.c_str(), compared, differing,
                  ckpt_same ? "identical" : "differs", metrics_same ? "identical" : "differ"));
  }
  return v;
}

const std::map<int, std::pair<const char*, std::function<Verdict()>>>& criteria() {
  static const std::map<int, std::pair<const char*, std::function<Verdict()>>> t{
      {1, {"gradient sign classes of the simplified model", criterion1}},
      {2, {"analytic vs numeric gradients", criterion2}},
      {3, {"construction fidelity", criterion3}},
      {4, {"Algorithm-1 oracle", criterion4}},
      {5, {"simplified-model learning", criterion5}},
      {6, {"end-to-end training accuracy", criterion6}},
      {7, {"attention concentration", criterion7}},
      {8, {"weight-gap growth", criterion8}},
      {9, {"degree stratification", criterion9}},
      {10, {"cosine-similarity check", criterion10}},
      {11, {"blocks world", criterion11}},
      {12, {"reproducibility", criterion12}},
  };
  return t;
}

void append_result(const std::string& line) {
  fs::create_directories(g_workdir);
  std::ofstream(g_workdir / "results.log", std::ios::app) << line << '\n';
}

int report() {
  std::map<int, std::string> latest;
  std::ifstream in(g_workdir / "results.log");
  std::string line;
  while (std::getline(in, line)) {
    int id = 0;
    if (std::sscanf(line.c_str(), "criterion %d", &id) == 1) latest[id] = line;
  }
  for (auto& [id, c] : criteria()) {
    if (latest.count(id))
      std::printf("%s\n", latest[id].c_str());
    else
      std::printf("criterion %2d NOT RUN %s\n", id, c.first);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  std::vector<int> selected;
  std::vector<std::string> prepare;
  bool want_report = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto value = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "acceptance: %s needs a value\n", a.c_str());
        std::exit(2);
      }
      return argv[++i];
    };
    if (a == "--workdir") {
      g_workdir = value();
    } else if (a == "--criterion") {
      selected.push_back(std::stoi(value()));
    } else if (a == "--prepare") {
      prepare.push_back(value());
    } else if (a == "--report") {
      want_report = true;
    } else {
      std::fprintf(stderr, "usage: acceptance [--workdir DIR] [--criterion N]... [--prepare NAME]... [--report]\n");
      return 2;
    }
  }

  try {
    for (const auto& name : prepare) {
      if (!run_table().count(name)) throw std::invalid_argument("unknown run '" + name + "'");
      ensure_run(name, run_dir(name));
      std::printf("prepared %s\n", name.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance: %s\n", e.what());
    return 1;
  }
  if (want_report) return report();
  if (!prepare.empty() && selected.empty()) return 0;

  if (selected.empty())
    for (auto& [id, _] : criteria()) selected.push_back(id);

  int failures = 0;
  for (int id : selected) {
    auto it = criteria().find(id);
    if (it == criteria().end()) {
      std::fprintf(stderr, "acceptance: no criterion %d\n", id);
      return 2;
    }
    Verdict v;
    const auto t0 = Clock::now();
    try {
      v = it->second.second();
    } catch (const std::exception& e) {
      v.require(false, std::string("error: ") + e.what());
    }
    std::string notes;
    for (auto& n : v.notes) notes += (notes.empty() ? "" : "; ") + n;
    const std::string line = fmt("criterion %2d %-4s %s (%.1f s): ", id, v.pass ? "PASS" : "FAIL",
                                 it->second.first, seconds_since(t0)) + notes;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    append_result(line);
    failures += !v.pass;
  }
  return failures == 0 ? 0 : 1;
}
