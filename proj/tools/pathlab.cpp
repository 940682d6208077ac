// Command-line entry point: one subcommand per pipeline step plus "repro" recipes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pathlab/checkpoint.hpp"
#include "pathlab/construction.hpp"
#include "pathlab/experiments.hpp"
#include "pathlab/gradcheck.hpp"
#include "pathlab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pathlab;
using nlohmann::ordered_json;

namespace {

// Writes through a sibling temp file so a failed command never leaves a half-written target.
void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

// Runs `body` against an output directory: a MANIFEST of the returned files on success,
// a FAILED marker with the diagnostic otherwise.
template <class F>
void in_output_dir(const fs::path& dir, F&& body) {
  fs::create_directories(dir);
  fs::remove(dir / "MANIFEST");
  fs::remove(dir / "FAILED");
  try {
    std::vector<std::string> files = body();
    write_manifest(dir, files);
  } catch (const std::exception& e) {
    write_atomic(dir / "FAILED", std::string(e.what()) + "\n");
    throw;
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_json(const fs::path& p, const ordered_json& j) { write_atomic(p, j.dump(2) + "\n"); }

ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(); }

ordered_json reach_json(const ReachAverages& r) {
  auto cat = [](const CategoryMean& m) { return ordered_json{{"mean", opt_json(m.mean)}, {"count", m.count}}; };
  return {{"obs", cat(r.obs)}, {"real_minus_obs", cat(r.real_minus_obs)}, {"non", cat(r.non)}};
}

std::string graph_text(const Graph& g) {
  std::ostringstream os;
  write_graph(os, g);
  return os.str();
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

// ---- config overrides shared by train and repro ----

struct Overrides {
  std::string scenario;
  int n = 0, blocks = 0, m = 0, d_model = 0, layers = 0, heads = 0, steps = 0, batch = 0, eval_interval = 0;
  int eval_trials = 0;
  double p = -1, lr = 0;
  std::string precision, optimizer;
  std::optional<std::uint64_t> seed, train_seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--scenario", scenario, "random-dag or blocksworld");
    cmd->add_option("--n", n, "node count");
    cmd->add_option("--p", p, "edge probability");
    cmd->add_option("--blocks", blocks, "number of blocks");
    cmd->add_option("--m", m, "paths per training pair");
    cmd->add_option("--seed", seed, "data seed (graph, split, corpus)");
    cmd->add_option("--d-model", d_model, "embedding size");
    cmd->add_option("--layers", layers, "layers");
    cmd->add_option("--heads", heads, "heads");
    cmd->add_option("--steps", steps, "training steps");
    cmd->add_option("--batch-size", batch, "batch size");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--eval-interval", eval_interval, "steps between metric records");
    cmd->add_option("--eval-trials", eval_trials, "decodes in the final evaluation");
    cmd->add_option("--train-seed", train_seed, "shuffle / batching seed");
    cmd->add_option("--precision", precision, "f32 or f64");
    cmd->add_option("--optimizer", optimizer, "adam or sgd");
  }

  void apply(RunConfig& c) const {
    if (!scenario.empty()) {
      c.scenario = scenario;
      if (scenario == "blocksworld") c.blocksworld.train_probability = BlocksworldScenario{}.train_probability;
    }
    if (n) c.dag.n = n;
    if (p >= 0) c.dag.p = p;
    if (blocks) c.blocksworld.blocks = blocks;
    if (m) c.dag.m = m;
    if (seed) c.dag.seed = c.blocksworld.seed = *seed;
    if (d_model) c.d_model = d_model;
    if (layers) c.layers = layers;
    if (heads) c.heads = heads;
    if (steps) c.train.steps = steps;
    if (batch) c.train.batch_size = batch;
    if (lr > 0) c.train.lr = lr;
    if (eval_interval) c.train.eval_interval = eval_interval;
    if (eval_trials) c.eval_trials = eval_trials;
    if (train_seed) c.train.seed = *train_seed;
    if (!precision.empty()) c.train.precision = parse_precision(precision);
    if (!optimizer.empty()) c.train.optimizer = parse_optimizer(optimizer);
    c.validate();
  }
};

// ---- subcommands ----

void cmd_gen_graph(int n, double p, std::uint64_t seed, const fs::path& out) {
  const Graph g = generate_random_dag(n, p, seed);
  write_atomic(out, graph_text(g));
  std::cout << "nodes " << g.n << " edges " << g.edge_count() << " -> " << out.string() << '\n';
}

void cmd_gen_corpus(const fs::path& graph_path, int m, double train_probability, std::uint64_t seed,
                    const fs::path& out) {
  const Graph g = load_graph(graph_path.string());
  const auto r = true_reachability(g);
  const auto split = split_pairs(g, r, derive_seed(seed, 2, 0), train_probability);
  const auto corpus = build_corpus(g, r, split, m, derive_seed(seed, 3, 0));
  in_output_dir(out, [&] {
    std::ostringstream cs, ss;
    write_corpus(cs, corpus.sequences);
    write_split(ss, corpus.split);
    write_atomic(out / "corpus.txt", cs.str());
    write_atomic(out / "split.txt", ss.str());
    return std::vector<std::string>{"corpus.txt", "split.txt"};
  });
  std::cout << "sequences " << corpus.sequences.size() << " train pairs " << split.train.size() << " test pairs "
            << split.test.size() << " skipped " << corpus.skipped_pairs << '\n';
}

RunSummary train_run(const RunConfig& c, const fs::path& dir) {
  std::cerr << "training into " << dir.string() << '\n';
  return run_training(c, dir, log_line);
}

void print_accuracy(const AccuracyReport& r) {
  const auto ci = r.interval();
  std::printf("accuracy %.4f  (95%% CI %.4f-%.4f, %zu trials)\n", r.accuracy(), ci.lo, ci.hi, r.overall.trials);
  for (int k = 0; k < 4; ++k) {
    const auto& t = r.by_degree[static_cast<std::size_t>(k)];
    if (t.trials) std::printf("  %-6s %.4f  (%zu trials)\n", to_string(static_cast<DegreeClass>(k)), t.rate(), t.trials);
  }
}

RunConfig run_config_of(const fs::path& run) { return load_run_config(run / "config.json"); }

void cmd_eval(const fs::path& run, const std::string& checkpoint, int trials, double temperature,
              std::uint64_t seed, const std::string& out) {
  const RunConfig c = run_config_of(run);
  const auto data = prepare_scenario(c);
  const fs::path ck = checkpoint.empty() ? run / "checkpoint" / "final.ckpt" : fs::path(checkpoint);
  const auto loaded = load_checkpoint<float>(ck);
  const auto report = evaluate_accuracy(loaded.params, data.graph, data.test, trials, temperature, seed);
  print_accuracy(report);
  if (!out.empty()) write_atomic(resolve_output(out), accuracy_json(report));
}

void cmd_analyze(const fs::path& run, const std::string& out) {
  const RunConfig c = run_config_of(run);
  const auto data = prepare_scenario(c);
  const auto loaded = load_checkpoint<float>(run / "checkpoint" / "final.ckpt");
  const fs::path dir = out.empty() ? run / "analysis" : resolve_output(out);
  AnalysisSummary a;
  in_output_dir(dir, [&] {
    a = analyze_model(loaded.params, data, dir);
    return a.files;
  });
  std::printf("attention mass on the target column %.4f\n", a.col2_mass);
  std::printf("weight gap %.4f, edge AUC %.4f\n", a.weight_gap, a.edge_auc);
  std::printf("cosine %.4f (raw %.4f)\n", a.cosine.average, a.cosine_raw.average);
}

void cmd_construct(const fs::path& graph_path, double c0, double c1, double c2, int trials, std::uint64_t seed,
                   const std::string& out) {
  const Graph g = load_graph(graph_path.string());
  const auto r = true_reachability(g);
  ConstructionParams cp{c0, c1, c2};
  cp.validate();
  const auto params = build_construction(g, r, cp);
  std::vector<LabeledPair> pairs;
  for (int s = 0; s < g.n; ++s)
    for (int t = 0; t < g.n; ++t)
      if (s != t && r(t, s)) pairs.push_back({{s, t}, DegreeClass::deg0});
  if (pairs.empty()) throw std::runtime_error("graph has no reachable pair");
  const auto report = evaluate_accuracy(params, g, pairs, trials, 1.0, seed);
  std::printf("valid paths %.4f over %zu decodes\n", report.accuracy(), report.overall.trials);
  if (!out.empty()) {
    const fs::path p = resolve_output(out);
    save_checkpoint(params, p);
    std::cout << "checkpoint -> " << p.string() << '\n';
  }
}

std::vector<std::string> write_study_outputs(const TenNodeStudy& st, const SimplifiedStudyOutcome& o, const fs::path& dir,
                                             bool full) {
  std::vector<std::string> files;
  auto csv = [&](const std::string& name, const MatrixD& m) {
    save_matrix_csv((dir / name).string(), m);
    files.push_back(name);
  };
  csv("wm_" + o.dataset + ".csv", o.fit.params.wm);
  if (full) {
    csv("wv_" + o.dataset + ".csv", o.fit.params.wv);
    csv("r_obs_" + o.dataset + ".csv", o.observed.r_obs.as_double());
    ordered_json j;
    j["dataset"] = o.dataset;
    j["sequences"] = study_dataset(st, o.dataset).size();
    j["steps"] = o.fit.loss_trace.size() - 1;
    j["loss_initial"] = o.fit.loss_trace.front();
    j["loss_final"] = o.fit.loss_trace.back();
    j["wm_edge_auc"] = o.edge_auc;
    j["wv_observed_reach_auc"] = opt_json(o.reach_auc);
    j["wv_reach_averages"] = reach_json(o.reach);
    j["sign_check"] = {{"entries", o.signs.entries.size()},
                       {"violations", o.signs.violations},
                       {"always_zero", o.signs.count(GradientCase::always_zero)},
                       {"always_positive", o.signs.count(GradientCase::always_positive)},
                       {"negative_at_minus_infinity", o.signs.count(GradientCase::negative_at_minus_infinity)}};
    save_json(dir / ("summary_" + o.dataset + ".json"), j);
    files.push_back("summary_" + o.dataset + ".json");
    std::ostringstream trace;
    trace << "step,loss\n";
    for (std::size_t i = 0; i < o.fit.loss_trace.size(); ++i) trace << i << ',' << o.fit.loss_trace[i] << '\n';
    write_atomic(dir / ("loss_" + o.dataset + ".csv"), trace.str());
    files.push_back("loss_" + o.dataset + ".csv");
  }
  return files;
}

std::vector<std::string> write_study_common(const TenNodeStudy& st, const fs::path& dir) {
  save_matrix_csv((dir / "adjacency.csv").string(), st.graph.adj.as_double());
  save_matrix_csv((dir / "r_true.csv").string(), st.reach.reach.as_double());
  write_atomic(dir / "graph.txt", graph_text(st.graph));
  return {"adjacency.csv", "r_true.csv", "graph.txt"};
}

void print_study(const SimplifiedStudyOutcome& o) {
  std::printf("%s: loss %.4f -> %.4f, W^M edge AUC %.4f", o.dataset.c_str(), o.fit.loss_trace.front(),
              o.fit.loss_trace.back(), o.edge_auc);
  if (o.reach_auc) std::printf(", W^V observed-reach AUC %.4f", *o.reach_auc);
  std::printf(", sign violations %zu\n", o.signs.violations);
}

void cmd_simplified(const std::vector<std::string>& datasets, int steps, double lr, std::uint64_t seed,
                    const fs::path& out) {
  const auto st = ten_node_study(seed);
  in_output_dir(out, [&] {
    auto files = write_study_common(st, out);
    for (const auto& d : datasets) {
      const auto o = run_simplified_study(st, d, steps, lr);
      print_study(o);
      for (auto& f : write_study_outputs(st, o, out, true)) files.push_back(f);
    }
    return files;
  });
}

int cmd_grad_check(const std::string& mode, int bits, std::size_t samples) {
  if (mode != "simplified" && mode != "gpt") throw std::invalid_argument("--mode must be simplified or gpt");
  if (bits != 32 && bits != 64) throw std::invalid_argument("--bits must be 32 or 64");
  GradientCheckResult r;
  if (mode == "simplified") {
    if (bits != 64) throw std::invalid_argument("the simplified model is checked in 64-bit only");
    r = simplified_gradient_check();
  } else {
    r = gpt_gradient_check(bits == 32 ? Precision::f32 : Precision::f64, samples);
  }
  std::printf("max relative error %.3e over %zu coordinates (tolerance %.0e)%s\n", r.max_rel_error, r.checked,
              r.tolerance, r.pass() ? "" : "  FAILED");
  if (r.skipped) std::printf("%zu draws skipped: stencil crossed a relu kink\n", r.skipped);
  return r.pass() ? 0 : 1;
}

void cmd_blocksworld(int blocks, const std::string& out) {
  const Graph g = build_blocksworld(blocks);
  const auto r = true_reachability(g);
  bool symmetric = true;
  for (int i = 0; i < g.n; ++i)
    for (int k = 0; k < g.n; ++k) symmetric = symmetric && g.adj(i, k) == g.adj(k, i);
  std::printf("blocks %d: %d states (expected %llu), %zu directed edges, symmetric %s, all pairs reachable %s\n",
              blocks, g.n, static_cast<unsigned long long>(blocksworld_state_count(blocks)), g.edge_count(),
              symmetric ? "yes" : "no", r.reach.count() == static_cast<std::size_t>(g.n) * g.n ? "yes" : "no");
  if (!out.empty()) write_atomic(resolve_output(out), graph_text(g));
}

// ---- repro ----

RunConfig fig1_config(bool quick) {
  RunConfig c;
  if (quick) {
    c.dag.n = 50;
    c.d_model = 64;
  }
  return c;
}

// Trains into dir unless it already holds a finished run of the same config.
RunSummary ensure_run(const RunConfig& c, const fs::path& dir) {
  if (completed_run_matches(c, dir)) {
    std::cerr << "reusing finished run in " << dir.string() << '\n';
    RunSummary s;
    std::ifstream in(dir / "metrics.jsonl");
    s.metrics = MetricsLog::read_jsonl(in);
    s.checkpoint = dir / "checkpoint" / "final.ckpt";
    return s;
  }
  return train_run(c, dir);
}

AnalysisSummary analysis_of(const RunConfig& c, const fs::path& dir) {
  const auto data = prepare_scenario(c);
  const auto loaded = load_checkpoint<float>(dir / "checkpoint" / "final.ckpt");
  return analyze_model(loaded.params, data, dir / "analysis");
}

void repro(const std::string& id, const fs::path& out, const Overrides& ov, bool quick) {
  if (id == "figC1" || id == "figC2") {
    const auto st = ten_node_study();
    in_output_dir(out, [&] {
      auto files = write_study_common(st, out);
      for (const char* d : {"D1", "D2", "D3"}) {
        const auto o = run_simplified_study(st, d);
        print_study(o);
        for (auto& f : write_study_outputs(st, o, out, id == "figC2")) files.push_back(f);
      }
      return files;
    });
    return;
  }

  RunConfig c = fig1_config(quick);
  if (id == "fig4") {
    // sparser graph: enough held-out pairs need two or more hops of composition
    c.dag.p = 0.05;
  } else if (id == "blocksworld") {
    c.scenario = "blocksworld";
  } else if (id != "fig1" && id != "fig2" && id != "fig3" && id != "tableD1") {
    throw std::invalid_argument("unknown figure id '" + id +
                                "' (fig1, fig2, fig3, fig4, figC1, figC2, tableD1, blocksworld)");
  }
  ov.apply(c);
  const fs::path run = out / "run";
  const RunSummary s = ensure_run(c, run);
  const auto data = prepare_scenario(c);
  const auto loaded = load_checkpoint<float>(s.checkpoint);
  const auto acc = evaluate_accuracy(loaded.params, data.graph, data.test, c.eval_trials, c.eval_temperature, c.eval_seed);
  print_accuracy(acc);
  if (c.layers != 1) return;
  const auto a = analysis_of(c, run);
  if (id == "fig2" || id == "blocksworld") std::printf("attention mass on the target column %.4f\n", a.col2_mass);
  if (id == "fig3" || id == "blocksworld") {
    const double g0 = s.metrics.records.front().weight_gap, g1 = s.metrics.records.back().weight_gap;
    std::printf("weight gap %.4f at step 0, %.4f at the end; edge AUC %.4f\n", g0, g1, a.edge_auc);
  }
  if (id == "tableD1")
    std::printf("cosine similarity %.4f over %zu pairs (raw variant %.4f)\n", a.cosine.average, a.cosine.used,
                a.cosine_raw.average);
  std::cout << "outputs in " << run.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"pathlab: path-finding experiments with small autoregressive Transformers"};
  app.require_subcommand(1);

  auto* gg = app.add_subcommand("gen-graph", "random DAG in the text graph format");
  int gg_n = 100;
  double gg_p = 0.1;
  std::uint64_t gg_seed = 7;
  std::string gg_out;
  gg->add_option("--n", gg_n, "node count")->capture_default_str();
  gg->add_option("--p", gg_p, "edge probability")->capture_default_str();
  gg->add_option("--seed", gg_seed, "seed")->capture_default_str();
  gg->add_option("--out", gg_out, "output file")->required();

  auto* gc = app.add_subcommand("gen-corpus", "train/test split and path corpus for a graph");
  std::string gc_graph, gc_out;
  int gc_m = 20;
  double gc_tp = 0.5;
  std::uint64_t gc_seed = 7;
  gc->add_option("--graph", gc_graph, "graph file")->required();
  gc->add_option("--m", gc_m, "paths per training pair")->capture_default_str();
  gc->add_option("--train-probability", gc_tp, "probability a non-edge pair goes to train")->capture_default_str();
  gc->add_option("--seed", gc_seed, "seed")->capture_default_str();
  gc->add_option("--out", gc_out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model; writes a self-describing run directory");
  std::string tr_config, tr_out;
  Overrides tr_ov;
  tr->add_option("--config", tr_config, "JSON run config (flags override its fields)");
  tr->add_option("--out", tr_out, "run directory")->required();
  tr_ov.attach(tr);

  auto* ev = app.add_subcommand("eval", "decode held-out pairs with a trained run");
  std::string ev_run, ev_ckpt, ev_out;
  int ev_trials = 2000;
  double ev_temp = 1.0;
  std::uint64_t ev_seed = 11;
  ev->add_option("--run", ev_run, "run directory")->required();
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint (default: the run's final.ckpt)");
  ev->add_option("--trials", ev_trials, "decodes")->capture_default_str();
  ev->add_option("--temperature", ev_temp, "sampling temperature (0: greedy)")->capture_default_str();
  ev->add_option("--seed", ev_seed, "seed")->capture_default_str();
  ev->add_option("--out", ev_out, "write the report as JSON");

  auto* an = app.add_subcommand("analyze", "attention map, W^M'/W^V' extraction, weight gap, cosine check");
  std::string an_run, an_out;
  an->add_option("--run", an_run, "run directory")->required();
  an->add_option("--out", an_out, "output directory (default: <run>/analysis)");

  auto* co = app.add_subcommand("construct", "hand-built weights for a graph, checked by decoding");
  std::string co_graph, co_out;
  double co_c = 40, co_c0 = 0, co_c1 = 0, co_c2 = 0;
  int co_trials = 1000;
  std::uint64_t co_seed = 1;
  co->add_option("--graph", co_graph, "graph file")->required();
  co->add_option("--c", co_c, "common value of c0, c1, c2")->capture_default_str();
  co->add_option("--c0", co_c0, "attention flag scale");
  co->add_option("--c1", co_c1, "reachability scale");
  co->add_option("--c2", co_c2, "adjacency scale");
  co->add_option("--trials", co_trials, "decodes")->capture_default_str();
  co->add_option("--seed", co_seed, "seed")->capture_default_str();
  co->add_option("--out", co_out, "checkpoint file");

  auto* si = app.add_subcommand("simplified", "10-node simplified-model study");
  std::vector<std::string> si_data{"D1", "D2", "D3"};
  int si_steps = 5000;
  double si_lr = 0.5;
  std::uint64_t si_seed = 3;
  std::string si_out;
  si->add_option("--dataset", si_data, "D1, D2 and/or D3")->capture_default_str();
  si->add_option("--steps", si_steps, "gradient steps")->capture_default_str();
  si->add_option("--lr", si_lr, "learning rate")->capture_default_str();
  si->add_option("--seed", si_seed, "graph seed")->capture_default_str();
  si->add_option("--out", si_out, "output directory")->required();

  auto* gk = app.add_subcommand("grad-check", "analytic gradients against finite differences");
  std::string gk_mode = "simplified";
  int gk_bits = 64;
  std::size_t gk_samples = 400;
  gk->add_option("--mode", gk_mode, "simplified or gpt")->capture_default_str();
  gk->add_option("--bits", gk_bits, "32 or 64")->capture_default_str();
  gk->add_option("--samples", gk_samples, "coordinates (gpt mode)")->capture_default_str();

  auto* bw = app.add_subcommand("blocksworld", "blocks-world state graph");
  int bw_blocks = 4;
  std::string bw_out;
  bw->add_option("--blocks", bw_blocks, "number of blocks")->capture_default_str();
  bw->add_option("--out", bw_out, "graph file");

  auto* rp = app.add_subcommand("repro", "regenerate a figure's desk-scale analogue");
  std::string rp_id, rp_out;
  bool rp_quick = false;
  Overrides rp_ov;
  rp->add_option("figure", rp_id, "fig1 fig2 fig3 fig4 figC1 figC2 tableD1 blocksworld")->required();
  rp->add_option("--out", rp_out, "output directory")->required();
  rp->add_flag("--quick", rp_quick, "n=50, d=64 variant of the training figures");
  rp_ov.attach(rp);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gg) {
      cmd_gen_graph(gg_n, gg_p, gg_seed, resolve_output(gg_out));
    } else if (*gc) {
      cmd_gen_corpus(gc_graph, gc_m, gc_tp, gc_seed, resolve_output(gc_out));
    } else if (*tr) {
      RunConfig c = tr_config.empty() ? RunConfig{} : RunConfig::from_json(slurp(tr_config));
      tr_ov.apply(c);
      const auto s = train_run(c, resolve_output(tr_out));
      print_accuracy(s.accuracy);
    } else if (*ev) {
      cmd_eval(ev_run, ev_ckpt, ev_trials, ev_temp, ev_seed, ev_out);
    } else if (*an) {
      cmd_analyze(an_run, an_out);
    } else if (*co) {
      cmd_construct(co_graph, co_c0 > 0 ? co_c0 : co_c, co_c1 > 0 ? co_c1 : co_c, co_c2 > 0 ? co_c2 : co_c, co_trials,
                    co_seed, co_out);
    } else if (*si) {
      cmd_simplified(si_data, si_steps, si_lr, si_seed, resolve_output(si_out));
    } else if (*gk) {
      return cmd_grad_check(gk_mode, gk_bits, gk_samples);
    } else if (*bw) {
      cmd_blocksworld(bw_blocks, bw_out);
    } else if (*rp) {
      repro(rp_id, resolve_output(rp_out), rp_ov, rp_quick);
    }
  } catch (const std::exception& e) {
    std::cerr << "pathlab: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
