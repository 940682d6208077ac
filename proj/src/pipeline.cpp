#include "pathlab/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "json.hpp"

#include "pathlab/checkpoint.hpp"

namespace pathlab {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void RunConfig::validate() const {
  if (scenario != "random-dag" && scenario != "blocksworld")
    throw std::invalid_argument("scenario must be random-dag or blocksworld, got '" + scenario + "'");
  if (scenario == "random-dag") {
    if (dag.n < 2) throw std::invalid_argument("graph.n must be at least 2");
    if (!(dag.p >= 0.0 && dag.p <= 1.0)) throw std::invalid_argument("graph.p must lie in [0, 1]");
    if (dag.m < 1) throw std::invalid_argument("data.m must be at least 1");
  } else {
    if (blocksworld.blocks < 1 || blocksworld.blocks > kMaxBlocks)
      throw std::invalid_argument("graph.num_blocks must lie in [1, " + std::to_string(kMaxBlocks) + "]");
    if (blocksworld.sequences < 1) throw std::invalid_argument("data.sequences must be positive");
  }
  if (d_model < 1 || layers < 1 || heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("model sizes must be positive with d_model divisible by heads");
  train.validate();
  if (eval_trials < 1) throw std::invalid_argument("eval.trials must be at least 1");
  if (eval_temperature < 0.0) throw std::invalid_argument("eval.temperature must be non-negative");
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["scenario"] = scenario;
  const bool bw = scenario == "blocksworld";
  j["graph"] = {{"n", dag.n}, {"p", dag.p}, {"num_blocks", blocksworld.blocks}};
  j["data"] = {{"seed", bw ? blocksworld.seed : dag.seed},
               {"m", dag.m},
               {"sequences", blocksworld.sequences},
               {"train_probability", bw ? blocksworld.train_probability : dag.train_probability}};
  j["model"] = {{"d_model", d_model}, {"layers", layers}, {"heads", heads}, {"init_seed", init_seed}};
  j["train"] = {{"optimizer", to_string(train.optimizer)},
                {"lr", train.lr},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"eps", train.eps},
                {"batch_size", train.batch_size},
                {"steps", train.steps},
                {"eval_interval", train.eval_interval},
                {"seed", train.seed},
                {"precision", to_string(train.precision)},
                {"eval_trials", train.eval_trials},
                {"eval_temperature", train.eval_temperature},
                {"probe_sequences", train.probe_sequences}};
  j["eval"] = {{"trials", eval_trials}, {"temperature", eval_temperature}, {"seed", eval_seed}};
  j["analysis"] = analysis;
  return j.dump(2) + "\n";
}

namespace {

template <class V>
void take(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

RunConfig RunConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  RunConfig c;
  take(j, "scenario", c.scenario);
  if (c.scenario == "blocksworld") c.blocksworld.train_probability = 0.8;
  if (j.contains("graph")) {
    const auto& g = j["graph"];
    take(g, "n", c.dag.n);
    take(g, "p", c.dag.p);
    take(g, "num_blocks", c.blocksworld.blocks);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    std::uint64_t seed = c.dag.seed;
    take(d, "seed", seed);
    c.dag.seed = c.blocksworld.seed = seed;
    take(d, "m", c.dag.m);
    take(d, "sequences", c.blocksworld.sequences);
    double tp = c.scenario == "blocksworld" ? c.blocksworld.train_probability : c.dag.train_probability;
    take(d, "train_probability", tp);
    c.dag.train_probability = c.blocksworld.train_probability = tp;
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    take(m, "d_model", c.d_model);
    take(m, "layers", c.layers);
    take(m, "heads", c.heads);
    take(m, "init_seed", c.init_seed);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    std::string s;
    if (t.contains("optimizer")) c.train.optimizer = parse_optimizer(t["optimizer"].get<std::string>());
    if (t.contains("precision")) c.train.precision = parse_precision(t["precision"].get<std::string>());
    take(t, "lr", c.train.lr);
    take(t, "beta1", c.train.beta1);
    take(t, "beta2", c.train.beta2);
    take(t, "eps", c.train.eps);
    take(t, "batch_size", c.train.batch_size);
    take(t, "steps", c.train.steps);
    take(t, "eval_interval", c.train.eval_interval);
    take(t, "seed", c.train.seed);
    take(t, "eval_trials", c.train.eval_trials);
    take(t, "eval_temperature", c.train.eval_temperature);
    take(t, "probe_sequences", c.train.probe_sequences);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    take(e, "trials", c.eval_trials);
    take(e, "temperature", c.eval_temperature);
    take(e, "seed", c.eval_seed);
  }
  take(j, "analysis", c.analysis);
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return RunConfig::from_json(ss.str());
}

ScenarioData prepare_scenario(const RunConfig& c) {
  c.validate();
  return c.scenario == "blocksworld" ? prepare_blocksworld(c.blocksworld) : prepare_dag(c.dag);
}

GptConfig model_config(const RunConfig& c, const ScenarioData& data) {
  GptConfig g = model_config_for(data.graph.n, c.d_model, c.layers, c.heads);
  g.max_len = std::max(g.max_len, static_cast<int>(data.corpus.max_len()));
  return g;
}

std::string accuracy_json(const AccuracyReport& r) {
  ordered_json j;
  const auto ci = r.interval();
  j["trials"] = r.overall.trials;
  j["correct"] = r.overall.correct;
  j["accuracy"] = r.accuracy();
  j["ci95"] = {ci.lo, ci.hi};
  ordered_json deg;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& t = r.by_degree[k];
    deg[to_string(static_cast<DegreeClass>(k))] = {
        {"trials", t.trials}, {"correct", t.correct}, {"accuracy", t.trials ? ordered_json(t.rate()) : ordered_json()}};
  }
  j["by_degree"] = deg;
  ordered_json v;
  for (std::size_t k = 0; k < 4; ++k) v[to_string(static_cast<PathVerdict>(k))] = r.verdicts[k];
  j["verdicts"] = v;
  return j.dump(2) + "\n";
}

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

ordered_json category(const CategoryMean& m) {
  return {{"mean", m.mean ? ordered_json(*m.mean) : ordered_json()}, {"count", m.count}};
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

void write_manifest(const fs::path& dir, const std::vector<std::string>& files) {
  std::ostringstream os;
  for (const auto& f : files) {
    std::ifstream in(dir / f, std::ios::binary);
    if (!in) throw std::runtime_error("manifest: missing output " + f);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    os << f << ' ' << bytes.size() << ' ' << hex64(fnv1a64(bytes.data(), bytes.size()));
    if (f == "metrics.jsonl") os << " timing";  // carries wall-clock seconds
    os << '\n';
  }
  write_text(dir / "MANIFEST", os.str());
}

fs::path resolve_output(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("PATHLAB_OUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

bool completed_run_matches(const RunConfig& c, const fs::path& dir) {
  if (!fs::exists(dir / "MANIFEST") || !fs::exists(dir / "config.json")) return false;
  std::ifstream in(dir / "config.json");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str() == c.to_json();
}

AnalysisSummary analyze_model(const GptParams<float>& params, const ScenarioData& data, const fs::path& dir) {
  AnalysisSummary a;
  a.avg_attention = average_attention(params, data.corpus.sequences);
  a.col2_mass = column_mass(a.avg_attention, 1, 1);
  a.wm_prime = extract_wm_prime(params);
  a.wv_prime = extract_wv_prime(params);
  a.wm_prime_raw = extract_wm_prime(params, ExtractMode::raw);
  a.wv_prime_raw = extract_wv_prime(params, ExtractMode::raw);
  a.weight_gap = weight_gap(a.wm_prime, data.graph);
  a.edge_auc = edge_auc(a.wm_prime, data.graph.adj);
  a.reach = reachability_weight_averages(a.wv_prime, data.observed.r_obs, data.reach.reach);
  const auto pairs = all_target_current_pairs(data.graph.n);
  a.cosine = cosine_similarity_check(params, pairs);
  a.cosine_raw = cosine_similarity_check(params, pairs, ExtractMode::raw);

  fs::create_directories(dir);
  auto csv = [&](const std::string& name, const MatrixD& m) {
    save_matrix_csv((dir / name).string(), m);
    a.files.push_back(name);
  };
  csv("avg_attention.csv", a.avg_attention);
  csv("wm_prime.csv", a.wm_prime);
  csv("wv_prime.csv", a.wv_prime);
  csv("wm_prime_raw.csv", a.wm_prime_raw);
  csv("wv_prime_raw.csv", a.wv_prime_raw);
  csv("adjacency.csv", data.graph.adj.as_double());
  csv("r_true.csv", data.reach.reach.as_double());
  csv("r_obs.csv", data.observed.r_obs.as_double());

  ordered_json j;
  j["attn_col2_mass"] = a.col2_mass;
  j["weight_gap"] = a.weight_gap;
  j["wm_prime_edge_auc"] = a.edge_auc;
  j["reach_averages"] = {{"obs", category(a.reach.obs)},
                         {"real_minus_obs", category(a.reach.real_minus_obs)},
                         {"non", category(a.reach.non)}};
  j["cosine"] = {{"average", a.cosine.average}, {"used", a.cosine.used}, {"skipped", a.cosine.skipped}};
  j["cosine_raw"] = {{"average", a.cosine_raw.average}, {"used", a.cosine_raw.used}, {"skipped", a.cosine_raw.skipped}};
  write_text(dir / "analysis.json", j.dump(2) + "\n");
  a.files.push_back("analysis.json");
  return a;
}

namespace {

template <class T>
RunSummary run_training_impl(const RunConfig& c, const fs::path& dir, const ScenarioData& data,
                             const std::function<void(const std::string&)>& log) {
  RunSummary s;
  const GptConfig gc = model_config(c, data);
  TrainConfig tc = c.train;
  tc.checkpoint_dir = dir / "checkpoint";
  auto init = init_params<T>(gc, c.init_seed);
  auto result = train<T>(std::move(init), data.corpus, EvalTarget{&data.graph, data.test}, tc,
                         [&](const MetricsRecord& r) {
                           if (log) log(to_json_line(r));
                         });
  s.metrics = result.log;
  {
    std::ofstream out(dir / "metrics.jsonl");
    s.metrics.write_jsonl(out);
  }
  s.checkpoint = tc.checkpoint_dir / "final.ckpt";
  s.files.insert(s.files.end(), {"metrics.jsonl", "checkpoint/checkpoint.ckpt", "checkpoint/final.ckpt"});
  s.accuracy = evaluate_accuracy(result.params, data.graph, data.test, c.eval_trials, c.eval_temperature, c.eval_seed);
  write_text(dir / "eval.json", accuracy_json(s.accuracy));
  s.files.push_back("eval.json");
  if (c.analysis && gc.layers == 1) {
    GptParams<float> pf = result.params.template cast<float>();
    auto a = analyze_model(pf, data, dir / "analysis");
    for (auto& f : a.files) s.files.push_back("analysis/" + f);
  }
  return s;
}

}  // namespace

RunSummary run_training(const RunConfig& c, const fs::path& dir, const std::function<void(const std::string&)>& log) {
  c.validate();
  fs::create_directories(dir);
  fs::remove(dir / "MANIFEST");
  fs::remove(dir / "FAILED");
  try {
    write_text(dir / "config.json", c.to_json());
    const ScenarioData data = prepare_scenario(c);
    {
      ordered_json seeds;
      const std::uint64_t base = c.scenario == "blocksworld" ? c.blocksworld.seed : c.dag.seed;
      seeds["data_seed"] = base;
      seeds["graph_stream"] = derive_seed(base, 1, 0);
      seeds["split_stream"] = derive_seed(base, 2, 0);
      seeds["corpus_stream"] = derive_seed(base, 3, 0);
      seeds["init_seed"] = c.init_seed;
      seeds["train_seed"] = c.train.seed;
      seeds["eval_seed"] = c.eval_seed;
      write_text(dir / "seeds.json", seeds.dump(2) + "\n");
    }
    save_graph((dir / "graph.txt").string(), data.graph);
    {
      std::ofstream out(dir / "split.txt");
      write_split(out, data.corpus.split);
    }
    {
      std::ofstream out(dir / "corpus.txt");
      write_corpus(out, data.corpus.sequences);
    }
    RunSummary s = c.train.precision == Precision::f32 ? run_training_impl<float>(c, dir, data, log)
                                                       : run_training_impl<double>(c, dir, data, log);
    std::vector<std::string> files{"config.json", "seeds.json", "graph.txt", "split.txt", "corpus.txt"};
    files.insert(files.end(), s.files.begin(), s.files.end());
    s.files = files;
    write_manifest(dir, s.files);
    return s;
  } catch (const std::exception& e) {
    write_text(dir / "FAILED", std::string(e.what()) + "\n");
    throw;
  }
}

}  // namespace pathlab
