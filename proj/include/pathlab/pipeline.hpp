#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pathlab/analysis.hpp"
#include "pathlab/experiments.hpp"
#include "pathlab/trainer.hpp"

namespace pathlab {

// Everything that determines a training run. Persisted verbatim as config.json.
struct RunConfig {
  std::string scenario = "random-dag";  // random-dag | blocksworld
  DagScenario dag;
  BlocksworldScenario blocksworld;
  int d_model = 120;
  int layers = 1;
  int heads = 1;
  std::uint64_t init_seed = 7;
  TrainConfig train;
  int eval_trials = 2000;
  double eval_temperature = 1.0;
  std::uint64_t eval_seed = 11;
  bool analysis = true;

  void validate() const;
  std::string to_json() const;                       // pretty-printed, stable key order
  static RunConfig from_json(const std::string& text);  // missing keys keep their defaults
};

RunConfig load_run_config(const std::filesystem::path& path);

ScenarioData prepare_scenario(const RunConfig& c);
GptConfig model_config(const RunConfig& c, const ScenarioData& data);

struct RunSummary {
  MetricsLog metrics;
  AccuracyReport accuracy;
  std::filesystem::path checkpoint;
  std::vector<std::string> files;  // relative to the run directory
};

// Writes into dir: config.json, seeds.json, graph.txt, split.txt, corpus.txt,
// metrics.jsonl, checkpoint/final.ckpt, eval.json, optionally the analysis outputs, and
// finally MANIFEST. A failure leaves a FAILED marker with the diagnostic instead.
RunSummary run_training(const RunConfig& c, const std::filesystem::path& dir,
                        const std::function<void(const std::string&)>& log = {});

// True when dir holds a finished run (MANIFEST present) whose config.json equals c.
bool completed_run_matches(const RunConfig& c, const std::filesystem::path& dir);

struct AnalysisSummary {
  MatrixD avg_attention;
  MatrixD wm_prime;
  MatrixD wv_prime;
  MatrixD wm_prime_raw;
  MatrixD wv_prime_raw;
  double col2_mass = 0.0;
  double weight_gap = 0.0;
  double edge_auc = 0.0;
  ReachAverages reach;
  CosineReport cosine;
  CosineReport cosine_raw;
  std::vector<std::string> files;
};

// The interpretability suite on a trained single-layer model; CSVs and analysis.json go
// into dir.
AnalysisSummary analyze_model(const GptParams<float>& params, const ScenarioData& data,
                              const std::filesystem::path& dir);

std::string accuracy_json(const AccuracyReport& r);

// Manifest: one "<relative path> <bytes> <fnv1a64 hex>" line per produced file.
void write_manifest(const std::filesystem::path& dir, const std::vector<std::string>& files);

// Prefix for relative output paths: PATHLAB_OUT_ROOT when set, else unchanged.
std::filesystem::path resolve_output(const std::filesystem::path& p);

// Keeps glibc from returning freed training buffers to the OS on every step.
void tune_allocator();

}  // namespace pathlab
