#pragma once

#include <cstdint>
#include <vector>

#include "pathlab/analysis.hpp"
#include "pathlab/corpus.hpp"
#include "pathlab/gpt.hpp"

namespace pathlab {

// Everything a training or analysis run needs about its data.
struct ScenarioData {
  Graph graph;
  ReachabilityMatrix reach;
  Corpus corpus;
  ObservedMatrices observed;
  std::vector<LabeledPair> test;  // held-out pairs with degree labels
};

struct DagScenario {
  int n = 100;
  double p = 0.1;
  int m = 20;  // sampled paths per training pair
  std::uint64_t seed = 7;
  double train_probability = 0.5;
};

// Graph, split and corpus draw from independent streams derived from seed.
ScenarioData prepare_dag(const DagScenario& s);

struct BlocksworldScenario {
  int blocks = 4;
  std::size_t sequences = 50000;
  double train_probability = 0.8;
  std::uint64_t seed = 7;
};

ScenarioData prepare_blocksworld(const BlocksworldScenario& s);

// 1 layer / 1 head by default; max_len 2n + 4 covers the longest simple-path sequence.
GptConfig model_config_for(int n, int d_model, int layers = 1, int heads = 1);

// The three datasets of the 10-node simplified-model study.
struct TenNodeStudy {
  Graph graph;
  ReachabilityMatrix reach;
  std::vector<PathSequence> d1;  // every one-edge path
  std::vector<PathSequence> d2;  // d1 plus a fraction of the longer paths, without replacement
  std::vector<PathSequence> d3;  // every simple path
};

TenNodeStudy ten_node_study(std::uint64_t seed = 3, double p = 0.3, double longer_fraction = 0.2);

// "D1", "D2" or "D3"; throws std::invalid_argument otherwise.
const std::vector<PathSequence>& study_dataset(const TenNodeStudy& study, const std::string& name);

struct SimplifiedStudyOutcome {
  std::string dataset;
  CountsTensor counts;
  ObservedMatrices observed;
  SimplifiedTrainResult fit;
  double edge_auc = 0.0;                 // W^M over i != k against the true adjacency
  std::optional<double> reach_auc;       // W^V over k <= t against observed reachability
  ReachAverages reach;
  GradientSignReport signs;              // at the initial (all-zero) parameters
};

// Full-batch gradient descent from zero on one dataset of the study.
SimplifiedStudyOutcome run_simplified_study(const TenNodeStudy& study, const std::string& dataset, int steps = 5000,
                                            double lr = 0.5);

}  // namespace pathlab
