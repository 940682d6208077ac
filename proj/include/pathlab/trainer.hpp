#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "pathlab/analysis.hpp"
#include "pathlab/corpus.hpp"
#include "pathlab/gpt.hpp"

namespace pathlab {

enum class OptimizerKind { adam, sgd };
enum class Precision { f32, f64 };

const char* to_string(OptimizerKind k);
const char* to_string(Precision p);
OptimizerKind parse_optimizer(const std::string& s);
Precision parse_precision(const std::string& s);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 64;
  int steps = 20000;
  int eval_interval = 1000;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;

  int eval_trials = 200;          // decodes per evaluation point
  double eval_temperature = 1.0;
  int probe_sequences = 256;      // fixed training subset for the loss and attention probes
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints

  void validate() const;
};

// One record per evaluation point. Accuracies of empty degree classes are NaN (null in JSON).
struct MetricsRecord {
  std::int64_t step = 0;
  double loss = 0.0;        // mean per-token loss on the probe subset
  double train_loss = 0.0;  // mean per-token loss of the batches since the previous record
  double accuracy = 0.0;
  std::array<double, 4> acc_degree{};
  double weight_gap = 0.0;
  double attn_col2_mass = 0.0;
  double wall_seconds = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRecord> records;

  void write_jsonl(std::ostream& out) const;
  static MetricsLog read_jsonl(std::istream& in);
  // Equality over every field except wall-clock time.
  bool same_results(const MetricsLog& other) const;
};

std::string to_json_line(const MetricsRecord& r);

struct EvalTarget {
  const Graph* graph = nullptr;
  std::vector<LabeledPair> test_pairs;
};

template <class T>
struct TrainResult {
  GptParams<T> params;
  MetricsLog log;
};

// Deterministic given config.seed: the shuffle, batching and evaluation draws all come
// from streams derived from it. Throws std::runtime_error on a non-finite loss.
template <class T>
TrainResult<T> train(GptParams<T> params, const Corpus& corpus, const EvalTarget& eval, const TrainConfig& config,
                     const std::function<void(const MetricsRecord&)>& on_record = {});

// Index order used for batching: consecutive epochs of seeded permutations.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t corpus_size, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  void reshuffle();

  std::size_t size_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace pathlab
