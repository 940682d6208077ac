#include "pathlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "pathlab/checkpoint.hpp"

namespace pathlab {

const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }
const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + s + "' (adam | sgd)");
}

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + s + "' (f32 | f64)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (optimizer == OptimizerKind::adam && !(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0))
    throw std::invalid_argument("TrainConfig: adam needs beta1, beta2 in [0, 1) and eps > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be at least 1");
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be non-negative");
  if (eval_interval < 1) throw std::invalid_argument("TrainConfig: eval_interval must be at least 1");
  if (eval_trials < 0 || probe_sequences < 0) throw std::invalid_argument("TrainConfig: negative probe sizes");
}

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double num_of(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}
bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss"] = num(r.loss);
  j["train_loss"] = num(r.train_loss);
  j["accuracy"] = num(r.accuracy);
  j["acc_deg0"] = num(r.acc_degree[0]);
  j["acc_deg1"] = num(r.acc_degree[1]);
  j["acc_deg2"] = num(r.acc_degree[2]);
  j["acc_deg3p"] = num(r.acc_degree[3]);
  j["weight_gap"] = num(r.weight_gap);
  j["attn_col2_mass"] = num(r.attn_col2_mass);
  j["wall_seconds"] = r.wall_seconds;
  return j.dump();
}

void MetricsLog::write_jsonl(std::ostream& out) const {
  for (auto& r : records) out << to_json_line(r) << '\n';
}

MetricsLog MetricsLog::read_jsonl(std::istream& in) {
  MetricsLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    MetricsRecord r;
    r.step = j.at("step").get<std::int64_t>();
    r.loss = num_of(j.at("loss"));
    r.train_loss = num_of(j.at("train_loss"));
    r.accuracy = num_of(j.at("accuracy"));
    r.acc_degree = {num_of(j.at("acc_deg0")), num_of(j.at("acc_deg1")), num_of(j.at("acc_deg2")),
                    num_of(j.at("acc_deg3p"))};
    r.weight_gap = num_of(j.at("weight_gap"));
    r.attn_col2_mass = num_of(j.at("attn_col2_mass"));
    r.wall_seconds = j.at("wall_seconds").get<double>();
    log.records.push_back(r);
  }
  return log;
}

bool MetricsLog::same_results(const MetricsLog& o) const {
  if (records.size() != o.records.size()) return false;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto &a = records[i], &b = o.records[i];
    if (a.step != b.step || !same(a.loss, b.loss) || !same(a.train_loss, b.train_loss) ||
        !same(a.accuracy, b.accuracy) || !same(a.weight_gap, b.weight_gap) ||
        !same(a.attn_col2_mass, b.attn_col2_mass))
      return false;
    for (int k = 0; k < 4; ++k)
      if (!same(a.acc_degree[static_cast<std::size_t>(k)], b.acc_degree[static_cast<std::size_t>(k)])) return false;
  }
  return true;
}

BatchSchedule::BatchSchedule(std::size_t corpus_size, std::size_t batch_size, std::uint64_t seed)
    : size_(corpus_size), batch_(batch_size), seed_(seed), order_(corpus_size) {
  if (corpus_size == 0) throw std::invalid_argument("BatchSchedule: empty corpus");
  reshuffle();
}

void BatchSchedule::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed_, epoch_, 0x5eed));
  std::shuffle(order_.begin(), order_.end(), rng);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSchedule::next() {
  std::vector<std::size_t> out;
  out.reserve(batch_);
  while (out.size() < batch_) {
    if (cursor_ == size_) {
      ++epoch_;
      reshuffle();
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

namespace {

template <class T>
class Optimizer {
 public:
  Optimizer(const TrainConfig& c, const GptParams<T>& params) : c_(c) {
    if (c.optimizer == OptimizerKind::adam) {
      m_ = GptParams<T>::zeros(params.config);
      v_ = GptParams<T>::zeros(params.config);
    }
  }

  // grads already hold the gradient of the mean per-token loss
  void step(GptParams<T>& params, GptParams<T>& grads) {
    ++t_;
    std::vector<Matrix<T>*> g;
    grads.for_each([&](const std::string&, Matrix<T>& m) { g.push_back(&m); });
    std::size_t i = 0;
    if (c_.optimizer == OptimizerKind::sgd) {
      const T lr = static_cast<T>(c_.lr);
      params.for_each([&](const std::string&, Matrix<T>& p) { p -= lr * *g[i++]; });
      return;
    }
    std::vector<Matrix<T>*> m, v;
    m_.for_each([&](const std::string&, Matrix<T>& x) { m.push_back(&x); });
    v_.for_each([&](const std::string&, Matrix<T>& x) { v.push_back(&x); });
    const T b1 = static_cast<T>(c_.beta1), b2 = static_cast<T>(c_.beta2), eps = static_cast<T>(c_.eps);
    const T c1 = static_cast<T>(1.0 - std::pow(c_.beta1, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(c_.beta2, static_cast<double>(t_)));
    const T lr = static_cast<T>(c_.lr);
    params.for_each([&](const std::string&, Matrix<T>& p) {
      auto& gm = *g[i];
      auto& mm = *m[i];
      auto& vm = *v[i];
      mm = b1 * mm + (T(1) - b1) * gm;
      vm.array() = b2 * vm.array() + (T(1) - b2) * gm.array().square();
      p.array() -= lr * (mm.array() / c1) / ((vm.array() / c2).sqrt() + eps);
      ++i;
    });
  }

 private:
  TrainConfig c_;
  GptParams<T> m_, v_;
  std::int64_t t_ = 0;
};

// weight_gap needs at least one edge and one non-edge among the pairs i < j
bool gap_defined(const Graph& g) {
  std::size_t edges = 0;
  for (int i = 0; i < g.n; ++i)
    for (int j = i + 1; j < g.n; ++j) edges += g.has_edge(i, j);
  const std::size_t pairs = static_cast<std::size_t>(g.n) * static_cast<std::size_t>(g.n - 1) / 2;
  return edges > 0 && edges < pairs;
}

template <class T>
double probe_loss(const GptParams<T>& params, const std::vector<const PathSequence*>& probe) {
  double loss = 0;
  std::size_t preds = 0;
  // fixed chunks keep the probe deterministic and memory-bounded
  for (std::size_t b = 0; b < probe.size(); b += 64) {
    const std::size_t e = std::min(probe.size(), b + 64);
    auto r = batch_loss<T>(params, std::span<const PathSequence* const>(probe.data() + b, e - b), nullptr);
    loss += r.loss_sum;
    preds += r.predictions;
  }
  return preds ? loss / static_cast<double>(preds) : 0.0;
}

}  // namespace

template <class T>
TrainResult<T> train(GptParams<T> params, const Corpus& corpus, const EvalTarget& eval, const TrainConfig& config,
                     const std::function<void(const MetricsRecord&)>& on_record) {
  config.validate();
  if (corpus.sequences.empty()) throw std::invalid_argument("train: empty corpus");
  if (corpus.n + 1 != params.config.vocab)
    throw std::invalid_argument("train: corpus vocabulary does not match the model");
  if (corpus.max_len() > static_cast<std::size_t>(params.config.max_len) + 1)
    throw std::invalid_argument("train: corpus sequences exceed the model's max_len");

  const auto start = std::chrono::steady_clock::now();
  BatchSchedule schedule(corpus.sequences.size(), static_cast<std::size_t>(config.batch_size), config.seed);
  Optimizer<T> opt(config, params);
  auto grads = GptParams<T>::zeros(params.config);

  // probe subset: evenly strided through the corpus
  std::vector<const PathSequence*> probe;
  std::vector<PathSequence> probe_copy;
  {
    const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(config.probe_sequences), corpus.sequences.size());
    for (std::size_t k = 0; k < want; ++k) {
      const auto& s = corpus.sequences[k * corpus.sequences.size() / want];
      probe.push_back(&s);
      probe_copy.push_back(s);
    }
  }

  TrainResult<T> result{std::move(params), {}};
  double running_loss = 0.0;
  std::size_t running_preds = 0;

  auto record = [&](std::int64_t step) {
    const auto& P = result.params;
    MetricsRecord r;
    r.step = step;
    r.loss = probe_loss(P, probe);
    r.train_loss = running_preds ? running_loss / static_cast<double>(running_preds)
                                 : std::numeric_limits<double>::quiet_NaN();
    running_loss = 0.0;
    running_preds = 0;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.accuracy = nan;
    r.acc_degree.fill(nan);
    if (eval.graph && !eval.test_pairs.empty() && config.eval_trials > 0) {
      auto acc = evaluate_accuracy(P, *eval.graph, eval.test_pairs, config.eval_trials, config.eval_temperature,
                                   derive_seed(config.seed, static_cast<std::uint64_t>(step), 0xacc));
      r.accuracy = acc.accuracy();
      for (std::size_t k = 0; k < 4; ++k)
        if (acc.by_degree[k].trials) r.acc_degree[k] = acc.by_degree[k].rate();
    }
    r.weight_gap = nan;
    r.attn_col2_mass = nan;
    if (P.config.layers == 1) {
      if (eval.graph && gap_defined(*eval.graph)) r.weight_gap = weight_gap(extract_wm_prime(P), *eval.graph);
      if (!probe_copy.empty()) r.attn_col2_mass = column_mass(average_attention(P, probe_copy), 1, 1);
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.records.push_back(r);
    if (!config.checkpoint_dir.empty()) {
      std::filesystem::create_directories(config.checkpoint_dir);
      save_checkpoint(P, config.checkpoint_dir / "checkpoint.ckpt", {config.seed, step});
    }
    if (on_record) on_record(r);
  };

  record(0);
  std::vector<const PathSequence*> batch;
  for (int step = 1; step <= config.steps; ++step) {
    batch.clear();
    const auto idx = schedule.next();
    for (auto i : idx) batch.push_back(&corpus.sequences[i]);
    grads.set_zero();
    auto bl = batch_loss<T>(result.params, batch, &grads);
    if (!std::isfinite(bl.loss_sum)) {
      std::ostringstream os;
      os << "train: non-finite loss at step " << step << "; batch sequence indices:";
      for (auto i : idx) os << ' ' << i;
      throw std::runtime_error(os.str());
    }
    running_loss += bl.loss_sum;
    running_preds += bl.predictions;
    const T inv = T(1) / static_cast<T>(bl.predictions);
    grads.for_each([&](const std::string&, Matrix<T>& g) { g *= inv; });
    opt.step(result.params, grads);
    if (step % config.eval_interval == 0 || step == config.steps) record(step);
  }
  if (!config.checkpoint_dir.empty())
    save_checkpoint(result.params, config.checkpoint_dir / "final.ckpt", {config.seed, config.steps});
  return result;
}

template TrainResult<float> train<float>(GptParams<float>, const Corpus&, const EvalTarget&, const TrainConfig&,
                                         const std::function<void(const MetricsRecord&)>&);
template TrainResult<double> train<double>(GptParams<double>, const Corpus&, const EvalTarget&, const TrainConfig&,
                                           const std::function<void(const MetricsRecord&)>&);

}  // namespace pathlab
