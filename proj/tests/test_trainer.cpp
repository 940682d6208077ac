#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "pathlab/checkpoint.hpp"
#include "pathlab/experiments.hpp"
#include "pathlab/trainer.hpp"

using namespace pathlab;
namespace fs = std::filesystem;

namespace {

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pathlab_test_" + name);
  fs::remove_all(p);
  return p;
}

ScenarioData small_scenario() {
  DagScenario sc;
  sc.n = 12;
  sc.p = 0.3;
  sc.m = 3;
  return prepare_dag(sc);
}

}  // namespace

TEST_CASE("descent on the single-edge corpus") {
  Graph g(2);
  g.adj.set(0, 1);
  Corpus c;
  c.n = 2;
  c.sequences = {make_sequence(2, {0, 1})};
  c.split.train = {{0, 1}};
  TrainConfig tc;
  tc.steps = 200;
  tc.eval_interval = 200;
  tc.batch_size = 1;
  auto res = train(init_params<float>(model_config_for(2, 8), 1), c, EvalTarget{&g, {}}, tc);
  REQUIRE(res.log.records.size() == 2);
  CHECK(res.log.records.back().loss < res.log.records.front().loss);
  CHECK(res.log.records.back().loss < 0.5 * res.log.records.front().loss);
}

TEST_CASE("same seed and config: bit-identical checkpoints and identical metrics") {
  auto d = small_scenario();
  TrainConfig tc;
  tc.steps = 60;
  tc.eval_interval = 20;
  tc.batch_size = 8;
  tc.eval_trials = 20;
  tc.seed = 3;
  auto cfg = model_config_for(d.graph.n, 16);
  auto run = [&](const std::string& name) {
    auto conf = tc;
    conf.checkpoint_dir = scratch(name);
    auto r = train(init_params<float>(cfg, 5), d.corpus, EvalTarget{&d.graph, d.test}, conf);
    return std::make_pair(r, conf.checkpoint_dir);
  };
  auto [a, da] = run("det_a");
  auto [b, db] = run("det_b");
  CHECK(a.log.same_results(b.log));
  CHECK(a.log.records.size() == 4);
  CHECK(file_bytes(da / "final.ckpt") == file_bytes(db / "final.ckpt"));
  CHECK(file_bytes(da / "checkpoint.ckpt") == file_bytes(db / "checkpoint.ckpt"));
  CHECK(a.params.flatten() == b.params.flatten());
  auto loaded = load_checkpoint<float>(da / "final.ckpt");
  CHECK(loaded.meta.step == 60);
  CHECK(loaded.params.flatten() == a.params.flatten());

  auto other = tc;
  other.seed = 4;
  auto c = train(init_params<float>(cfg, 5), d.corpus, EvalTarget{&d.graph, d.test}, other);
  CHECK_FALSE(c.params.flatten() == a.params.flatten());
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("epoch loss does not depend on how the corpus is partitioned into batches") {
  auto d = small_scenario();
  auto P = init_params<float>(model_config_for(d.graph.n, 16), 2);
  double per_sequence = 0;
  for (auto& s : d.corpus.sequences) per_sequence += sequence_loss<float>(P, s.tokens);
  for (std::size_t bs : {1, 7, 64}) {
    double total = 0;
    std::vector<std::size_t> order(d.corpus.sequences.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), std::mt19937_64(bs));
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      std::vector<const PathSequence*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + bs); ++i) batch.push_back(&d.corpus.sequences[order[i]]);
      seen += batch.size();
      total += batch_loss<float>(P, batch, nullptr).loss_sum;
    }
    CHECK(seen == d.corpus.sequences.size());
    CHECK(std::abs(total - per_sequence) <= 1e-4 * std::abs(per_sequence));
  }
}

TEST_CASE("duplicating a sequence in a batch doubles its loss") {
  auto P = init_params<double>(model_config_for(5, 8), 4);
  PathSequence s = make_sequence(5, {0, 2, 4});
  std::vector<const PathSequence*> one{&s}, two{&s, &s};
  CHECK(batch_loss<double>(P, two, nullptr).loss_sum ==
        doctest::Approx(2 * batch_loss<double>(P, one, nullptr).loss_sum).epsilon(1e-12));
}

TEST_CASE("batch schedule: every epoch is a permutation, seeded") {
  BatchSchedule a(10, 4, 1), b(10, 4, 1), c(10, 4, 2);
  std::vector<std::size_t> ea, ec;
  for (int k = 0; k < 5; ++k) {
    auto x = a.next();
    CHECK(x == b.next());
    ea.insert(ea.end(), x.begin(), x.end());
    auto y = c.next();
    ec.insert(ec.end(), y.begin(), y.end());
  }
  // batches may straddle epochs; the first ten draws are one epoch
  std::set<std::size_t> first(ea.begin(), ea.begin() + 10), second(ea.begin() + 10, ea.begin() + 20);
  CHECK(first.size() == 10);
  CHECK(second.size() == 10);
  CHECK(ea != ec);
}

TEST_CASE("metrics log JSON lines round trip, empty classes as null") {
  MetricsLog log;
  MetricsRecord r;
  r.step = 5;
  r.loss = 1.25;
  r.train_loss = 1.5;
  r.accuracy = 0.75;
  r.acc_degree = {1.0, 0.5, std::nan(""), std::nan("")};
  r.weight_gap = 2.0;
  r.attn_col2_mass = 0.4;
  r.wall_seconds = 3.0;
  log.records.push_back(r);
  std::stringstream ss;
  log.write_jsonl(ss);
  CHECK(ss.str().find("\"acc_deg2\":null") != std::string::npos);
  auto back = MetricsLog::read_jsonl(ss);
  CHECK(back.same_results(log));
  back.records[0].wall_seconds = 99;
  CHECK(back.same_results(log));
  back.records[0].loss = 1.0;
  CHECK_FALSE(back.same_results(log));
}

TEST_CASE("config validation and non-finite loss") {
  TrainConfig bad;
  bad.lr = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.beta2 = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(parse_optimizer("sgd") == OptimizerKind::sgd);
  CHECK_THROWS(parse_precision("f16"));

  auto d = small_scenario();
  auto P = init_params<float>(model_config_for(d.graph.n, 16), 2);
  P.w_out(0, 0) = std::numeric_limits<float>::quiet_NaN();
  TrainConfig tc;
  tc.steps = 3;
  tc.probe_sequences = 0;
  try {
    train(P, d.corpus, EvalTarget{}, tc);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("batch sequence indices") != std::string::npos);
  }
}

TEST_CASE("f64 training follows the f32 trajectory closely") {
  auto d = small_scenario();
  TrainConfig tc;
  tc.steps = 30;
  tc.eval_interval = 30;
  tc.eval_trials = 0;
  auto cfg = model_config_for(d.graph.n, 16);
  auto f = train(init_params<float>(cfg, 5), d.corpus, EvalTarget{&d.graph, {}}, tc);
  auto g = train(init_params<double>(cfg, 5), d.corpus, EvalTarget{&d.graph, {}}, tc);
  CHECK(f.log.records.back().loss == doctest::Approx(g.log.records.back().loss).epsilon(1e-3));
}
