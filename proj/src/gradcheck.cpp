#include "pathlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pathlab/autodiff.hpp"
#include "pathlab/experiments.hpp"
#include "pathlab/simplified.hpp"

namespace pathlab {

GradientCheckResult simplified_gradient_check(std::uint64_t seed) {
  const auto study = ten_node_study();
  const auto counts = counts_tensor(study.graph.n, study.d3);
  const int M = counts.vocab();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  SimplifiedParams p = SimplifiedParams::zeros(M);
  for (int i = 0; i < M * M; ++i) {
    p.wm.data()[i] = nd(rng);
    p.wv.data()[i] = nd(rng);
  }
  const auto g = simplified_grad(counts, p);
  std::vector<double> flat, analytic;
  flat.insert(flat.end(), p.wm.data(), p.wm.data() + p.wm.size());
  flat.insert(flat.end(), p.wv.data(), p.wv.data() + p.wv.size());
  analytic.insert(analytic.end(), g.gm.data(), g.gm.data() + g.gm.size());
  analytic.insert(analytic.end(), g.gv.data(), g.gv.data() + g.gv.size());
  auto loss = [&](std::span<const double> x) {
    SimplifiedParams q = SimplifiedParams::zeros(M);
    std::copy_n(x.begin(), M * M, q.wm.data());
    std::copy_n(x.begin() + M * M, M * M, q.wv.data());
    return simplified_loss(counts, q);
  };
  const auto rep = ad::gradient_check(loss, analytic, flat, 1e-5, flat.size(), seed, 1e-3);
  GradientCheckResult out;
  out.max_rel_error = rep.max_rel_error;
  out.checked = rep.checked;
  out.tolerance = 1e-6;
  return out;
}

namespace {

template <class T>
std::vector<double> analytic_gradient(const GptParams<double>& reference, std::span<const PathSequence* const> batch) {
  const GptParams<T> p = reference.template cast<T>();
  auto grads = GptParams<T>::zeros(p.config);
  batch_loss<T>(p, batch, &grads);
  const auto flat = grads.flatten();
  return {flat.begin(), flat.end()};
}

}  // namespace

GradientCheckResult gpt_gradient_check(Precision precision, std::size_t samples, std::uint64_t seed) {
  DagScenario sc;
  sc.n = 8;
  sc.p = 0.4;
  sc.m = 2;
  sc.seed = seed;
  const auto data = prepare_dag(sc);
  std::vector<const PathSequence*> batch;
  for (std::size_t i = 0; i < data.corpus.sequences.size() && batch.size() < 6; ++i)
    batch.push_back(&data.corpus.sequences[i]);

  GptConfig cfg = model_config_for(sc.n, 16);
  // weights well away from the near-linear regime of a fresh initialization
  auto reference = init_params<double>(cfg, derive_seed(seed, 0x9c, 0));
  reference.for_each([](const std::string&, MatrixD& m) { m *= 3.0; });
  if (precision == Precision::f32) reference = reference.cast<float>().cast<double>();

  const auto analytic = precision == Precision::f32 ? analytic_gradient<float>(reference, batch)
                                                    : analytic_gradient<double>(reference, batch);
  const auto base_pattern = relu_pattern<double>(reference, batch);
  auto x = reference.flatten();
  auto probe = reference;
  auto at = [&](std::size_t c, double v) {
    const double saved = x[c];
    x[c] = v;
    probe.assign_flat(x);
    x[c] = saved;
    return batch_loss<double>(probe, batch, nullptr).loss_sum;
  };
  auto same_piece = [&](std::size_t c, double v) {
    const double saved = x[c];
    x[c] = v;
    probe.assign_flat(x);
    x[c] = saved;
    return relu_pattern<double>(probe, batch) == base_pattern;
  };

  // Fourth-order central differences in double precision. A coordinate whose stencil
  // straddles a relu kink has no meaningful difference quotient and is drawn again.
  constexpr double h = 1e-4;
  constexpr double floor = 1e-4;
  std::mt19937_64 rng(derive_seed(seed, 0x9d, 0));
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  GradientCheckResult out;
  out.tolerance = precision == Precision::f32 ? 1e-3 : 1e-6;
  std::size_t draws = 0;
  while (out.checked < samples) {
    if (++draws > 20 * samples) throw std::runtime_error("gradient check: too many coordinates sit on relu kinks");
    const std::size_t c = pick(rng);
    if (!same_piece(c, x[c] - 2 * h) || !same_piece(c, x[c] + 2 * h)) {
      ++out.skipped;
      continue;
    }
    const double numeric =
        (at(c, x[c] - 2 * h) - 8 * at(c, x[c] - h) + 8 * at(c, x[c] + h) - at(c, x[c] + 2 * h)) / (12 * h);
    const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[c] - numeric) / denom);
    ++out.checked;
  }
  return out;
}

}  // namespace pathlab
