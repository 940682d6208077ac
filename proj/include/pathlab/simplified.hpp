#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathlab/common.hpp"
#include "pathlab/corpus.hpp"

namespace pathlab {

// One layer, one head, attention pinned to the target token, identity embeddings:
// logits for (current i, target j) are wm.row(i) + wv.row(j).
struct SimplifiedParams {
  MatrixD wm;  // M x M
  MatrixD wv;  // M x M

  static SimplifiedParams zeros(int vocab) {
    return {MatrixD::Zero(vocab, vocab), MatrixD::Zero(vocab, vocab)};
  }
  int vocab() const { return static_cast<int>(wm.rows()); }
};

struct SimplifiedGrad {
  MatrixD gm;
  MatrixD gv;
};

double simplified_loss(const CountsTensor& counts, const SimplifiedParams& params);

SimplifiedGrad simplified_grad(const CountsTensor& counts, const SimplifiedParams& params);

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimplifiedTrainResult {
  SimplifiedParams params;
  std::vector<double> loss_trace;  // loss before step 0, then after every step
};

// Full-batch gradient descent on loss / total count (same minimizer and gradient signs as
// the summed loss, but a step size that does not depend on corpus size). The trace records
// the summed loss. Throws DivergenceError when the loss rises by more than 10% over any
// window of `window` steps.
SimplifiedTrainResult train_simplified(const CountsTensor& counts, int steps, double lr,
                                       const SimplifiedParams& init, int window = 50);

enum class GradientCase { always_zero, always_positive, negative_at_minus_infinity };
const char* to_string(GradientCase c);

struct SignCheckEntry {
  bool value_matrix;  // false: W^M entry (i, k); true: W^V entry (j, k)
  int row;
  int col;
  GradientCase expected;
  double grad_at_params;
  double grad_at_probe;  // with the entry itself set to kMinusInfinityProbe
  bool ok;
};

struct GradientSignReport {
  std::vector<SignCheckEntry> entries;
  std::size_t violations = 0;
  std::size_t count(GradientCase c) const;
};

constexpr double kMinusInfinityProbe = -30.0;

// Sign classification of every entry of both matrices, checked
// against the analytic gradient at `params` and at the -30 probe.
GradientSignReport gradient_sign_report(const CountsTensor& counts, const SimplifiedParams& params);

// dl/dW^M(i, k) (or dl/dW^V(j, k)) with every other entry taken from params.
double gradient_entry(const CountsTensor& counts, const SimplifiedParams& params, bool value_matrix,
                      int row, int col);

}  // namespace pathlab
