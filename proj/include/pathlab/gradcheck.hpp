#pragma once

#include <cstdint>
#include <cstddef>

#include "pathlab/trainer.hpp"

namespace pathlab {

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates rejected because the stencil crossed a relu kink
  double tolerance = 0.0;
  bool pass() const { return max_rel_error <= tolerance; }
};

// Simplified-model gradient against central differences on the 10-node study counts (D3),
// at a random parameter point. Every coordinate is checked. Tolerance 1e-6.
GradientCheckResult simplified_gradient_check(std::uint64_t seed = 1);

// Single-layer GPT with layer norms on a small random DAG corpus, `samples` distinct draws of
// coordinates. The analytic gradient is computed at the requested precision; the numeric
// reference always differences the loss in double precision at the same (rounded) weights.
// Tolerance 1e-3 (f32) or 1e-6 (f64).
GradientCheckResult gpt_gradient_check(Precision precision, std::size_t samples = 400, std::uint64_t seed = 1);

}  // namespace pathlab
