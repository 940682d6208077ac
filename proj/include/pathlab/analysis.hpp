#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pathlab/corpus.hpp"
#include "pathlab/gpt.hpp"
#include "pathlab/simplified.hpp"

namespace pathlab {

// Mean attention_map over the training inputs of `sequences` (every token but the last),
// aligned by position; entry (r, c) averages only the sequences long enough to have row r.
template <class T>
MatrixD average_attention(const GptParams<T>& params, const std::vector<PathSequence>& sequences, int layer = 0,
                          int head = 0);

// Mean of avg(r, col) over rows r >= first_row (0-based).
double column_mass(const MatrixD& avg, int col = 1, int first_row = 1);

// normalized: the layer norms of the trained forward pass are applied around each term.
// raw: the norm-free formulas (FFN(x) + x) W_o and x W^V W_o + FFN(x W^V) W_o.
enum class ExtractMode { normalized, raw };

// Row i = FFN(e_i W_t) W_o + (e_i W_t) W_o. Requires a single-layer model. M x M.
template <class T>
MatrixD extract_wm_prime(const GptParams<T>& params, ExtractMode mode = ExtractMode::normalized);

// Row i = (e_i W_t) W^V W_o + FFN((e_i W_t) W^V) W_o, W^V being the concatenation over heads.
template <class T>
MatrixD extract_wv_prime(const GptParams<T>& params, ExtractMode mode = ExtractMode::normalized);

// Places a simplified model inside a GPT with identity norms: the value path writes W^V into
// a separate block the FFN never reads, the FFN computes x W^M, and a c0 positional flag
// pins attention on the target slot. Extraction then returns W^M + I and W^V.
GptParams<double> embed_simplified(const SimplifiedParams& s, double c0 = 40.0, int max_len = 0);

// Mean of w over edges (i, j), i < j, minus the mean over non-edges with i < j.
double weight_gap(const MatrixD& w, const Graph& g);

struct CategoryMean {
  std::optional<double> mean;  // absent when the category is empty
  std::size_t count = 0;
};

struct ReachAverages {
  CategoryMean obs;             // k <= t, r_obs(t, k)
  CategoryMean real_minus_obs;  // k <= t, !r_obs(t, k), r_true(t, k)
  CategoryMean non;             // k <= t, !r_true(t, k)
};

ReachAverages reachability_weight_averages(const MatrixD& wv, const BoolMatrix& r_obs, const BoolMatrix& r_true);

// Mann-Whitney AUC with ties counted as one half. Throws when either class is empty.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// AUC of w(i, k), i != k over the node block, as a classifier for adj(i, k).
double edge_auc(const MatrixD& w, const BoolMatrix& adj);

// AUC of w(t, k), k <= t over the node block, as a classifier for labels(t, k).
double lower_triangle_auc(const MatrixD& w, const BoolMatrix& labels);

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.96);

struct ClassTally {
  std::size_t trials = 0;
  std::size_t correct = 0;
  double rate() const { return trials ? static_cast<double>(correct) / static_cast<double>(trials) : 0.0; }
};

struct AccuracyReport {
  ClassTally overall;
  std::array<ClassTally, 4> by_degree;  // indexed by DegreeClass
  std::array<std::size_t, 4> verdicts{};  // indexed by PathVerdict

  double accuracy() const { return overall.rate(); }
  Interval interval() const { return wilson_interval(overall.correct, overall.trials); }
};

// Trial i draws its pair and its decode from streams derived from (seed, i), so the result
// does not depend on the thread count. threads <= 0 consults thread_count().
template <class T>
AccuracyReport evaluate_accuracy(const GptParams<T>& params, const Graph& g, const std::vector<LabeledPair>& pairs,
                                 int trials, double temperature, std::uint64_t seed, int threads = 0);

struct CosineReport {
  double average = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;  // pairs where either vector had zero norm
};

// For (target, current) pairs: cosine between FFN(X_2 W^V + X_n) W_o and
// FFN(X_2 W^V) W_o + FFN(X_n) W_o, X being token embeddings.
template <class T>
CosineReport cosine_similarity_check(const GptParams<T>& params, const std::vector<NodePair>& target_current,
                                     ExtractMode mode = ExtractMode::normalized);

// All ordered node pairs (t, i), t != i.
std::vector<NodePair> all_target_current_pairs(int n);

// Header "row,1,...,C"; each line a 1-based row id and values. A value is written with 9
// significant digits when that already parses back to the same double, else with 17, so a
// reload is always bit-identical.
void write_matrix_csv(std::ostream& out, const MatrixD& m);
MatrixD read_matrix_csv(std::istream& in);
void save_matrix_csv(const std::string& path, const MatrixD& m);
MatrixD load_matrix_csv(const std::string& path);

// PATHLAB_THREADS if set and positive, else the hardware concurrency (at least 1).
int thread_count();

}  // namespace pathlab
