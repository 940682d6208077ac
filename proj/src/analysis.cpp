#include "pathlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pathlab {

namespace {

template <class T>
using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <class T>
Row<T> layer_norm(const Row<T>& x, const Matrix<T>& g, const Matrix<T>& b, bool identity) {
  if (identity) return x;
  const T mean = x.mean();
  const T var = (x.array() - mean).square().mean();
  Row<T> y = (x.array() - mean) / std::sqrt(var + T(1e-5));
  return (y.array() * g.row(0).array() + b.row(0).array()).matrix();
}

template <class T>
Row<T> ffn(const LayerParams<T>& L, const Row<T>& x) {
  Row<T> h = (x * L.w1 + L.b1.row(0)).cwiseMax(T(0));
  return h * L.w2 + L.b2.row(0);
}

template <class T>
void require_single_layer(const GptParams<T>& p, const char* what) {
  if (p.config.layers != 1) throw std::invalid_argument(std::string(what) + " requires a single-layer model");
}

// Value vector when attention sits entirely on a token with embedding x.
template <class T>
Row<T> value_of(const GptParams<T>& p, const Row<T>& x, bool normalized) {
  const auto& L = p.layers[0];
  const bool idn = p.config.identity_norm || !normalized;
  Row<T> a = layer_norm<T>(x, L.ln1_g, L.ln1_b, idn);
  Row<T> v(p.config.d_model);
  const int dk = p.config.d_head();
  for (std::size_t h = 0; h < L.wv.size(); ++h) v.segment(static_cast<Eigen::Index>(h) * dk, dk) = a * L.wv[h];
  return v;
}

// x + FFN(LN2(x)) through the final norm and the output head.
template <class T>
Row<T> residual_readout(const GptParams<T>& p, const Row<T>& x, bool normalized) {
  const auto& L = p.layers[0];
  const bool idn = p.config.identity_norm || !normalized;
  Row<T> out = x + ffn<T>(L, layer_norm<T>(x, L.ln2_g, L.ln2_b, idn));
  return layer_norm<T>(out, p.lnf_g, p.lnf_b, idn) * p.w_out;
}

}  // namespace

template <class T>
MatrixD average_attention(const GptParams<T>& params, const std::vector<PathSequence>& sequences, int layer,
                          int head) {
  std::size_t longest = 0;
  for (auto& s : sequences) longest = std::max(longest, s.size());
  if (longest < 2) return MatrixD::Zero(0, 0);
  const auto N = static_cast<Eigen::Index>(longest - 1);
  MatrixD sum = MatrixD::Zero(N, N);
  Eigen::VectorXd rows = Eigen::VectorXd::Zero(N);
  for (auto& s : sequences) {
    if (s.size() < 2) continue;
    std::span<const int> in(s.tokens.data(), s.size() - 1);
    Matrix<T> a = attention_map(params, in, layer, head);
    sum.topLeftCorner(a.rows(), a.cols()) += a.template cast<double>();
    rows.head(a.rows()).array() += 1.0;
  }
  for (Eigen::Index r = 0; r < N; ++r)
    if (rows(r) > 0) sum.row(r) /= rows(r);
  return sum;
}

double column_mass(const MatrixD& avg, int col, int first_row) {
  if (col < 0 || col >= avg.cols() || first_row >= avg.rows())
    throw std::invalid_argument("column_mass: index outside the attention matrix");
  double total = 0.0;
  int count = 0;
  for (Eigen::Index r = first_row; r < avg.rows(); ++r) {
    if (avg.row(r).sum() == 0.0) continue;  // no sequence reached this row
    total += avg(r, col);
    ++count;
  }
  return count ? total / count : 0.0;
}

template <class T>
MatrixD extract_wm_prime(const GptParams<T>& params, ExtractMode mode) {
  require_single_layer(params, "extract_wm_prime");
  const int M = params.config.vocab;
  const bool normalized = mode == ExtractMode::normalized;
  MatrixD out(M, M);
  for (int i = 0; i < M; ++i) {
    Row<T> x = params.tok_emb.row(i);
    Row<T> r;
    if (normalized)
      r = residual_readout<T>(params, x, true);
    else
      r = (ffn<T>(params.layers[0], x) + x) * params.w_out;
    out.row(i) = r.template cast<double>();
  }
  return out;
}

template <class T>
MatrixD extract_wv_prime(const GptParams<T>& params, ExtractMode mode) {
  require_single_layer(params, "extract_wv_prime");
  const int M = params.config.vocab;
  const bool normalized = mode == ExtractMode::normalized;
  MatrixD out(M, M);
  for (int i = 0; i < M; ++i) {
    Row<T> v = value_of<T>(params, params.tok_emb.row(i), normalized);
    Row<T> r;
    if (normalized)
      r = residual_readout<T>(params, v, true);
    else
      r = (v + ffn<T>(params.layers[0], v)) * params.w_out;
    out.row(i) = r.template cast<double>();
  }
  return out;
}

GptParams<double> embed_simplified(const SimplifiedParams& s, double c0, int max_len) {
  const int M = s.vocab();
  GptConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.d_model = 2 * M + 1;
  cfg.vocab = M;
  cfg.max_len = max_len > 0 ? max_len : 2 * M + 4;
  cfg.identity_norm = true;
  auto P = GptParams<double>::zeros(cfg);
  const int d = cfg.d_model, flag = d - 1;
  for (int k = 0; k < M; ++k) P.tok_emb(k, k) = 1.0;
  P.pos_emb(1, flag) = c0;
  auto& L = P.layers[0];
  L.wq[0] = MatrixD::Identity(d, d) * std::sqrt(static_cast<double>(d));
  L.wk[0].row(flag).setOnes();
  L.wv[0].block(0, M, M, M) = s.wv;
  // relu(x) - relu(-x) = x on the token block, then W^M
  for (int k = 0; k < M; ++k) {
    L.w1(k, k) = 1.0;
    L.w1(k, M + k) = -1.0;
  }
  L.w2.block(0, 0, M, M) = s.wm;
  L.w2.block(M, 0, M, M) = -s.wm;
  L.ln1_g.setOnes();
  L.ln2_g.setOnes();
  P.lnf_g.setOnes();
  P.w_out.block(0, 0, M, M) = MatrixD::Identity(M, M);
  P.w_out.block(M, 0, M, M) = MatrixD::Identity(M, M);
  return P;
}

double weight_gap(const MatrixD& w, const Graph& g) {
  if (w.rows() < g.n || w.cols() < g.n) throw std::invalid_argument("weight_gap: matrix smaller than the graph");
  double edge = 0, non = 0;
  std::size_t ne = 0, nn = 0;
  for (int i = 0; i < g.n; ++i)
    for (int j = i + 1; j < g.n; ++j) {
      if (g.has_edge(i, j)) {
        edge += w(i, j);
        ++ne;
      } else {
        non += w(i, j);
        ++nn;
      }
    }
  if (ne == 0 || nn == 0) throw std::invalid_argument("weight_gap: graph needs both edges and non-edges");
  return edge / static_cast<double>(ne) - non / static_cast<double>(nn);
}

ReachAverages reachability_weight_averages(const MatrixD& wv, const BoolMatrix& r_obs, const BoolMatrix& r_true) {
  const int n = r_true.size();
  if (r_obs.size() != n || wv.rows() < n || wv.cols() < n)
    throw std::invalid_argument("reachability_weight_averages: size mismatch");
  double sums[3] = {0, 0, 0};
  std::size_t counts[3] = {0, 0, 0};
  for (int t = 0; t < n; ++t)
    for (int k = 0; k <= t; ++k) {
      const int cat = r_obs(t, k) ? 0 : (r_true(t, k) ? 1 : 2);
      sums[cat] += wv(t, k);
      ++counts[cat];
    }
  auto mk = [&](int c) {
    CategoryMean m;
    m.count = counts[c];
    if (counts[c]) m.mean = sums[c] / static_cast<double>(counts[c]);
    return m;
  };
  return {mk(0), mk(1), mk(2)};
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks over ties
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        pos_rank_sum += rank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: needs both positive and negative examples");
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1) / 2.0) / (p * q);
}

double edge_auc(const MatrixD& w, const BoolMatrix& adj) {
  std::vector<double> s;
  std::vector<std::uint8_t> l;
  for (int i = 0; i < adj.size(); ++i)
    for (int k = 0; k < adj.size(); ++k) {
      if (i == k) continue;
      s.push_back(w(i, k));
      l.push_back(adj(i, k));
    }
  return roc_auc(s, l);
}

double lower_triangle_auc(const MatrixD& w, const BoolMatrix& labels) {
  std::vector<double> s;
  std::vector<std::uint8_t> l;
  for (int t = 0; t < labels.size(); ++t)
    for (int k = 0; k <= t; ++k) {
      s.push_back(w(t, k));
      l.push_back(labels(t, k));
    }
  return roc_auc(s, l);
}

Interval wilson_interval(std::size_t successes, std::size_t trials, double z) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials), p = static_cast<double>(successes) / n, z2 = z * z;
  const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

int thread_count() {
  if (const char* env = std::getenv("PATHLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <class T>
AccuracyReport evaluate_accuracy(const GptParams<T>& params, const Graph& g, const std::vector<LabeledPair>& pairs,
                                 int trials, double temperature, std::uint64_t seed, int threads) {
  if (trials < 1) throw std::invalid_argument("evaluate_accuracy: trials must be at least 1");
  if (pairs.empty()) throw std::invalid_argument("evaluate_accuracy: no test pairs");
  const auto opts = decode_options_for(params.config, temperature);
  struct Outcome {
    std::size_t pair;
    PathVerdict verdict;
  };
  std::vector<Outcome> outcomes(static_cast<std::size_t>(trials));
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::mt19937_64 pick_rng(derive_seed(seed, i, 0));
      std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
      const std::size_t p = pick(pick_rng);
      std::mt19937_64 rng(derive_seed(seed, i, 1));
      const auto [s, t] = pairs[p].pair;
      auto res = decode(params, s, t, opts, rng);
      outcomes[i] = {p, validate_path(g, res.tokens, s, t)};
    }
  };
  const int nt = std::max(1, std::min(threads > 0 ? threads : thread_count(), trials));
  if (nt == 1) {
    work(0, outcomes.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (outcomes.size() + static_cast<std::size_t>(nt) - 1) / static_cast<std::size_t>(nt);
    for (int w = 0; w < nt; ++w) {
      const std::size_t b = static_cast<std::size_t>(w) * chunk, e = std::min(outcomes.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  AccuracyReport rep;
  for (auto& o : outcomes) {
    const bool ok = o.verdict == PathVerdict::valid;
    auto& cls = rep.by_degree[static_cast<std::size_t>(pairs[o.pair].degree)];
    ++cls.trials;
    cls.correct += ok;
    ++rep.overall.trials;
    rep.overall.correct += ok;
    ++rep.verdicts[static_cast<std::size_t>(o.verdict)];
  }
  return rep;
}

template <class T>
CosineReport cosine_similarity_check(const GptParams<T>& params, const std::vector<NodePair>& target_current,
                                     ExtractMode mode) {
  require_single_layer(params, "cosine_similarity_check");
  const auto& L = params.layers[0];
  const bool idn = params.config.identity_norm || mode == ExtractMode::raw;
  auto f = [&](const Row<T>& x) -> Row<T> { return ffn<T>(L, layer_norm<T>(x, L.ln2_g, L.ln2_b, idn)); };
  CosineReport rep;
  double total = 0.0;
  for (auto [t, i] : target_current) {
    Row<T> v = value_of<T>(params, params.tok_emb.row(t), mode == ExtractMode::normalized);
    Row<T> x = params.tok_emb.row(i);
    Eigen::RowVectorXd a = (f(v + x) * params.w_out).template cast<double>();
    Eigen::RowVectorXd b = ((f(v) + f(x)) * params.w_out).template cast<double>();
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
      ++rep.skipped;
      continue;
    }
    total += a.dot(b) / (na * nb);
    ++rep.used;
  }
  rep.average = rep.used ? total / static_cast<double>(rep.used) : 0.0;
  return rep;
}

std::vector<NodePair> all_target_current_pairs(int n) {
  std::vector<NodePair> out;
  for (int t = 0; t < n; ++t)
    for (int i = 0; i < n; ++i)
      if (t != i) out.emplace_back(t, i);
  return out;
}

void write_matrix_csv(std::ostream& out, const MatrixD& m) {
  out << "row";
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << c + 1;
  out << '\n';
  char buf[64];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << r + 1;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      std::snprintf(buf, sizeof buf, "%.9g", v);
      if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

MatrixD read_matrix_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("row", 0) != 0) throw std::runtime_error("matrix csv: missing header");
  const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ','));
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    if (std::stol(cell) != static_cast<long>(rows.size()) + 1) throw std::runtime_error("matrix csv: row ids out of order");
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) {
      char* end = nullptr;
      vals.push_back(std::strtod(cell.c_str(), &end));
      if (cell.empty() || *end != '\0') throw std::runtime_error("matrix csv: bad value '" + cell + "'");
    }
    if (static_cast<Eigen::Index>(vals.size()) != cols)
      throw std::runtime_error("matrix csv: row " + std::to_string(rows.size() + 1) + " has the wrong width");
    rows.push_back(std::move(vals));
  }
  MatrixD m(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  return m;
}

void save_matrix_csv(const std::string& path, const MatrixD& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_matrix_csv(out, m);
}

MatrixD load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_matrix_csv(in);
}

#define PATHLAB_ANALYSIS_INSTANTIATE(T)                                                                         \
  template MatrixD average_attention<T>(const GptParams<T>&, const std::vector<PathSequence>&, int, int);       \
  template MatrixD extract_wm_prime<T>(const GptParams<T>&, ExtractMode);                                       \
  template MatrixD extract_wv_prime<T>(const GptParams<T>&, ExtractMode);                                       \
  template AccuracyReport evaluate_accuracy<T>(const GptParams<T>&, const Graph&, const std::vector<LabeledPair>&, \
                                               int, double, std::uint64_t, int);                                \
  template CosineReport cosine_similarity_check<T>(const GptParams<T>&, const std::vector<NodePair>&, ExtractMode);

PATHLAB_ANALYSIS_INSTANTIATE(float)
PATHLAB_ANALYSIS_INSTANTIATE(double)

}  // namespace pathlab
