#include "pathlab/simplified.hpp"

#include <cmath>
#include <sstream>

namespace pathlab {

namespace {

void check_vocab(const CountsTensor& counts, const SimplifiedParams& params) {
  if (params.wm.rows() != counts.vocab() || params.wm.cols() != counts.vocab() ||
      params.wv.rows() != counts.vocab() || params.wv.cols() != counts.vocab())
    throw std::invalid_argument("simplified model: parameter shape does not match counts vocabulary");
}

// log sum_l exp(row_l), max-shifted
double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double mx = row.maxCoeff();
  return mx + std::log((row.array() - mx).exp().sum());
}

}  // namespace

double simplified_loss(const CountsTensor& counts, const SimplifiedParams& params) {
  check_vocab(counts, params);
  double loss = 0.0;
  for (auto& g : counts.groups()) {
    Eigen::RowVectorXd logits = params.wm.row(g.current) + params.wv.row(g.target);
    loss += g.total * log_sum_exp(logits);
    for (auto [k, c] : g.next) loss -= c * logits(k);
  }
  return loss;
}

SimplifiedGrad simplified_grad(const CountsTensor& counts, const SimplifiedParams& params) {
  check_vocab(counts, params);
  const int M = counts.vocab();
  SimplifiedGrad g{MatrixD::Zero(M, M), MatrixD::Zero(M, M)};
  for (auto& grp : counts.groups()) {
    Eigen::RowVectorXd logits = params.wm.row(grp.current) + params.wv.row(grp.target);
    const double mx = logits.maxCoeff();
    Eigen::RowVectorXd p = (logits.array() - mx).exp();
    p /= p.sum();
    Eigen::RowVectorXd d = grp.total * p;
    for (auto [k, c] : grp.next) d(k) -= c;
    g.gm.row(grp.current) += d;
    g.gv.row(grp.target) += d;
  }
  return g;
}

SimplifiedTrainResult train_simplified(const CountsTensor& counts, int steps, double lr,
                                       const SimplifiedParams& init, int window) {
  if (!(lr > 0.0)) throw std::invalid_argument("train_simplified: lr must be positive");
  if (steps < 0) throw std::invalid_argument("train_simplified: steps must be non-negative");
  SimplifiedTrainResult out{init, {}};
  // steps follow the count-normalized loss so one lr works at any corpus size
  const double total = counts.total();
  const double scale = total > 0.0 ? 1.0 / total : 0.0;
  out.loss_trace.reserve(static_cast<std::size_t>(steps) + 1);
  out.loss_trace.push_back(simplified_loss(counts, out.params));
  for (int step = 0; step < steps; ++step) {
    SimplifiedGrad g = simplified_grad(counts, out.params);
    out.params.wm -= (lr * scale) * g.gm;
    out.params.wv -= (lr * scale) * g.gv;
    const double loss = simplified_loss(counts, out.params);
    out.loss_trace.push_back(loss);
    const std::size_t now = out.loss_trace.size() - 1;
    const std::size_t then = now >= static_cast<std::size_t>(window) ? now - static_cast<std::size_t>(window) : 0;
    const double ref = out.loss_trace[then];
    if (!std::isfinite(loss) || loss > ref + 0.1 * std::abs(ref)) {
      std::ostringstream os;
      os << "train_simplified diverged at step " << step + 1 << ": loss " << loss << " vs " << ref
         << " at step " << then << " (lr " << lr << ")";
      throw DivergenceError(os.str());
    }
  }
  return out;
}

const char* to_string(GradientCase c) {
  switch (c) {
    case GradientCase::always_zero: return "always-zero";
    case GradientCase::always_positive: return "always-positive";
    case GradientCase::negative_at_minus_infinity: return "negative-at-minus-infinity";
  }
  return "unknown";
}

std::size_t GradientSignReport::count(GradientCase c) const {
  std::size_t n = 0;
  for (auto& e : entries) n += e.expected == c;
  return n;
}

double gradient_entry(const CountsTensor& counts, const SimplifiedParams& params, bool value_matrix,
                      int row, int col) {
  check_vocab(counts, params);
  double grad = 0.0;
  for (auto& grp : counts.groups()) {
    if ((value_matrix ? grp.target : grp.current) != row) continue;
    Eigen::RowVectorXd logits = params.wm.row(grp.current) + params.wv.row(grp.target);
    const double mx = logits.maxCoeff();
    const double denom = (logits.array() - mx).exp().sum();
    grad += grp.total * std::exp(logits(col) - mx) / denom;
    for (auto [k, c] : grp.next)
      if (k == col) grad -= c;
  }
  return grad;
}

GradientSignReport gradient_sign_report(const CountsTensor& counts, const SimplifiedParams& params) {
  check_vocab(counts, params);
  const int M = counts.vocab();
  // row totals and row/col counts for both matrices
  MatrixD next_m = MatrixD::Zero(M, M), next_v = MatrixD::Zero(M, M);
  Eigen::VectorXd total_m = Eigen::VectorXd::Zero(M), total_v = Eigen::VectorXd::Zero(M);
  for (auto& [key, c] : counts.entries()) {
    next_m(key[0], key[2]) += c;
    next_v(key[1], key[2]) += c;
    total_m(key[0]) += c;
    total_v(key[1]) += c;
  }
  GradientSignReport rep;
  for (int which = 0; which < 2; ++which) {
    const bool value_matrix = which == 1;
    const MatrixD& nk = value_matrix ? next_v : next_m;
    const Eigen::VectorXd& tot = value_matrix ? total_v : total_m;
    for (int r = 0; r < M; ++r)
      for (int k = 0; k < M; ++k) {
        SignCheckEntry e{value_matrix, r, k, GradientCase::always_zero, 0.0, 0.0, true};
        if (tot(r) == 0.0)
          e.expected = GradientCase::always_zero;
        else if (nk(r, k) == 0.0)
          e.expected = GradientCase::always_positive;
        else
          e.expected = GradientCase::negative_at_minus_infinity;
        e.grad_at_params = gradient_entry(counts, params, value_matrix, r, k);
        SimplifiedParams probe = params;
        (value_matrix ? probe.wv : probe.wm)(r, k) = kMinusInfinityProbe;
        e.grad_at_probe = gradient_entry(counts, probe, value_matrix, r, k);
        switch (e.expected) {
          case GradientCase::always_zero:
            e.ok = e.grad_at_params == 0.0 && e.grad_at_probe == 0.0;
            break;
          case GradientCase::always_positive:
            e.ok = e.grad_at_params > 0.0 && e.grad_at_probe > 0.0;
            break;
          case GradientCase::negative_at_minus_infinity:
            e.ok = e.grad_at_probe < 0.0;
            break;
        }
        rep.violations += !e.ok;
        rep.entries.push_back(e);
      }
  }
  return rep;
}

}  // namespace pathlab
