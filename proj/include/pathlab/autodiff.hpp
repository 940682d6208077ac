#pragma once

// Tape-based reverse-mode differentiation over dense [batch, rows, cols] tensors.
// Only the primitives the GPT forward pass needs are provided. Shapes never
// broadcast implicitly: every op checks its operands and throws ShapeError.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathlab/common.hpp"

namespace pathlab::ad {

struct ShapeError : std::logic_error {
  using std::logic_error::logic_error;
};

struct Shape {
  int batch = 1;
  int rows = 1;
  int cols = 1;

  int flat_rows() const { return batch * rows; }
  std::size_t numel() const { return static_cast<std::size_t>(batch) * rows * cols; }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[' << s.batch << ',' << s.rows << ',' << s.cols << ']';
  return os.str();
}

struct Var {
  int id = -1;
};

template <class T>
class Tape {
 public:
  using Mat = Matrix<T>;

  // A tape that does not record skips closures and gradient storage.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  const Shape& shape(Var v) const { return node(v).shape; }

  // Values are stored as (batch * rows) x cols.
  const Mat& value(Var v) const {
    const Node& n = node(v);
    return n.external ? *n.external : n.value;
  }

  const Mat& grad(Var v) const { return node(v).grad; }

  Var constant(Mat value, Shape shape) {
    check_storage("constant", value, shape);
    return push(shape, std::move(value), false);
  }

  // A 2-D parameter; its gradient is added into *sink by backward(). The value is
  // referenced, not copied, and must outlive the tape.
  Var parameter(const Mat& value, Mat* sink) {
    Node n;
    n.shape = Shape{1, static_cast<int>(value.rows()), static_cast<int>(value.cols())};
    n.external = &value;
    n.needs_grad = record_ && sink != nullptr;
    n.sink = sink;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // [B,N,K] x [1,K,M] -> [B,N,M]
  Var matmul(Var a, Var w) {
    const Shape sa = shape(a), sw = shape(w);
    if (sw.batch != 1 || sa.cols != sw.rows) shape_error("matmul", sa, sw);
    Mat out;
    out.noalias() = value(a) * value(w);
    Var y = push(Shape{sa.batch, sa.rows, sw.cols}, std::move(out), wants(a, w));
    if (recording_op(y))
      node(y).backward = [a, w](Tape& tp, int self) {
        const Mat& dy = tp.nodes_[self].grad;
        if (tp.needs(a)) tp.grad_ref(a).noalias() += dy * tp.value(w).transpose();
        if (tp.needs(w)) tp.grad_ref(w).noalias() += tp.value(a).transpose() * dy;
      };
    return y;
  }

  // Per-slice product: [B,N,K] x [B,K,M], or [B,N,K] x [B,M,K]^T when transpose_b.
  Var batched_matmul(Var a, Var b, bool transpose_b) {
    const Shape sa = shape(a), sb = shape(b);
    const int inner = transpose_b ? sb.cols : sb.rows;
    const int out_cols = transpose_b ? sb.rows : sb.cols;
    if (sa.batch != sb.batch || sa.cols != inner) shape_error("batched_matmul", sa, sb);
    Mat out(sa.flat_rows(), out_cols);
    const Mat& va = value(a);
    const Mat& vb = value(b);
    for (int s = 0; s < sa.batch; ++s) {
      auto as = va.middleRows(s * sa.rows, sa.rows);
      auto bs = vb.middleRows(s * sb.rows, sb.rows);
      if (transpose_b)
        out.middleRows(s * sa.rows, sa.rows).noalias() = as * bs.transpose();
      else
        out.middleRows(s * sa.rows, sa.rows).noalias() = as * bs;
    }
    Var y = push(Shape{sa.batch, sa.rows, out_cols}, std::move(out), wants(a, b));
    if (recording_op(y))
      node(y).backward = [a, b, transpose_b, sa, sb](Tape& tp, int self) {
        const Mat& dy = tp.nodes_[self].grad;
        const Mat& va = tp.value(a);
        const Mat& vb = tp.value(b);
        const bool ga = tp.needs(a), gb = tp.needs(b);
        for (int s = 0; s < sa.batch; ++s) {
          auto dys = dy.middleRows(s * sa.rows, sa.rows);
          auto as = va.middleRows(s * sa.rows, sa.rows);
          auto bs = vb.middleRows(s * sb.rows, sb.rows);
          if (transpose_b) {
            if (ga) tp.grad_ref(a).middleRows(s * sa.rows, sa.rows).noalias() += dys * bs;
            if (gb) tp.grad_ref(b).middleRows(s * sb.rows, sb.rows).noalias() += dys.transpose() * as;
          } else {
            if (ga) tp.grad_ref(a).middleRows(s * sa.rows, sa.rows).noalias() += dys * bs.transpose();
            if (gb) tp.grad_ref(b).middleRows(s * sb.rows, sb.rows).noalias() += as.transpose() * dys;
          }
        }
      };
    return y;
  }

  Var add(Var a, Var b) {
    if (!(shape(a) == shape(b))) shape_error("add", shape(a), shape(b));
    Mat out = value(a) + value(b);
    Var y = push(shape(a), std::move(out), wants(a, b));
    if (recording_op(y))
      node(y).backward = [a, b](Tape& tp, int self) {
        const Mat& dy = tp.nodes_[self].grad;
        if (tp.needs(a)) tp.grad_ref(a) += dy;
        if (tp.needs(b)) tp.grad_ref(b) += dy;
      };
    return y;
  }

  // Adds a [1,1,C] row to every row of a.
  Var add_bias(Var a, Var bias) {
    const Shape sa = shape(a), sb = shape(bias);
    if (sb.batch != 1 || sb.rows != 1 || sb.cols != sa.cols) shape_error("add_bias", sa, sb);
    Mat out = value(a);
    out.rowwise() += value(bias).row(0);
    Var y = push(sa, std::move(out), wants(a, bias));
    if (recording_op(y))
      node(y).backward = [a, bias](Tape& tp, int self) {
        const Mat& dy = tp.nodes_[self].grad;
        if (tp.needs(a)) tp.grad_ref(a) += dy;
        if (tp.needs(bias)) tp.grad_ref(bias) += dy.colwise().sum();
      };
    return y;
  }

  Var scale(Var a, T factor) {
    Mat out = value(a) * factor;
    Var y = push(shape(a), std::move(out), wants(a));
    if (recording_op(y))
      node(y).backward = [a, factor](Tape& tp, int self) {
        tp.grad_ref(a) += tp.nodes_[self].grad * factor;
      };
    return y;
  }

  Var relu(Var a) {
    Mat out = value(a).cwiseMax(T(0));
    Var y = push(shape(a), std::move(out), wants(a));
    if (recording_op(y))
      node(y).backward = [a](Tape& tp, int self) {
        const Mat& dy = tp.nodes_[self].grad;
        tp.grad_ref(a) += (tp.value(a).array() > T(0)).select(dy, T(0)).matrix();
      };
    return y;
  }

  // Row-wise softmax over the last dimension; -inf entries get probability 0.
  Var softmax(Var a) {
    const Mat& x = value(a);
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T mx = x.row(r).maxCoeff();
      out.row(r) = (x.row(r).array() - mx).exp();
      out.row(r) /= out.row(r).sum();
    }
    Var y = push(shape(a), std::move(out), wants(a));
    if (recording_op(y))
      node(y).backward = [a](Tape& tp, int self) {
        const Mat& p = tp.nodes_[self].value;
        const Mat& dy = tp.nodes_[self].grad;
        Mat& dx = tp.grad_ref(a);
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          const T dot = p.row(r).dot(dy.row(r));
          dx.row(r).array() += p.row(r).array() * (dy.row(r).array() - dot);
        }
      };
    return y;
  }

  // Normalizes every row over the last dimension, then applies [1,1,C] gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5)) {
    const Shape sx = shape(x);
    for (Var p : {gain, bias}) {
      const Shape sp = shape(p);
      if (sp.batch != 1 || sp.rows != 1 || sp.cols != sx.cols) shape_error("layer_norm", sx, sp);
    }
    const Mat& v = value(x);
    const Eigen::Index R = v.rows(), C = v.cols();
    Mat xhat(R, C);
    std::vector<T> inv_std(static_cast<std::size_t>(R));
    for (Eigen::Index r = 0; r < R; ++r) {
      const T mean = v.row(r).mean();
      const T var = (v.row(r).array() - mean).square().mean();
      const T inv = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(r)] = inv;
      xhat.row(r) = (v.row(r).array() - mean) * inv;
    }
    Mat out = xhat;
    out.array().rowwise() *= value(gain).row(0).array();
    out.rowwise() += value(bias).row(0);
    Var y = push(sx, std::move(out), wants(x, gain, bias));
    if (recording_op(y))
      node(y).backward = [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                             Tape& tp, int self) {
        const Mat& dy = tp.nodes_[self].grad;
        if (tp.needs(gain)) tp.grad_ref(gain) += (dy.array() * xhat.array()).colwise().sum().matrix();
        if (tp.needs(bias)) tp.grad_ref(bias) += dy.colwise().sum();
        if (!tp.needs(x)) return;
        Mat& dx = tp.grad_ref(x);
        const auto g = tp.value(gain).row(0).array();
        const T C = static_cast<T>(dy.cols());
        for (Eigen::Index r = 0; r < dy.rows(); ++r) {
          auto dxhat = (dy.row(r).array() * g).eval();
          const T m1 = dxhat.sum() / C;
          const T m2 = (dxhat * xhat.row(r).array()).sum() / C;
          dx.row(r).array() +=
              inv_std[static_cast<std::size_t>(r)] * (dxhat - m1 - xhat.row(r).array() * m2);
        }
      };
    return y;
  }

  // Gathers rows of a [1,V,C] table: ids has batch * rows entries.
  Var embedding(Var table, std::span<const int> ids, int batch, int rows) {
    const Shape st = shape(table);
    if (st.batch != 1 || static_cast<std::size_t>(batch) * rows != ids.size())
      shape_error("embedding", st, Shape{batch, rows, 1});
    const Mat& tv = value(table);
    Mat out(batch * rows, st.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= st.rows)
        throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                         std::to_string(st.rows) + " rows");
      out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
    }
    Var y = push(Shape{batch, rows, st.cols}, std::move(out), wants(table));
    if (recording_op(y))
      node(y).backward = [table, ids = std::vector<int>(ids.begin(), ids.end())](Tape& tp, int self) {
        const Mat& dy = tp.nodes_[self].grad;
        Mat& dt = tp.grad_ref(table);
        for (std::size_t i = 0; i < ids.size(); ++i) dt.row(ids[i]) += dy.row(static_cast<Eigen::Index>(i));
      };
    return y;
  }

  Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    const Shape s0 = shape(parts[0]);
    int cols = 0;
    bool grad = false;
    for (Var p : parts) {
      const Shape sp = shape(p);
      if (sp.batch != s0.batch || sp.rows != s0.rows) shape_error("concat_cols", s0, sp);
      cols += sp.cols;
      grad = grad || needs(p);
    }
    Mat out(s0.flat_rows(), cols);
    int offset = 0;
    for (Var p : parts) {
      out.middleCols(offset, shape(p).cols) = value(p);
      offset += shape(p).cols;
    }
    Var y = push(Shape{s0.batch, s0.rows, cols}, std::move(out), record_ && grad);
    if (recording_op(y))
      node(y).backward = [parts = std::vector<Var>(parts.begin(), parts.end())](Tape& tp, int self) {
        const Mat& dy = tp.nodes_[self].grad;
        int off = 0;
        for (Var p : parts) {
          const int c = tp.shape(p).cols;
          if (tp.needs(p)) tp.grad_ref(p) += dy.middleCols(off, c);
          off += c;
        }
      };
    return y;
  }

  // mask is rows x cols (row-major, nonzero = fill) and applies to every batch slice.
  Var masked_fill(Var a, std::span<const std::uint8_t> mask, T fill) {
    const Shape sa = shape(a);
    if (mask.size() != static_cast<std::size_t>(sa.rows) * sa.cols)
      shape_error("masked_fill", sa, Shape{1, sa.rows, sa.cols});
    Mat out = value(a);
    for (int s = 0; s < sa.batch; ++s)
      for (int r = 0; r < sa.rows; ++r)
        for (int c = 0; c < sa.cols; ++c)
          if (mask[static_cast<std::size_t>(r) * sa.cols + c]) out(s * sa.rows + r, c) = fill;
    Var y = push(sa, std::move(out), wants(a));
    if (recording_op(y))
      node(y).backward = [a, sa, mask = std::vector<std::uint8_t>(mask.begin(), mask.end())](Tape& tp,
                                                                                         int self) {
        const Mat& dy = tp.nodes_[self].grad;
        Mat& dx = tp.grad_ref(a);
        for (int s = 0; s < sa.batch; ++s)
          for (int r = 0; r < sa.rows; ++r)
            for (int c = 0; c < sa.cols; ++c)
              if (!mask[static_cast<std::size_t>(r) * sa.cols + c]) dx(s * sa.rows + r, c) += dy(s * sa.rows + r, c);
      };
    return y;
  }

  // Sum over rows of -log softmax(logits)[target]; rows with target < 0 are ignored.
  Var cross_entropy(Var logits, std::span<const int> targets) {
    const Shape sl = shape(logits);
    if (targets.size() != static_cast<std::size_t>(sl.flat_rows()))
      shape_error("cross_entropy", sl, Shape{1, static_cast<int>(targets.size()), 1});
    const Mat& z = value(logits);
    Mat probs = Mat::Zero(z.rows(), z.cols());
    T total = 0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const int y = targets[static_cast<std::size_t>(r)];
      if (y < 0) continue;
      if (y >= z.cols()) throw ShapeError("cross_entropy: target outside vocabulary");
      const T mx = z.row(r).maxCoeff();
      probs.row(r) = (z.row(r).array() - mx).exp();
      const T sum = probs.row(r).sum();
      probs.row(r) /= sum;
      total += (std::log(sum) + mx) - z(r, y);
    }
    Mat out(1, 1);
    out(0, 0) = total;
    Var y = push(Shape{1, 1, 1}, std::move(out), wants(logits));
    if (recording_op(y))
      node(y).backward = [logits, probs = std::move(probs),
                          targets = std::vector<int>(targets.begin(), targets.end())](Tape& tp, int self) {
        const T g = tp.nodes_[self].grad(0, 0);
        Mat& dz = tp.grad_ref(logits);
        for (std::size_t r = 0; r < targets.size(); ++r) {
          if (targets[r] < 0) continue;
          const auto row = static_cast<Eigen::Index>(r);
          dz.row(row) += g * probs.row(row);
          dz(row, targets[r]) -= g;
        }
      };
    return y;
  }

  // Reverse sweep from a scalar; parameter gradients are added into their sinks.
  void backward(Var loss) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    if (shape(loss).numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + to_string(shape(loss)));
    grad_ref(loss).setConstant(T(1));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, id);
    }
    for (auto& n : nodes_)
      if (n.sink && n.grad.size() != 0) *n.sink += n.grad;
  }

 private:
  struct Node {
    Shape shape;
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    bool needs_grad = false;
    Mat* sink = nullptr;
    std::function<void(Tape&, int)> backward;
  };

  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

  bool needs(Var v) const { return node(v).needs_grad; }

  template <class... V>
  bool wants(V... vs) const {
    return record_ && (needs(vs) || ...);
  }

  bool recording_op(Var y) const { return record_ && node(y).needs_grad; }

  Mat& grad_ref(Var v) {
    Node& n = node(v);
    if (n.grad.size() == 0) {
      const Mat& val = n.external ? *n.external : n.value;
      n.grad = Mat::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  Var push(Shape shape, Mat value, bool needs_grad) {
    Node n;
    n.shape = shape;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  static void check_storage(const char* op, const Mat& value, const Shape& shape) {
    if (value.rows() != shape.flat_rows() || value.cols() != shape.cols)
      throw ShapeError(std::string(op) + ": storage does not match shape " + to_string(shape));
  }

  [[noreturn]] static void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
  }

  bool record_;
  std::vector<Node> nodes_;
};

// Upper-triangular (future) positions of an n x n attention score matrix.
inline std::vector<std::uint8_t> causal_mask(int n) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n) * n, 0);
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c) mask[static_cast<std::size_t>(r) * n + c] = 1;
  return mask;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Compares `analytic` against central differences (f(x+h) - f(x-h)) / 2h of `loss` on
// `samples` randomly chosen coordinates (all coordinates when samples >= size). With
// five_point the fourth-order stencil (f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h is used.
// Relative error per coordinate: |a - n| / max(|a|, |n|, floor).
inline GradCheckReport gradient_check(const std::function<double(std::span<const double>)>& loss,
                                      std::span<const double> analytic, std::vector<double> params,
                                      double h, std::size_t samples, std::uint64_t seed,
                                      double floor = 1e-8, bool five_point = false) {
  if (analytic.size() != params.size()) throw std::invalid_argument("gradient_check: size mismatch");
  std::vector<std::size_t> coords;
  if (samples >= params.size()) {
    for (std::size_t i = 0; i < params.size(); ++i) coords.push_back(i);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
    for (std::size_t i = 0; i < samples; ++i) coords.push_back(pick(rng));
  }
  GradCheckReport rep;
  for (std::size_t c : coords) {
    const double saved = params[c];
    params[c] = saved + h;
    const double up = loss(params);
    params[c] = saved - h;
    const double down = loss(params);
    params[c] = saved;
    double numeric = (up - down) / (2.0 * h);
    if (five_point) {
      params[c] = saved + 2.0 * h;
      const double up2 = loss(params);
      params[c] = saved - 2.0 * h;
      const double down2 = loss(params);
      params[c] = saved;
      numeric = (down2 - 8.0 * down + 8.0 * up - up2) / (12.0 * h);
    }
    const double a = analytic[c];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    // a NaN anywhere sticks as the worst coordinate
    const bool worse = rep.checked == 0 || std::isnan(rel) ||
                       (!std::isnan(rep.max_rel_error) && rel > rep.max_rel_error);
    if (worse) {
      rep.max_rel_error = rel;
      rep.worst_index = c;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
    ++rep.checked;
  }
  return rep;
}

}  // namespace pathlab::ad
