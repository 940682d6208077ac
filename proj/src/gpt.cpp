#include "pathlab/gpt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pathlab/autodiff.hpp"

namespace pathlab {

void GptConfig::validate() const {
  if (layers < 1 || heads < 1 || d_model < 1) throw std::invalid_argument("GptConfig: sizes must be positive");
  if (d_model % heads != 0) throw std::invalid_argument("GptConfig: d_model must be divisible by heads");
  if (vocab < 2) throw std::invalid_argument("GptConfig: vocabulary must hold at least one node and the end token");
  if (max_len < 1) throw std::invalid_argument("GptConfig: max_len must be positive");
}

template <class T>
GptParams<T> GptParams<T>::zeros(const GptConfig& c) {
  c.validate();
  using M = Matrix<T>;
  GptParams<T> p;
  p.config = c;
  const int d = c.d_model, dk = c.d_head();
  p.tok_emb = M::Zero(c.embedding_rows(), d);
  p.pos_emb = M::Zero(c.max_len, d);
  p.layers.resize(static_cast<std::size_t>(c.layers));
  for (auto& L : p.layers) {
    L.wq.assign(static_cast<std::size_t>(c.heads), M::Zero(d, dk));
    L.wk.assign(static_cast<std::size_t>(c.heads), M::Zero(d, dk));
    L.wv.assign(static_cast<std::size_t>(c.heads), M::Zero(d, dk));
    L.ln1_g = M::Zero(1, d);
    L.ln1_b = M::Zero(1, d);
    L.ln2_g = M::Zero(1, d);
    L.ln2_b = M::Zero(1, d);
    L.w1 = M::Zero(d, c.d_ff());
    L.b1 = M::Zero(1, c.d_ff());
    L.w2 = M::Zero(c.d_ff(), d);
    L.b2 = M::Zero(1, d);
  }
  p.lnf_g = M::Zero(1, d);
  p.lnf_b = M::Zero(1, d);
  p.w_out = M::Zero(d, c.vocab);
  return p;
}

template <class T>
std::size_t GptParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <class T>
std::vector<T> GptParams<T>::flatten() const {
  std::vector<T> out;
  out.reserve(parameter_count());
  for_each([&](const std::string&, const Matrix<T>& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
  return out;
}

template <class T>
void GptParams<T>::assign_flat(std::span<const T> values) {
  if (values.size() != parameter_count()) throw std::invalid_argument("assign_flat: size mismatch");
  std::size_t off = 0;
  for_each([&](const std::string&, Matrix<T>& m) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), m.size(), m.data());
    off += static_cast<std::size_t>(m.size());
  });
}

template <class T>
void GptParams<T>::set_zero() {
  for_each([](const std::string&, Matrix<T>& m) { m.setZero(); });
}

namespace {

bool is_gain(const std::string& name) { return name.ends_with("_g"); }
bool is_bias(const std::string& name) {
  return name.ends_with("_b") || name.ends_with("b1") || name.ends_with("b2");
}

}  // namespace

template <class T>
GptParams<T> init_params(const GptConfig& config, std::uint64_t seed) {
  GptParams<T> p = GptParams<T>::zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  p.for_each([&](const std::string& name, Matrix<T>& m) {
    if (is_gain(name)) {
      m.setOnes();
    } else if (is_bias(name)) {
      m.setZero();
    } else {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng));
    }
  });
  return p;
}

namespace {

template <class T>
struct ForwardGraph {
  ad::Var logits;
  std::vector<ad::Var> attention;  // layer * heads + head
  std::vector<ad::Var> ffn_pre;    // relu inputs, one per layer
};

template <class T>
ad::Var param(ad::Tape<T>& tape, const Matrix<T>& value, Matrix<T>* grad) {
  return tape.parameter(value, grad);
}

// ids holds batch * len input tokens.
template <class T>
ForwardGraph<T> build_forward(ad::Tape<T>& tape, const GptParams<T>& P, GptParams<T>* G,
                              std::span<const int> ids, int batch, int len) {
  const GptConfig& c = P.config;
  if (len < 1 || len > c.max_len)
    throw std::invalid_argument("forward: sequence length " + std::to_string(len) + " outside [1, " +
                                std::to_string(c.max_len) + "]");
  for (int id : ids)
    if (id < 0 || id >= c.embedding_rows())
      throw std::invalid_argument("forward: token id " + std::to_string(id) + " outside vocabulary");

  auto grad_of = [&](auto member) -> Matrix<T>* { return G ? &((*G).*member) : nullptr; };

  std::vector<int> positions(ids.size());
  for (int b = 0; b < batch; ++b)
    for (int n = 0; n < len; ++n) positions[static_cast<std::size_t>(b * len + n)] = n;

  ad::Var tok = param(tape, P.tok_emb, grad_of(&GptParams<T>::tok_emb));
  ad::Var pos = param(tape, P.pos_emb, grad_of(&GptParams<T>::pos_emb));
  ad::Var x = tape.add(tape.embedding(tok, ids, batch, len), tape.embedding(pos, positions, batch, len));

  const auto mask = ad::causal_mask(len);
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(c.d_head()));
  ForwardGraph<T> fg;

  for (std::size_t l = 0; l < P.layers.size(); ++l) {
    const auto& L = P.layers[l];
    LayerParams<T>* LG = G ? &G->layers[l] : nullptr;
    auto lp = [&](const Matrix<T>& v, Matrix<T> LayerParams<T>::*member) {
      return param(tape, v, LG ? &(LG->*member) : nullptr);
    };
    auto norm = [&](ad::Var in, Matrix<T> LayerParams<T>::*g, Matrix<T> LayerParams<T>::*b) {
      if (c.identity_norm) return in;
      return tape.layer_norm(in, lp(L.*g, g), lp(L.*b, b));
    };

    ad::Var a = norm(x, &LayerParams<T>::ln1_g, &LayerParams<T>::ln1_b);
    std::vector<ad::Var> heads;
    for (std::size_t h = 0; h < L.wq.size(); ++h) {
      ad::Var wq = param(tape, L.wq[h], LG ? &LG->wq[h] : nullptr);
      ad::Var wk = param(tape, L.wk[h], LG ? &LG->wk[h] : nullptr);
      ad::Var wv = param(tape, L.wv[h], LG ? &LG->wv[h] : nullptr);
      ad::Var q = tape.matmul(a, wq);
      ad::Var k = tape.matmul(a, wk);
      ad::Var v = tape.matmul(a, wv);
      ad::Var scores = tape.scale(tape.batched_matmul(q, k, true), inv_sqrt_dk);
      scores = tape.masked_fill(scores, mask, -std::numeric_limits<T>::infinity());
      ad::Var probs = tape.softmax(scores);
      fg.attention.push_back(probs);
      heads.push_back(tape.batched_matmul(probs, v, false));
    }
    ad::Var mha = heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
    ad::Var h = tape.add(mha, x);
    ad::Var f = norm(h, &LayerParams<T>::ln2_g, &LayerParams<T>::ln2_b);
    f = tape.add_bias(tape.matmul(f, lp(L.w1, &LayerParams<T>::w1)), lp(L.b1, &LayerParams<T>::b1));
    fg.ffn_pre.push_back(f);
    f = tape.relu(f);
    f = tape.add_bias(tape.matmul(f, lp(L.w2, &LayerParams<T>::w2)), lp(L.b2, &LayerParams<T>::b2));
    x = tape.add(f, h);
  }

  if (!c.identity_norm)
    x = tape.layer_norm(x, param(tape, P.lnf_g, grad_of(&GptParams<T>::lnf_g)),
                        param(tape, P.lnf_b, grad_of(&GptParams<T>::lnf_b)));
  fg.logits = tape.matmul(x, param(tape, P.w_out, grad_of(&GptParams<T>::w_out)));
  return fg;
}

}  // namespace

template <class T>
Matrix<T> forward_logits(const GptParams<T>& params, std::span<const int> tokens) {
  ad::Tape<T> tape(false);
  auto fg = build_forward<T>(tape, params, nullptr, tokens, 1, static_cast<int>(tokens.size()));
  return tape.value(fg.logits);
}

template <class T>
T sequence_loss(const GptParams<T>& params, std::span<const int> tokens) {
  if (tokens.size() < 2) return T(0);
  const int len = static_cast<int>(tokens.size()) - 1;
  ad::Tape<T> tape(false);
  auto fg = build_forward<T>(tape, params, nullptr, tokens.first(static_cast<std::size_t>(len)), 1, len);
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  return tape.value(tape.cross_entropy(fg.logits, targets))(0, 0);
}

template <class T>
BatchLoss batch_loss(const GptParams<T>& params, std::span<const PathSequence* const> sequences,
                     GptParams<T>* grads) {
  BatchLoss out;
  std::size_t longest = 0;
  for (auto* s : sequences) longest = std::max(longest, s->size());
  if (sequences.empty() || longest < 2) return out;
  const int len = static_cast<int>(longest) - 1;
  const int batch = static_cast<int>(sequences.size());
  const int pad = pad_token(params.config.vocab - 1);
  std::vector<int> ids(static_cast<std::size_t>(batch) * len, pad);
  std::vector<int> targets(ids.size(), -1);
  for (int b = 0; b < batch; ++b) {
    const auto& u = sequences[static_cast<std::size_t>(b)]->tokens;
    for (std::size_t n = 0; n + 1 < u.size(); ++n) {
      const std::size_t at = static_cast<std::size_t>(b) * len + n;
      ids[at] = u[n];
      targets[at] = u[n + 1];
      ++out.predictions;
    }
  }
  ad::Tape<T> tape(grads != nullptr);
  auto fg = build_forward<T>(tape, params, grads, ids, batch, len);
  ad::Var loss = tape.cross_entropy(fg.logits, targets);
  out.loss_sum = static_cast<double>(tape.value(loss)(0, 0));
  if (grads) tape.backward(loss);
  return out;
}

template <class T>
std::vector<std::uint8_t> relu_pattern(const GptParams<T>& params, std::span<const PathSequence* const> sequences) {
  std::vector<std::uint8_t> out;
  for (auto* s : sequences) {
    if (s->size() < 2) continue;
    const auto inputs = std::span<const int>(s->tokens).first(s->size() - 1);
    ad::Tape<T> tape(false);
    auto fg = build_forward<T>(tape, params, nullptr, inputs, 1, static_cast<int>(inputs.size()));
    for (auto v : fg.ffn_pre) {
      const auto& m = tape.value(v);
      for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data()[i] > T(0));
    }
  }
  return out;
}

template <class T>
Matrix<T> attention_map(const GptParams<T>& params, std::span<const int> tokens, int layer, int head) {
  if (layer < 0 || layer >= params.config.layers || head < 0 || head >= params.config.heads)
    throw std::out_of_range("attention_map: layer/head index out of range");
  ad::Tape<T> tape(false);
  auto fg = build_forward<T>(tape, params, nullptr, tokens, 1, static_cast<int>(tokens.size()));
  return tape.value(fg.attention[static_cast<std::size_t>(layer * params.config.heads + head)]);
}

DecodeOptions decode_options_for(const GptConfig& config, double temperature) {
  DecodeOptions o;
  o.temperature = temperature;
  o.max_len = config.max_len;
  o.force_source = config.construction;
  o.stop_at_target = config.construction;
  return o;
}

int sample_token(std::span<const double> logits, double temperature, std::mt19937_64& rng) {
  if (logits.empty()) throw std::invalid_argument("sample_token: empty logits");
  const auto best = std::max_element(logits.begin(), logits.end());
  if (temperature <= 0.0) return static_cast<int>(best - logits.begin());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp((logits[i] - *best) / temperature);
    total += w[i];
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng) * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    u -= w[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  // rounding fallthrough: last token with nonzero weight
  for (std::size_t i = w.size(); i-- > 0;)
    if (w[i] > 0.0) return static_cast<int>(i);
  return static_cast<int>(best - logits.begin());
}

template <class T>
DecodeResult decode(const GptParams<T>& params, int s, int t, const DecodeOptions& options,
                    std::mt19937_64& rng) {
  const GptConfig& c = params.config;
  const int n = c.vocab - 1;
  if (s < 0 || s >= n || t < 0 || t >= n) throw std::out_of_range("decode: node id out of range");
  const int max_len = options.max_len > 0 ? options.max_len : c.max_len;
  if (max_len > c.max_len) throw std::invalid_argument("decode: max_len exceeds the model's N_max");
  DecodeResult r;
  r.tokens = {s, t};
  std::vector<double> row(static_cast<std::size_t>(c.vocab));
  while (static_cast<int>(r.tokens.size()) < max_len) {
    int next;
    if (options.force_source && r.tokens.size() == 2) {
      next = s;
    } else {
      Matrix<T> logits = forward_logits(params, r.tokens);
      const auto last = logits.rows() - 1;
      for (int k = 0; k < c.vocab; ++k) row[static_cast<std::size_t>(k)] = static_cast<double>(logits(last, k));
      next = sample_token(row, options.temperature, rng);
    }
    r.tokens.push_back(next);
    if (next == end_token(n)) {
      r.complete = true;
      break;
    }
    if (options.stop_at_target && next == t && r.tokens.size() >= 4) {
      if (static_cast<int>(r.tokens.size()) < max_len) {
        r.tokens.push_back(end_token(n));
        r.complete = true;
      }
      break;
    }
  }
  return r;
}

template struct GptParams<float>;
template struct GptParams<double>;
template GptParams<float> init_params<float>(const GptConfig&, std::uint64_t);
template GptParams<double> init_params<double>(const GptConfig&, std::uint64_t);
template Matrix<float> forward_logits<float>(const GptParams<float>&, std::span<const int>);
template Matrix<double> forward_logits<double>(const GptParams<double>&, std::span<const int>);
template float sequence_loss<float>(const GptParams<float>&, std::span<const int>);
template double sequence_loss<double>(const GptParams<double>&, std::span<const int>);
template BatchLoss batch_loss<float>(const GptParams<float>&, std::span<const PathSequence* const>, GptParams<float>*);
template BatchLoss batch_loss<double>(const GptParams<double>&, std::span<const PathSequence* const>, GptParams<double>*);
template Matrix<float> attention_map<float>(const GptParams<float>&, std::span<const int>, int, int);
template Matrix<double> attention_map<double>(const GptParams<double>&, std::span<const int>, int, int);
template std::vector<std::uint8_t> relu_pattern<float>(const GptParams<float>&, std::span<const PathSequence* const>);
template std::vector<std::uint8_t> relu_pattern<double>(const GptParams<double>&, std::span<const PathSequence* const>);
template DecodeResult decode<float>(const GptParams<float>&, int, int, const DecodeOptions&, std::mt19937_64&);
template DecodeResult decode<double>(const GptParams<double>&, int, int, const DecodeOptions&, std::mt19937_64&);

}  // namespace pathlab
