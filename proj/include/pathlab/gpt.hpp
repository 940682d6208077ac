#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pathlab/common.hpp"
#include "pathlab/corpus.hpp"

namespace pathlab {

struct GptConfig {
  int layers = 1;
  int heads = 1;
  int d_model = 120;
  int vocab = 0;    // M: node tokens plus the end token; the padding id M is input-only
  int max_len = 0;  // N_max
  bool identity_norm = false;  // every layer norm replaced by the identity
  bool construction = false;   // hand-built weights: decode forces the boundary tokens

  int d_head() const { return d_model / heads; }
  int d_ff() const { return 4 * d_model; }
  int embedding_rows() const { return vocab + 1; }
  void validate() const;
  bool operator==(const GptConfig&) const = default;
};

template <class T>
struct LayerParams {
  std::vector<Matrix<T>> wq, wk, wv;  // one d x d_k matrix per head
  Matrix<T> ln1_g, ln1_b, ln2_g, ln2_b;
  Matrix<T> w1, b1, w2, b2;
};

template <class T>
struct GptParams {
  GptConfig config;
  Matrix<T> tok_emb;  // (M + 1) x d, last row is the padding token
  Matrix<T> pos_emb;  // N_max x d
  std::vector<LayerParams<T>> layers;
  Matrix<T> lnf_g, lnf_b;
  Matrix<T> w_out;  // d x M

  // All-zero weights (layer-norm gains included) with the shapes implied by config.
  static GptParams zeros(const GptConfig& config);

  // Visits every tensor in a fixed order with a stable name.
  template <class F>
  void for_each(F&& f) {
    f(std::string("tok_emb"), tok_emb);
    f(std::string("pos_emb"), pos_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& L = layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      for (std::size_t h = 0; h < L.wq.size(); ++h) {
        const std::string hp = p + "head" + std::to_string(h) + ".";
        f(hp + "wq", L.wq[h]);
        f(hp + "wk", L.wk[h]);
        f(hp + "wv", L.wv[h]);
      }
      f(p + "ln1_g", L.ln1_g);
      f(p + "ln1_b", L.ln1_b);
      f(p + "ln2_g", L.ln2_g);
      f(p + "ln2_b", L.ln2_b);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
    }
    f(std::string("lnf_g"), lnf_g);
    f(std::string("lnf_b"), lnf_b);
    f(std::string("w_out"), w_out);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<GptParams*>(this)->for_each([&](const std::string& name, Matrix<T>& m) {
      f(name, static_cast<const Matrix<T>&>(m));
    });
  }

  template <class U>
  GptParams<U> cast() const {
    GptParams<U> out = GptParams<U>::zeros(config);
    std::vector<const Matrix<T>*> src;
    for_each([&](const std::string&, const Matrix<T>& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, Matrix<U>& m) { m = src[i++]->template cast<U>(); });
    return out;
  }

  std::size_t parameter_count() const;
  std::vector<T> flatten() const;
  void assign_flat(std::span<const T> values);
  void set_zero();
};

// Weights ~ N(0, 0.02^2), biases 0, layer-norm gains 1.
template <class T>
GptParams<T> init_params(const GptConfig& config, std::uint64_t seed);

// Logits for every position of one sequence: N x M.
template <class T>
Matrix<T> forward_logits(const GptParams<T>& params, std::span<const int> tokens);

// Eq.-style next-token cross entropy summed over positions 1..N-1.
template <class T>
T sequence_loss(const GptParams<T>& params, std::span<const int> tokens);

struct BatchLoss {
  double loss_sum = 0.0;  // summed cross entropy
  std::size_t predictions = 0;
};

// Summed loss over the sequences (padded to a common length); when grads is
// non-null the gradient of that sum is added into it.
template <class T>
BatchLoss batch_loss(const GptParams<T>& params, std::span<const PathSequence* const> sequences,
                     GptParams<T>* grads);

// Sign (pre-activation > 0) of every feed-forward hidden unit at every input position of
// every sequence, layer by layer. Two parameter points with equal patterns lie on the same
// smooth piece of the loss.
template <class T>
std::vector<std::uint8_t> relu_pattern(const GptParams<T>& params, std::span<const PathSequence* const> sequences);

// Post-softmax, post-mask attention weights of one layer/head: N x N.
template <class T>
Matrix<T> attention_map(const GptParams<T>& params, std::span<const int> tokens, int layer, int head);

struct DecodeOptions {
  double temperature = 1.0;  // 0 selects argmax
  int max_len = 0;           // 0 means config.max_len
  bool force_source = false;   // emit s as the third token without consulting the model
  bool stop_at_target = false; // emit the end token as soon as t is produced
};

DecodeOptions decode_options_for(const GptConfig& config, double temperature);

struct DecodeResult {
  std::vector<int> tokens;
  bool complete = false;  // the end token was produced within max_len
};

template <class T>
DecodeResult decode(const GptParams<T>& params, int s, int t, const DecodeOptions& options,
                    std::mt19937_64& rng);

// Samples from softmax(logits / temperature); temperature 0 returns the first argmax.
int sample_token(std::span<const double> logits, double temperature, std::mt19937_64& rng);

}  // namespace pathlab
