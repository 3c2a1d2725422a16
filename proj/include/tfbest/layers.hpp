#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tfbest/tensor.hpp"

namespace tfbest::nn {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

// Per-forward state: whether dropout is active and the generator that draws
// its masks. Layers consume draws in a fixed order, so a seeded context
// reproduces the same masks.
struct ForwardContext {
  bool training = false;
  std::mt19937_64 rng{0};

  static ForwardContext eval() { return {}; }
  static ForwardContext train(std::uint64_t seed) { return {true, std::mt19937_64{seed}}; }
};

// Denominator used inside the softmax scaling sqrt(.).
enum class AttentionScale {
  head_width,   // sqrt(d_model / h)
  model_width,  // sqrt(d_model), as some formulations print it
};

using Mask = std::vector<std::uint8_t>;

// Uniform double in [lo, hi) from the top 53 bits of one generator draw.
double uniform(std::mt19937_64& rng, double lo, double hi);

// Fixed sine/cosine position table [length, d_model]; d_model must be even.
template <typename T>
Tensor<T> sinusoidal_pe(std::size_t length, std::size_t d_model);

// Lower-triangular mask: query t may attend to keys 0..t.
Mask causal_mask(std::size_t length);

// softmax(Q K^T / sqrt(scale_dim)) with optional mask (nonzero = attendable).
template <typename T>
Var<T> attention_weights(const Var<T>& q, const Var<T>& k, const Mask* mask, double scale_dim);

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Mask* mask, double scale_dim);

template <typename T>
class Linear {
 public:
  Linear() = default;
  // Glorot-uniform weight [in, out], zero bias.
  Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const;
  void collect(std::vector<Parameter<T>*>& out);

  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }

  Parameter<T> weight;
  Parameter<T> bias;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width, double eps = 1e-5);

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const;
  void collect(std::vector<Parameter<T>*>& out);

  Parameter<T> gamma;
  Parameter<T> beta;
  double eps = 1e-5;
};

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t d_model, std::size_t heads, AttentionScale scale,
                     std::mt19937_64& rng);

  // Heads attend over projected column slices; results are concatenated and
  // projected by the output map.
  Var<T> forward(Tape<T>& tape, const Var<T>& x_q, const Var<T>& x_k, const Var<T>& x_v,
                 const Mask* mask = nullptr) const;
  void collect(std::vector<Parameter<T>*>& out);

  std::size_t heads() const { return heads_; }
  std::size_t d_model() const { return d_model_; }
  double scale_dim() const;

  Linear<T> query, key, value, output;

 private:
  std::size_t heads_ = 1;
  std::size_t d_model_ = 0;
  AttentionScale scale_ = AttentionScale::head_width;
};

// Linear -> ReLU -> Linear.
template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(const std::string& name, std::size_t d_model, std::size_t d_ff, std::mt19937_64& rng);

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const;
  void collect(std::vector<Parameter<T>*>& out);

  Linear<T> up, down;
};

// Post-norm encoder block:
//   x -> LN(x + Drop(MHA(x,x,x))) -> LN(. + Drop(FFN(.)))
template <typename T>
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const std::string& name, std::size_t d_model, std::size_t heads, std::size_t d_ff, double dropout,
               AttentionScale scale, std::mt19937_64& rng);

  Var<T> forward(Tape<T>& tape, const Var<T>& x, ForwardContext& ctx) const;
  void collect(std::vector<Parameter<T>*>& out);

  MultiHeadAttention<T> self_attention;
  FeedForward<T> ffn;
  LayerNorm<T> norm1, norm2;
  double dropout = 0.0;
};

// Post-norm decoder block: causal self-attention, cross-attention over the
// memory (unmasked), then the feed-forward sublayer.
template <typename T>
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(const std::string& name, std::size_t d_model, std::size_t heads, std::size_t d_ff, double dropout,
               AttentionScale scale, std::mt19937_64& rng);

  Var<T> forward(Tape<T>& tape, const Var<T>& y, const Var<T>& memory, ForwardContext& ctx) const;
  void collect(std::vector<Parameter<T>*>& out);

  MultiHeadAttention<T> self_attention;
  MultiHeadAttention<T> cross_attention;
  FeedForward<T> ffn;
  LayerNorm<T> norm1, norm2, norm3;
  double dropout = 0.0;
};

// Single-layer LSTM with hidden width equal to its input width. Each gate
// (input, forget, output, candidate) has an input map W [d,d], a recurrent
// map U [d,d] and a bias [d].
template <typename T>
class Lstm {
 public:
  struct State {
    Var<T> h;  // [1, d]
    Var<T> c;  // [1, d]
  };

  Lstm() = default;
  Lstm(const std::string& name, std::size_t width, std::mt19937_64& rng);

  // Hidden-state sequence [L, d] of a left-to-right pass from zero state.
  Var<T> forward(Tape<T>& tape, const Var<T>& sequence) const;
  // One cell update for input row x [1, d].
  State step(Tape<T>& tape, const Var<T>& x, const State& prev) const;
  State zero_state(Tape<T>& tape) const;

  void collect(std::vector<Parameter<T>*>& out);
  std::size_t width() const { return width_; }

  // Gate order: input, forget, output, candidate.
  Parameter<T> w_in[4];
  Parameter<T> w_rec[4];
  Parameter<T> bias[4];

 private:
  std::size_t width_ = 0;
};

}  // namespace tfbest::nn
