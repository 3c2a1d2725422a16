#include <cmath>
#include <stdexcept>

#include "tfbest/layers.hpp"

namespace tfbest::nn {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

namespace {

template <typename T>
Tensor<T> glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor<T> w({in, out});
  for (auto& v : w.data()) v = static_cast<T>(uniform(rng, -limit, limit));
  return w;
}

}  // namespace

template <typename T>
Tensor<T> sinusoidal_pe(std::size_t length, std::size_t d_model) {
  if (length == 0) throw std::invalid_argument("sinusoidal_pe: length must be positive");
  if (d_model == 0 || d_model % 2 != 0) {
    throw std::invalid_argument("sinusoidal_pe: d_model must be positive and even, got " + std::to_string(d_model));
  }
  Tensor<T> pe({length, d_model});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe.at(pos, 2 * i) = static_cast<T>(std::sin(angle));
      pe.at(pos, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

Mask causal_mask(std::size_t length) {
  Mask m(length * length, 0);
  for (std::size_t q = 0; q < length; ++q)
    for (std::size_t k = 0; k <= q; ++k) m[q * length + k] = 1;
  return m;
}

template <typename T>
Var<T> attention_weights(const Var<T>& q, const Var<T>& k, const Mask* mask, double scale_dim) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || q.shape()[1] != k.shape()[1]) {
    throw ShapeError("attention: query " + ad::to_string(q.shape()) + " and key " + ad::to_string(k.shape()) +
                     " widths differ");
  }
  Var<T> scores = ad::scale(ad::matmul(q, ad::transpose(k)), static_cast<T>(1.0 / std::sqrt(scale_dim)));
  return mask ? ad::masked_softmax(scores, *mask) : ad::softmax(scores, 1);
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Mask* mask, double scale_dim) {
  if (v.shape().size() != 2 || v.shape()[0] != k.shape()[0]) {
    throw ShapeError("attention: key " + ad::to_string(k.shape()) + " and value " + ad::to_string(v.shape()) +
                     " lengths differ");
  }
  return ad::matmul(attention_weights(q, k, mask, scale_dim), v);
}

// ---- Linear -----------------------------------------------------------------

template <typename T>
Linear<T>::Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight{name + ".weight", glorot<T>(in, out, rng)}, bias{name + ".bias", Tensor<T>({out})} {}

template <typename T>
Var<T> Linear<T>::forward(Tape<T>& tape, const Var<T>& x) const {
  return ad::add_row(ad::matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

template <typename T>
void Linear<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---- LayerNorm ----------------------------------------------------------------

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, std::size_t width, double eps_)
    : gamma{name + ".gamma", Tensor<T>({width}, T{1})}, beta{name + ".beta", Tensor<T>({width})}, eps(eps_) {}

template <typename T>
Var<T> LayerNorm<T>::forward(Tape<T>& tape, const Var<T>& x) const {
  Var<T> normed = ad::layer_norm(x, static_cast<T>(eps));
  return ad::add_row(ad::mul_row(normed, tape.parameter(gamma)), tape.parameter(beta));
}

template <typename T>
void LayerNorm<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ---- MultiHeadAttention ------------------------------------------------------------

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(const std::string& name, std::size_t d_model, std::size_t heads,
                                          AttentionScale scale, std::mt19937_64& rng)
    : heads_(heads), d_model_(d_model), scale_(scale) {
  if (heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("multi-head attention: d_model " + std::to_string(d_model) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  query = Linear<T>(name + ".query", d_model, d_model, rng);
  key = Linear<T>(name + ".key", d_model, d_model, rng);
  value = Linear<T>(name + ".value", d_model, d_model, rng);
  output = Linear<T>(name + ".output", d_model, d_model, rng);
}

template <typename T>
double MultiHeadAttention<T>::scale_dim() const {
  return scale_ == AttentionScale::head_width ? static_cast<double>(d_model_ / heads_)
                                              : static_cast<double>(d_model_);
}

template <typename T>
Var<T> MultiHeadAttention<T>::forward(Tape<T>& tape, const Var<T>& x_q, const Var<T>& x_k, const Var<T>& x_v,
                                      const Mask* mask) const {
  Var<T> q = query.forward(tape, x_q);
  Var<T> k = key.forward(tape, x_k);
  Var<T> v = value.forward(tape, x_v);
  const std::size_t dk = d_model_ / heads_;
  const double sd = scale_dim();
  if (heads_ == 1) return output.forward(tape, attention(q, k, v, mask, sd));
  std::vector<Var<T>> heads;
  heads.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t b = h * dk, e = b + dk;
    heads.push_back(attention(ad::slice(q, 1, b, e), ad::slice(k, 1, b, e), ad::slice(v, 1, b, e), mask, sd));
  }
  return output.forward(tape, ad::concat(heads, 1));
}

template <typename T>
void MultiHeadAttention<T>::collect(std::vector<Parameter<T>*>& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
}

// ---- FeedForward -------------------------------------------------------------------

template <typename T>
FeedForward<T>::FeedForward(const std::string& name, std::size_t d_model, std::size_t d_ff, std::mt19937_64& rng)
    : up(name + ".up", d_model, d_ff, rng), down(name + ".down", d_ff, d_model, rng) {}

template <typename T>
Var<T> FeedForward<T>::forward(Tape<T>& tape, const Var<T>& x) const {
  return down.forward(tape, ad::relu(up.forward(tape, x)));
}

template <typename T>
void FeedForward<T>::collect(std::vector<Parameter<T>*>& out) {
  up.collect(out);
  down.collect(out);
}

// ---- EncoderLayer ------------------------------------------------------------------

template <typename T>
EncoderLayer<T>::EncoderLayer(const std::string& name, std::size_t d_model, std::size_t heads, std::size_t d_ff,
                              double dropout_, AttentionScale scale, std::mt19937_64& rng)
    : self_attention(name + ".self_attention", d_model, heads, scale, rng),
      ffn(name + ".ffn", d_model, d_ff, rng),
      norm1(name + ".norm1", d_model),
      norm2(name + ".norm2", d_model),
      dropout(dropout_) {}

template <typename T>
Var<T> EncoderLayer<T>::forward(Tape<T>& tape, const Var<T>& x, ForwardContext& ctx) const {
  const T p = static_cast<T>(dropout);
  Var<T> attn = ad::dropout(self_attention.forward(tape, x, x, x), p, ctx.training, ctx.rng);
  Var<T> h = norm1.forward(tape, ad::add(x, attn));
  Var<T> ff = ad::dropout(ffn.forward(tape, h), p, ctx.training, ctx.rng);
  return norm2.forward(tape, ad::add(h, ff));
}

template <typename T>
void EncoderLayer<T>::collect(std::vector<Parameter<T>*>& out) {
  self_attention.collect(out);
  ffn.collect(out);
  norm1.collect(out);
  norm2.collect(out);
}

// ---- DecoderLayer ------------------------------------------------------------------

template <typename T>
DecoderLayer<T>::DecoderLayer(const std::string& name, std::size_t d_model, std::size_t heads, std::size_t d_ff,
                              double dropout_, AttentionScale scale, std::mt19937_64& rng)
    : self_attention(name + ".self_attention", d_model, heads, scale, rng),
      cross_attention(name + ".cross_attention", d_model, heads, scale, rng),
      ffn(name + ".ffn", d_model, d_ff, rng),
      norm1(name + ".norm1", d_model),
      norm2(name + ".norm2", d_model),
      norm3(name + ".norm3", d_model),
      dropout(dropout_) {}

template <typename T>
Var<T> DecoderLayer<T>::forward(Tape<T>& tape, const Var<T>& y, const Var<T>& memory, ForwardContext& ctx) const {
  const T p = static_cast<T>(dropout);
  const Mask mask = causal_mask(y.shape().at(0));
  Var<T> sa = ad::dropout(self_attention.forward(tape, y, y, y, &mask), p, ctx.training, ctx.rng);
  Var<T> h1 = norm1.forward(tape, ad::add(y, sa));
  Var<T> ca = ad::dropout(cross_attention.forward(tape, h1, memory, memory), p, ctx.training, ctx.rng);
  Var<T> h2 = norm2.forward(tape, ad::add(h1, ca));
  Var<T> ff = ad::dropout(ffn.forward(tape, h2), p, ctx.training, ctx.rng);
  return norm3.forward(tape, ad::add(h2, ff));
}

template <typename T>
void DecoderLayer<T>::collect(std::vector<Parameter<T>*>& out) {
  self_attention.collect(out);
  cross_attention.collect(out);
  ffn.collect(out);
  norm1.collect(out);
  norm2.collect(out);
  norm3.collect(out);
}

// ---- Lstm ----------------------------------------------------------------------------

namespace {
constexpr const char* kGateNames[4] = {"input", "forget", "output", "candidate"};
}

template <typename T>
Lstm<T>::Lstm(const std::string& name, std::size_t width, std::mt19937_64& rng) : width_(width) {
  for (int g = 0; g < 4; ++g) {
    const std::string gate = name + "." + kGateNames[g];
    w_in[g] = {gate + ".w_in", glorot<T>(width, width, rng)};
    w_rec[g] = {gate + ".w_rec", glorot<T>(width, width, rng)};
    // Forget gate starts open.
    bias[g] = {gate + ".bias", Tensor<T>({width}, g == 1 ? T{1} : T{0})};
  }
}

template <typename T>
typename Lstm<T>::State Lstm<T>::zero_state(Tape<T>& tape) const {
  return {tape.constant(Tensor<T>({1, width_})), tape.constant(Tensor<T>({1, width_}))};
}

namespace {

// Gate pre-activations z [1, 4d] -> next (h, c).
template <typename T>
typename Lstm<T>::State lstm_update(const Var<T>& z, const Var<T>& c_prev, std::size_t d) {
  Var<T> i = ad::sigmoid(ad::slice(z, 1, 0, d));
  Var<T> f = ad::sigmoid(ad::slice(z, 1, d, 2 * d));
  Var<T> o = ad::sigmoid(ad::slice(z, 1, 2 * d, 3 * d));
  Var<T> g = ad::tanh(ad::slice(z, 1, 3 * d, 4 * d));
  Var<T> c = ad::add(ad::mul(f, c_prev), ad::mul(i, g));
  Var<T> h = ad::mul(o, ad::tanh(c));
  return {h, c};
}

template <typename T>
std::vector<Var<T>> gate_params(Tape<T>& tape, const Parameter<T> (&ps)[4]) {
  return {tape.parameter(ps[0]), tape.parameter(ps[1]), tape.parameter(ps[2]), tape.parameter(ps[3])};
}

}  // namespace

template <typename T>
typename Lstm<T>::State Lstm<T>::step(Tape<T>& tape, const Var<T>& x, const State& prev) const {
  Var<T> w = ad::concat(gate_params(tape, w_in), 1);
  Var<T> u = ad::concat(gate_params(tape, w_rec), 1);
  Var<T> b = ad::concat(gate_params(tape, bias), 0);
  Var<T> z = ad::add(ad::add_row(ad::matmul(x, w), b), ad::matmul(prev.h, u));
  return lstm_update<T>(z, prev.c, width_);
}

template <typename T>
Var<T> Lstm<T>::forward(Tape<T>& tape, const Var<T>& sequence) const {
  if (sequence.shape().size() != 2 || sequence.shape()[1] != width_) {
    throw ShapeError("lstm: expected [L," + std::to_string(width_) + "] input, got " +
                     ad::to_string(sequence.shape()));
  }
  const std::size_t length = sequence.shape()[0];
  Var<T> w = ad::concat(gate_params(tape, w_in), 1);
  Var<T> u = ad::concat(gate_params(tape, w_rec), 1);
  Var<T> b = ad::concat(gate_params(tape, bias), 0);
  // Input contributions for every step in one product.
  Var<T> xw = ad::add_row(ad::matmul(sequence, w), b);
  State s = zero_state(tape);
  std::vector<Var<T>> hidden;
  hidden.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    Var<T> z = ad::add(ad::slice(xw, 0, t, t + 1), ad::matmul(s.h, u));
    s = lstm_update<T>(z, s.c, width_);
    hidden.push_back(s.h);
  }
  return length == 1 ? hidden.front() : ad::concat(hidden, 0);
}

template <typename T>
void Lstm<T>::collect(std::vector<Parameter<T>*>& out) {
  for (int g = 0; g < 4; ++g) {
    out.push_back(&w_in[g]);
    out.push_back(&w_rec[g]);
    out.push_back(&bias[g]);
  }
}

#define TFBEST_INSTANTIATE_NN(T)                                                                    \
  template Tensor<T> sinusoidal_pe<T>(std::size_t, std::size_t);                                    \
  template Var<T> attention_weights<T>(const Var<T>&, const Var<T>&, const Mask*, double);          \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Mask*, double);   \
  template class Linear<T>;                                                                         \
  template class LayerNorm<T>;                                                                      \
  template class MultiHeadAttention<T>;                                                             \
  template class FeedForward<T>;                                                                    \
  template class EncoderLayer<T>;                                                                   \
  template class DecoderLayer<T>;                                                                   \
  template class Lstm<T>;

TFBEST_INSTANTIATE_NN(float)
TFBEST_INSTANTIATE_NN(double)

}  // namespace tfbest::nn
