#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "tfbest/layers.hpp"

using namespace tfbest;
using namespace tfbest::ad;
using namespace tfbest::nn;

namespace {

std::vector<double> to_vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void set_identity(Parameter<double>& w) {
  w.value.fill(0.0);
  for (std::size_t i = 0; i < std::min(w.value.dim(0), w.value.dim(1)); ++i) w.value.at(i, i) = 1.0;
}

// Sum of squared gradient entries per parameter after one random regression.
template <typename Build>
std::vector<double> grad_norms(std::vector<Parameter<double>*> params, Build build) {
  Tape<double> tape;
  auto loss = build(tape);
  tape.backward(loss);
  std::vector<const Parameter<double>*> cps(params.begin(), params.end());
  auto grads = tape.parameter_gradients(cps);
  std::vector<double> out;
  for (auto& g : grads) {
    double s = 0;
    for (double v : g.data()) s += v * v;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("sinusoidal positional encoding values") {
  auto pe = sinusoidal_pe<double>(3, 4);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(0, 2) == 0.0);
  CHECK(pe.at(0, 3) == 1.0);
  CHECK(std::abs(pe.at(1, 0) - 0.841471) < 1e-6);
  CHECK(std::abs(pe.at(1, 1) - 0.540302) < 1e-6);
  CHECK(std::abs(pe.at(1, 2) - 0.010000) < 1e-6);
  CHECK(std::abs(pe.at(1, 3) - 0.999950) < 1e-6);

  auto big = sinusoidal_pe<double>(500, 64);
  for (double v : big.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS(sinusoidal_pe<double>(4, 5));
}

TEST_CASE("attention with one key returns that value row") {
  std::mt19937_64 rng(1);
  Tape<double> t;
  auto q = t.constant(testutil::random_tensor({4, 3}, rng));
  auto k = t.constant(testutil::random_tensor({1, 3}, rng));
  auto v = t.constant(testutil::random_tensor({1, 3}, rng));
  const Tensor<double> out = attention(q, k, v, nullptr, 3.0).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out.at(i, c) - v.value().at(0, c)) < 1e-15);
}

TEST_CASE("attention with identical keys averages the values") {
  std::mt19937_64 rng(2);
  Tape<double> t;
  Tensor<double> k0({4, 3}, 0.0);
  auto row = testutil::random_tensor({3}, rng);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < 3; ++c) k0.at(j, c) = row[c];
  auto q = t.constant(testutil::random_tensor({2, 3}, rng));
  auto v = t.constant(testutil::random_tensor({4, 3}, rng));
  const Tensor<double> out = attention(q, t.constant(k0), v, nullptr, 3.0).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t j = 0; j < 4; ++j) mean += v.value().at(j, c) / 4;
    CHECK(std::abs(out.at(0, c) - mean) < 1e-12);
    CHECK(std::abs(out.at(1, c) - mean) < 1e-12);
  }
}

TEST_CASE("attention matches the two-loop reference, with and without masks") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t lq = dim(rng), lk = dim(rng), d = dim(rng);
    const bool masked = rep % 2 == 1;
    Mask mask(lq * lk, 1);
    if (masked) {
      std::bernoulli_distribution keep(0.6);
      for (std::size_t i = 0; i < lq; ++i) {
        for (std::size_t j = 0; j < lk; ++j) mask[i * lk + j] = keep(rng);
        mask[i * lk + rng() % lk] = 1;
      }
    }
    Tape<double> t;
    auto q = t.constant(testutil::random_tensor({lq, d}, rng, -2, 2));
    auto k = t.constant(testutil::random_tensor({lk, d}, rng, -2, 2));
    auto v = t.constant(testutil::random_tensor({lk, d}, rng, -2, 2));
    const Mask* mp = masked ? &mask : nullptr;
    const Tensor<double> w = attention_weights(q, k, mp, double(d)).value();
    const Tensor<double> out = attention(q, k, v, mp, double(d)).value();
    std::vector<double> ref_w;
    auto ref = testutil::reference_attention(to_vec(q.value()), to_vec(k.value()), to_vec(v.value()), lq, lk, d,
                                             double(d), mp, &ref_w);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - ref[i]) < 1e-6);
    for (std::size_t i = 0; i < lq; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < lk; ++j) {
        if (!mask[i * lk + j]) CHECK(w.at(i, j) == 0.0);
        CHECK(std::abs(w.at(i, j) - ref_w[i * lk + j]) < 1e-6);
        s += w.at(i, j);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("fully masked attention row is an error") {
  Tape<double> t;
  auto x = t.constant(Tensor<double>({2, 2}, 1.0));
  Mask mask = {1, 1, 0, 0};
  CHECK_THROWS(attention(x, x, x, &mask, 2.0));
}

TEST_CASE("causal mask is lower triangular") {
  CHECK(causal_mask(3) == Mask{1, 0, 0, 1, 1, 0, 1, 1, 1});
}

TEST_CASE("single head with identity projections reduces to attention") {
  std::mt19937_64 rng(4);
  MultiHeadAttention<double> mha("mha", 4, 1, AttentionScale::head_width, rng);
  for (auto* lin : {&mha.query, &mha.key, &mha.value, &mha.output}) {
    set_identity(lin->weight);
    lin->bias.value.fill(0.0);
  }
  Tape<double> t;
  auto x = t.constant(testutil::random_tensor({5, 4}, rng));
  const Tensor<double> got = mha.forward(t, x, x, x).value();
  const Tensor<double> want = attention(x, x, x, nullptr, 4.0).value();
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("multi-head shapes and scale") {
  std::mt19937_64 rng(5);
  MultiHeadAttention<double> mha("mha", 64, 4, AttentionScale::head_width, rng);
  CHECK(mha.scale_dim() == 16.0);
  MultiHeadAttention<double> wide("mha", 64, 4, AttentionScale::model_width, rng);
  CHECK(wide.scale_dim() == 64.0);
  Tape<double> t;
  auto xq = t.constant(testutil::random_tensor({7, 64}, rng));
  auto xk = t.constant(testutil::random_tensor({11, 64}, rng));
  CHECK(mha.forward(t, xq, xk, xk).shape() == Shape{7, 64});
  CHECK_THROWS(MultiHeadAttention<double>("bad", 10, 4, AttentionScale::head_width, rng));
}

TEST_CASE("encoder layer preserves shape and parameters all learn") {
  std::mt19937_64 rng(6);
  for (std::size_t len : {5u, 30u}) {
    EncoderLayer<double> enc("enc", 64, 4, 64, 0.1, AttentionScale::head_width, rng);
    Tape<double> t(false);
    auto ctx = ForwardContext::eval();
    CHECK(enc.forward(t, t.constant(testutil::random_tensor({len, 64}, rng)), ctx).shape() == Shape{len, 64});
  }
  EncoderLayer<double> enc("enc", 8, 2, 8, 0.0, AttentionScale::head_width, rng);
  std::vector<Parameter<double>*> ps;
  enc.collect(ps);
  const auto x = testutil::random_tensor({5, 8}, rng);
  const auto y = testutil::random_tensor({5, 8}, rng);
  auto norms = grad_norms(ps, [&](Tape<double>& t) {
    auto ctx = ForwardContext::eval();
    return rmse_loss(enc.forward(t, t.constant(x), ctx), t.constant(y));
  });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CAPTURE(ps[i]->name);
    CHECK(norms[i] > 0.0);
  }
}

TEST_CASE("decoder layer: causal self-attention, unmasked cross-attention") {
  std::mt19937_64 rng(7);
  DecoderLayer<double> dec("dec", 8, 2, 8, 0.0, AttentionScale::head_width, rng);
  const auto y = testutil::random_tensor({5, 8}, rng);
  const auto mem = testutil::random_tensor({6, 8}, rng);
  auto run = [&](const Tensor<double>& yy, const Tensor<double>& mm) {
    Tape<double> t(false);
    auto ctx = ForwardContext::eval();
    return Tensor<double>(dec.forward(t, t.constant(yy), t.constant(mm), ctx).value());
  };
  const auto base = run(y, mem);
  CHECK(base.shape() == Shape{5, 8});

  const std::size_t pos = 3;
  auto y2 = y;
  for (std::size_t c = 0; c < 8; ++c) y2.at(pos, c) += 0.7;
  const auto moved = run(y2, mem);
  for (std::size_t r = 0; r < 5; ++r) {
    double diff = 0;
    for (std::size_t c = 0; c < 8; ++c) diff = std::max(diff, std::abs(moved.at(r, c) - base.at(r, c)));
    if (r < pos) CHECK(diff == 0.0);
    else CHECK(diff > 1e-9);
  }

  auto mem2 = mem;
  mem2.at(2, 1) += 0.5;
  const auto crossed = run(y, mem2);
  for (std::size_t r = 0; r < 5; ++r) {
    double diff = 0;
    for (std::size_t c = 0; c < 8; ++c) diff = std::max(diff, std::abs(crossed.at(r, c) - base.at(r, c)));
    CHECK(diff > 1e-9);
  }

  std::vector<Parameter<double>*> ps;
  dec.collect(ps);
  const auto target = testutil::random_tensor({5, 8}, rng);
  auto norms = grad_norms(ps, [&](Tape<double>& t) {
    auto ctx = ForwardContext::eval();
    return rmse_loss(dec.forward(t, t.constant(y), t.constant(mem), ctx), t.constant(target));
  });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CAPTURE(ps[i]->name);
    CHECK(norms[i] > 0.0);
  }
}

TEST_CASE("layer norm affine defaults to identity") {
  std::mt19937_64 rng(8);
  LayerNorm<double> ln("ln", 6);
  Tape<double> t;
  auto x = t.constant(testutil::random_tensor({3, 6}, rng, -5, 5));
  const Tensor<double> a = ln.forward(t, x).value();
  const Tensor<double> b = layer_norm(x, 1e-5).value();
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("linear layer shapes and initialization") {
  std::mt19937_64 rng(9);
  Linear<double> lin("lin", 5, 3, rng);
  CHECK(lin.weight.value.shape() == Shape{5, 3});
  CHECK(lin.bias.value.shape() == Shape{3});
  const double bound = std::sqrt(6.0 / 8.0);
  for (double w : lin.weight.value.data()) CHECK(std::abs(w) <= bound);
  for (double b : lin.bias.value.data()) CHECK(b == 0.0);
  Tape<double> t;
  CHECK_THROWS_AS(lin.forward(t, t.constant(Tensor<double>({2, 4}, 1.0))), ShapeError);
}

TEST_CASE("lstm: zero weights give zero output") {
  std::mt19937_64 rng(10);
  Lstm<double> lstm("lstm", 4, rng);
  for (int g = 0; g < 4; ++g) {
    lstm.w_in[g].value.fill(0);
    lstm.w_rec[g].value.fill(0);
    lstm.bias[g].value.fill(0);
  }
  Tape<double> t;
  const Tensor<double> p = lstm.forward(t, t.constant(testutil::random_tensor({6, 4}, rng))).value();
  for (double v : p.data()) CHECK(v == 0.0);
}

TEST_CASE("lstm: forget bias init and bounded activations") {
  std::mt19937_64 rng(11);
  Lstm<double> lstm("lstm", 4, rng);
  for (double b : lstm.bias[1].value.data()) CHECK(b == 1.0);
  for (int g : {0, 2, 3})
    for (double b : lstm.bias[g].value.data()) CHECK(b == 0.0);
  Tape<double> t;
  const Tensor<double> h = lstm.forward(t, t.constant(testutil::random_tensor({20, 4}, rng, -10, 10))).value();
  for (double v : h.data()) CHECK(std::abs(v) < 1.0);
}

TEST_CASE("lstm: length-1 sequence equals one hand-computed cell step") {
  std::mt19937_64 rng(12);
  const std::size_t d = 3;
  Lstm<double> lstm("lstm", d, rng);
  for (int g = 0; g < 4; ++g) lstm.bias[g].value = testutil::random_tensor({d}, rng);
  const auto x = testutil::random_tensor({1, d}, rng);
  Tape<double> t;
  const Tensor<double> h = lstm.forward(t, t.constant(x)).value();
  auto s = lstm.step(t, t.constant(x), lstm.zero_state(t));
  const Tensor<double> hs = s.h.value();

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (std::size_t j = 0; j < d; ++j) {
    double pre[4];
    for (int g = 0; g < 4; ++g) {
      pre[g] = lstm.bias[g].value[j];
      for (std::size_t i = 0; i < d; ++i) pre[g] += x[i] * lstm.w_in[g].value.at(i, j);
    }
    const double c = sig(pre[0]) * std::tanh(pre[3]);
    const double want = sig(pre[2]) * std::tanh(c);
    CHECK(std::abs(h[j] - want) < 1e-12);
    CHECK(std::abs(hs[j] - want) < 1e-12);
  }
}

TEST_CASE("lstm: order sensitive and deterministic") {
  std::mt19937_64 rng(13);
  Lstm<double> lstm("lstm", 4, rng);
  const auto e = testutil::random_tensor({5, 4}, rng);
  Tensor<double> rev = e;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) rev.at(r, c) = e.at(4 - r, c);
  Tape<double> t;
  const Tensor<double> a = lstm.forward(t, t.constant(e)).value();
  const Tensor<double> b = lstm.forward(t, t.constant(e)).value();
  const Tensor<double> r = lstm.forward(t, t.constant(rev)).value();
  CHECK(a == b);
  // the last hidden state of the reversed pass differs from the forward one
  double diff = 0;
  for (std::size_t c = 0; c < 4; ++c) diff = std::max(diff, std::abs(a.at(4, c) - r.at(4, c)));
  CHECK(diff > 1e-6);

  std::mt19937_64 r1(99), r2(99);
  Lstm<double> l1("lstm", 4, r1), l2("lstm", 4, r2);
  Tape<double> t2;
  const Tensor<double> p1 = l1.forward(t2, t2.constant(e)).value();
  const Tensor<double> p2 = l2.forward(t2, t2.constant(e)).value();
  CHECK(p1 == p2);
}
