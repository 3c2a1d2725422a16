#include "tfbest/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include <fmt/format.h>

#include "tfbest/layers.hpp"
#include "tfbest/model.hpp"

namespace tfbest::gradcheck {

using ad::Parameter;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

Result check(const std::string& name, const LossFn& loss, const std::vector<Parameter<double>*>& params,
             const Options& options) {
  Result r;
  r.name = name;
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    Var<double> root = loss(tape);
    tape.backward(root);
    std::vector<const Parameter<double>*> cparams(params.begin(), params.end());
    analytic = tape.parameter_gradients(cparams);
  }
  std::vector<std::uint8_t> base_kinks;
  {
    Tape<double> tape(false);
    tape.set_kink_trace(&base_kinks);
    loss(tape);
  }
  // Loss value and whether the evaluation fell on the same side of every
  // relu kink as the unperturbed point.
  auto eval = [&](bool& same_side) {
    std::vector<std::uint8_t> kinks;
    Tape<double> tape(false);
    tape.set_kink_trace(&kinks);
    const double v = loss(tape).value()[0];
    same_side = same_side && kinks == base_kinks;
    return v;
  };
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p]->value.data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      double numeric = 0.0;
      bool refined = false;
      for (double eps = options.eps;; eps /= 10.0) {
        bool same_side = true;
        values[k] = saved + eps;
        const double up = eval(same_side);
        values[k] = saved - eps;
        const double down = eval(same_side);
        values[k] = saved;
        numeric = (up - down) / (2.0 * eps);
        // A step across a kink differences two linear pieces; shrink it
        // until both evaluations stay on the original piece.
        if (same_side || eps < options.eps * 1e-6) break;
        refined = true;
      }
      if (refined) ++r.kink_coordinates;
      const double a = analytic[p][k];
      const double rel = relative_error(a, numeric, options.floor);
      r.max_abs_error = std::max(r.max_abs_error, std::abs(a - numeric));
      if (rel > r.max_rel_error || r.worst.empty()) {
        r.max_rel_error = rel;
        r.worst = fmt::format("{}[{}]", params[p]->name, k);
      }
      ++r.coordinates;
    }
  }
  r.pass = r.max_rel_error < options.tolerance;
  return r;
}

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape, 0.0);
  for (double& x : t.data()) x = nn::uniform(rng, lo, hi);
  return t;
}

// Moves every parameter away from its structured initial value (unit gains,
// zero biases) so no gradient vanishes by symmetry.
void jitter(const std::vector<Parameter<double>*>& params, std::mt19937_64& rng, double amount = 0.2) {
  for (auto* p : params)
    for (double& x : p->value.data()) x += nn::uniform(rng, -amount, amount);
}

// Random linear functional of an output, so every output element matters.
Var<double> project(Tape<double>& tape, const Var<double>& out, const Tensor<double>& weights) {
  return ad::sum(ad::mul(out, tape.constant(weights)));
}

struct Suite {
  Options options;
  std::mt19937_64 rng;
  std::vector<Result> results;

  void add(const std::string& name, const LossFn& fn, const std::vector<Parameter<double>*>& params) {
    results.push_back(check(name, fn, params, options));
  }

  std::unique_ptr<Parameter<double>> input(const std::string& name, Shape shape) {
    return std::make_unique<Parameter<double>>(Parameter<double>{name, random_tensor(std::move(shape), rng)});
  }
};

void op_checks(Suite& s) {
  auto a = s.input("a", {3, 4});
  auto b = s.input("b", {4, 2});
  auto c = s.input("c", {3, 4});
  auto row = s.input("row", {4});
  const Tensor<double> w34 = random_tensor({3, 4}, s.rng);
  const Tensor<double> w32 = random_tensor({3, 2}, s.rng);

  s.add("op.matmul", [&](Tape<double>& t) { return project(t, ad::matmul(t.parameter(*a), t.parameter(*b)), w32); },
        {a.get(), b.get()});
  s.add("op.add_sub_mul",
        [&](Tape<double>& t) {
          auto x = t.parameter(*a), y = t.parameter(*c);
          return project(t, ad::mul(ad::add(x, y), ad::sub(x, ad::scale(y, 0.5))), w34);
        },
        {a.get(), c.get()});
  s.add("op.row_broadcast",
        [&](Tape<double>& t) {
          auto x = t.parameter(*a), r = t.parameter(*row);
          return project(t, ad::mul_row(ad::add_row(x, r), r), w34);
        },
        {a.get(), row.get()});
  s.add("op.transpose_reshape",
        [&](Tape<double>& t) {
          auto x = ad::reshape(ad::transpose(t.parameter(*a)), {3, 4});
          return project(t, x, w34);
        },
        {a.get()});
  s.add("op.concat_slice",
        [&](Tape<double>& t) {
          auto x = t.parameter(*a), y = t.parameter(*c);
          auto cat = ad::concat<double>({x, y}, 1);
          return project(t, ad::add(ad::slice(cat, 1, 2, 6), ad::slice(ad::concat<double>({y, x}, 0), 0, 1, 4)),
                         w34);
        },
        {a.get(), c.get()});
  s.add("op.reused_input",
        [&](Tape<double>& t) {
          auto x = t.parameter(*a);
          return ad::sum(ad::mul(x, x));
        },
        {a.get()});
  s.add("op.mean_sqrt",
        [&](Tape<double>& t) {
          auto x = t.parameter(*a);
          return ad::mean(ad::sqrt(ad::add(ad::mul(x, x), t.constant(Tensor<double>({3, 4}, 1.0)))));
        },
        {a.get()});
  s.add("op.tanh_sigmoid",
        [&](Tape<double>& t) {
          auto x = t.parameter(*a);
          return project(t, ad::add(ad::tanh(x), ad::sigmoid(ad::scale(x, 2.0))), w34);
        },
        {a.get()});
  s.add("op.relu", [&](Tape<double>& t) { return project(t, ad::relu(t.parameter(*a)), w34); }, {a.get()});
  s.add("op.softmax",
        [&](Tape<double>& t) {
          auto x = t.parameter(*a);
          return project(t, ad::add(ad::softmax(x, 1), ad::softmax(x, 0)), w34);
        },
        {a.get()});
  const nn::Mask mask = {1, 0, 0, 0, 1, 1, 0, 0, 1, 1, 1, 0};
  s.add("op.masked_softmax",
        [&](Tape<double>& t) { return project(t, ad::masked_softmax(t.parameter(*a), mask), w34); }, {a.get()});
  s.add("op.layer_norm",
        [&](Tape<double>& t) { return project(t, ad::layer_norm(t.parameter(*a), 1e-5), w34); }, {a.get()});
  s.add("op.rmse_loss",
        [&](Tape<double>& t) { return ad::rmse_loss(t.parameter(*a), t.parameter(*c), 1e-12); },
        {a.get(), c.get()});
}

void layer_checks(Suite& s) {
  constexpr std::size_t L = 3, Lm = 5, d = 8, h = 2, dff = 8;
  auto x = s.input("x", {L, d});
  auto mem = s.input("memory", {Lm, d});
  const Tensor<double> wout = random_tensor({L, d}, s.rng);

  {
    nn::Linear<double> layer("linear", d, 5, s.rng);
    std::vector<Parameter<double>*> ps;
    layer.collect(ps);
    jitter(ps, s.rng);
    const Tensor<double> w = random_tensor({L, 5}, s.rng);
    ps.push_back(x.get());
    s.add("layer.linear", [&](Tape<double>& t) { return project(t, layer.forward(t, t.parameter(*x)), w); }, ps);
  }
  {
    nn::LayerNorm<double> layer("norm", d);
    std::vector<Parameter<double>*> ps;
    layer.collect(ps);
    jitter(ps, s.rng);
    ps.push_back(x.get());
    s.add("layer.layer_norm", [&](Tape<double>& t) { return project(t, layer.forward(t, t.parameter(*x)), wout); },
          ps);
  }
  for (auto scale : {nn::AttentionScale::head_width, nn::AttentionScale::model_width}) {
    nn::MultiHeadAttention<double> layer("mha", d, h, scale, s.rng);
    std::vector<Parameter<double>*> ps;
    layer.collect(ps);
    jitter(ps, s.rng);
    ps.push_back(x.get());
    const std::string suffix = scale == nn::AttentionScale::head_width ? "" : ".model_width";
    s.add("layer.multi_head" + suffix,
          [&](Tape<double>& t) {
            auto v = t.parameter(*x);
            return project(t, layer.forward(t, v, v, v), wout);
          },
          ps);
    if (scale == nn::AttentionScale::head_width) {
      const nn::Mask causal = nn::causal_mask(L);
      s.add("layer.multi_head.causal",
            [&](Tape<double>& t) {
              auto v = t.parameter(*x);
              return project(t, layer.forward(t, v, v, v, &causal), wout);
            },
            ps);
      ps.push_back(mem.get());
      s.add("layer.multi_head.cross",
            [&](Tape<double>& t) {
              auto m = t.parameter(*mem);
              return project(t, layer.forward(t, t.parameter(*x), m, m), wout);
            },
            ps);
    }
  }
  {
    nn::FeedForward<double> layer("ffn", d, dff, s.rng);
    std::vector<Parameter<double>*> ps;
    layer.collect(ps);
    jitter(ps, s.rng);
    ps.push_back(x.get());
    s.add("layer.feed_forward", [&](Tape<double>& t) { return project(t, layer.forward(t, t.parameter(*x)), wout); },
          ps);
  }
  {
    nn::EncoderLayer<double> layer("enc", d, h, dff, 0.1, nn::AttentionScale::head_width, s.rng);
    std::vector<Parameter<double>*> ps;
    layer.collect(ps);
    jitter(ps, s.rng);
    ps.push_back(x.get());
    s.add("layer.encoder",
          [&](Tape<double>& t) {
            ForwardContext ctx = ForwardContext::eval();
            return project(t, layer.forward(t, t.parameter(*x), ctx), wout);
          },
          ps);
  }
  {
    nn::DecoderLayer<double> layer("dec", d, h, dff, 0.1, nn::AttentionScale::head_width, s.rng);
    std::vector<Parameter<double>*> ps;
    layer.collect(ps);
    jitter(ps, s.rng);
    ps.push_back(x.get());
    ps.push_back(mem.get());
    s.add("layer.decoder",
          [&](Tape<double>& t) {
            ForwardContext ctx = ForwardContext::eval();
            return project(t, layer.forward(t, t.parameter(*x), t.parameter(*mem), ctx), wout);
          },
          ps);
  }
  {
    nn::Lstm<double> layer("lstm", d, s.rng);
    std::vector<Parameter<double>*> ps;
    layer.collect(ps);
    jitter(ps, s.rng);
    ps.push_back(x.get());
    s.add("layer.lstm", [&](Tape<double>& t) { return project(t, layer.forward(t, t.parameter(*x)), wout); }, ps);
  }
}

void model_checks(Suite& s) {
  for (Variant v : {Variant::tfbest, Variant::dast, Variant::vanilla}) {
    ModelConfig c;
    c.window = 4;
    c.features = 3;
    c.d_model = 8;
    c.heads = 2;
    c.d_ff = 8;
    c.variant = v;
    TfbestModel<double> model(c, s.options.seed);
    model.output_scaling() = {30.0, 10.0};
    auto ps = model.parameters();
    jitter(ps, s.rng);
    auto x = s.input("window", {c.window, c.features});
    Tensor<double> target({c.window}, 0.0);
    for (double& y : target.data()) y = std::floor(nn::uniform(s.rng, 0.0, 60.0));
    ps.push_back(x.get());
    // RMSE against integer targets exercises the head scaling and the
    // training loss in one graph.
    s.add("model." + to_string(v),
          [&](Tape<double>& t) {
            ForwardContext ctx = ForwardContext::eval();
            auto out = model.forward(t, t.parameter(*x), ctx);
            return ad::rmse_loss(out, t.constant(target), 1e-12);
          },
          ps);
  }
}

}  // namespace

std::vector<Result> run_suite(const Options& options) {
  Suite s{options, std::mt19937_64(options.seed), {}};
  op_checks(s);
  layer_checks(s);
  model_checks(s);
  return std::move(s.results);
}

}  // namespace tfbest::gradcheck
