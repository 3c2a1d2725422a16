#include "tfbest/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "tfbest/errors.hpp"

namespace tfbest {

namespace {

// Gradient sums are split over a fixed number of shards and reduced in shard
// order, so results do not depend on the thread count.
constexpr std::size_t kShards = 8;

template <typename Fn>
void run_sharded(std::size_t shards, std::size_t threads, Fn&& fn) {
  threads = std::clamp<std::size_t>(threads, 1, shards);
  if (threads == 1) {
    for (std::size_t s = 0; s < shards; ++s) fn(s);
    return;
  }
  std::vector<std::jthread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t s = w; s < shards; s += threads) {
        try {
          fn(s);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

std::uint64_t sample_seed(std::uint64_t root, std::size_t epoch, std::size_t index) {
  return derive_seed(derive_seed(root, "dropout"), fmt::format("{}/{}", epoch, index));
}

struct ShardResult {
  std::vector<Tensor<float>> grads;
  double sse = 0.0;
  std::size_t count = 0;
};

// Forward and backward of sum((pred - target)^2) for one window, added into
// the shard's accumulators.
void accumulate_window(const TfbestModel<float>& model, const data::WindowSample& w, std::uint64_t seed,
                       std::span<const Parameter<float>* const> params, ShardResult& out) {
  Tape<float> tape;
  ForwardContext ctx = ForwardContext::train(seed);
  Var<float> pred = model.forward(tape, tape.constant(w.tensor()), ctx);
  std::vector<float> target(w.targets.begin(), w.targets.end());
  Var<float> diff = ad::sub(pred, tape.constant(Tensor<float>({w.steps}, std::move(target))));
  Var<float> sse = ad::sum(ad::mul(diff, diff));
  tape.backward(sse);
  out.sse += sse.value()[0];
  out.count += w.steps;
  auto grads = tape.parameter_gradients(params);
  if (out.grads.empty()) {
    out.grads = std::move(grads);
    return;
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto dst = out.grads[i].data();
    auto src = grads[i].data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

// Portable Fisher-Yates; std::shuffle's output is library-specific.
void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (batch_size == 0) fail("batch size must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (clip_norm < 0.0) fail("clip norm must be non-negative");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr decay must lie in (0, 1]");
  if (rmse_delta < 0.0) fail("rmse delta must be non-negative");
  if (target_val_rmse < 0.0) fail("target val RMSE must be non-negative");
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(std::span<Parameter<T>* const> params) {
  AdamState s;
  for (const auto* p : params) {
    s.m.emplace_back(p->value.shape(), T{0});
    s.v.emplace_back(p->value.shape(), T{0});
  }
  return s;
}

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               const TrainConfig& cfg, double lr) {
  if (grads.size() != params.size()) {
    throw ShapeError(fmt::format("adam_step: {} gradients for {} parameters", grads.size(), params.size()));
  }
  if (state.m.empty() && state.t == 0) state = AdamState<T>::zeros_like(params);
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->value.shape() || state.m[i].shape() != params[i]->value.shape()) {
      throw ShapeError(fmt::format("adam_step: gradient for {} has shape {}, parameter has {}", params[i]->name,
                                   ad::to_string(grads[i].shape()), ad::to_string(params[i]->value.shape())));
    }
    for (T g : grads[i].data()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient for parameter " + params[i]->name);
      }
    }
  }
  state.t += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->value.data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      theta[k] = static_cast<T>(theta[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps));
    }
  }
}

double rmse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("rmse: prediction and target lengths differ");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

OutputScaling fit_output_scaling(std::span<const data::WindowSample> windows) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& w : windows)
    for (int t : w.targets) {
      sum += t;
      ++n;
    }
  if (n == 0) throw DataError("cannot fit output scaling without targets");
  const double mean = sum / static_cast<double>(n);
  for (const auto& w : windows)
    for (int t : w.targets) sq += (t - mean) * (t - mean);
  const double sd = std::sqrt(sq / static_cast<double>(n));
  return {mean, sd > 0.0 ? sd : 1.0};
}

std::vector<std::vector<float>> predict_windows(const TfbestModel<float>& model,
                                                std::span<const data::WindowSample> windows, std::size_t threads) {
  std::vector<std::vector<float>> out(windows.size());
  const std::size_t shards = std::min<std::size_t>(kShards, std::max<std::size_t>(1, windows.size()));
  run_sharded(shards, threads, [&](std::size_t s) {
    for (std::size_t i = s; i < windows.size(); i += shards) out[i] = model.predict(windows[i].tensor());
  });
  return out;
}

double evaluate_rmse(const TfbestModel<float>& model, std::span<const data::WindowSample> windows,
                     std::size_t threads) {
  if (windows.empty()) throw DataError("evaluate: no windows");
  const auto preds = predict_windows(model, windows, threads);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < windows.size(); ++i)
    for (std::size_t t = 0; t < windows[i].steps; ++t) {
      const double d = static_cast<double>(preds[i][t]) - windows[i].targets[t];
      s += d * d;
      ++n;
    }
  return std::sqrt(s / static_cast<double>(n));
}

double constant_mean_rmse(std::span<const data::WindowSample> train, std::span<const data::WindowSample> eval) {
  const double c = fit_output_scaling(train).shift;
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& w : eval)
    for (int t : w.targets) {
      s += (t - c) * (t - c);
      ++n;
    }
  if (n == 0) throw DataError("constant_mean_rmse: no evaluation targets");
  return std::sqrt(s / static_cast<double>(n));
}

TrainReport fit(TfbestModel<float>& model, std::span<const data::WindowSample> train,
                std::span<const data::WindowSample> val, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw DataError("fit: empty training set");
  const auto& mc = model.config();
  for (const auto* part : {&train, &val})
    for (const auto& w : *part)
      if (w.steps != mc.window || w.features != mc.features) {
        throw ConfigMismatchError(fmt::format("window {} has shape {}x{}, model expects {}x{}", w.serial, w.steps,
                                              w.features, mc.window, mc.features));
      }

  std::vector<Parameter<float>*> params = model.parameters();
  std::vector<const Parameter<float>*> cparams(params.begin(), params.end());
  AdamState<float> adam = AdamState<float>::zeros_like(params);
  std::mt19937_64 order_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainReport report;
  report.best_val_rmse = std::numeric_limits<double>::infinity();
  report.stop_reason = "max_epochs";
  std::vector<Tensor<float>> best;
  std::size_t since_best = 0;
  double lr = cfg.lr;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle(order, order_rng);
    double epoch_sse = 0.0;
    std::size_t epoch_count = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t n = end - begin;
      const std::size_t shards = std::min(kShards, n);
      std::vector<ShardResult> results(shards);
      run_sharded(shards, cfg.threads, [&](std::size_t s) {
        const std::size_t lo = begin + n * s / shards, hi = begin + n * (s + 1) / shards;
        for (std::size_t k = lo; k < hi; ++k) {
          const std::size_t idx = order[k];
          accumulate_window(model, train[idx], sample_seed(cfg.seed, epoch, idx), cparams, results[s]);
        }
      });
      std::vector<Tensor<float>> grads = std::move(results[0].grads);
      double sse = results[0].sse;
      std::size_t count = results[0].count;
      for (std::size_t s = 1; s < shards; ++s) {
        sse += results[s].sse;
        count += results[s].count;
        for (std::size_t i = 0; i < grads.size(); ++i) {
          auto dst = grads[i].data();
          auto src = results[s].grads[i].data();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
      }
      epoch_sse += sse;
      epoch_count += count;

      // d sqrt(sse/n + delta) = d(sse) / (2 n loss)
      const double loss = std::sqrt(sse / static_cast<double>(count) + cfg.rmse_delta);
      double factor = loss > 0.0 ? 1.0 / (2.0 * static_cast<double>(count) * loss) : 0.0;
      if (cfg.clip_norm > 0.0) {
        double norm2 = 0.0;
        for (const auto& g : grads)
          for (float x : g.data()) norm2 += static_cast<double>(x) * x;
        const double norm = std::sqrt(norm2) * factor;
        if (norm > cfg.clip_norm) factor *= cfg.clip_norm / norm;
      }
      for (auto& g : grads)
        for (float& x : g.data()) x = static_cast<float>(x * factor);
      adam_step<float>(params, grads, adam, cfg, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_rmse = std::sqrt(epoch_sse / static_cast<double>(epoch_count));
    rec.val_rmse = val.empty() ? std::numeric_limits<double>::quiet_NaN() : evaluate_rmse(model, val, cfg.threads);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    spdlog::debug("epoch {}: train {:.4f} val {:.4f} ({:.1f}s)", epoch, rec.train_rmse, rec.val_rmse, rec.seconds);
    if (!std::isfinite(rec.train_rmse)) throw NumericError(fmt::format("training diverged at epoch {}", epoch));

    if (!val.empty()) {
      if (rec.val_rmse < report.best_val_rmse) {
        report.best_val_rmse = rec.val_rmse;
        report.best_epoch = epoch;
        since_best = 0;
        best.clear();
        for (const auto* p : params) best.push_back(p->value);
      } else {
        ++since_best;
      }
      if (cfg.target_val_rmse > 0.0 && rec.val_rmse <= cfg.target_val_rmse) {
        report.stop_reason = "target";
        break;
      }
      if (cfg.patience > 0 && since_best >= cfg.patience) {
        report.stop_reason = "patience";
        break;
      }
    } else {
      report.best_epoch = epoch;
    }
    lr *= cfg.lr_decay;
  }

  if (!best.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  }
  if (val.empty()) report.best_val_rmse = std::numeric_limits<double>::quiet_NaN();
  return report;
}

void write_training_report(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "epoch,train_rmse,val_rmse,seconds\n";
  for (const auto& e : report.epochs) {
    out << fmt::format("{},{:.6f},{},{:.3f}\n", e.epoch, e.train_rmse,
                       std::isnan(e.val_rmse) ? std::string() : fmt::format("{:.6f}", e.val_rmse), e.seconds);
  }
  if (!out) throw DataError("write failed: " + path.string());
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<Parameter<float>* const>, std::span<const Tensor<float>>, AdamState<float>&,
                               const TrainConfig&, double);
template void adam_step<double>(std::span<Parameter<double>* const>, std::span<const Tensor<double>>,
                                AdamState<double>&, const TrainConfig&, double);

}  // namespace tfbest
