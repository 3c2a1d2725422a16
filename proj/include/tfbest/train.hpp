#pragma once

// Adam training of the RUL models against an RMSE loss.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tfbest/data.hpp"
#include "tfbest/model.hpp"

namespace tfbest {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t patience = 0;     // epochs without val improvement; 0 = off
  double clip_norm = 0.0;       // global gradient-norm clip; 0 = off
  double lr_decay = 1.0;        // per-epoch multiplicative factor; 1 = off
  double rmse_delta = 1e-12;    // smoothing inside the training sqrt
  double target_val_rmse = 0.0; // stop once val RMSE <= target; 0 = off
  std::size_t threads = 1;

  void validate() const;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(std::span<Parameter<T>* const> params);
};

// One bias-corrected Adam update. Throws NumericError naming the first
// parameter whose gradient holds a NaN or infinity; nothing is modified in
// that case.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               const TrainConfig& cfg, double lr);
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  adam_step(params, grads, state, cfg, cfg.lr);
}

// sqrt(mean((pred - target)^2)); throws std::invalid_argument when empty or
// the lengths differ.
double rmse(std::span<const double> pred, std::span<const double> target);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_rmse = 0.0;
  double val_rmse = 0.0;  // NaN without a validation set
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_rmse = 0.0;
  std::string stop_reason;  // "max_epochs", "patience", "target"
};

// Target mean and standard deviation of the training windows.
OutputScaling fit_output_scaling(std::span<const data::WindowSample> windows);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Shuffled mini-batch Adam. Dropout is on for training batches and off for
// validation. With a validation set, the parameters of the best validation
// epoch are restored before returning.
TrainReport fit(TfbestModel<float>& model, std::span<const data::WindowSample> train,
                std::span<const data::WindowSample> val, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

std::vector<std::vector<float>> predict_windows(const TfbestModel<float>& model,
                                                std::span<const data::WindowSample> windows,
                                                std::size_t threads = 1);

// RMSE over every (window, step) pair in eval mode.
double evaluate_rmse(const TfbestModel<float>& model, std::span<const data::WindowSample> windows,
                     std::size_t threads = 1);

// RMSE on eval of always predicting the mean training target.
double constant_mean_rmse(std::span<const data::WindowSample> train, std::span<const data::WindowSample> eval);

// CSV: epoch,train_rmse,val_rmse,seconds
void write_training_report(const TrainReport& report, const std::filesystem::path& path);

}  // namespace tfbest
