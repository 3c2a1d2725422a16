#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tfbest/layers.hpp"

namespace tfbest {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using nn::ForwardContext;

enum class Variant {
  tfbest,   // sensor + time encoders, LSTM positional encoding
  dast,     // sensor + time encoders, sinusoidal positional encoding
  vanilla,  // time encoder only, sinusoidal positional encoding
};

std::string to_string(Variant v);
// Throws std::invalid_argument for unknown names.
Variant parse_variant(std::string_view name);

std::string to_string(nn::AttentionScale s);
nn::AttentionScale parse_attention_scale(std::string_view name);

struct ModelConfig {
  std::size_t window = 30;    // T
  std::size_t features = 16;  // F
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  std::size_t d_ff = 64;
  double dropout = 0.1;
  Variant variant = Variant::tfbest;
  nn::AttentionScale attention_scale = nn::AttentionScale::head_width;
  // Sinusoidal variants only: false swaps the position table for zeros.
  bool sinusoidal_pe = true;

  // Throws std::invalid_argument on inconsistent values.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Predictions are shift + scale * head(x); set from the training targets so
// an untrained network starts at the target mean.
struct OutputScaling {
  double shift = 0.0;
  double scale = 1.0;
  bool operator==(const OutputScaling&) const = default;
};

// The bi-encoder/decoder RUL network and its two baselines.
//
//   time path:   X [T,F] -> time_embed -> + PE -> dropout -> encoders -> O_t [T,d]
//   sensor path: X^T [F,T] -> sensor_embed -> encoders -> O_s [F,d]
//   decoder:     time-path input, memory = concat(O_s, O_t) (O_t for vanilla)
//   head:        [T,d] -> [T]
template <typename T>
class TfbestModel {
 public:
  TfbestModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  OutputScaling& output_scaling() { return scaling_; }
  const OutputScaling& output_scaling() const { return scaling_; }

  // Embedded window plus positional encoding, followed by dropout [T,d].
  Var<T> time_input(Tape<T>& tape, const Var<T>& window, ForwardContext& ctx) const;
  Var<T> time_encode(Tape<T>& tape, const Var<T>& window, ForwardContext& ctx) const;
  Var<T> sensor_encode(Tape<T>& tape, const Var<T>& window, ForwardContext& ctx) const;
  static Var<T> fuse(const Var<T>& sensor_context, const Var<T>& time_context);

  // Length-T RUL sequence for one window [T,F].
  Var<T> forward(Tape<T>& tape, const Var<T>& window, ForwardContext& ctx) const;

  // Eval-mode forward without recording gradients.
  std::vector<T> predict(const Tensor<T>& window) const;

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  Parameter<T>* find_parameter(std::string_view name);
  std::size_t parameter_count() const;

  // Closed-form parameter count for a configuration.
  static std::size_t parameter_count(const ModelConfig& config);

  const nn::Lstm<T>* lstm_pe() const { return has_lstm_ ? &lstm_pe_ : nullptr; }

 private:
  void check_window(const Var<T>& window) const;

  ModelConfig config_;
  OutputScaling scaling_;
  nn::Linear<T> time_embed_;
  nn::Linear<T> sensor_embed_;
  nn::Lstm<T> lstm_pe_;
  Tensor<T> fixed_pe_;
  bool has_sensor_ = false;
  bool has_lstm_ = false;
  std::vector<nn::EncoderLayer<T>> time_encoder_;
  std::vector<nn::EncoderLayer<T>> sensor_encoder_;
  std::vector<nn::DecoderLayer<T>> decoder_;
  nn::Linear<T> head_;
};

// Derives an independent seed for a named stream from a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

}  // namespace tfbest
