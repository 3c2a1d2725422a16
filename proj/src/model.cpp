#include <stdexcept>

#include "tfbest/model.hpp"

namespace tfbest {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::tfbest: return "tfbest";
    case Variant::dast: return "dast";
    case Variant::vanilla: return "vanilla";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "tfbest") return Variant::tfbest;
  if (name == "dast") return Variant::dast;
  if (name == "vanilla") return Variant::vanilla;
  throw std::invalid_argument("unknown model variant '" + std::string(name) + "'");
}

std::string to_string(nn::AttentionScale s) {
  return s == nn::AttentionScale::head_width ? "head_width" : "model_width";
}

nn::AttentionScale parse_attention_scale(std::string_view name) {
  if (name == "head_width") return nn::AttentionScale::head_width;
  if (name == "model_width") return nn::AttentionScale::model_width;
  throw std::invalid_argument("unknown attention scale '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (window < 2) throw std::invalid_argument("model config: window must be >= 2");
  if (features < 1) throw std::invalid_argument("model config: features must be >= 1");
  if (heads == 0 || d_model == 0 || d_model % heads != 0) {
    throw std::invalid_argument("model config: d_model must be a positive multiple of heads");
  }
  if (d_ff == 0) throw std::invalid_argument("model config: d_ff must be positive");
  if (variant != Variant::tfbest && d_model % 2 != 0) {
    throw std::invalid_argument("model config: sinusoidal encoding needs an even d_model");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must lie in [0,1)");
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  // FNV-1a over the stream name, mixed into the root with splitmix64.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = root + h + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <typename T>
TfbestModel<T>::TfbestModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& c = config_;
  // One generator per named block, so blocks shared between variants start
  // from identical weights for the same seed.
  auto rng_for = [seed](const std::string& name) { return std::mt19937_64(derive_seed(seed, name)); };

  has_sensor_ = c.variant != Variant::vanilla;
  has_lstm_ = c.variant == Variant::tfbest;

  auto rng = rng_for("time_embed");
  time_embed_ = nn::Linear<T>("time_embed", c.features, c.d_model, rng);
  if (has_sensor_) {
    rng = rng_for("sensor_embed");
    sensor_embed_ = nn::Linear<T>("sensor_embed", c.window, c.d_model, rng);
  }
  if (has_lstm_) {
    rng = rng_for("lstm_pe");
    lstm_pe_ = nn::Lstm<T>("lstm_pe", c.d_model, rng);
  } else {
    fixed_pe_ = c.sinusoidal_pe ? nn::sinusoidal_pe<T>(c.window, c.d_model) : Tensor<T>({c.window, c.d_model});
  }
  for (std::size_t i = 0; i < c.encoder_layers; ++i) {
    const std::string name = "time_encoder." + std::to_string(i);
    rng = rng_for(name);
    time_encoder_.emplace_back(name, c.d_model, c.heads, c.d_ff, c.dropout, c.attention_scale, rng);
  }
  if (has_sensor_) {
    for (std::size_t i = 0; i < c.encoder_layers; ++i) {
      const std::string name = "sensor_encoder." + std::to_string(i);
      rng = rng_for(name);
      sensor_encoder_.emplace_back(name, c.d_model, c.heads, c.d_ff, c.dropout, c.attention_scale, rng);
    }
  }
  for (std::size_t i = 0; i < c.decoder_layers; ++i) {
    const std::string name = "decoder." + std::to_string(i);
    rng = rng_for(name);
    decoder_.emplace_back(name, c.d_model, c.heads, c.d_ff, c.dropout, c.attention_scale, rng);
  }
  rng = rng_for("head");
  head_ = nn::Linear<T>("head", c.d_model, 1, rng);
  // Small head so an untrained network predicts close to the output shift.
  for (auto& w : head_.weight.value.data()) w *= T(0.1);
}

template <typename T>
void TfbestModel<T>::check_window(const Var<T>& window) const {
  const auto& s = window.shape();
  if (s.size() != 2 || s[0] != config_.window || s[1] != config_.features) {
    throw ShapeError("model expects a [" + std::to_string(config_.window) + "," + std::to_string(config_.features) +
                     "] window, got " + ad::to_string(s));
  }
}

template <typename T>
Var<T> TfbestModel<T>::time_input(Tape<T>& tape, const Var<T>& window, ForwardContext& ctx) const {
  check_window(window);
  Var<T> embedded = time_embed_.forward(tape, window);
  Var<T> pe = has_lstm_ ? lstm_pe_.forward(tape, embedded) : tape.constant(fixed_pe_);
  return ad::dropout(ad::add(embedded, pe), static_cast<T>(config_.dropout), ctx.training, ctx.rng);
}

template <typename T>
Var<T> TfbestModel<T>::time_encode(Tape<T>& tape, const Var<T>& window, ForwardContext& ctx) const {
  Var<T> x = time_input(tape, window, ctx);
  for (const auto& layer : time_encoder_) x = layer.forward(tape, x, ctx);
  return x;
}

template <typename T>
Var<T> TfbestModel<T>::sensor_encode(Tape<T>& tape, const Var<T>& window, ForwardContext& ctx) const {
  if (!has_sensor_) throw std::logic_error("sensor_encode: the vanilla variant has no sensor encoder");
  check_window(window);
  // Each row is one sensor's T-step series; attention mixes sensors.
  Var<T> x = sensor_embed_.forward(tape, ad::transpose(window));
  for (const auto& layer : sensor_encoder_) x = layer.forward(tape, x, ctx);
  return x;
}

template <typename T>
Var<T> TfbestModel<T>::fuse(const Var<T>& sensor_context, const Var<T>& time_context) {
  return ad::concat(std::vector<Var<T>>{sensor_context, time_context}, 0);
}

template <typename T>
Var<T> TfbestModel<T>::forward(Tape<T>& tape, const Var<T>& window, ForwardContext& ctx) const {
  Var<T> input = time_input(tape, window, ctx);
  Var<T> time_ctx = input;
  for (const auto& layer : time_encoder_) time_ctx = layer.forward(tape, time_ctx, ctx);
  Var<T> memory = has_sensor_ ? fuse(sensor_encode(tape, window, ctx), time_ctx) : time_ctx;
  Var<T> y = input;
  for (const auto& layer : decoder_) y = layer.forward(tape, y, memory, ctx);
  Var<T> out = ad::reshape(head_.forward(tape, y), {config_.window});
  if (scaling_.scale != 1.0) out = ad::scale(out, static_cast<T>(scaling_.scale));
  if (scaling_.shift != 0.0) {
    out = ad::add(out, tape.constant(Tensor<T>({config_.window}, static_cast<T>(scaling_.shift))));
  }
  return out;
}

template <typename T>
std::vector<T> TfbestModel<T>::predict(const Tensor<T>& window) const {
  Tape<T> tape(false);
  ForwardContext ctx = ForwardContext::eval();
  Var<T> out = forward(tape, tape.constant(window), ctx);
  return out.value().storage();
}

template <typename T>
std::vector<Parameter<T>*> TfbestModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  time_embed_.collect(out);
  if (has_sensor_) sensor_embed_.collect(out);
  if (has_lstm_) lstm_pe_.collect(out);
  for (auto& l : time_encoder_) l.collect(out);
  for (auto& l : sensor_encoder_) l.collect(out);
  for (auto& l : decoder_) l.collect(out);
  head_.collect(out);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> TfbestModel<T>::parameters() const {
  auto mutable_params = const_cast<TfbestModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename T>
Parameter<T>* TfbestModel<T>::find_parameter(std::string_view name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

template <typename T>
std::size_t TfbestModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
std::size_t TfbestModel<T>::parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, ff = c.d_ff;
  const std::size_t linear_dd = d * d + d;
  const std::size_t ffn = (d * ff + ff) + (ff * d + d);
  const std::size_t encoder = 4 * linear_dd + ffn + 2 * (2 * d);
  const std::size_t decoder = 8 * linear_dd + ffn + 3 * (2 * d);
  const std::size_t lstm = 4 * (2 * d * d + d);
  std::size_t n = (c.features * d + d) + c.encoder_layers * encoder + c.decoder_layers * decoder + (d + 1);
  if (c.variant != Variant::vanilla) n += (c.window * d + d) + c.encoder_layers * encoder;
  if (c.variant == Variant::tfbest) n += lstm;
  return n;
}

template class TfbestModel<float>;
template class TfbestModel<double>;

}  // namespace tfbest
