#include "tfbest/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tfbest {

namespace {

constexpr const char* kMagic = "TFBEST-CHECKPOINT";
constexpr const char* kEndManifest = "end_manifest";

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw DataError("checkpoint: bad number for '" + key + "': '" + s + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& s) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw DataError("checkpoint: bad integer for '" + key + "': '" + s + "'");
  }
  return v;
}

std::string shape_string(const ad::Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out.empty() ? "scalar" : out;
}

ad::Shape parse_shape(const std::string& s) {
  ad::Shape shape;
  if (s == "scalar") return shape;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find('x', start), s.size());
    shape.push_back(parse_size("shape", s.substr(start, end - start)));
    start = end + 1;
  }
  return shape;
}

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

std::string manifest_text(const TfbestModel<float>& model, const std::map<std::string, std::string>& metadata,
                          std::size_t& blob_bytes) {
  const ModelConfig& c = model.config();
  std::ostringstream os;
  os << kMagic << '\n';
  os << "format_version=" << kCheckpointFormatVersion << '\n';
  os << "precision=float32\n";
  os << "byte_order=little\n";
  os << "variant=" << to_string(c.variant) << '\n';
  os << "window=" << c.window << '\n';
  os << "features=" << c.features << '\n';
  os << "d_model=" << c.d_model << '\n';
  os << "heads=" << c.heads << '\n';
  os << "encoder_layers=" << c.encoder_layers << '\n';
  os << "decoder_layers=" << c.decoder_layers << '\n';
  os << "d_ff=" << c.d_ff << '\n';
  os << "dropout=" << format_double(c.dropout) << '\n';
  os << "attention_scale=" << to_string(c.attention_scale) << '\n';
  os << "sinusoidal_pe=" << (c.sinusoidal_pe ? 1 : 0) << '\n';
  os << "output_shift=" << format_double(model.output_scaling().shift) << '\n';
  os << "output_scale=" << format_double(model.output_scaling().scale) << '\n';
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint metadata must not contain '=' in keys or newlines");
    }
    os << "meta." << k << '=' << v << '\n';
  }
  std::size_t offset = 0;
  for (const auto* p : model.parameters()) {
    os << "param=" << p->name << ' ' << shape_string(p->value.shape()) << ' ' << offset << ' ' << p->value.size()
       << '\n';
    offset += p->value.size() * sizeof(float);
  }
  blob_bytes = offset;
  os << "blob_bytes=" << blob_bytes << '\n';
  os << kEndManifest << '\n';
  return os.str();
}

// Parses the manifest and leaves `in` positioned at the start of the blob.
CheckpointManifest parse_manifest(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw DataError("checkpoint " + path.string() + ": not a checkpoint file");
  }
  CheckpointManifest m;
  std::map<std::string, std::string> kv;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == kEndManifest) {
      ended = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint " + path.string() + ": malformed line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "param") {
      std::istringstream ps(value);
      CheckpointEntry e;
      std::string shape, offset, count;
      if (!(ps >> e.name >> shape >> offset >> count)) {
        throw DataError("checkpoint " + path.string() + ": malformed param line '" + line + "'");
      }
      e.shape = parse_shape(shape);
      e.offset = parse_size("offset", offset);
      e.count = parse_size("count", count);
      if (ad::numel(e.shape) != e.count) {
        throw DataError("checkpoint " + path.string() + ": parameter " + e.name + " count disagrees with its shape");
      }
      m.entries.push_back(std::move(e));
    } else if (key.rfind("meta.", 0) == 0) {
      m.metadata[key.substr(5)] = value;
    } else {
      kv[key] = value;
    }
  }
  if (!ended) throw DataError("checkpoint " + path.string() + ": manifest is truncated");

  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("checkpoint " + path.string() + ": missing manifest key '" + key + "'");
    return it->second;
  };
  m.format_version = static_cast<int>(parse_size("format_version", get("format_version")));
  if (m.format_version != kCheckpointFormatVersion) {
    throw DataError("checkpoint " + path.string() + ": unsupported format version " +
                    std::to_string(m.format_version) + " (expected " + std::to_string(kCheckpointFormatVersion) + ")");
  }
  if (get("precision") != "float32") throw DataError("checkpoint " + path.string() + ": unsupported precision");
  if (get("byte_order") != "little") throw DataError("checkpoint " + path.string() + ": unsupported byte order");
  try {
    m.config.variant = parse_variant(get("variant"));
    m.config.attention_scale = parse_attention_scale(get("attention_scale"));
  } catch (const std::invalid_argument& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  m.config.window = parse_size("window", get("window"));
  m.config.features = parse_size("features", get("features"));
  m.config.d_model = parse_size("d_model", get("d_model"));
  m.config.heads = parse_size("heads", get("heads"));
  m.config.encoder_layers = parse_size("encoder_layers", get("encoder_layers"));
  m.config.decoder_layers = parse_size("decoder_layers", get("decoder_layers"));
  m.config.d_ff = parse_size("d_ff", get("d_ff"));
  m.config.dropout = parse_double("dropout", get("dropout"));
  m.config.sinusoidal_pe = parse_size("sinusoidal_pe", get("sinusoidal_pe")) != 0;
  m.scaling.shift = parse_double("output_shift", get("output_shift"));
  m.scaling.scale = parse_double("output_scale", get("output_scale"));
  m.blob_bytes = parse_size("blob_bytes", get("blob_bytes"));
  return m;
}

void read_parameters(std::istream& in, const CheckpointManifest& m, TfbestModel<float>& model,
                     const std::filesystem::path& path) {
  std::vector<char> blob(m.blob_bytes);
  in.read(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (static_cast<std::size_t>(in.gcount()) != blob.size()) {
    throw DataError("checkpoint " + path.string() + ": parameter blob is truncated (" + std::to_string(in.gcount()) +
                    " of " + std::to_string(blob.size()) + " bytes)");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError("checkpoint " + path.string() + ": trailing bytes after parameter blob");
  }
  auto params = model.parameters();
  if (params.size() != m.entries.size()) {
    throw DataError("checkpoint " + path.string() + ": manifest lists " + std::to_string(m.entries.size()) +
                    " parameters, model has " + std::to_string(params.size()));
  }
  for (const auto& e : m.entries) {
    Parameter<float>* p = model.find_parameter(e.name);
    if (!p) throw DataError("checkpoint " + path.string() + ": unknown parameter '" + e.name + "'");
    if (p->value.shape() != e.shape) {
      throw DataError("checkpoint " + path.string() + ": parameter '" + e.name + "' has shape " +
                      ad::to_string(e.shape) + ", model expects " + ad::to_string(p->value.shape()));
    }
    if (e.offset + e.count * sizeof(float) > blob.size()) {
      throw DataError("checkpoint " + path.string() + ": parameter '" + e.name + "' lies outside the blob");
    }
    for (std::size_t i = 0; i < e.count; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, blob.data() + e.offset + i * sizeof(float), sizeof(bits));
      p->value[i] = std::bit_cast<float>(to_little_endian(bits));
    }
  }
  model.output_scaling() = m.scaling;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint " + path.string() + ": cannot open for reading");
  return in;
}

}  // namespace

void save_checkpoint(const TfbestModel<float>& model, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata) {
  std::size_t blob_bytes = 0;
  const std::string header = manifest_text(model, metadata, blob_bytes);
  std::vector<char> blob;
  blob.reserve(blob_bytes);
  for (const auto* p : model.parameters()) {
    for (float v : p->value.data()) {
      const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(v));
      const char* b = reinterpret_cast<const char*>(&bits);
      blob.insert(blob.end(), b, b + sizeof(bits));
    }
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint " + path.string() + ": cannot open for writing");
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw DataError("checkpoint " + path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  return parse_manifest(in, path);
}

TfbestModel<float> load_checkpoint(const std::filesystem::path& path, CheckpointManifest* manifest) {
  std::ifstream in = open_input(path);
  CheckpointManifest m = parse_manifest(in, path);
  TfbestModel<float> model = [&] {
    try {
      return TfbestModel<float>(m.config, 0);
    } catch (const std::invalid_argument& e) {
      throw DataError("checkpoint " + path.string() + ": invalid configuration: " + e.what());
    }
  }();
  read_parameters(in, m, model, path);
  if (manifest) *manifest = std::move(m);
  return model;
}

void load_checkpoint_into(TfbestModel<float>& model, const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  CheckpointManifest m = parse_manifest(in, path);
  const ModelConfig& c = model.config();
  if (!(m.config == c)) {
    throw ConfigMismatchError("checkpoint " + path.string() + " was written for variant=" + to_string(m.config.variant) +
                              " window=" + std::to_string(m.config.window) + " features=" +
                              std::to_string(m.config.features) + " d_model=" + std::to_string(m.config.d_model) +
                              ", model has variant=" + to_string(c.variant) + " window=" + std::to_string(c.window) +
                              " features=" + std::to_string(c.features) + " d_model=" + std::to_string(c.d_model));
  }
  read_parameters(in, m, model, path);
}

}  // namespace tfbest
