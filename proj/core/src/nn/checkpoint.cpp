#include "isacbeam/nn/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "../binary_io.hpp"

namespace isacbeam::nn {
namespace {

using nlohmann::json;

constexpr const char* kMagicLine = "ISACBEAM-CHECKPOINT";

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

std::vector<std::size_t> parse_shape(const std::string& s) {
  std::vector<std::size_t> shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoull(part));
  return shape;
}

CheckpointError format_error(const std::string& what) {
  return CheckpointError(CheckpointError::Kind::kFormat, "malformed checkpoint: " + what);
}

// Splits the file into manifest and blob.
CheckpointManifest parse_manifest(const std::vector<std::uint8_t>& file, std::size_t* blob_start) {
  CheckpointManifest m;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t begin = pos;
    while (pos < file.size() && file[pos] != '\n') ++pos;
    if (pos >= file.size()) throw format_error("manifest not terminated");
    std::string line(reinterpret_cast<const char*>(file.data() + begin), pos - begin);
    ++pos;
    return line;
  };
  auto expect_key = [&](const std::string& line, const std::string& key) {
    if (line.rfind(key + " ", 0) != 0) throw format_error("expected '" + key + "'");
    return line.substr(key.size() + 1);
  };

  if (next_line() != kMagicLine) throw format_error("missing magic line");
  try {
    const auto version = std::stoul(expect_key(next_line(), "version"));
    if (version != kCheckpointVersion) {
      throw CheckpointError(CheckpointError::Kind::kVersion,
                            "checkpoint version " + std::to_string(version) +
                                " is not supported (expected " +
                                std::to_string(kCheckpointVersion) + ")");
    }
    m.version = static_cast<std::uint32_t>(version);
    m.dtype = expect_key(next_line(), "dtype");
    if (m.dtype != "f32" && m.dtype != "f64") throw format_error("unknown dtype " + m.dtype);
    m.config = network_config_from_json(expect_key(next_line(), "config"));
    m.adam_steps = std::stoull(expect_key(next_line(), "adam_steps"));
    m.parameter_count = std::stoull(expect_key(next_line(), "parameters"));
    const auto n_entries = std::stoull(expect_key(next_line(), "entries"));
    for (std::size_t i = 0; i < n_entries; ++i) {
      std::istringstream ls(expect_key(next_line(), "entry"));
      CheckpointEntry e;
      std::string shape;
      if (!(ls >> e.name >> shape >> e.offset >> e.bytes)) throw format_error("bad entry line");
      e.shape = parse_shape(shape);
      m.entries.push_back(std::move(e));
    }
    m.blob_bytes = std::stoull(expect_key(next_line(), "blob_bytes"));
    if (next_line() != "end") throw format_error("missing end marker");
  } catch (const std::logic_error&) {
    throw format_error("unparseable manifest field");
  }
  *blob_start = pos;
  return m;
}

std::vector<std::uint8_t> read_or_throw(const std::filesystem::path& path) {
  try {
    return detail::read_file(path.string());
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kIo, e.what());
  }
}

}  // namespace

std::string network_config_to_json(const QNetworkConfig& c) {
  json j{
      {"image_height", c.image_height},
      {"image_width", c.image_width},
      {"location_dim", c.location_dim},
      {"n_actions", c.n_actions},
      {"conv_filters", c.conv_filters},
      {"conv_kernel", c.conv_kernel},
      {"pool_layers", c.pool_layers},
      {"d_model", c.d_model},
      {"n_heads", c.n_heads},
      {"ffn_dim", c.ffn_dim},
      {"encoder_layers", c.encoder_layers},
      {"encoder_dropout", c.encoder_dropout},
      {"hidden_sizes", c.hidden_sizes},
      {"head_dropout", c.head_dropout},
      {"bypass_mmt", c.bypass_mmt},
  };
  return j.dump();
}

QNetworkConfig network_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    QNetworkConfig c;
    c.image_height = j.at("image_height").get<std::size_t>();
    c.image_width = j.at("image_width").get<std::size_t>();
    c.location_dim = j.at("location_dim").get<std::size_t>();
    c.n_actions = j.at("n_actions").get<std::size_t>();
    c.conv_filters = j.at("conv_filters").get<std::vector<std::size_t>>();
    c.conv_kernel = j.at("conv_kernel").get<std::size_t>();
    c.pool_layers = j.at("pool_layers").get<std::vector<bool>>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    c.encoder_dropout = j.at("encoder_dropout").get<double>();
    c.hidden_sizes = j.at("hidden_sizes").get<std::vector<std::size_t>>();
    c.head_dropout = j.at("head_dropout").get<double>();
    c.bypass_mmt = j.at("bypass_mmt").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kFormat,
                          std::string("malformed network config: ") + e.what());
  }
}

template <typename T>
void save_checkpoint(const QNetwork<T>& network, const std::filesystem::path& path) {
  const auto& params = network.parameters();
  std::vector<CheckpointEntry> entries;
  detail::ByteWriter blob;
  auto add = [&](const std::string& name, const Tensor<T>& t) {
    CheckpointEntry e{name, t.shape(), blob.bytes().size(), t.size() * sizeof(T)};
    for (T v : t.values()) blob.put(v);
    entries.push_back(std::move(e));
  };
  for (const auto& p : params) {
    add(p.name, p.value);
    if (p.trainable) {
      add(p.name + "#m1", p.moment1);
      add(p.name + "#m2", p.moment2);
    }
  }

  std::ostringstream out;
  out << kMagicLine << '\n'
      << "version " << kCheckpointVersion << '\n'
      << "dtype " << dtype_name<T>() << '\n'
      << "config " << network_config_to_json(network.config()) << '\n'
      << "adam_steps " << params.adam_steps << '\n'
      << "parameters " << params.size() << '\n'
      << "entries " << entries.size() << '\n';
  for (const auto& e : entries) {
    out << "entry " << e.name << ' ' << shape_string(e.shape) << ' ' << e.offset << ' ' << e.bytes
        << '\n';
  }
  out << "blob_bytes " << blob.bytes().size() << '\n' << "end\n";

  const std::string manifest = out.str();
  std::vector<std::uint8_t> file(manifest.begin(), manifest.end());
  file.insert(file.end(), blob.bytes().begin(), blob.bytes().end());
  try {
    detail::write_file(path.string(), file);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kIo, e.what());
  }
}

CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path) {
  const auto file = read_or_throw(path);
  std::size_t blob_start = 0;
  return parse_manifest(file, &blob_start);
}

template <typename T>
QNetwork<T> load_checkpoint(const std::filesystem::path& path) {
  const auto file = read_or_throw(path);
  std::size_t blob_start = 0;
  const CheckpointManifest m = parse_manifest(file, &blob_start);
  if (file.size() - blob_start < m.blob_bytes) {
    throw CheckpointError(CheckpointError::Kind::kTruncated,
                          "checkpoint blob truncated: expected " + std::to_string(m.blob_bytes) +
                              " bytes, found " + std::to_string(file.size() - blob_start));
  }

  QNetwork<T> net;
  try {
    net = QNetwork<T>(m.config, 0);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kShape,
                          std::string("checkpoint config rejected: ") + e.what());
  }

  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : m.entries) by_name[e.name] = &e;
  const std::size_t elem = m.dtype == "f32" ? 4 : 8;
  const std::uint8_t* blob = file.data() + blob_start;

  auto fill = [&](const std::string& name, Tensor<T>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointError(CheckpointError::Kind::kShape, "checkpoint lacks tensor '" + name + "'");
    }
    const CheckpointEntry& e = *it->second;
    if (e.shape != t.shape() || e.bytes != t.size() * elem) {
      throw CheckpointError(CheckpointError::Kind::kShape,
                            "tensor '" + name + "' has shape " + shape_string(e.shape) +
                                ", network expects " + shape_string(t.shape()));
    }
    if (e.offset + e.bytes > m.blob_bytes) throw format_error("entry exceeds blob");
    detail::ByteReader r(blob + e.offset, e.bytes);
    for (auto& v : t.values()) {
      v = elem == 4 ? static_cast<T>(r.get<float>()) : static_cast<T>(r.get<double>());
    }
  };

  auto& params = net.parameters();
  std::size_t expected_entries = 0;
  for (auto& p : params) {
    fill(p.name, p.value);
    ++expected_entries;
    if (p.trainable) {
      fill(p.name + "#m1", p.moment1);
      fill(p.name + "#m2", p.moment2);
      expected_entries += 2;
    }
  }
  if (expected_entries != m.entries.size() || m.parameter_count != params.size()) {
    throw CheckpointError(CheckpointError::Kind::kShape,
                          "checkpoint tensor count does not match the network");
  }
  params.adam_steps = m.adam_steps;
  return net;
}

template void save_checkpoint<float>(const QNetwork<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const QNetwork<double>&, const std::filesystem::path&);
template QNetwork<float> load_checkpoint<float>(const std::filesystem::path&);
template QNetwork<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace isacbeam::nn
