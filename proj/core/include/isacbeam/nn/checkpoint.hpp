#pragma once

// Portable checkpoints: a text manifest (version, dtype, config, ordered
// tensor table with byte offsets) followed by a little-endian blob.
// See docs/file-formats.md for the exact layout.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "isacbeam/nn/qnetwork.hpp"

namespace isacbeam::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string network_config_to_json(const QNetworkConfig& config);
QNetworkConfig network_config_from_json(const std::string& text);

struct CheckpointEntry {
  std::string name;  // "<parameter>" or "<parameter>#m1" / "#m2" for Adam moments
  std::vector<std::size_t> shape;
  std::uint64_t offset = 0;  // bytes from the start of the blob
  std::uint64_t bytes = 0;
};

struct CheckpointManifest {
  std::uint32_t version = kCheckpointVersion;
  std::string dtype;  // "f32" or "f64"
  QNetworkConfig config;
  std::uint64_t adam_steps = 0;
  std::vector<CheckpointEntry> entries;
  std::uint64_t blob_bytes = 0;
  std::size_t parameter_count = 0;  // named parameters (excluding moments)
};

template <typename T>
void save_checkpoint(const QNetwork<T>& network, const std::filesystem::path& path);

// Throws CheckpointError with kVersion, kShape, kTruncated, kFormat or kIo.
template <typename T>
QNetwork<T> load_checkpoint(const std::filesystem::path& path);

CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace isacbeam::nn
