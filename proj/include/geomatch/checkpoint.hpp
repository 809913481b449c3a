#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "geomatch/network.hpp"

namespace geomatch {

/// Binary checkpoint layout (all integers and floats little-endian):
///
///   "GEOMCKPT"                      8-byte magic
///   u32 version                     currently 1
///   u32 n, n bytes                  model config (ModelConfig::serialize)
///   u32 n, n bytes                  trainer state, key=value lines
///   u32 count                       named tensors, each:
///     u32 n, n bytes                  name
///     u32 rank, rank x u64            shape
///     numel x f64                     values
///   u64                             FNV-1a hash of every preceding byte
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  std::map<std::string, std::string> state;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws IoError on a bad magic, version, hash, truncation or malformed record.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters plus batch-norm statistics ("<layer>.running_mean" / "_var").
Checkpoint snapshot_model(const GeometryEstimator& model);
// Copies weights and statistics into `model`; throws InvalidArgument when a
// tensor is missing or its shape disagrees with the model's config.
void restore_model(GeometryEstimator& model, const Checkpoint& checkpoint);
// Builds a model from the stored config and restores it.
GeometryEstimator load_model(const std::filesystem::path& path);

}  // namespace geomatch
