// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mixmx/tensor.hpp"

namespace mixmx {

// MXT1 tensor file, little-endian throughout:
//   magic "MXT1" (4B) | dtype u8 (0 = f32) | ndim u8 | reserved u16 = 0
//   | dims: ndim x u64 | payload: prod(dims) x f32, row-major
FloatTensor read_tensor(const std::filesystem::path& path);
void write_tensor(const FloatTensor& t, const std::filesystem::path& path);

enum class TensorRole { activation, weight, query, key, value };

const char* role_name(TensorRole r);
TensorRole role_from_name(const std::string& name);

struct BundleKey {
  std::string layer;
  std::uint32_t timestep = 0;
  TensorRole role = TensorRole::activation;

  auto operator<=>(const BundleKey&) const = default;
};

// Calibration tensors addressed by (layer, timestep, role). Paths in the
// manifest are relative to the bundle root.
struct CalibrationBundle {
  std::filesystem::path root;
  std::map<BundleKey, std::string> entries;

  bool has(const std::string& layer, std::uint32_t timestep, TensorRole role) const {
    return entries.count(BundleKey{layer, timestep, role}) != 0;
  }

  // Highest timestep recorded for the layer, plus one. 0 if absent.
  std::uint32_t timestep_count(const std::string& layer) const;

  FloatTensor load(const std::string& layer, std::uint32_t timestep, TensorRole role) const;
};

// Reads root/manifest.json:
//   { "entries": [ { "layer": str, "timestep": int, "role": str, "path": str } ] }
// Rejects duplicate (layer, timestep, role) keys, dangling paths, files that
// do not parse as FloatTensor, and per-layer timestep sets that are not a
// contiguous range starting at 0.
CalibrationBundle load_bundle(const std::filesystem::path& root);

// Writes manifest.json for a bundle assembled in memory (fixture helper and
// CLI-facing counterpart of load_bundle).
void write_manifest(const CalibrationBundle& bundle);

}  // namespace mixmx
