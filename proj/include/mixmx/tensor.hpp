// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mixmx/error.hpp"

namespace mixmx {

// Dense row-major f32 tensor. All values finite by invariant; shapes have
// rank >= 1 and every dim >= 1.
struct FloatTensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  std::size_t rank() const { return shape.size(); }

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  // rank-2 accessors
  float at2(std::uint64_t r, std::uint64_t c) const { return data[r * shape[1] + c]; }
  float& at2(std::uint64_t r, std::uint64_t c) { return data[r * shape[1] + c]; }

  // rank-3 accessors
  float at3(std::uint64_t i, std::uint64_t j, std::uint64_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  float& at3(std::uint64_t i, std::uint64_t j, std::uint64_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  static FloatTensor zeros(std::vector<std::uint64_t> shape_in) {
    FloatTensor t;
    t.shape = std::move(shape_in);
    t.data.assign(t.numel(), 0.0f);
    return t;
  }

  bool operator==(const FloatTensor&) const = default;
};

// Checked product of dims; throws dimension_overflow on u64 wraparound.
inline std::uint64_t checked_numel(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) {
    require(d >= 1, Errc::bad_header, "zero-sized dimension");
    require(d <= std::numeric_limits<std::uint64_t>::max() / n, Errc::dimension_overflow,
            "dimension product overflows");
    n *= d;
  }
  return n;
}

inline void validate_tensor(const FloatTensor& t) {
  require(!t.shape.empty(), Errc::bad_header, "tensor rank must be >= 1");
  require(checked_numel(t.shape) == t.data.size(), Errc::truncated_payload,
          "data length does not match shape");
  for (float v : t.data)
    require(std::isfinite(v), Errc::non_finite_value, "tensor contains NaN or Inf");
}

}  // namespace mixmx
