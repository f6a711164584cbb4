// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mixmx/mx_format.hpp"
#include "mixmx/tensor.hpp"

namespace mixmx {

// One encoded group of k1 values. shared_exponent is biased by 127
// (unbiased E_g = shared_exponent - 127). subgroup_down bit j set means
// subgroup j uses the halved scale (b_j = 1). Magnitudes are m-bit
// sign-magnitude; an element decodes to (-1)^sign * mag * 2^(E_g - b - (m-1)).
//
// Canonical form (what encode_group produces):
//   - all-zero group: shared_exponent 0, all subgroup bits set, all mags 0
//   - elements with mag 0 carry sign 0 (negative zero and values that round
//     to zero encode as +0)
struct MxGroup {
  std::uint8_t shared_exponent = 0;
  std::uint8_t subgroup_down = 0;
  std::vector<std::uint8_t> signs;       // one per element, 0 or 1
  std::vector<std::uint8_t> magnitudes;  // one per element, < 2^m

  bool operator==(const MxGroup&) const = default;
};

struct EncodeStats {
  std::uint64_t saturated = 0;  // elements clamped to the max magnitude code
};

// Shared exponent E_g = floor(log2(max|x|)), clamped to the storable minimum
// of -127 (groups entirely below 2^-127 flush toward zero). Subgroup j keeps
// the halved scale only when every element's round-to-nearest-even magnitude
// at that scale stays below 2^(m-1); otherwise the subgroup falls back to the
// full scale, where magnitudes saturate at 2^m - 1. Deciding the subgroup bit
// on the post-rounding magnitude (rather than on |x| < 2^(E_g-1)) is what
// makes re-encoding a decoded group bit-identical.
MxGroup encode_group(std::span<const float> values, const MxFormatSpec& spec,
                     EncodeStats* stats = nullptr);

std::vector<float> decode_group(const MxGroup& g, const MxFormatSpec& spec);

// Exact group dot product: integer mantissa products aligned per subgroup in
// a 64-bit accumulator, one f32 rounding at the end. Operands may differ in
// mantissa width (MX6 x MX9) but must share the group size.
float group_dot(const MxGroup& a, const MxFormatSpec& sa, const MxGroup& b,
                const MxFormatSpec& sb);

// Tensor encoded along one axis. Each fiber along `axis` is tiled into
// ceil(len/k1) groups, zero-padded at the tail; fibers are laid out in
// row-major order of the remaining indices.
struct MxTensor {
  MxFormatSpec spec;
  std::vector<std::uint64_t> shape;  // logical shape, pre-padding
  std::size_t axis = 0;
  std::vector<MxGroup> groups;

  std::uint64_t reduction_len() const { return shape[axis]; }
  std::uint64_t groups_per_fiber() const {
    return ceil_div(reduction_len(), std::uint64_t(spec.group_size));
  }
  std::uint64_t fiber_count() const {
    std::uint64_t n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i)
      if (i != axis) n *= shape[i];
    return n;
  }
};

MxTensor encode_tensor(const FloatTensor& t, std::size_t axis, const MxFormatSpec& spec,
                       EncodeStats* stats = nullptr);
FloatTensor decode_tensor(const MxTensor& mt);

struct ErrorStats {
  double max_abs_err = 0.0;
  double mse = 0.0;
  double rel_frobenius = 0.0;
  std::uint64_t saturation_count = 0;
};

// Stats of t vs decode(encode(t)) along `axis`.
ErrorStats quant_error_stats(const FloatTensor& t, std::size_t axis, const MxFormatSpec& spec);

// Elementwise diff stats of two equal-shaped tensors, accumulated in f64.
ErrorStats tensor_diff_stats(const FloatTensor& reference, const FloatTensor& got);

// Packed debug serialization. Per group: shared_exponent u8 | subgroup bits
// u8 (bit j = subgroup j, LSB first) | k1 elements packed LSB-first as (sign
// bit, then m mantissa bits LSB-first), padded to a byte boundary. Groups are
// concatenated byte-aligned.
std::vector<std::uint8_t> pack_groups(std::span<const MxGroup> groups, const MxFormatSpec& spec);
std::vector<MxGroup> unpack_groups(std::span<const std::uint8_t> bytes, std::uint64_t group_count,
                                   const MxFormatSpec& spec);

// MXQ1 container for an encoded tensor:
//   magic "MXQ1" (4B) | version u8 = 1 | m u8 | k1 u8 | k2 u8 | d1 u8 | d2 u8
//   | axis u8 | ndim u8 | dims: ndim x u64 LE | group_count u64 LE
//   | packed groups
void write_mx_tensor(const MxTensor& mt, const std::filesystem::path& path);
MxTensor read_mx_tensor(const std::filesystem::path& path);

}  // namespace mixmx
