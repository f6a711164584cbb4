// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mixmx {

// Round-to-nearest, ties to even. Independent of the runtime FP rounding
// mode. q must be non-negative and small enough that q+1 is exactly
// representable (all call sites keep q far below 2^52).
inline std::int64_t round_half_even(double q) {
  double f = std::floor(q);
  double frac = q - f;
  auto r = static_cast<std::int64_t>(f);
  if (frac > 0.5) {
    ++r;
  } else if (frac == 0.5 && (r & 1)) {
    ++r;
  }
  return r;
}

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

// FNV-1a, used for provenance config hashes.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace mixmx
