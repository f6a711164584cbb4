// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "mixmx/error.hpp"
#include "mixmx/numeric.hpp"

namespace mixmx {

// Parameterization of an MX format: k1 values share an 8-bit exponent and
// each k2-element subgroup carries one extra downscale bit. Bits per element
// = 1 + m + d1/k1 + d2/k2, which is exactly 6 for MX6 and 9 for MX9 at the
// default k1 = 16, k2 = 2.
struct MxFormatSpec {
  int group_size = 16;          // k1
  int subgroup_size = 2;        // k2, divides k1
  int mantissa_bits = 4;        // m (MX6: 4, MX9: 7)
  int shared_exponent_bits = 8; // d1, fixed
  int subgroup_exponent_bits = 1; // d2, fixed

  static MxFormatSpec mx6() { return MxFormatSpec{16, 2, 4, 8, 1}; }
  static MxFormatSpec mx9() { return MxFormatSpec{16, 2, 7, 8, 1}; }

  int subgroup_count() const { return group_size / subgroup_size; }

  double bits_per_element() const {
    return 1.0 + mantissa_bits + double(shared_exponent_bits) / group_size +
           double(subgroup_exponent_bits) / subgroup_size;
  }

  // Field-width identity: k1*(1+m) + d1 + (k1/k2)*d2.
  std::uint64_t packed_group_bits() const {
    return std::uint64_t(group_size) * (1 + mantissa_bits) + shared_exponent_bits +
           std::uint64_t(subgroup_count()) * subgroup_exponent_bits;
  }

  // Serialized layout: exponent byte, subgroup-bit byte, then the element
  // bitstream padded to a byte boundary.
  std::uint64_t packed_group_bytes() const {
    return 1 + 1 + ceil_div(std::uint64_t(group_size) * (1 + mantissa_bits), 8);
  }

  void validate() const {
    require(group_size >= 1 && group_size <= 255, Errc::invalid_argument,
            "group_size out of range");
    require(subgroup_size >= 1 && group_size % subgroup_size == 0, Errc::invalid_argument,
            "subgroup_size must divide group_size");
    require(mantissa_bits >= 1 && mantissa_bits <= 7, Errc::invalid_argument,
            "mantissa_bits out of range");
    require(shared_exponent_bits == 8, Errc::invalid_argument, "shared exponent must be 8-bit");
    require(subgroup_exponent_bits == 1, Errc::invalid_argument, "subgroup exponent must be 1-bit");
    require(subgroup_count() <= 8, Errc::invalid_argument,
            "at most 8 subgroups (subgroup bits are stored in one byte)");
  }

  bool operator==(const MxFormatSpec&) const = default;
};

enum class Precision { mx6, mx9 };

inline const char* precision_name(Precision p) { return p == Precision::mx6 ? "mx6" : "mx9"; }

inline Precision precision_from_name(const std::string& s) {
  if (s == "mx6") return Precision::mx6;
  if (s == "mx9") return Precision::mx9;
  fail(Errc::invalid_argument, "unknown precision: " + s);
}

inline MxFormatSpec spec_for(Precision p) {
  return p == Precision::mx6 ? MxFormatSpec::mx6() : MxFormatSpec::mx9();
}

// Operand precision pair of a group dot product.
enum class PrecisionPair { mx6_mx6, mx6_mx9, mx9_mx9 };

inline const char* pair_name(PrecisionPair p) {
  switch (p) {
    case PrecisionPair::mx6_mx6: return "mx6_mx6";
    case PrecisionPair::mx6_mx9: return "mx6_mx9";
    case PrecisionPair::mx9_mx9: return "mx9_mx9";
  }
  return "unknown";
}

inline PrecisionPair pair_from_name(const std::string& s) {
  if (s == "mx6_mx6") return PrecisionPair::mx6_mx6;
  if (s == "mx6_mx9") return PrecisionPair::mx6_mx9;
  if (s == "mx9_mx9") return PrecisionPair::mx9_mx9;
  fail(Errc::invalid_argument, "unknown precision pair: " + s);
}

inline PrecisionPair make_pair(Precision a, Precision b) {
  if (a == Precision::mx6 && b == Precision::mx6) return PrecisionPair::mx6_mx6;
  if (a == Precision::mx9 && b == Precision::mx9) return PrecisionPair::mx9_mx9;
  return PrecisionPair::mx6_mx9;
}

}  // namespace mixmx
