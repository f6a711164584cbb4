// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "mixmx/mx_codec.hpp"
#include "mixmx/planner.hpp"
#include "mixmx/tensor.hpp"

namespace mixmx {

struct RegionCounts {
  std::uint64_t mx6_mx6 = 0;
  std::uint64_t mx6_mx9 = 0;
  std::uint64_t mx9_mx9 = 0;

  std::uint64_t total() const { return mx6_mx6 + mx6_mx9 + mx9_mx9; }
  std::uint64_t& of(PrecisionPair p);
};

struct MixedGemmResult {
  FloatTensor output;
  double rel_frobenius = 0.0;  // vs the f64 reference
  double max_abs = 0.0;
  RegionCounts groups;         // group dot products per precision pair
};

// Low/high formats used by the mixed datapath. Both must share group_size
// and subgroup_size so regions stay group-aligned.
struct GemmSpecs {
  MxFormatSpec lo = MxFormatSpec::mx6();
  MxFormatSpec hi = MxFormatSpec::mx9();

  void validate() const;
};

// The MX9 region covers the first min(ceil(n_hi/k1)*k1, K) permuted channels:
// the plan's outlier boundary promoted to a whole group, so no group mixes
// precisions and the total group count per output element stays
// ceil(K/k1) for every p1.
std::uint64_t padded_outlier_channels(std::uint32_t n_hi, std::uint64_t k,
                                      const MxFormatSpec& spec);

// Mixed-precision linear layer: applies the plan permutation to X columns
// and W rows, encodes the X outlier region as MX9 and everything else
// (inlier X region, all of W) as MX6, then accumulates group dot products in
// f32 in ascending group order. Bit-exact and deterministic.
MixedGemmResult linear_forward(const FloatTensor& x, const FloatTensor& w,
                               const LinearLayerPlan& plan, const GemmSpecs& specs = {});

// Head-wise mixed-precision attention. Q, K, V are H x L x d. Per head at its
// planned precision P: S = (Q K^T) * 1/sqrt(d) via group dots with the scale
// applied post-accumulation in f32, row-wise f32 softmax, softmax output
// re-encoded at P, then (softmax) x V via group dots. MX9 heads run MX9xMX9,
// MX6 heads MX6xMX6.
MixedGemmResult attention_forward(const FloatTensor& q, const FloatTensor& k,
                                  const FloatTensor& v, const AttentionPlan& plan,
                                  const GemmSpecs& specs = {});

// f64 reference paths, single f32 rounding per output element, ascending
// summation order.
FloatTensor reference_forward(const FloatTensor& x, const FloatTensor& w);
FloatTensor reference_forward(const FloatTensor& q, const FloatTensor& k, const FloatTensor& v);

}  // namespace mixmx
