// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mixmx/mx_format.hpp"
#include "mixmx/tensor.hpp"
#include "mixmx/tensor_io.hpp"

namespace mixmx {

// Per-channel mean absolute magnitude of a layer's activations. Channels run
// along the last axis of the calibration tensor.
struct ChannelStats {
  std::string layer;
  std::int64_t timestep = 0;  // -1 when averaged over all timesteps
  std::vector<double> mean_abs;

  std::uint32_t channel_count() const { return std::uint32_t(mean_abs.size()); }
};

// Mixed-precision plan for one linear layer at one timestep. permutation[i]
// is the original index of the channel placed at position i (descending mean
// magnitude, ties broken by lower original index). Channels at permuted
// positions < n_hi are designated MX9; the rest, and all weights, are MX6.
struct LinearLayerPlan {
  std::vector<std::uint32_t> permutation;
  std::uint32_t n_hi = 0;
  double p1 = 0.0;

  std::uint32_t channel_count() const { return std::uint32_t(permutation.size()); }
};

// Head-wise plan for one attention layer: the h_hi heads with the largest
// pooled mean |x| over Q, K, V run at MX9, the rest at MX6.
struct AttentionPlan {
  std::vector<Precision> head_precision;
  std::uint32_t h_hi = 0;
  double p2 = 0.0;

  std::uint32_t head_count() const { return std::uint32_t(head_precision.size()); }
};

enum class TimestepScope { per_timestep, averaged };

// Mean |x| per channel over all leading axes of one activation tensor.
std::vector<double> channel_mean_abs(const FloatTensor& t);

ChannelStats channel_magnitudes(const CalibrationBundle& bundle, const std::string& layer,
                                std::uint32_t timestep);
ChannelStats channel_magnitudes_averaged(const CalibrationBundle& bundle,
                                         const std::string& layer);

// n_hi = round_half_even(p1/100 * C); permutation sorts mean_abs descending.
LinearLayerPlan build_linear_plan(const ChannelStats& stats, double p1);

// Mean |x| per head pooled over the Q, K, V tensors (head axis 0).
std::vector<double> head_magnitudes(const CalibrationBundle& bundle, const std::string& layer,
                                    std::uint32_t timestep);
std::vector<double> head_magnitudes_averaged(const CalibrationBundle& bundle,
                                             const std::string& layer);

AttentionPlan build_attention_plan(std::span<const double> head_stats, double p2);

// Output row i = input row permutation[i]. W is K x N with K == channel count.
FloatTensor permute_weight_channels(const FloatTensor& w, const LinearLayerPlan& plan);
// Output column i = input column permutation[i]. X is M x K.
FloatTensor permute_activation_channels(const FloatTensor& x, const LinearLayerPlan& plan);

// Jaccard similarity of the top-k index sets of two stats vectors (ties by
// lower index, matching build_linear_plan).
double consistency_score(std::span<const double> stats_a, std::span<const double> stats_b,
                         std::size_t k);

struct PlanKey {
  std::string layer;
  std::uint32_t timestep = 0;

  auto operator<=>(const PlanKey&) const = default;
};

using LayerPlan = std::variant<LinearLayerPlan, AttentionPlan>;

// Plans keyed by (layer, timestep); the linear permutations double as the
// simulator's channel reorder table.
struct PrecisionPlanSet {
  std::map<PlanKey, LayerPlan> entries;

  const LayerPlan& at(const std::string& layer, std::uint32_t timestep) const;
  bool has(const std::string& layer, std::uint32_t timestep) const {
    return entries.count(PlanKey{layer, timestep}) != 0;
  }
};

void write_plan_set(const PrecisionPlanSet& plans, const std::filesystem::path& path,
                    const std::string& config_hash);
PrecisionPlanSet read_plan_set(const std::filesystem::path& path);

}  // namespace mixmx
