// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mixmx/mx_format.hpp"
#include "mixmx/planner.hpp"

namespace mixmx {

// Accelerator parameters. Defaults follow the modeled configuration:
// 16x16-PE systolic arrays, 1024 arrays, 500 MHz, 936 GB/s, 28 MB on-chip,
// group dot costs of 4 cycles for MX6xMX6 and 16 for any MX9 operand.
struct HardwareConfig {
  int array_dim = 16;
  int num_arrays = 1024;
  double frequency_hz = 5.0e8;
  double mem_bandwidth_bytes_per_s = 936.0e9;
  std::uint64_t on_chip_bytes = 28ull << 20;
  int group_size = 16;  // k1 consumed per group dot
  int cycles_mx6_mx6 = 4;
  int cycles_mx6_mx9 = 16;
  int cycles_mx9_mx9 = 16;

  int cycles_per_group(PrecisionPair p) const {
    switch (p) {
      case PrecisionPair::mx6_mx6: return cycles_mx6_mx6;
      case PrecisionPair::mx6_mx9: return cycles_mx6_mx9;
      case PrecisionPair::mx9_mx9: return cycles_mx9_mx9;
    }
    return cycles_mx9_mx9;
  }

  void validate() const;
};

enum class LayerKind { linear, attention };

struct WorkloadLayer {
  std::string id;
  LayerKind kind = LayerKind::linear;
  // linear: output rows M, reduction K, output cols N
  std::uint64_t m = 0, k = 0, n = 0;
  // attention: heads H, sequence length L, head dim d
  std::uint64_t heads = 0, seq_len = 0, head_dim = 0;

  std::uint32_t channel_count() const {
    return kind == LayerKind::linear ? std::uint32_t(k) : std::uint32_t(heads);
  }
};

struct WorkloadSpec {
  std::vector<WorkloadLayer> layers;
  std::uint32_t timesteps = 25;

  void validate() const;
};

struct RegionK {
  PrecisionPair pair;
  std::uint64_t k_channels = 0;
};

// Compute-cycle model: output tiles = ceil(M/A) * ceil(N/A); per-tile cycles
// = sum over regions of ceil(region_K/k1) * cycles_per_group (PEs in a tile
// work distinct output elements in parallel, pipelined over K); tiles are
// spread over the arrays; one systolic fill of 2A-1 cycles.
std::uint64_t gemm_cycles(std::uint64_t m, std::uint64_t k, std::uint64_t n,
                          std::span<const RegionK> regions, const HardwareConfig& hw);

enum class BoundKind { compute, memory };

struct LayerLatency {
  double compute_s = 0.0;
  double memory_s = 0.0;
  BoundKind bound = BoundKind::compute;
  std::uint64_t cycles = 0;
  std::uint64_t bytes = 0;
  double ops = 0.0;  // multiply-accumulates x 2
  bool capacity_exceeded = false;

  double seconds() const { return compute_s > memory_s ? compute_s : memory_s; }
};

struct LatencySpecs {
  MxFormatSpec lo = MxFormatSpec::mx6();
  MxFormatSpec hi = MxFormatSpec::mx9();
};

// Roofline latency of one layer under one plan: compute seconds from
// gemm_cycles, memory seconds from exact packed MX byte volumes (inputs,
// weights, outputs), latency = max of the two. Reorder and format-conversion
// stages are pipelined behind the systolic array and add zero time.
LayerLatency layer_latency(const WorkloadLayer& layer, const LayerPlan& plan,
                           const HardwareConfig& hw, const LatencySpecs& specs = {});

struct LatencyReport {
  struct Row {
    std::string layer;
    std::uint32_t timestep = 0;
    LayerLatency latency;
  };
  std::vector<Row> rows;
  double total_seconds = 0.0;
  std::uint64_t total_bytes = 0;
  double total_ops = 0.0;
  double tops_achieved = 0.0;
};

LatencyReport model_latency(const WorkloadSpec& workload, const PrecisionPlanSet& plans,
                            const HardwareConfig& hw, const LatencySpecs& specs = {});

// num_arrays * array_dim^2 * frequency * 2 * (k1 / cycles_per_group), in ops/s.
double peak_ops_per_s(const HardwareConfig& hw, PrecisionPair pair);
inline double peak_tops(const HardwareConfig& hw, PrecisionPair pair) {
  return peak_ops_per_s(hw, pair) / 1e12;
}

struct SpeedupRow {
  std::string name;
  double baseline_s = 0.0;
  double simulated_s = 0.0;
  double speedup = 0.0;
};

// Baselines are externally supplied measurements; speedup = baseline/simulated.
std::vector<SpeedupRow> speedup_report(const LatencyReport& report,
                                       const std::map<std::string, double>& baselines);

// JSON file formats (External Interfaces)
WorkloadSpec read_workload(const std::filesystem::path& path);
void write_workload(const WorkloadSpec& w, const std::filesystem::path& path,
                    const std::string& config_hash);
HardwareConfig read_hardware(const std::filesystem::path& path);
void write_hardware(const HardwareConfig& hw, const std::filesystem::path& path,
                    const std::string& config_hash);
void write_latency_report(const LatencyReport& r, const HardwareConfig& hw,
                          const std::filesystem::path& path, const std::string& config_hash);

}  // namespace mixmx
