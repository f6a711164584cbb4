// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mixmx/accel_sim.hpp"
#include "mixmx/planner.hpp"
#include "mixmx/tensor_io.hpp"

namespace mixmx {

// Quality metric evaluated for one (p1, p2) configuration. Lower is better.
// The default measures mean relative Frobenius error of the emulated layer
// outputs against the f64 reference over every calibrated (layer, timestep).
using QualityMetric =
    std::function<double(const CalibrationBundle&, const WorkloadSpec&, const PrecisionPlanSet&)>;

double mean_rel_frobenius_metric(const CalibrationBundle& bundle, const WorkloadSpec& workload,
                                 const PrecisionPlanSet& plans);

struct SweepConfig {
  std::vector<double> p1_grid{0, 1, 2, 5, 10, 20};
  std::vector<double> p2_grid{0, 10, 20, 30};
  double alpha = 0.15;
  TimestepScope scope = TimestepScope::per_timestep;
  QualityMetric metric;  // empty -> mean_rel_frobenius_metric
  std::string metric_name = "mean_rel_frobenius";

  void validate() const;
};

// quality * latency^alpha. latency must be positive and finite.
double sweep_objective(double quality, double latency_s, double alpha);

struct ConfigEval {
  double quality = 0.0;
  double latency_s = 0.0;
};

ConfigEval evaluate_config(double p1, double p2, const CalibrationBundle& bundle,
                           const WorkloadSpec& workload, const HardwareConfig& hw,
                           const SweepConfig& config);

struct SweepEntry {
  double p1 = 0.0, p2 = 0.0;
  double quality = 0.0;
  double latency_s = 0.0;
  double objective = 0.0;
  bool pareto = false;
};

struct SweepResult {
  std::vector<SweepEntry> table;  // p1-major, p2-minor grid order
  std::size_t chosen_index = 0;
  double alpha = 0.15;
  std::string metric_name;

  const SweepEntry& chosen() const { return table[chosen_index]; }
};

// Exhaustive grid sweep; chosen = argmin objective with ties broken by lower
// latency, then lower p1, then lower p2.
SweepResult run_sweep(const SweepConfig& config, const CalibrationBundle& bundle,
                      const WorkloadSpec& workload, const HardwareConfig& hw);

void write_sweep_result(const SweepResult& r, const std::filesystem::path& path,
                        const std::string& config_hash);
SweepResult read_sweep_result(const std::filesystem::path& path);

}  // namespace mixmx
