// SPDX-License-Identifier: Apache-2.0

#include "mixmx/sweep.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "mixmx/mp_gemm.hpp"
#include "mixmx/version.hpp"

namespace mixmx {

namespace {

PrecisionPlanSet build_plans(double p1, double p2, const CalibrationBundle& bundle,
                             const WorkloadSpec& workload, TimestepScope scope) {
  PrecisionPlanSet plans;
  for (const auto& layer : workload.layers) {
    for (std::uint32_t t = 0; t < workload.timesteps; ++t) {
      PlanKey key{layer.id, t};
      if (layer.kind == LayerKind::linear) {
        ChannelStats stats = scope == TimestepScope::per_timestep
                                 ? channel_magnitudes(bundle, layer.id, t)
                                 : channel_magnitudes_averaged(bundle, layer.id);
        require(stats.channel_count() == layer.k, Errc::invalid_argument,
                "calibration channel count does not match workload K for layer " + layer.id);
        plans.entries.emplace(std::move(key), build_linear_plan(stats, p1));
      } else {
        auto stats = scope == TimestepScope::per_timestep
                         ? head_magnitudes(bundle, layer.id, t)
                         : head_magnitudes_averaged(bundle, layer.id);
        require(stats.size() == layer.heads, Errc::invalid_argument,
                "calibration head count does not match workload for layer " + layer.id);
        plans.entries.emplace(std::move(key), build_attention_plan(stats, p2));
      }
    }
  }
  return plans;
}

}  // namespace

double mean_rel_frobenius_metric(const CalibrationBundle& bundle, const WorkloadSpec& workload,
                                 const PrecisionPlanSet& plans) {
  double sum = 0.0;
  std::uint64_t count = 0;
  for (const auto& layer : workload.layers) {
    for (std::uint32_t t = 0; t < workload.timesteps; ++t) {
      const LayerPlan& plan = plans.at(layer.id, t);
      if (layer.kind == LayerKind::linear) {
        FloatTensor x = bundle.load(layer.id, t, TensorRole::activation);
        FloatTensor w = bundle.load(layer.id, t, TensorRole::weight);
        sum += linear_forward(x, w, std::get<LinearLayerPlan>(plan)).rel_frobenius;
      } else {
        FloatTensor q = bundle.load(layer.id, t, TensorRole::query);
        FloatTensor k = bundle.load(layer.id, t, TensorRole::key);
        FloatTensor v = bundle.load(layer.id, t, TensorRole::value);
        sum += attention_forward(q, k, v, std::get<AttentionPlan>(plan)).rel_frobenius;
      }
      ++count;
    }
  }
  require(count > 0, Errc::invalid_argument, "workload has no layers to evaluate");
  return sum / double(count);
}

void SweepConfig::validate() const {
  require(!p1_grid.empty() && !p2_grid.empty(), Errc::invalid_argument, "sweep grids are empty");
  for (double p : p1_grid)
    require(p >= 0.0 && p <= 100.0, Errc::invalid_argument, "p1 grid value out of [0, 100]");
  for (double p : p2_grid)
    require(p >= 0.0 && p <= 100.0, Errc::invalid_argument, "p2 grid value out of [0, 100]");
  require(std::isfinite(alpha) && alpha >= 0.0, Errc::invalid_argument,
          "alpha must be finite and >= 0");
}

double sweep_objective(double quality, double latency_s, double alpha) {
  require(std::isfinite(quality) && quality >= 0.0, Errc::invalid_argument,
          "quality must be finite and >= 0");
  require(std::isfinite(latency_s) && latency_s > 0.0, Errc::invalid_argument,
          "latency must be positive");
  require(std::isfinite(alpha) && alpha >= 0.0, Errc::invalid_argument,
          "alpha must be finite and >= 0");
  return quality * std::pow(latency_s, alpha);
}

ConfigEval evaluate_config(double p1, double p2, const CalibrationBundle& bundle,
                           const WorkloadSpec& workload, const HardwareConfig& hw,
                           const SweepConfig& config) {
  workload.validate();
  PrecisionPlanSet plans = build_plans(p1, p2, bundle, workload, config.scope);
  const QualityMetric& metric = config.metric ? config.metric : mean_rel_frobenius_metric;
  ConfigEval eval;
  eval.quality = metric(bundle, workload, plans);
  eval.latency_s = model_latency(workload, plans, hw).total_seconds;
  return eval;
}

SweepResult run_sweep(const SweepConfig& config, const CalibrationBundle& bundle,
                      const WorkloadSpec& workload, const HardwareConfig& hw) {
  config.validate();
  SweepResult result;
  result.alpha = config.alpha;
  result.metric_name = config.metric_name;

  for (double p1 : config.p1_grid) {
    for (double p2 : config.p2_grid) {
      ConfigEval eval = evaluate_config(p1, p2, bundle, workload, hw, config);
      SweepEntry entry;
      entry.p1 = p1;
      entry.p2 = p2;
      entry.quality = eval.quality;
      entry.latency_s = eval.latency_s;
      entry.objective = sweep_objective(eval.quality, eval.latency_s, config.alpha);
      result.table.push_back(entry);
    }
  }

  // argmin with ties broken by lower latency, then lower p1, then lower p2
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.table.size(); ++i) {
    const auto& a = result.table[i];
    const auto& b = result.table[best];
    bool better = a.objective < b.objective ||
                  (a.objective == b.objective &&
                   (a.latency_s < b.latency_s ||
                    (a.latency_s == b.latency_s &&
                     (a.p1 < b.p1 || (a.p1 == b.p1 && a.p2 < b.p2)))));
    if (better) best = i;
  }
  result.chosen_index = best;

  for (auto& e : result.table) {
    bool dominated = false;
    for (const auto& o : result.table) {
      if (o.quality <= e.quality && o.latency_s <= e.latency_s &&
          (o.quality < e.quality || o.latency_s < e.latency_s)) {
        dominated = true;
        break;
      }
    }
    e.pareto = !dominated;
  }
  return result;
}

void write_sweep_result(const SweepResult& r, const std::filesystem::path& path,
                        const std::string& config_hash) {
  nlohmann::json j;
  j["provenance"] = {{"tool", kToolName},
                     {"version", kToolVersion},
                     {"config_hash", config_hash},
                     {"alpha", r.alpha},
                     {"metric", r.metric_name}};
  j["type"] = "sweep_result";
  j["table"] = nlohmann::json::array();
  for (const auto& e : r.table) {
    nlohmann::json row;
    row["p1"] = e.p1;
    row["p2"] = e.p2;
    row["quality"] = e.quality;
    row["latency_s"] = e.latency_s;
    row["objective"] = e.objective;
    row["pareto"] = e.pareto;
    j["table"].push_back(row);
  }
  j["chosen_index"] = r.chosen_index;
  j["chosen"] = {{"p1", r.chosen().p1}, {"p2", r.chosen().p2}};
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot write sweep result " + path.string());
  out << j.dump(2) << "\n";
  require(out.good(), Errc::io_failure, "sweep result write failed");
}

SweepResult read_sweep_result(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open sweep result " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::bad_header, std::string("sweep result parse error: ") + e.what());
  }
  require(j.value("type", "") == "sweep_result", Errc::bad_header, "not a sweep_result file");

  SweepResult r;
  r.alpha = j.at("provenance").value("alpha", 0.15);
  r.metric_name = j.at("provenance").value("metric", "");
  for (const auto& row : j.at("table")) {
    SweepEntry e;
    e.p1 = row.at("p1").get<double>();
    e.p2 = row.at("p2").get<double>();
    e.quality = row.at("quality").get<double>();
    e.latency_s = row.at("latency_s").get<double>();
    e.objective = row.at("objective").get<double>();
    e.pareto = row.at("pareto").get<bool>();
    r.table.push_back(e);
  }
  r.chosen_index = j.at("chosen_index").get<std::size_t>();
  require(r.chosen_index < r.table.size(), Errc::bad_header, "chosen_index out of range");
  return r;
}

}  // namespace mixmx
