// SPDX-License-Identifier: Apache-2.0

#include "mixmx/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "mixmx/version.hpp"

namespace mixmx {

std::vector<double> channel_mean_abs(const FloatTensor& t) {
  validate_tensor(t);
  const std::uint64_t channels = t.shape.back();
  const std::uint64_t rows = t.numel() / channels;
  std::vector<double> sum(channels, 0.0);
  for (std::uint64_t r = 0; r < rows; ++r)
    for (std::uint64_t c = 0; c < channels; ++c)
      sum[c] += std::fabs(double(t.data[r * channels + c]));
  for (auto& v : sum) v /= double(rows);
  return sum;
}

ChannelStats channel_magnitudes(const CalibrationBundle& bundle, const std::string& layer,
                                std::uint32_t timestep) {
  FloatTensor t = bundle.load(layer, timestep, TensorRole::activation);
  ChannelStats s;
  s.layer = layer;
  s.timestep = timestep;
  s.mean_abs = channel_mean_abs(t);
  return s;
}

ChannelStats channel_magnitudes_averaged(const CalibrationBundle& bundle,
                                         const std::string& layer) {
  const std::uint32_t steps = bundle.timestep_count(layer);
  require(steps > 0, Errc::missing_file, "no calibration tensors for layer '" + layer + "'");

  ChannelStats s;
  s.layer = layer;
  s.timestep = -1;
  std::uint64_t pooled = 0;
  for (std::uint32_t t = 0; t < steps; ++t) {
    FloatTensor x = bundle.load(layer, t, TensorRole::activation);
    const std::uint64_t channels = x.shape.back();
    const std::uint64_t rows = x.numel() / channels;
    if (s.mean_abs.empty()) s.mean_abs.assign(channels, 0.0);
    require(s.mean_abs.size() == channels, Errc::invalid_argument,
            "inconsistent channel counts across timesteps for layer '" + layer + "'");
    for (std::uint64_t r = 0; r < rows; ++r)
      for (std::uint64_t c = 0; c < channels; ++c)
        s.mean_abs[c] += std::fabs(double(x.data[r * channels + c]));
    pooled += rows;
  }
  for (auto& v : s.mean_abs) v /= double(pooled);
  return s;
}

namespace {

// Indices sorted by stat descending, ties by lower index.
std::vector<std::uint32_t> descending_order(std::span<const double> stats) {
  std::vector<std::uint32_t> order(stats.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (stats[a] != stats[b]) return stats[a] > stats[b];
    return a < b;
  });
  return order;
}

std::uint32_t outlier_count(double percent, std::uint64_t total, const char* what) {
  require(percent >= 0.0 && percent <= 100.0, Errc::invalid_argument,
          std::string(what) + " must be in [0, 100]");
  return std::uint32_t(round_half_even(percent * double(total) / 100.0));
}

}  // namespace

LinearLayerPlan build_linear_plan(const ChannelStats& stats, double p1) {
  require(!stats.mean_abs.empty(), Errc::invalid_argument, "empty channel stats");
  LinearLayerPlan plan;
  plan.permutation = descending_order(stats.mean_abs);
  plan.n_hi = outlier_count(p1, stats.mean_abs.size(), "p1");
  plan.p1 = p1;
  return plan;
}

std::vector<double> head_magnitudes(const CalibrationBundle& bundle, const std::string& layer,
                                    std::uint32_t timestep) {
  std::vector<double> sum;
  std::uint64_t per_head = 0;
  for (TensorRole role : {TensorRole::query, TensorRole::key, TensorRole::value}) {
    FloatTensor t = bundle.load(layer, timestep, role);
    require(t.rank() == 3, Errc::invalid_argument, "attention calibration tensors must be HxLxd");
    const std::uint64_t heads = t.shape[0];
    const std::uint64_t stride = t.shape[1] * t.shape[2];
    if (sum.empty()) sum.assign(heads, 0.0);
    require(sum.size() == heads, Errc::invalid_argument, "inconsistent head counts across Q/K/V");
    for (std::uint64_t h = 0; h < heads; ++h)
      for (std::uint64_t i = 0; i < stride; ++i)
        sum[h] += std::fabs(double(t.data[h * stride + i]));
    per_head += stride;
  }
  for (auto& v : sum) v /= double(per_head);
  return sum;
}

std::vector<double> head_magnitudes_averaged(const CalibrationBundle& bundle,
                                             const std::string& layer) {
  const std::uint32_t steps = bundle.timestep_count(layer);
  require(steps > 0, Errc::missing_file, "no calibration tensors for layer '" + layer + "'");
  std::vector<double> pooled;
  for (std::uint32_t t = 0; t < steps; ++t) {
    auto s = head_magnitudes(bundle, layer, t);
    if (pooled.empty()) pooled.assign(s.size(), 0.0);
    require(pooled.size() == s.size(), Errc::invalid_argument,
            "inconsistent head counts across timesteps");
    for (std::size_t h = 0; h < s.size(); ++h) pooled[h] += s[h];
  }
  for (auto& v : pooled) v /= double(steps);
  return pooled;
}

AttentionPlan build_attention_plan(std::span<const double> head_stats, double p2) {
  require(!head_stats.empty(), Errc::invalid_argument, "empty head stats");
  AttentionPlan plan;
  plan.p2 = p2;
  plan.h_hi = outlier_count(p2, head_stats.size(), "p2");
  plan.head_precision.assign(head_stats.size(), Precision::mx6);
  auto order = descending_order(head_stats);
  for (std::uint32_t i = 0; i < plan.h_hi; ++i) plan.head_precision[order[i]] = Precision::mx9;
  return plan;
}

FloatTensor permute_weight_channels(const FloatTensor& w, const LinearLayerPlan& plan) {
  validate_tensor(w);
  require(w.rank() == 2, Errc::invalid_argument, "weight must be rank 2 (K x N)");
  require(w.shape[0] == plan.channel_count(), Errc::invalid_argument,
          "weight reduction length does not match plan channel count");
  FloatTensor out = FloatTensor::zeros(w.shape);
  const std::uint64_t n = w.shape[1];
  for (std::uint64_t i = 0; i < w.shape[0]; ++i) {
    const std::uint64_t src = plan.permutation[i];
    std::copy_n(w.data.begin() + src * n, n, out.data.begin() + i * n);
  }
  return out;
}

FloatTensor permute_activation_channels(const FloatTensor& x, const LinearLayerPlan& plan) {
  validate_tensor(x);
  require(x.rank() == 2, Errc::invalid_argument, "activation must be rank 2 (M x K)");
  require(x.shape[1] == plan.channel_count(), Errc::invalid_argument,
          "activation channel count does not match plan");
  FloatTensor out = FloatTensor::zeros(x.shape);
  const std::uint64_t k = x.shape[1];
  for (std::uint64_t r = 0; r < x.shape[0]; ++r)
    for (std::uint64_t i = 0; i < k; ++i) out.data[r * k + i] = x.data[r * k + plan.permutation[i]];
  return out;
}

double consistency_score(std::span<const double> stats_a, std::span<const double> stats_b,
                         std::size_t k) {
  require(stats_a.size() == stats_b.size(), Errc::invalid_argument,
          "stats vectors must have equal length");
  require(k >= 1 && k <= stats_a.size(), Errc::invalid_argument, "k out of range");
  auto order_a = descending_order(stats_a);
  auto order_b = descending_order(stats_b);
  std::set<std::uint32_t> top_a(order_a.begin(), order_a.begin() + k);
  std::set<std::uint32_t> top_b(order_b.begin(), order_b.begin() + k);
  std::size_t inter = 0;
  for (auto i : top_a) inter += top_b.count(i);
  const std::size_t uni = 2 * k - inter;
  return double(inter) / double(uni);
}

const LayerPlan& PrecisionPlanSet::at(const std::string& layer, std::uint32_t timestep) const {
  auto it = entries.find(PlanKey{layer, timestep});
  require(it != entries.end(), Errc::missing_file,
          "no plan entry for layer '" + layer + "' timestep " + std::to_string(timestep));
  return it->second;
}

void write_plan_set(const PrecisionPlanSet& plans, const std::filesystem::path& path,
                    const std::string& config_hash) {
  nlohmann::json j;
  j["provenance"] = {{"tool", kToolName}, {"version", kToolVersion}, {"config_hash", config_hash}};
  j["type"] = "plan_set";
  j["entries"] = nlohmann::json::array();
  for (const auto& [key, plan] : plans.entries) {
    nlohmann::json e;
    e["layer"] = key.layer;
    e["timestep"] = key.timestep;
    if (const auto* lp = std::get_if<LinearLayerPlan>(&plan)) {
      e["kind"] = "linear";
      e["permutation"] = lp->permutation;
      e["n_hi"] = lp->n_hi;
      e["p1"] = lp->p1;
    } else {
      const auto& ap = std::get<AttentionPlan>(plan);
      e["kind"] = "attention";
      auto flags = nlohmann::json::array();
      for (auto p : ap.head_precision) flags.push_back(precision_name(p));
      e["head_precision"] = flags;
      e["h_hi"] = ap.h_hi;
      e["p2"] = ap.p2;
    }
    j["entries"].push_back(e);
  }
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot write plan file " + path.string());
  out << j.dump(2) << "\n";
  require(out.good(), Errc::io_failure, "plan write failed");
}

PrecisionPlanSet read_plan_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open plan file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::bad_header, std::string("plan parse error: ") + e.what());
  }
  require(j.value("type", "") == "plan_set", Errc::bad_header, "not a plan_set file");

  PrecisionPlanSet plans;
  for (const auto& e : j.at("entries")) {
    PlanKey key{e.at("layer").get<std::string>(), e.at("timestep").get<std::uint32_t>()};
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "linear") {
      LinearLayerPlan lp;
      lp.permutation = e.at("permutation").get<std::vector<std::uint32_t>>();
      lp.n_hi = e.at("n_hi").get<std::uint32_t>();
      lp.p1 = e.at("p1").get<double>();
      // permutation must be a bijection on 0..C-1
      std::vector<bool> seen(lp.permutation.size(), false);
      for (auto i : lp.permutation) {
        require(i < lp.permutation.size() && !seen[i], Errc::bad_header,
                "plan permutation is not a bijection");
        seen[i] = true;
      }
      require(lp.n_hi <= lp.permutation.size(), Errc::bad_header, "n_hi exceeds channel count");
      plans.entries.emplace(std::move(key), std::move(lp));
    } else if (kind == "attention") {
      AttentionPlan ap;
      for (const auto& f : e.at("head_precision"))
        ap.head_precision.push_back(precision_from_name(f.get<std::string>()));
      ap.h_hi = e.at("h_hi").get<std::uint32_t>();
      ap.p2 = e.at("p2").get<double>();
      std::uint32_t flagged = 0;
      for (auto p : ap.head_precision)
        if (p == Precision::mx9) ++flagged;
      require(flagged == ap.h_hi, Errc::bad_header, "h_hi does not match flagged head count");
      plans.entries.emplace(std::move(key), std::move(ap));
    } else {
      fail(Errc::bad_header, "unknown plan kind: " + kind);
    }
  }
  return plans;
}

}  // namespace mixmx
