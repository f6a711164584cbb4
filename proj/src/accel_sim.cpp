// SPDX-License-Identifier: Apache-2.0

#include "mixmx/accel_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "mixmx/mp_gemm.hpp"
#include "mixmx/version.hpp"

namespace mixmx {

void HardwareConfig::validate() const {
  require(array_dim >= 1, Errc::invalid_argument, "array_dim must be positive");
  require(num_arrays >= 1, Errc::invalid_argument, "num_arrays must be positive");
  require(frequency_hz > 0.0 && std::isfinite(frequency_hz), Errc::invalid_argument,
          "frequency_hz must be positive");
  require(mem_bandwidth_bytes_per_s > 0.0 && std::isfinite(mem_bandwidth_bytes_per_s),
          Errc::invalid_argument, "mem_bandwidth_bytes_per_s must be positive");
  require(on_chip_bytes >= 1, Errc::invalid_argument, "on_chip_bytes must be positive");
  require(group_size >= 1, Errc::invalid_argument, "group_size must be positive");
  require(cycles_mx6_mx6 >= 1 && cycles_mx6_mx9 >= 1 && cycles_mx9_mx9 >= 1,
          Errc::invalid_argument, "cycle costs must be positive");
  require(cycles_mx6_mx6 <= cycles_mx6_mx9 && cycles_mx6_mx6 <= cycles_mx9_mx9,
          Errc::invalid_argument, "MX6xMX6 must be the cheapest group dot");
}

void WorkloadSpec::validate() const {
  require(timesteps >= 1, Errc::invalid_argument, "timesteps must be >= 1");
  std::set<std::string> ids;
  for (const auto& l : layers) {
    require(!l.id.empty(), Errc::invalid_argument, "layer id must be non-empty");
    require(ids.insert(l.id).second, Errc::invalid_argument, "duplicate layer id: " + l.id);
    if (l.kind == LayerKind::linear) {
      require(l.m >= 1 && l.k >= 1 && l.n >= 1, Errc::invalid_argument,
              "linear layer dims must be positive: " + l.id);
    } else {
      require(l.heads >= 1 && l.seq_len >= 1 && l.head_dim >= 1, Errc::invalid_argument,
              "attention layer dims must be positive: " + l.id);
    }
  }
}

std::uint64_t gemm_cycles(std::uint64_t m, std::uint64_t k, std::uint64_t n,
                          std::span<const RegionK> regions, const HardwareConfig& hw) {
  hw.validate();
  require(m >= 1 && k >= 1 && n >= 1, Errc::invalid_argument, "gemm dims must be positive");
  const std::uint64_t k1 = hw.group_size;
  std::uint64_t covered = 0;
  std::uint64_t per_element = 0;
  for (const auto& r : regions) {
    covered += r.k_channels;
    per_element += ceil_div(r.k_channels, k1) * std::uint64_t(hw.cycles_per_group(r.pair));
  }
  require(covered == k, Errc::invalid_argument, "region channel counts must sum to K");

  const std::uint64_t a = hw.array_dim;
  const std::uint64_t tiles = ceil_div(m, a) * ceil_div(n, a);
  const std::uint64_t waves = ceil_div(tiles, std::uint64_t(hw.num_arrays));
  const std::uint64_t fill = 2 * a - 1;
  return waves * per_element + fill;
}

namespace {

std::uint64_t group_bytes(const MxFormatSpec& s) { return s.packed_group_bytes(); }

struct GemmBytes {
  std::uint64_t input = 0, weight = 0, output = 0;
  std::uint64_t total() const { return input + weight + output; }
};

// Exact packed byte volume of a mixed linear layer: X split into the
// promoted MX9 region and the MX6 remainder, W all MX6, the output counted
// at the layer's own outlier fraction applied to its N channels (the stored
// result feeds the next layer at a similar mix).
GemmBytes linear_bytes(const WorkloadLayer& l, std::uint32_t n_hi, double p1,
                       const LatencySpecs& specs) {
  const std::uint64_t k1 = specs.lo.group_size;
  GemmBytes b;
  const std::uint64_t split = padded_outlier_channels(n_hi, l.k, specs.lo);
  const std::uint64_t g_hi = ceil_div(split, k1);
  const std::uint64_t g_lo = ceil_div(l.k - split, k1);
  b.input = l.m * (g_hi * group_bytes(specs.hi) + g_lo * group_bytes(specs.lo));
  b.weight = l.n * (g_hi + g_lo) * group_bytes(specs.lo);

  const auto n_hi_out = std::uint32_t(round_half_even(p1 * double(l.n) / 100.0));
  const std::uint64_t split_out = padded_outlier_channels(n_hi_out, l.n, specs.lo);
  const std::uint64_t go_hi = ceil_div(split_out, k1);
  const std::uint64_t go_lo = ceil_div(l.n - split_out, k1);
  b.output = l.m * (go_hi * group_bytes(specs.hi) + go_lo * group_bytes(specs.lo));
  return b;
}

}  // namespace

LayerLatency layer_latency(const WorkloadLayer& layer, const LayerPlan& plan,
                           const HardwareConfig& hw, const LatencySpecs& specs) {
  hw.validate();
  specs.lo.validate();
  specs.hi.validate();
  require(hw.group_size == specs.lo.group_size && hw.group_size == specs.hi.group_size,
          Errc::invalid_argument, "hardware group size must match the MX formats");

  LayerLatency lat;
  const std::uint64_t k1 = hw.group_size;

  if (layer.kind == LayerKind::linear) {
    const auto* lp = std::get_if<LinearLayerPlan>(&plan);
    require(lp != nullptr, Errc::invalid_argument, "linear layer requires a linear plan");
    require(lp->channel_count() == layer.k, Errc::invalid_argument,
            "plan channel count does not match layer K: " + layer.id);

    const std::uint64_t split = padded_outlier_channels(lp->n_hi, layer.k, specs.lo);
    std::vector<RegionK> regions;
    if (split > 0) regions.push_back({PrecisionPair::mx6_mx9, split});
    if (layer.k - split > 0) regions.push_back({PrecisionPair::mx6_mx6, layer.k - split});
    lat.cycles = gemm_cycles(layer.m, layer.k, layer.n, regions, hw);

    GemmBytes b = linear_bytes(layer, lp->n_hi, lp->p1, specs);
    lat.bytes = b.total();
    lat.ops = 2.0 * double(layer.m) * double(layer.k) * double(layer.n);

    const std::uint64_t g_total = ceil_div(layer.k, k1);
    const std::uint64_t a = hw.array_dim;
    const std::uint64_t tile_set = a * (ceil_div(split, k1) * group_bytes(specs.hi) +
                                        (g_total - ceil_div(split, k1)) * group_bytes(specs.lo)) +
                                   a * g_total * group_bytes(specs.lo) + a * a * 4;
    lat.capacity_exceeded = tile_set > hw.on_chip_bytes;
  } else {
    const auto* ap = std::get_if<AttentionPlan>(&plan);
    require(ap != nullptr, Errc::invalid_argument, "attention layer requires an attention plan");
    require(ap->head_count() == layer.heads, Errc::invalid_argument,
            "plan head count does not match layer heads: " + layer.id);

    const std::uint64_t seq = layer.seq_len;
    const std::uint64_t dim = layer.head_dim;
    std::uint64_t cycles = 0;
    std::uint64_t bytes = 0;
    std::uint64_t tile_set_max = 0;
    for (std::uint64_t h = 0; h < layer.heads; ++h) {
      const Precision p = ap->head_precision[h];
      const PrecisionPair pair = make_pair(p, p);
      const MxFormatSpec& spec = p == Precision::mx9 ? specs.hi : specs.lo;
      // Q K^T then (softmax) V, summed per head.
      const RegionK qk{pair, dim};
      const RegionK av{pair, seq};
      cycles += gemm_cycles(seq, dim, seq, std::span<const RegionK>(&qk, 1), hw);
      cycles += gemm_cycles(seq, seq, dim, std::span<const RegionK>(&av, 1), hw);
      // Off-chip traffic: Q, K, V in, output out; the score/softmax matrix
      // stays on chip between the two chained GEMMs.
      const std::uint64_t g_d = ceil_div(dim, k1);
      const std::uint64_t g_l = ceil_div(seq, k1);
      bytes += 3 * seq * g_d * group_bytes(spec);  // Q, K, and output rows
      bytes += dim * g_l * group_bytes(spec);      // V columns
      const std::uint64_t a = hw.array_dim;
      tile_set_max = std::max(
          tile_set_max, a * g_d * group_bytes(spec) + a * g_d * group_bytes(spec) + a * a * 4);
    }
    lat.cycles = cycles;
    lat.bytes = bytes;
    lat.ops = 4.0 * double(layer.heads) * double(seq) * double(seq) * double(dim);
    lat.capacity_exceeded = tile_set_max > hw.on_chip_bytes;
  }

  lat.compute_s = double(lat.cycles) / hw.frequency_hz;
  lat.memory_s = double(lat.bytes) / hw.mem_bandwidth_bytes_per_s;
  lat.bound = lat.compute_s >= lat.memory_s ? BoundKind::compute : BoundKind::memory;
  return lat;
}

LatencyReport model_latency(const WorkloadSpec& workload, const PrecisionPlanSet& plans,
                            const HardwareConfig& hw, const LatencySpecs& specs) {
  workload.validate();
  LatencyReport report;
  for (std::uint32_t t = 0; t < workload.timesteps; ++t) {
    for (const auto& layer : workload.layers) {
      const LayerPlan& plan = plans.at(layer.id, t);
      LayerLatency lat = layer_latency(layer, plan, hw, specs);
      report.total_seconds += lat.seconds();
      report.total_bytes += lat.bytes;
      report.total_ops += lat.ops;
      report.rows.push_back({layer.id, t, lat});
    }
  }
  report.tops_achieved =
      report.total_seconds > 0.0 ? report.total_ops / report.total_seconds / 1e12 : 0.0;
  return report;
}

double peak_ops_per_s(const HardwareConfig& hw, PrecisionPair pair) {
  hw.validate();
  return double(hw.num_arrays) * double(hw.array_dim) * double(hw.array_dim) * hw.frequency_hz *
         2.0 * (double(hw.group_size) / double(hw.cycles_per_group(pair)));
}

std::vector<SpeedupRow> speedup_report(const LatencyReport& report,
                                       const std::map<std::string, double>& baselines) {
  require(!baselines.empty(), Errc::invalid_argument, "baseline latency map is empty");
  require(report.total_seconds > 0.0, Errc::invalid_argument,
          "simulated latency must be positive for speedup");
  std::vector<SpeedupRow> rows;
  for (const auto& [name, base_s] : baselines) {
    require(base_s > 0.0 && std::isfinite(base_s), Errc::invalid_argument,
            "baseline latency must be positive: " + name);
    rows.push_back({name, base_s, report.total_seconds, base_s / report.total_seconds});
  }
  return rows;
}

namespace {

nlohmann::json load_json(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, std::string("cannot open ") + what + " file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::bad_header, std::string(what) + " parse error: " + e.what());
  }
  return j;
}

void dump_json(const nlohmann::json& j, const std::filesystem::path& path, const char* what) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, std::string("cannot write ") + what + " file");
  out << j.dump(2) << "\n";
  require(out.good(), Errc::io_failure, std::string(what) + " write failed");
}

nlohmann::json provenance(const std::string& config_hash) {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"config_hash", config_hash}};
}

}  // namespace

WorkloadSpec read_workload(const std::filesystem::path& path) {
  nlohmann::json j = load_json(path, "workload");
  require(j.value("type", "workload") == "workload", Errc::bad_header, "not a workload file");
  WorkloadSpec w;
  w.timesteps = j.value("timesteps", 25u);
  for (const auto& e : j.at("layers")) {
    WorkloadLayer l;
    l.id = e.at("id").get<std::string>();
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "linear") {
      l.kind = LayerKind::linear;
      l.m = e.at("m").get<std::uint64_t>();
      l.k = e.at("k").get<std::uint64_t>();
      l.n = e.at("n").get<std::uint64_t>();
    } else if (kind == "attention") {
      l.kind = LayerKind::attention;
      l.heads = e.at("heads").get<std::uint64_t>();
      l.seq_len = e.at("seq_len").get<std::uint64_t>();
      l.head_dim = e.at("head_dim").get<std::uint64_t>();
    } else {
      fail(Errc::bad_header, "unknown layer kind: " + kind);
    }
    w.layers.push_back(std::move(l));
  }
  w.validate();
  return w;
}

void write_workload(const WorkloadSpec& w, const std::filesystem::path& path,
                    const std::string& config_hash) {
  w.validate();
  nlohmann::json j;
  j["provenance"] = provenance(config_hash);
  j["type"] = "workload";
  j["timesteps"] = w.timesteps;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : w.layers) {
    nlohmann::json e;
    e["id"] = l.id;
    if (l.kind == LayerKind::linear) {
      e["kind"] = "linear";
      e["m"] = l.m;
      e["k"] = l.k;
      e["n"] = l.n;
    } else {
      e["kind"] = "attention";
      e["heads"] = l.heads;
      e["seq_len"] = l.seq_len;
      e["head_dim"] = l.head_dim;
    }
    j["layers"].push_back(e);
  }
  dump_json(j, path, "workload");
}

HardwareConfig read_hardware(const std::filesystem::path& path) {
  nlohmann::json j = load_json(path, "hardware");
  require(j.value("type", "hardware") == "hardware", Errc::bad_header, "not a hardware file");
  HardwareConfig hw;
  hw.array_dim = j.value("array_dim", hw.array_dim);
  hw.num_arrays = j.value("num_arrays", hw.num_arrays);
  hw.frequency_hz = j.value("frequency_hz", hw.frequency_hz);
  hw.mem_bandwidth_bytes_per_s =
      j.value("mem_bandwidth_bytes_per_s", hw.mem_bandwidth_bytes_per_s);
  hw.on_chip_bytes = j.value("on_chip_bytes", hw.on_chip_bytes);
  hw.group_size = j.value("group_size", hw.group_size);
  if (j.contains("cycles_per_group")) {
    const auto& c = j["cycles_per_group"];
    hw.cycles_mx6_mx6 = c.value("mx6_mx6", hw.cycles_mx6_mx6);
    hw.cycles_mx6_mx9 = c.value("mx6_mx9", hw.cycles_mx6_mx9);
    hw.cycles_mx9_mx9 = c.value("mx9_mx9", hw.cycles_mx9_mx9);
  }
  hw.validate();
  return hw;
}

void write_hardware(const HardwareConfig& hw, const std::filesystem::path& path,
                    const std::string& config_hash) {
  hw.validate();
  nlohmann::json j;
  j["provenance"] = provenance(config_hash);
  j["type"] = "hardware";
  j["array_dim"] = hw.array_dim;
  j["num_arrays"] = hw.num_arrays;
  j["frequency_hz"] = hw.frequency_hz;
  j["mem_bandwidth_bytes_per_s"] = hw.mem_bandwidth_bytes_per_s;
  j["on_chip_bytes"] = hw.on_chip_bytes;
  j["group_size"] = hw.group_size;
  j["cycles_per_group"] = {{"mx6_mx6", hw.cycles_mx6_mx6},
                           {"mx6_mx9", hw.cycles_mx6_mx9},
                           {"mx9_mx9", hw.cycles_mx9_mx9}};
  dump_json(j, path, "hardware");
}

void write_latency_report(const LatencyReport& r, const HardwareConfig& hw,
                          const std::filesystem::path& path, const std::string& config_hash) {
  nlohmann::json j;
  j["provenance"] = provenance(config_hash);
  j["type"] = "latency_report";
  j["hardware"] = {{"array_dim", hw.array_dim},
                   {"num_arrays", hw.num_arrays},
                   {"frequency_hz", hw.frequency_hz},
                   {"mem_bandwidth_bytes_per_s", hw.mem_bandwidth_bytes_per_s},
                   {"on_chip_bytes", hw.on_chip_bytes},
                   {"group_size", hw.group_size},
                   {"cycles_per_group",
                    {{"mx6_mx6", hw.cycles_mx6_mx6},
                     {"mx6_mx9", hw.cycles_mx6_mx9},
                     {"mx9_mx9", hw.cycles_mx9_mx9}}}};
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json e;
    e["layer"] = row.layer;
    e["timestep"] = row.timestep;
    e["compute_s"] = row.latency.compute_s;
    e["memory_s"] = row.latency.memory_s;
    e["bound"] = row.latency.bound == BoundKind::compute ? "compute" : "memory";
    e["cycles"] = row.latency.cycles;
    e["bytes"] = row.latency.bytes;
    e["seconds"] = row.latency.seconds();
    e["capacity_exceeded"] = row.latency.capacity_exceeded;
    j["rows"].push_back(e);
  }
  j["total_seconds"] = r.total_seconds;
  j["total_bytes"] = r.total_bytes;
  j["total_ops"] = r.total_ops;
  j["tops_achieved"] = r.tops_achieved;
  dump_json(j, path, "latency report");
}

}  // namespace mixmx
