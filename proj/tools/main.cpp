// SPDX-License-Identifier: Apache-2.0
//
// mixmx command-line tool: quantize | plan | emulate | simulate | sweep | report
//
// Exit codes: 0 success, 1 I/O failure, 2 validation failure, 3 internal error.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mixmx/accel_sim.hpp"
#include "mixmx/mp_gemm.hpp"
#include "mixmx/mx_codec.hpp"
#include "mixmx/planner.hpp"
#include "mixmx/sweep.hpp"
#include "mixmx/tensor_io.hpp"
#include "mixmx/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mixmx;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::uint64_t seed = 0;  // reserved for synthetic-fixture commands; recorded in provenance
  bool quiet = false;
  json config;  // parsed --config file, may supply "hardware" / "sweep" sections
};

// Deterministic hash of the effective command configuration, embedded in
// every output file so reruns with identical inputs are byte-stable.
std::string config_hash(const std::string& command, const json& params, const GlobalOpts& g) {
  json all;
  all["command"] = command;
  all["params"] = params;
  all["seed"] = g.seed;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(all.dump())));
  return buf;
}

json provenance_block(const std::string& hash) {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"config_hash", hash}};
}

void load_global_config(GlobalOpts& g) {
  if (g.config_path.empty()) return;
  std::ifstream in(g.config_path);
  require(in.good(), Errc::io_failure, "cannot open config file " + g.config_path);
  try {
    in >> g.config;
  } catch (const json::exception& e) {
    fail(Errc::bad_header, std::string("config parse error: ") + e.what());
  }
}

HardwareConfig hardware_from_json(const json& j) {
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

HardwareConfig resolve_hardware(const std::string& hw_path, const GlobalOpts& g) {
  if (!hw_path.empty()) return read_hardware(hw_path);
  if (g.config.contains("hardware")) return hardware_from_json(g.config["hardware"]);
  return HardwareConfig{};
}

std::vector<double> parse_grid(const std::string& csv, const char* what) {
  std::vector<double> grid;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      grid.push_back(std::stod(item));
    } catch (const std::exception&) {
      fail(Errc::invalid_argument, std::string("bad ") + what + " grid value: " + item);
    }
  }
  require(!grid.empty(), Errc::invalid_argument, std::string(what) + " grid is empty");
  return grid;
}

void emit(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot write " + path);
  out << j.dump(2) << "\n";
  require(out.good(), Errc::io_failure, "write failed: " + path);
}

// ---- quantize ----

int cmd_quantize(const std::string& input, const std::string& output, int axis,
                 const std::string& format, const GlobalOpts& g) {
  const Precision prec = precision_from_name(format);
  const MxFormatSpec spec = spec_for(prec);
  FloatTensor t = read_tensor(input);
  const std::size_t ax = axis < 0 ? t.rank() - 1 : std::size_t(axis);
  ErrorStats stats = quant_error_stats(t, ax, spec);
  MxTensor mt = encode_tensor(t, ax, spec);
  write_mx_tensor(mt, output);

  json params = {{"input", input}, {"output", output}, {"axis", axis}, {"format", format}};
  json out;
  out["provenance"] = provenance_block(config_hash("quantize", params, g));
  out["type"] = "quant_stats";
  out["format"] = format;
  out["axis"] = ax;
  out["groups"] = mt.groups.size();
  out["packed_group_bytes"] = spec.packed_group_bytes();
  out["max_abs_err"] = stats.max_abs_err;
  out["mse"] = stats.mse;
  out["rel_frobenius"] = stats.rel_frobenius;
  out["saturation_count"] = stats.saturation_count;
  if (!g.quiet) std::cout << out.dump(2) << "\n";
  return 0;
}

// ---- plan ----

int cmd_plan(const std::string& bundle_dir, const std::string& workload_path, double p1, double p2,
             const std::string& scope_name, const std::string& output, const GlobalOpts& g) {
  require(scope_name == "per-timestep" || scope_name == "averaged", Errc::invalid_argument,
          "--scope must be per-timestep or averaged");
  const TimestepScope scope =
      scope_name == "averaged" ? TimestepScope::averaged : TimestepScope::per_timestep;
  CalibrationBundle bundle = load_bundle(bundle_dir);
  WorkloadSpec workload = read_workload(workload_path);

  PrecisionPlanSet plans;
  for (const auto& layer : workload.layers) {
    for (std::uint32_t t = 0; t < workload.timesteps; ++t) {
      if (layer.kind == LayerKind::linear) {
        ChannelStats stats = scope == TimestepScope::per_timestep
                                 ? channel_magnitudes(bundle, layer.id, t)
                                 : channel_magnitudes_averaged(bundle, layer.id);
        require(stats.channel_count() == layer.k, Errc::invalid_argument,
                "calibration channel count does not match workload K for layer " + layer.id);
        plans.entries.emplace(PlanKey{layer.id, t}, build_linear_plan(stats, p1));
      } else {
        auto stats = scope == TimestepScope::per_timestep
                         ? head_magnitudes(bundle, layer.id, t)
                         : head_magnitudes_averaged(bundle, layer.id);
        require(stats.size() == layer.heads, Errc::invalid_argument,
                "calibration head count does not match workload for layer " + layer.id);
        plans.entries.emplace(PlanKey{layer.id, t}, build_attention_plan(stats, p2));
      }
    }
  }

  json params = {{"bundle", bundle_dir}, {"workload", workload_path}, {"p1", p1},
                 {"p2", p2},             {"scope", scope_name},       {"output", output}};
  write_plan_set(plans, output, config_hash("plan", params, g));
  if (!g.quiet)
    std::cout << "plan: " << plans.entries.size() << " entries -> " << output << "\n";
  return 0;
}

// ---- emulate ----

int cmd_emulate(const std::string& plan_path, const std::string& layer, std::uint32_t timestep,
                const std::string& activation, const std::string& weight, const std::string& query,
                const std::string& key, const std::string& value, const std::string& output,
                const std::string& output_tensor, const GlobalOpts& g) {
  PrecisionPlanSet plans = read_plan_set(plan_path);
  const LayerPlan& plan = plans.at(layer, timestep);

  MixedGemmResult res;
  if (!activation.empty() || !weight.empty()) {
    require(!activation.empty() && !weight.empty(), Errc::invalid_argument,
            "linear emulation needs both --activation and --weight");
    const auto* lp = std::get_if<LinearLayerPlan>(&plan);
    require(lp != nullptr, Errc::invalid_argument, "plan entry is not a linear plan");
    res = linear_forward(read_tensor(activation), read_tensor(weight), *lp);
  } else {
    require(!query.empty() && !key.empty() && !value.empty(), Errc::invalid_argument,
            "attention emulation needs --query, --key and --value");
    const auto* ap = std::get_if<AttentionPlan>(&plan);
    require(ap != nullptr, Errc::invalid_argument, "plan entry is not an attention plan");
    res = attention_forward(read_tensor(query), read_tensor(key), read_tensor(value), *ap);
  }

  if (!output_tensor.empty()) write_tensor(res.output, output_tensor);

  json params = {{"plan", plan_path},        {"layer", layer},   {"timestep", timestep},
                 {"activation", activation}, {"weight", weight}, {"query", query},
                 {"key", key},               {"value", value},   {"output", output},
                 {"output_tensor", output_tensor}};
  json out;
  out["provenance"] = provenance_block(config_hash("emulate", params, g));
  out["type"] = "emulate_result";
  out["layer"] = layer;
  out["timestep"] = timestep;
  out["rel_frobenius"] = res.rel_frobenius;
  out["max_abs"] = res.max_abs;
  out["groups"] = {{"mx6_mx6", res.groups.mx6_mx6},
                   {"mx6_mx9", res.groups.mx6_mx9},
                   {"mx9_mx9", res.groups.mx9_mx9}};
  emit(out, output);
  if (!g.quiet)
    std::cout << "emulate: rel_frobenius " << res.rel_frobenius << " -> " << output << "\n";
  return 0;
}

// ---- simulate ----

int cmd_simulate(const std::string& workload_path, const std::string& plan_path,
                 const std::string& hw_path, const std::string& output, const GlobalOpts& g) {
  WorkloadSpec workload = read_workload(workload_path);
  PrecisionPlanSet plans = read_plan_set(plan_path);
  HardwareConfig hw = resolve_hardware(hw_path, g);
  LatencyReport report = model_latency(workload, plans, hw);

  json params = {{"workload", workload_path}, {"plan", plan_path}, {"hardware", hw_path},
                 {"output", output}};
  write_latency_report(report, hw, output, config_hash("simulate", params, g));
  if (!g.quiet)
    std::cout << "simulate: total " << report.total_seconds << " s -> " << output << "\n";
  return 0;
}

// ---- sweep ----

int cmd_sweep(const std::string& bundle_dir, const std::string& workload_path,
              const std::string& hw_path, const std::string& p1_grid, const std::string& p2_grid,
              double alpha, const std::string& scope_name, const std::string& output,
              const GlobalOpts& g) {
  CalibrationBundle bundle = load_bundle(bundle_dir);
  WorkloadSpec workload = read_workload(workload_path);
  HardwareConfig hw = resolve_hardware(hw_path, g);

  SweepConfig config;
  if (g.config.contains("sweep")) {
    const auto& s = g.config["sweep"];
    if (s.contains("p1_grid")) config.p1_grid = s["p1_grid"].get<std::vector<double>>();
    if (s.contains("p2_grid")) config.p2_grid = s["p2_grid"].get<std::vector<double>>();
    if (s.contains("alpha")) config.alpha = s["alpha"].get<double>();
  }
  if (!p1_grid.empty()) config.p1_grid = parse_grid(p1_grid, "p1");
  if (!p2_grid.empty()) config.p2_grid = parse_grid(p2_grid, "p2");
  if (alpha >= 0.0) config.alpha = alpha;
  require(scope_name == "per-timestep" || scope_name == "averaged", Errc::invalid_argument,
          "--scope must be per-timestep or averaged");
  config.scope = scope_name == "averaged" ? TimestepScope::averaged : TimestepScope::per_timestep;

  SweepResult result = run_sweep(config, bundle, workload, hw);

  json params = {{"bundle", bundle_dir},      {"workload", workload_path}, {"hardware", hw_path},
                 {"p1_grid", config.p1_grid}, {"p2_grid", config.p2_grid},
                 {"alpha", config.alpha},     {"scope", scope_name},       {"output", output}};
  write_sweep_result(result, output, config_hash("sweep", params, g));
  if (!g.quiet)
    std::cout << "sweep: chosen (p1, p2) = (" << result.chosen().p1 << ", " << result.chosen().p2
              << ") -> " << output << "\n";
  return 0;
}

// ---- report ----

json load_typed(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(Errc::bad_header, std::string("report input parse error: ") + e.what());
  }
  require(j.contains("type"), Errc::bad_header, "input file carries no 'type' field");
  return j;
}

void print_latency_table(const json& j, std::ostream& os) {
  os << "layer                 timesteps      compute_s       memory_s  bound\n";
  os << "--------------------------------------------------------------------\n";
  // aggregate per layer over timesteps, preserving first-seen order
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, double>> agg;  // layer -> (compute, memory)
  std::map<std::string, int> steps;
  for (const auto& row : j.at("rows")) {
    const std::string layer = row.at("layer").get<std::string>();
    if (agg.find(layer) == agg.end()) order.push_back(layer);
    agg[layer].first += row.at("compute_s").get<double>();
    agg[layer].second += row.at("memory_s").get<double>();
    steps[layer] += 1;
  }
  char buf[160];
  for (const auto& layer : order) {
    const auto& cm = agg[layer];
    const char* bound = cm.first >= cm.second ? "compute" : "memory";
    std::snprintf(buf, sizeof buf, "%-21s %9d %14.6e %14.6e  %s\n", layer.c_str(), steps[layer],
                  cm.first, cm.second, bound);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "TOTAL %.6e s, %.3f TOPS achieved, %llu bytes\n",
                j.at("total_seconds").get<double>(), j.at("tops_achieved").get<double>(),
                static_cast<unsigned long long>(j.at("total_bytes").get<std::uint64_t>()));
  os << buf;
}

void print_speedup_table(const json& report, const std::string& baselines_path,
                         std::ostream& os) {
  std::ifstream in(baselines_path);
  require(in.good(), Errc::io_failure, "cannot open baselines file " + baselines_path);
  json b;
  try {
    in >> b;
  } catch (const json::exception& e) {
    fail(Errc::bad_header, std::string("baselines parse error: ") + e.what());
  }
  require(b.is_object() && !b.empty(), Errc::invalid_argument,
          "baselines file must be a non-empty object of name -> seconds");
  const double sim = report.at("total_seconds").get<double>();
  require(sim > 0.0, Errc::invalid_argument, "simulated latency must be positive for speedup");
  os << "\nbaseline              baseline_s    simulated_s    speedup\n";
  os << "----------------------------------------------------------\n";
  char buf[160];
  for (const auto& [name, val] : b.items()) {
    const double base = val.get<double>();
    require(base > 0.0, Errc::invalid_argument, "baseline latency must be positive: " + name);
    std::snprintf(buf, sizeof buf, "%-20s %12.4g %14.6e %10.3f\n", name.c_str(), base, sim,
                  base / sim);
    os << buf;
  }
}

void print_sweep_table(const json& j, std::ostream& os) {
  os << "   p1     p2        quality      latency_s      objective  flags\n";
  os << "-----------------------------------------------------------------\n";
  const auto chosen_index = j.at("chosen_index").get<std::size_t>();
  const auto& table = j.at("table");
  require(table.is_array() && !table.empty(), Errc::bad_header, "sweep table is empty");
  require(chosen_index < table.size(), Errc::bad_header, "chosen_index out of range");

  // self-check: re-derive the argmin from the emitted table
  std::size_t best = 0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto& a = table[i];
    const auto& b = table[best];
    const double ao = a.at("objective").get<double>(), bo = b.at("objective").get<double>();
    const double al = a.at("latency_s").get<double>(), bl = b.at("latency_s").get<double>();
    const double ap1 = a.at("p1").get<double>(), bp1 = b.at("p1").get<double>();
    const double ap2 = a.at("p2").get<double>(), bp2 = b.at("p2").get<double>();
    if (ao < bo ||
        (ao == bo && (al < bl || (al == bl && (ap1 < bp1 || (ap1 == bp1 && ap2 < bp2))))))
      best = i;
  }
  require(best == chosen_index, Errc::invalid_argument,
          "sweep result self-check failed: chosen config is not the argmin of the table");

  char buf[200];
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& e = table[i];
    std::string flags;
    if (i == chosen_index) flags += "chosen ";
    if (e.at("pareto").get<bool>()) flags += "pareto";
    std::snprintf(buf, sizeof buf, "%5.4g %6.4g %14.6e %14.6e %14.6e  %s\n",
                  e.at("p1").get<double>(), e.at("p2").get<double>(),
                  e.at("quality").get<double>(), e.at("latency_s").get<double>(),
                  e.at("objective").get<double>(), flags.c_str());
    os << buf;
  }
  os << "alpha " << j.at("provenance").at("alpha").get<double>() << ", metric "
     << j.at("provenance").at("metric").get<std::string>() << "\n";
}

int cmd_report(const std::string& input, const std::string& baselines, const std::string& output,
               const GlobalOpts& g) {
  json j = load_typed(input);
  const std::string type = j.at("type").get<std::string>();

  std::ostringstream os;
  if (type == "latency_report") {
    print_latency_table(j, os);
    if (!baselines.empty()) print_speedup_table(j, baselines, os);
  } else if (type == "sweep_result") {
    print_sweep_table(j, os);
  } else if (type == "emulate_result" || type == "quant_stats") {
    os << j.dump(2) << "\n";
  } else {
    fail(Errc::bad_header, "unsupported report input type: " + type);
  }

  if (!output.empty()) {
    std::ofstream out(output, std::ios::trunc);
    require(out.good(), Errc::io_failure, "cannot write " + output);
    out << os.str();
    require(out.good(), Errc::io_failure, "write failed: " + output);
  }
  if (!g.quiet) std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bit-exact mixed-precision MX quantization toolkit and latency simulator"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON config supplying hardware/sweep defaults");
  app.add_option("--seed", g.seed, "seed recorded in provenance for synthetic fixtures");
  app.add_flag("--quiet", g.quiet, "suppress non-essential output");

  // quantize
  auto* quantize = app.add_subcommand("quantize", "encode an MXT1 tensor as packed MX groups");
  std::string q_input, q_output, q_format = "mx6";
  int q_axis = -1;
  quantize->add_option("--input", q_input, "input MXT1 tensor")->required();
  quantize->add_option("--output", q_output, "output packed MX file")->required();
  quantize->add_option("--axis", q_axis, "reduction axis (-1 = last)");
  quantize->add_option("--format", q_format, "mx6 | mx9")->check(CLI::IsMember({"mx6", "mx9"}));

  // plan
  auto* plan = app.add_subcommand("plan", "build mixed-precision plans from a calibration bundle");
  std::string p_bundle, p_workload, p_output, p_scope = "per-timestep";
  double p_p1 = 0.0, p_p2 = 0.0;
  plan->add_option("--bundle", p_bundle, "calibration bundle directory")->required();
  plan->add_option("--workload", p_workload, "workload JSON")->required();
  plan->add_option("--p1", p_p1, "percent of linear channels at MX9");
  plan->add_option("--p2", p_p2, "percent of attention heads at MX9");
  plan->add_option("--scope", p_scope, "per-timestep | averaged");
  plan->add_option("--output", p_output, "output plan JSON")->required();

  // emulate
  auto* emulate =
      app.add_subcommand("emulate", "run one layer through the mixed-precision datapath");
  std::string e_plan, e_layer, e_activation, e_weight, e_query, e_key, e_value, e_output,
      e_output_tensor;
  std::uint32_t e_timestep = 0;
  emulate->add_option("--plan", e_plan, "plan JSON")->required();
  emulate->add_option("--layer", e_layer, "layer id")->required();
  emulate->add_option("--timestep", e_timestep, "timestep of the plan entry");
  emulate->add_option("--activation", e_activation, "activation MXT1 (linear)");
  emulate->add_option("--weight", e_weight, "weight MXT1 (linear)");
  emulate->add_option("--query", e_query, "query MXT1 (attention)");
  emulate->add_option("--key", e_key, "key MXT1 (attention)");
  emulate->add_option("--value", e_value, "value MXT1 (attention)");
  emulate->add_option("--output", e_output, "output result JSON")->required();
  emulate->add_option("--output-tensor", e_output_tensor, "optional MXT1 output tensor");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "analytical latency model of a workload");
  std::string s_workload, s_plan, s_hw, s_output;
  simulate->add_option("--workload", s_workload, "workload JSON")->required();
  simulate->add_option("--plan", s_plan, "plan JSON")->required();
  simulate->add_option("--hardware", s_hw, "hardware JSON (defaults when absent)");
  simulate->add_option("--output", s_output, "output latency report JSON")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "grid sweep over (p1, p2)");
  std::string w_bundle, w_workload, w_hw, w_p1_grid, w_p2_grid, w_output, w_scope = "per-timestep";
  double w_alpha = -1.0;
  sweep->add_option("--bundle", w_bundle, "calibration bundle directory")->required();
  sweep->add_option("--workload", w_workload, "workload JSON")->required();
  sweep->add_option("--hardware", w_hw, "hardware JSON");
  sweep->add_option("--p1-grid", w_p1_grid, "comma-separated p1 grid");
  sweep->add_option("--p2-grid", w_p2_grid, "comma-separated p2 grid");
  sweep->add_option("--alpha", w_alpha, "latency exponent (default 0.15)");
  sweep->add_option("--scope", w_scope, "per-timestep | averaged");
  sweep->add_option("--output", w_output, "output sweep result JSON")->required();

  // report
  auto* report = app.add_subcommand("report", "render result files as text tables");
  std::string r_input, r_baselines, r_output;
  report->add_option("--input", r_input, "result JSON (latency report, sweep result, ...)")
      ->required();
  report->add_option("--baselines", r_baselines, "JSON map of baseline name -> seconds");
  report->add_option("--output", r_output, "write the table to a file as well");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    load_global_config(g);
    if (quantize->parsed()) return cmd_quantize(q_input, q_output, q_axis, q_format, g);
    if (plan->parsed()) return cmd_plan(p_bundle, p_workload, p_p1, p_p2, p_scope, p_output, g);
    if (emulate->parsed())
      return cmd_emulate(e_plan, e_layer, e_timestep, e_activation, e_weight, e_query, e_key,
                         e_value, e_output, e_output_tensor, g);
    if (simulate->parsed()) return cmd_simulate(s_workload, s_plan, s_hw, s_output, g);
    if (sweep->parsed())
      return cmd_sweep(w_bundle, w_workload, w_hw, w_p1_grid, w_p2_grid, w_alpha, w_scope,
                       w_output, g);
    if (report->parsed()) return cmd_report(r_input, r_baselines, r_output, g);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const MxError& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.code() == Errc::io_failure) return 1;
    if (e.code() == Errc::internal) return 3;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
