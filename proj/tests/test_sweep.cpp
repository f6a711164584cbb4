// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "doctest.h"
#include "mixmx/sweep.hpp"
#include "test_util.hpp"

using namespace mixmx;

namespace {

// Small fixture: one linear layer with planted outliers, one attention layer.
struct Fixture {
  CalibrationBundle bundle;
  WorkloadSpec workload;
};

Fixture make_fixture(const std::string& name, std::uint64_t seed, std::uint32_t timesteps = 1,
                     bool with_attention = false) {
  auto dir = testutil::scratch_dir(name);
  auto sb = testutil::write_synth_bundle(dir, seed, timesteps, 8, 32, 8, with_attention);
  return Fixture{load_bundle(dir), sb.workload};
}

std::size_t independent_argmin(const SweepResult& r) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.table.size(); ++i) {
    const auto& a = r.table[i];
    const auto& b = r.table[best];
    if (a.objective < b.objective ||
        (a.objective == b.objective &&
         (a.latency_s < b.latency_s ||
          (a.latency_s == b.latency_s &&
           (a.p1 < b.p1 || (a.p1 == b.p1 && a.p2 < b.p2))))))
      best = i;
  }
  return best;
}

}  // namespace

TEST_CASE("objective arithmetic") {
  CHECK(sweep_objective(7.25, 123.0, 0.0) == 7.25);
  CHECK(sweep_objective(72.48, 1.0, 0.15) == 72.48);
  CHECK(sweep_objective(10.0, 8.0, 0.15) ==
        doctest::Approx(10.0 * std::pow(8.0, 0.15)).epsilon(1e-15));
  CHECK(sweep_objective(10.0, 8.0, 0.15) == doctest::Approx(13.6604).epsilon(1e-3));

  CHECK_THROWS_AS(sweep_objective(1.0, 0.0, 0.15), MxError);
  CHECK_THROWS_AS(sweep_objective(1.0, -2.0, 0.15), MxError);
  CHECK_THROWS_AS(sweep_objective(-1.0, 1.0, 0.15), MxError);
}

TEST_CASE("objective is increasing in quality and latency") {
  CHECK(sweep_objective(2.0, 5.0, 0.15) > sweep_objective(1.0, 5.0, 0.15));
  CHECK(sweep_objective(1.0, 9.0, 0.15) > sweep_objective(1.0, 5.0, 0.15));
  CHECK(sweep_objective(1.0, 9.0, 0.0) == sweep_objective(1.0, 5.0, 0.0));
}

TEST_CASE("evaluate_config endpoints on a planted fixture") {
  Fixture f = make_fixture("sweep_eval", 71);
  HardwareConfig hw;
  SweepConfig cfg;

  auto full = evaluate_config(100.0, 100.0, f.bundle, f.workload, hw, cfg);
  auto none = evaluate_config(0.0, 0.0, f.bundle, f.workload, hw, cfg);
  auto mid = evaluate_config(25.0, 0.0, f.bundle, f.workload, hw, cfg);

  CHECK(full.quality <= none.quality);
  CHECK(full.quality <= mid.quality);
  CHECK(none.latency_s <= mid.latency_s);
  CHECK(mid.latency_s <= full.latency_s);
  // planted outliers: covering them beats p1 = 0 on quality
  CHECK(mid.quality < none.quality);
}

TEST_CASE("run_sweep: single-point grid and argmin self-consistency") {
  Fixture f = make_fixture("sweep_run", 72);
  HardwareConfig hw;

  SweepConfig single;
  single.p1_grid = {5.0};
  single.p2_grid = {0.0};
  SweepResult r1 = run_sweep(single, f.bundle, f.workload, hw);
  REQUIRE(r1.table.size() == 1);
  CHECK(r1.chosen_index == 0);

  SweepConfig grid;
  grid.p1_grid = {0.0, 10.0, 25.0, 100.0};
  grid.p2_grid = {0.0, 50.0};
  SweepResult r = run_sweep(grid, f.bundle, f.workload, hw);
  REQUIRE(r.table.size() == 8);
  CHECK(r.chosen_index == independent_argmin(r));

  // pareto flags consistent with dominance
  for (const auto& e : r.table) {
    bool dominated = false;
    for (const auto& o : r.table)
      if (o.quality <= e.quality && o.latency_s <= e.latency_s &&
          (o.quality < e.quality || o.latency_s < e.latency_s))
        dominated = true;
    CHECK(e.pareto == !dominated);
  }

  SweepConfig empty;
  empty.p1_grid = {};
  CHECK_THROWS_AS(run_sweep(empty, f.bundle, f.workload, hw), MxError);
}

TEST_CASE("alpha monotonicity of the chosen latency") {
  Fixture f = make_fixture("sweep_alpha", 73);
  HardwareConfig hw;
  SweepConfig cfg;
  cfg.p1_grid = {0.0, 12.5, 50.0, 100.0};
  cfg.p2_grid = {0.0};

  double prev = std::numeric_limits<double>::infinity();
  for (double alpha : {0.0, 0.15, 0.5, 2.0}) {
    cfg.alpha = alpha;
    SweepResult r = run_sweep(cfg, f.bundle, f.workload, hw);
    CHECK(r.chosen().latency_s <= prev);
    prev = r.chosen().latency_s;
  }
}

TEST_CASE("planted outliers pull the chosen p1 above zero at the default alpha") {
  Fixture f = make_fixture("sweep_planted", 74);
  HardwareConfig hw;
  SweepConfig cfg;  // alpha 0.15
  cfg.p1_grid = {0.0, 1.0, 2.0, 5.0, 10.0, 20.0};
  cfg.p2_grid = {0.0};
  SweepResult r = run_sweep(cfg, f.bundle, f.workload, hw);
  CHECK(r.chosen().p1 > 0.0);
}

TEST_CASE("sweep with attention layers and averaged scope") {
  Fixture f = make_fixture("sweep_attn", 75, 2, true);
  HardwareConfig hw;
  SweepConfig cfg;
  cfg.p1_grid = {0.0, 10.0};
  cfg.p2_grid = {0.0, 50.0};
  cfg.scope = TimestepScope::averaged;
  SweepResult r = run_sweep(cfg, f.bundle, f.workload, hw);
  CHECK(r.table.size() == 4);
  CHECK(r.chosen_index == independent_argmin(r));
}

TEST_CASE("sweep result JSON round trip") {
  Fixture f = make_fixture("sweep_json", 76);
  HardwareConfig hw;
  SweepConfig cfg;
  cfg.p1_grid = {0.0, 25.0};
  cfg.p2_grid = {0.0};
  SweepResult r = run_sweep(cfg, f.bundle, f.workload, hw);

  auto dir = testutil::scratch_dir("sweep_json_out");
  write_sweep_result(r, dir / "s.json", "beef");
  SweepResult back = read_sweep_result(dir / "s.json");
  REQUIRE(back.table.size() == r.table.size());
  CHECK(back.chosen_index == r.chosen_index);
  CHECK(back.alpha == r.alpha);
  for (std::size_t i = 0; i < r.table.size(); ++i) {
    CHECK(back.table[i].p1 == r.table[i].p1);
    CHECK(back.table[i].quality == r.table[i].quality);
    CHECK(back.table[i].latency_s == r.table[i].latency_s);
    CHECK(back.table[i].objective == r.table[i].objective);
  }
}

TEST_CASE("determinism: identical sweeps produce identical tables") {
  Fixture f = make_fixture("sweep_det", 77);
  HardwareConfig hw;
  SweepConfig cfg;
  cfg.p1_grid = {0.0, 5.0, 25.0};
  cfg.p2_grid = {0.0};
  SweepResult a = run_sweep(cfg, f.bundle, f.workload, hw);
  SweepResult b = run_sweep(cfg, f.bundle, f.workload, hw);
  REQUIRE(a.table.size() == b.table.size());
  for (std::size_t i = 0; i < a.table.size(); ++i) {
    CHECK(a.table[i].quality == b.table[i].quality);
    CHECK(a.table[i].latency_s == b.table[i].latency_s);
    CHECK(a.table[i].objective == b.table[i].objective);
  }
  CHECK(a.chosen_index == b.chosen_index);
}
