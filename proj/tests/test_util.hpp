// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <vector>

#include "mixmx/accel_sim.hpp"
#include "mixmx/mp_gemm.hpp"
#include "mixmx/mx_codec.hpp"
#include "mixmx/planner.hpp"
#include "mixmx/tensor.hpp"
#include "mixmx/tensor_io.hpp"
#include "test_paths.hpp"

namespace testutil {

using namespace mixmx;

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline FloatTensor random_tensor(std::mt19937_64& rng, std::vector<std::uint64_t> shape,
                                 float lo = -4.0f, float hi = 4.0f) {
  FloatTensor t = FloatTensor::zeros(std::move(shape));
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

// Integer-valued f32 tensor; exact under f64 accumulation at these sizes.
inline FloatTensor random_integer_tensor(std::mt19937_64& rng, std::vector<std::uint64_t> shape,
                                         int lo = -8, int hi = 7) {
  FloatTensor t = FloatTensor::zeros(std::move(shape));
  std::uniform_int_distribution<int> dist(lo, hi);
  for (auto& v : t.data) v = float(dist(rng));
  return t;
}

// Signed inlier magnitudes in [inlier_lo, inlier_hi], with the given channels
// scaled by `scale` (the planted outliers).
inline FloatTensor planted_outlier_activation(std::mt19937_64& rng, std::uint64_t m,
                                              std::uint64_t k,
                                              const std::vector<std::uint64_t>& outlier_channels,
                                              float scale = 96.0f, float inlier_lo = 0.5f,
                                              float inlier_hi = 2.0f) {
  FloatTensor t = FloatTensor::zeros({m, k});
  std::uniform_real_distribution<float> mag(inlier_lo, inlier_hi);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data) v = (sign(rng) ? -1.0f : 1.0f) * mag(rng);
  for (auto c : outlier_channels)
    for (std::uint64_t r = 0; r < m; ++r) t.at2(r, c) *= scale;
  return t;
}

// Group dot oracle: decode both operands, dot in f64 (exact at group sizes),
// round once to f32.
inline float oracle_group_dot(const MxGroup& a, const MxFormatSpec& sa, const MxGroup& b,
                              const MxFormatSpec& sb) {
  auto va = decode_group(a, sa);
  auto vb = decode_group(b, sb);
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += double(va[i]) * double(vb[i]);
  return float(acc);
}

// Independent mixed-GEMM oracle: permutes operands per the plan, encodes the
// promoted MX9 region and the MX6 remainder, then accumulates decode-based
// f64 group dots in f32 across groups in ascending order.
inline FloatTensor oracle_linear_forward(const FloatTensor& x, const FloatTensor& w,
                                         const LinearLayerPlan& plan,
                                         const GemmSpecs& specs = {}) {
  const std::uint64_t m = x.shape[0], k = x.shape[1], n = w.shape[1];
  const std::uint64_t k1 = specs.lo.group_size;
  const std::uint64_t split = padded_outlier_channels(plan.n_hi, k, specs.lo);

  FloatTensor xp = permute_activation_channels(x, plan);
  FloatTensor wp = permute_weight_channels(w, plan);

  auto encode_range_row = [&](const FloatTensor& t, std::uint64_t row, std::uint64_t begin,
                              std::uint64_t end, const MxFormatSpec& spec) {
    std::vector<MxGroup> gs;
    const std::uint64_t len = end - begin;
    const std::uint64_t g = len == 0 ? 0 : (len + k1 - 1) / k1;
    std::vector<float> buf(g * k1, 0.0f);
    for (std::uint64_t i = 0; i < len; ++i) buf[i] = t.at2(row, begin + i);
    for (std::uint64_t gi = 0; gi < g; ++gi)
      gs.push_back(encode_group(std::span<const float>(buf.data() + gi * k1, k1), spec));
    return gs;
  };
  auto encode_range_col = [&](const FloatTensor& t, std::uint64_t col, std::uint64_t begin,
                              std::uint64_t end, const MxFormatSpec& spec) {
    std::vector<MxGroup> gs;
    const std::uint64_t len = end - begin;
    const std::uint64_t g = len == 0 ? 0 : (len + k1 - 1) / k1;
    std::vector<float> buf(g * k1, 0.0f);
    for (std::uint64_t i = 0; i < len; ++i) buf[i] = t.at2(begin + i, col);
    for (std::uint64_t gi = 0; gi < g; ++gi)
      gs.push_back(encode_group(std::span<const float>(buf.data() + gi * k1, k1), spec));
    return gs;
  };

  FloatTensor out = FloatTensor::zeros({m, n});
  for (std::uint64_t i = 0; i < m; ++i) {
    auto xh = encode_range_row(xp, i, 0, split, specs.hi);
    auto xl = encode_range_row(xp, i, split, k, specs.lo);
    for (std::uint64_t j = 0; j < n; ++j) {
      auto wh = encode_range_col(wp, j, 0, split, specs.lo);
      auto wl = encode_range_col(wp, j, split, k, specs.lo);
      float acc = 0.0f;
      for (std::size_t gi = 0; gi < xh.size(); ++gi)
        acc += oracle_group_dot(xh[gi], specs.hi, wh[gi], specs.lo);
      for (std::size_t gi = 0; gi < xl.size(); ++gi)
        acc += oracle_group_dot(xl[gi], specs.lo, wl[gi], specs.lo);
      out.at2(i, j) = acc;
    }
  }
  return out;
}

// Naive triple-loop f64 GEMM, ascending k.
inline FloatTensor naive_gemm(const FloatTensor& x, const FloatTensor& w) {
  const std::uint64_t m = x.shape[0], k = x.shape[1], n = w.shape[1];
  FloatTensor out = FloatTensor::zeros({m, n});
  for (std::uint64_t i = 0; i < m; ++i)
    for (std::uint64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::uint64_t kk = 0; kk < k; ++kk)
        acc += double(x.at2(i, kk)) * double(w.at2(kk, j));
      out.at2(i, j) = float(acc);
    }
  return out;
}

inline bool bitwise_equal(const FloatTensor& a, const FloatTensor& b) {
  if (a.shape != b.shape) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    std::uint32_t ua, ub;
    std::memcpy(&ua, &a.data[i], 4);
    std::memcpy(&ub, &b.data[i], 4);
    if (ua != ub) return false;
  }
  return true;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::path(MIXMX_TEST_SCRATCH) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Writes a bundle with one linear layer (activation + weight per timestep)
// and optionally one attention layer (Q/K/V per timestep). Outlier channels
// and the loudest head are planted deterministically from the seed.
struct SynthBundle {
  std::filesystem::path dir;
  WorkloadSpec workload;
  std::vector<std::uint64_t> planted_channels;
};

inline SynthBundle write_synth_bundle(const std::filesystem::path& dir, std::uint64_t seed,
                                      std::uint32_t timesteps, std::uint64_t m = 16,
                                      std::uint64_t k = 32, std::uint64_t n = 16,
                                      bool with_attention = true) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto rng = make_rng(seed);

  SynthBundle sb;
  sb.dir = dir;
  sb.planted_channels = {k / 5, (2 * k) / 3};

  CalibrationBundle bundle;
  bundle.root = dir;

  WorkloadLayer lin;
  lin.id = "blk0.fc";
  lin.kind = LayerKind::linear;
  lin.m = m;
  lin.k = k;
  lin.n = n;
  sb.workload.layers.push_back(lin);

  for (std::uint32_t t = 0; t < timesteps; ++t) {
    FloatTensor x = planted_outlier_activation(rng, m, k, sb.planted_channels);
    FloatTensor w = random_integer_tensor(rng, {k, n});
    std::string xa = "act_t" + std::to_string(t) + ".mxt";
    std::string wa = "wgt_t" + std::to_string(t) + ".mxt";
    write_tensor(x, dir / xa);
    write_tensor(w, dir / wa);
    bundle.entries.emplace(BundleKey{lin.id, t, TensorRole::activation}, xa);
    bundle.entries.emplace(BundleKey{lin.id, t, TensorRole::weight}, wa);
  }

  if (with_attention) {
    WorkloadLayer att;
    att.id = "blk0.attn";
    att.kind = LayerKind::attention;
    att.heads = 2;
    att.seq_len = 16;
    att.head_dim = 16;
    sb.workload.layers.push_back(att);
    for (std::uint32_t t = 0; t < timesteps; ++t) {
      for (TensorRole role : {TensorRole::query, TensorRole::key, TensorRole::value}) {
        FloatTensor q = random_tensor(rng, {att.heads, att.seq_len, att.head_dim}, -1.0f, 1.0f);
        // head 0 carries large magnitudes
        for (std::uint64_t i = 0; i < att.seq_len * att.head_dim; ++i) q.data[i] *= 24.0f;
        std::string name =
            std::string(role_name(role)) + "_t" + std::to_string(t) + ".mxt";
        write_tensor(q, dir / name);
        bundle.entries.emplace(BundleKey{att.id, t, role}, name);
      }
    }
  }

  sb.workload.timesteps = timesteps;
  write_manifest(bundle);
  return sb;
}

}  // namespace testutil
