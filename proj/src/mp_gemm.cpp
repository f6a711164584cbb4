// SPDX-License-Identifier: Apache-2.0

#include "mixmx/mp_gemm.hpp"

#include <cmath>

namespace mixmx {

std::uint64_t& RegionCounts::of(PrecisionPair p) {
  switch (p) {
    case PrecisionPair::mx6_mx6: return mx6_mx6;
    case PrecisionPair::mx6_mx9: return mx6_mx9;
    case PrecisionPair::mx9_mx9: return mx9_mx9;
  }
  return mx9_mx9;
}

void GemmSpecs::validate() const {
  lo.validate();
  hi.validate();
  require(lo.group_size == hi.group_size && lo.subgroup_size == hi.subgroup_size,
          Errc::invalid_argument, "lo/hi formats must share group and subgroup sizes");
}

std::uint64_t padded_outlier_channels(std::uint32_t n_hi, std::uint64_t k,
                                      const MxFormatSpec& spec) {
  const std::uint64_t k1 = spec.group_size;
  return std::min(ceil_div(n_hi, k1) * k1, k);
}

namespace {

// Encodes a contiguous column range [begin, end) of each row of a row-major
// M x K matrix into per-row group chains. Tail groups are zero-padded.
std::vector<std::vector<MxGroup>> encode_row_slices(const FloatTensor& m2, std::uint64_t begin,
                                                    std::uint64_t end, const MxFormatSpec& spec) {
  const std::uint64_t rows = m2.shape[0];
  const std::uint64_t cols = m2.shape[1];
  const std::uint64_t len = end - begin;
  const std::uint64_t k1 = spec.group_size;
  const std::uint64_t g = ceil_div(len, k1);
  std::vector<std::vector<MxGroup>> out(rows);
  if (len == 0) return out;
  std::vector<float> buf(g * k1, 0.0f);
  for (std::uint64_t r = 0; r < rows; ++r) {
    std::fill(buf.begin(), buf.end(), 0.0f);
    for (std::uint64_t i = 0; i < len; ++i) buf[i] = m2.data[r * cols + begin + i];
    out[r].reserve(g);
    for (std::uint64_t gi = 0; gi < g; ++gi)
      out[r].push_back(encode_group(std::span<const float>(buf.data() + gi * k1, k1), spec));
  }
  return out;
}

// Same for a row range of each column of a row-major K x N matrix.
std::vector<std::vector<MxGroup>> encode_col_slices(const FloatTensor& m2, std::uint64_t begin,
                                                    std::uint64_t end, const MxFormatSpec& spec) {
  const std::uint64_t cols = m2.shape[1];
  const std::uint64_t len = end - begin;
  const std::uint64_t k1 = spec.group_size;
  const std::uint64_t g = ceil_div(len, k1);
  std::vector<std::vector<MxGroup>> out(cols);
  if (len == 0) return out;
  std::vector<float> buf(g * k1, 0.0f);
  for (std::uint64_t c = 0; c < cols; ++c) {
    std::fill(buf.begin(), buf.end(), 0.0f);
    for (std::uint64_t i = 0; i < len; ++i) buf[i] = m2.data[(begin + i) * cols + c];
    out[c].reserve(g);
    for (std::uint64_t gi = 0; gi < g; ++gi)
      out[c].push_back(encode_group(std::span<const float>(buf.data() + gi * k1, k1), spec));
  }
  return out;
}

}  // namespace

MixedGemmResult linear_forward(const FloatTensor& x, const FloatTensor& w,
                               const LinearLayerPlan& plan, const GemmSpecs& specs) {
  specs.validate();
  validate_tensor(x);
  validate_tensor(w);
  require(x.rank() == 2 && w.rank() == 2, Errc::invalid_argument, "linear operands must be rank 2");
  require(x.shape[1] == w.shape[0], Errc::invalid_argument, "X columns must match W rows");
  require(plan.channel_count() == x.shape[1], Errc::invalid_argument,
          "plan channel count does not match K");
  require(plan.n_hi <= plan.channel_count(), Errc::invalid_argument, "n_hi exceeds channel count");

  const std::uint64_t m = x.shape[0];
  const std::uint64_t k = x.shape[1];
  const std::uint64_t n = w.shape[1];

  FloatTensor xp = permute_activation_channels(x, plan);
  FloatTensor wp = permute_weight_channels(w, plan);

  const std::uint64_t split = padded_outlier_channels(plan.n_hi, k, specs.lo);

  // X outlier region at MX9, everything else at MX6.
  auto x_hi = encode_row_slices(xp, 0, split, specs.hi);
  auto x_lo = encode_row_slices(xp, split, k, specs.lo);
  auto w_hi = encode_col_slices(wp, 0, split, specs.lo);
  auto w_lo = encode_col_slices(wp, split, k, specs.lo);

  const std::uint64_t g_hi = split == 0 ? 0 : ceil_div(split, std::uint64_t(specs.lo.group_size));
  const std::uint64_t g_lo = ceil_div(k - split, std::uint64_t(specs.lo.group_size));

  MixedGemmResult res;
  res.output = FloatTensor::zeros({m, n});
  for (std::uint64_t i = 0; i < m; ++i) {
    for (std::uint64_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::uint64_t gi = 0; gi < g_hi; ++gi)
        acc += group_dot(x_hi[i][gi], specs.hi, w_hi[j][gi], specs.lo);
      for (std::uint64_t gi = 0; gi < g_lo; ++gi)
        acc += group_dot(x_lo[i][gi], specs.lo, w_lo[j][gi], specs.lo);
      res.output.at2(i, j) = acc;
    }
  }
  res.groups.mx6_mx9 = g_hi * m * n;
  res.groups.mx6_mx6 = g_lo * m * n;

  FloatTensor ref = reference_forward(x, w);
  ErrorStats d = tensor_diff_stats(ref, res.output);
  res.rel_frobenius = d.rel_frobenius;
  res.max_abs = d.max_abs_err;
  return res;
}

namespace {

void validate_attention_inputs(const FloatTensor& q, const FloatTensor& k, const FloatTensor& v,
                               const AttentionPlan& plan) {
  for (const FloatTensor* t : {&q, &k, &v}) {
    validate_tensor(*t);
    require(t->rank() == 3, Errc::invalid_argument, "attention operands must be H x L x d");
    require(t->shape == q.shape, Errc::invalid_argument, "Q, K, V shapes must match");
  }
  require(plan.head_count() == q.shape[0], Errc::invalid_argument,
          "plan head count does not match tensors");
  require(q.shape[2] >= 1, Errc::invalid_argument, "head dim must be >= 1");
}

// Row-major L x d slice of head h.
FloatTensor head_slice(const FloatTensor& t, std::uint64_t h) {
  FloatTensor s = FloatTensor::zeros({t.shape[1], t.shape[2]});
  const std::uint64_t stride = t.shape[1] * t.shape[2];
  std::copy_n(t.data.begin() + h * stride, stride, s.data.begin());
  return s;
}

void softmax_rows_f32(FloatTensor& s) {
  const std::uint64_t rows = s.shape[0];
  const std::uint64_t cols = s.shape[1];
  for (std::uint64_t r = 0; r < rows; ++r) {
    float* row = s.data.data() + r * cols;
    float mx = row[0];
    for (std::uint64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    float sum = 0.0f;
    for (std::uint64_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (std::uint64_t c = 0; c < cols; ++c) row[c] /= sum;
  }
}

}  // namespace

MixedGemmResult attention_forward(const FloatTensor& q, const FloatTensor& k,
                                  const FloatTensor& v, const AttentionPlan& plan,
                                  const GemmSpecs& specs) {
  specs.validate();
  validate_attention_inputs(q, k, v, plan);

  const std::uint64_t heads = q.shape[0];
  const std::uint64_t seq = q.shape[1];
  const std::uint64_t dim = q.shape[2];
  const std::uint64_t k1 = specs.lo.group_size;
  const std::uint64_t g_d = ceil_div(dim, k1);
  const std::uint64_t g_l = ceil_div(seq, k1);

  MixedGemmResult res;
  res.output = FloatTensor::zeros({heads, seq, dim});

  for (std::uint64_t h = 0; h < heads; ++h) {
    const Precision prec = plan.head_precision[h];
    const MxFormatSpec& spec = prec == Precision::mx9 ? specs.hi : specs.lo;
    const PrecisionPair pair = make_pair(prec, prec);

    FloatTensor qh = head_slice(q, h);
    FloatTensor kh = head_slice(k, h);
    FloatTensor vh = head_slice(v, h);

    // S = (Q K^T) / sqrt(d); both operands grouped along d.
    auto qg = encode_row_slices(qh, 0, dim, spec);
    auto kg = encode_row_slices(kh, 0, dim, spec);
    const float inv_sqrt_d = 1.0f / std::sqrt(float(dim));
    FloatTensor scores = FloatTensor::zeros({seq, seq});
    for (std::uint64_t i = 0; i < seq; ++i)
      for (std::uint64_t j = 0; j < seq; ++j) {
        float acc = 0.0f;
        for (std::uint64_t gi = 0; gi < g_d; ++gi)
          acc += group_dot(qg[i][gi], spec, kg[j][gi], spec);
        scores.at2(i, j) = acc * inv_sqrt_d;
      }
    res.groups.of(pair) += g_d * seq * seq;

    softmax_rows_f32(scores);

    // (softmax) x V; softmax rows re-encoded at the head precision, V grouped
    // along its rows.
    auto ag = encode_row_slices(scores, 0, seq, spec);
    auto vg = encode_col_slices(vh, 0, seq, spec);
    for (std::uint64_t i = 0; i < seq; ++i)
      for (std::uint64_t c = 0; c < dim; ++c) {
        float acc = 0.0f;
        for (std::uint64_t gi = 0; gi < g_l; ++gi)
          acc += group_dot(ag[i][gi], spec, vg[c][gi], spec);
        res.output.at3(h, i, c) = acc;
      }
    res.groups.of(pair) += g_l * seq * dim;
  }

  FloatTensor ref = reference_forward(q, k, v);
  ErrorStats d = tensor_diff_stats(ref, res.output);
  res.rel_frobenius = d.rel_frobenius;
  res.max_abs = d.max_abs_err;
  return res;
}

FloatTensor reference_forward(const FloatTensor& x, const FloatTensor& w) {
  validate_tensor(x);
  validate_tensor(w);
  require(x.rank() == 2 && w.rank() == 2 && x.shape[1] == w.shape[0], Errc::invalid_argument,
          "reference_forward shape mismatch");
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

FloatTensor reference_forward(const FloatTensor& q, const FloatTensor& k, const FloatTensor& v) {
  for (const FloatTensor* t : {&q, &k, &v}) {
    validate_tensor(*t);
    require(t->rank() == 3 && t->shape == q.shape, Errc::invalid_argument,
            "reference_forward attention shape mismatch");
  }
  const std::uint64_t heads = q.shape[0], seq = q.shape[1], dim = q.shape[2];
  FloatTensor out = FloatTensor::zeros({heads, seq, dim});
  const double inv_sqrt_d = 1.0 / std::sqrt(double(dim));

  std::vector<double> scores(seq);
  for (std::uint64_t h = 0; h < heads; ++h) {
    for (std::uint64_t i = 0; i < seq; ++i) {
      for (std::uint64_t j = 0; j < seq; ++j) {
        double acc = 0.0;
        for (std::uint64_t c = 0; c < dim; ++c)
          acc += double(q.at3(h, i, c)) * double(k.at3(h, j, c));
        scores[j] = acc * inv_sqrt_d;
      }
      double mx = scores[0];
      for (std::uint64_t j = 1; j < seq; ++j) mx = std::max(mx, scores[j]);
      double sum = 0.0;
      for (std::uint64_t j = 0; j < seq; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        sum += scores[j];
      }
      for (std::uint64_t j = 0; j < seq; ++j) scores[j] /= sum;
      for (std::uint64_t c = 0; c < dim; ++c) {
        double acc = 0.0;
        for (std::uint64_t j = 0; j < seq; ++j) acc += scores[j] * double(v.at3(h, j, c));
        out.at3(h, i, c) = float(acc);
      }
    }
  }
  return out;
}

}  // namespace mixmx
