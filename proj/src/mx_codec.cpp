// SPDX-License-Identifier: Apache-2.0

#include "mixmx/mx_codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mixmx {

namespace {

constexpr int kExponentBias = 127;
constexpr int kMinSharedExponent = -127;  // stored exponent 0

// Exact |x| * 2^shift in f64; all call sites keep the result well inside
// the normal f64 range, so no rounding occurs.
double scale_abs(float x, int shift) { return std::ldexp(double(std::fabs(x)), shift); }

}  // namespace

MxGroup encode_group(std::span<const float> values, const MxFormatSpec& spec,
                     EncodeStats* stats) {
  spec.validate();
  const int k1 = spec.group_size;
  const int k2 = spec.subgroup_size;
  const int m = spec.mantissa_bits;
  require(std::ssize(values) == k1, Errc::invalid_argument,
          "encode_group expects exactly k1 values");
  for (float v : values)
    require(std::isfinite(v), Errc::non_finite_value, "encode_group input must be finite");

  MxGroup g;
  g.signs.assign(k1, 0);
  g.magnitudes.assign(k1, 0);

  float max_abs = 0.0f;
  for (float v : values) max_abs = std::max(max_abs, std::fabs(v));

  const std::uint8_t all_down = std::uint8_t((1u << spec.subgroup_count()) - 1);
  if (max_abs == 0.0f) {
    // canonical zero group
    g.shared_exponent = 0;
    g.subgroup_down = all_down;
    return g;
  }

  int eg = std::ilogb(max_abs);
  if (eg < kMinSharedExponent) eg = kMinSharedExponent;  // flush toward the minimum exponent
  g.shared_exponent = std::uint8_t(eg + kExponentBias);

  const std::int64_t mag_max = (std::int64_t(1) << m) - 1;
  const std::int64_t fine_limit = (std::int64_t(1) << (m - 1)) - 1;

  for (int j = 0; j < spec.subgroup_count(); ++j) {
    const int base = j * k2;
    // Trial at the halved scale, step 2^(eg - m). The subgroup keeps it only
    // if every rounded magnitude stays below the top binade of the m-bit
    // code; otherwise a decoded boundary value would re-encode differently.
    std::int64_t fine[255];
    bool down = true;
    for (int i = 0; i < k2; ++i) {
      fine[i] = round_half_even(scale_abs(values[base + i], m - eg));
      if (fine[i] > fine_limit) down = false;
    }
    if (down) {
      g.subgroup_down |= std::uint8_t(1u << j);
      for (int i = 0; i < k2; ++i) g.magnitudes[base + i] = std::uint8_t(fine[i]);
    } else {
      for (int i = 0; i < k2; ++i) {
        std::int64_t mag = round_half_even(scale_abs(values[base + i], (m - 1) - eg));
        if (mag > mag_max) {
          mag = mag_max;
          if (stats) ++stats->saturated;
        }
        g.magnitudes[base + i] = std::uint8_t(mag);
      }
    }
    for (int i = 0; i < k2; ++i) {
      float v = values[base + i];
      g.signs[base + i] =
          (g.magnitudes[base + i] != 0 && std::signbit(v) && v != 0.0f) ? 1 : 0;
    }
  }
  return g;
}

std::vector<float> decode_group(const MxGroup& g, const MxFormatSpec& spec) {
  spec.validate();
  const int k1 = spec.group_size;
  require(std::ssize(g.signs) == k1 && std::ssize(g.magnitudes) == k1, Errc::invalid_argument,
          "group length does not match spec");
  const int eg = int(g.shared_exponent) - kExponentBias;
  const int m = spec.mantissa_bits;

  std::vector<float> out(k1);
  for (int i = 0; i < k1; ++i) {
    const int j = i / spec.subgroup_size;
    const int b = (g.subgroup_down >> j) & 1;
    const std::uint8_t mag = g.magnitudes[i];
    if (mag == 0) {
      out[i] = 0.0f;
      continue;
    }
    float v = std::ldexp(float(mag), eg - b - (m - 1));
    out[i] = g.signs[i] ? -v : v;
  }
  return out;
}

float group_dot(const MxGroup& a, const MxFormatSpec& sa, const MxGroup& b,
                const MxFormatSpec& sb) {
  require(sa.group_size == sb.group_size, Errc::invalid_argument,
          "group_dot operands must share the group size");
  const int k1 = sa.group_size;
  require(std::ssize(a.magnitudes) == k1 && std::ssize(b.magnitudes) == k1,
          Errc::invalid_argument, "group length does not match spec");

  // Integer mantissa products, aligned per subgroup by the 0..2 downscale
  // shifts, summed exactly; one rounding at the f32 conversion.
  std::int64_t acc = 0;
  for (int i = 0; i < k1; ++i) {
    const int ba = (a.subgroup_down >> (i / sa.subgroup_size)) & 1;
    const int bb = (b.subgroup_down >> (i / sb.subgroup_size)) & 1;
    std::int64_t p = std::int64_t(a.magnitudes[i]) * b.magnitudes[i];
    p <<= (2 - ba - bb);
    acc += (a.signs[i] ^ b.signs[i]) ? -p : p;
  }
  const int e_base = (int(a.shared_exponent) - kExponentBias) +
                     (int(b.shared_exponent) - kExponentBias) - (sa.mantissa_bits - 1) -
                     (sb.mantissa_bits - 1) - 2;
  return float(std::ldexp(double(acc), e_base));
}

namespace {

// Row-major strides.
std::vector<std::uint64_t> strides_of(const std::vector<std::uint64_t>& shape) {
  std::vector<std::uint64_t> s(shape.size());
  std::uint64_t acc = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    s[i] = acc;
    acc *= shape[i];
  }
  return s;
}

// Enumerates base offsets of all fibers along `axis` in row-major order of
// the remaining indices.
template <typename Fn>
void for_each_fiber(const std::vector<std::uint64_t>& shape, std::size_t axis, Fn&& fn) {
  auto strides = strides_of(shape);
  std::vector<std::size_t> dims;  // axes other than `axis`, outer to inner
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) dims.push_back(i);
  std::uint64_t fibers = 1;
  for (auto d : dims) fibers *= shape[d];

  std::vector<std::uint64_t> idx(dims.size(), 0);
  for (std::uint64_t f = 0; f < fibers; ++f) {
    std::uint64_t base = 0;
    for (std::size_t i = 0; i < dims.size(); ++i) base += idx[i] * strides[dims[i]];
    fn(base, strides[axis]);
    for (std::size_t i = dims.size(); i-- > 0;) {
      if (++idx[i] < shape[dims[i]]) break;
      idx[i] = 0;
    }
  }
}

}  // namespace

MxTensor encode_tensor(const FloatTensor& t, std::size_t axis, const MxFormatSpec& spec,
                       EncodeStats* stats) {
  validate_tensor(t);
  spec.validate();
  require(axis < t.rank(), Errc::invalid_argument, "reduction axis out of range");

  MxTensor mt;
  mt.spec = spec;
  mt.shape = t.shape;
  mt.axis = axis;

  const std::uint64_t len = t.shape[axis];
  const std::uint64_t k1 = spec.group_size;
  const std::uint64_t gpf = ceil_div(len, k1);
  mt.groups.reserve(gpf * mt.fiber_count());

  std::vector<float> padded(gpf * k1, 0.0f);
  for_each_fiber(t.shape, axis, [&](std::uint64_t base, std::uint64_t stride) {
    std::fill(padded.begin(), padded.end(), 0.0f);
    for (std::uint64_t i = 0; i < len; ++i) padded[i] = t.data[base + i * stride];
    for (std::uint64_t gi = 0; gi < gpf; ++gi)
      mt.groups.push_back(encode_group(
          std::span<const float>(padded.data() + gi * k1, k1), spec, stats));
  });
  return mt;
}

FloatTensor decode_tensor(const MxTensor& mt) {
  mt.spec.validate();
  require(mt.axis < mt.shape.size(), Errc::invalid_argument, "reduction axis out of range");
  const std::uint64_t gpf = mt.groups_per_fiber();
  require(mt.groups.size() == gpf * mt.fiber_count(), Errc::invalid_argument,
          "group count does not match shape");

  FloatTensor out = FloatTensor::zeros(mt.shape);
  const std::uint64_t len = mt.reduction_len();
  const std::uint64_t k1 = mt.spec.group_size;

  std::uint64_t fiber = 0;
  for_each_fiber(mt.shape, mt.axis, [&](std::uint64_t base, std::uint64_t stride) {
    for (std::uint64_t gi = 0; gi < gpf; ++gi) {
      auto vals = decode_group(mt.groups[fiber * gpf + gi], mt.spec);
      for (std::uint64_t i = 0; i < k1; ++i) {
        std::uint64_t pos = gi * k1 + i;
        if (pos < len) out.data[base + pos * stride] = vals[i];
      }
    }
    ++fiber;
  });
  return out;
}

ErrorStats quant_error_stats(const FloatTensor& t, std::size_t axis, const MxFormatSpec& spec) {
  EncodeStats enc;
  MxTensor mt = encode_tensor(t, axis, spec, &enc);
  FloatTensor back = decode_tensor(mt);
  ErrorStats s = tensor_diff_stats(t, back);
  s.saturation_count = enc.saturated;
  return s;
}

ErrorStats tensor_diff_stats(const FloatTensor& reference, const FloatTensor& got) {
  require(reference.shape == got.shape, Errc::invalid_argument,
          "diff stats require equal shapes");
  ErrorStats s;
  double sum_sq = 0.0, ref_sq = 0.0;
  for (std::size_t i = 0; i < reference.data.size(); ++i) {
    double d = double(reference.data[i]) - double(got.data[i]);
    sum_sq += d * d;
    ref_sq += double(reference.data[i]) * double(reference.data[i]);
    s.max_abs_err = std::max(s.max_abs_err, std::fabs(d));
  }
  if (!reference.data.empty()) s.mse = sum_sq / double(reference.data.size());
  s.rel_frobenius = sum_sq == 0.0 ? 0.0 : std::sqrt(sum_sq / ref_sq);
  return s;
}

namespace {

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(std::uint32_t bits, int count) {  // LSB-first
    for (int i = 0; i < count; ++i) {
      if (pos_ == 0) out_.push_back(0);
      if ((bits >> i) & 1) out_.back() |= std::uint8_t(1u << pos_);
      pos_ = (pos_ + 1) % 8;
    }
  }

  void align() { pos_ = 0; }

 private:
  std::vector<std::uint8_t>& out_;
  int pos_ = 0;
};

class BitReader {
 public:
  BitReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t get(int count) {
    std::uint32_t v = 0;
    for (int i = 0; i < count; ++i) {
      require(byte_ < size_, Errc::truncated_payload, "packed group stream truncated");
      if ((data_[byte_] >> bit_) & 1) v |= (1u << i);
      if (++bit_ == 8) {
        bit_ = 0;
        ++byte_;
      }
    }
    return v;
  }

  void align() {
    if (bit_ != 0) {
      bit_ = 0;
      ++byte_;
    }
  }

  std::size_t consumed() const { return byte_ + (bit_ ? 1 : 0); }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t byte_ = 0;
  int bit_ = 0;
};

}  // namespace

std::vector<std::uint8_t> pack_groups(std::span<const MxGroup> groups, const MxFormatSpec& spec) {
  spec.validate();
  std::vector<std::uint8_t> out;
  out.reserve(groups.size() * spec.packed_group_bytes());
  BitWriter bw(out);
  for (const auto& g : groups) {
    require(std::ssize(g.signs) == spec.group_size, Errc::invalid_argument,
            "group length does not match spec");
    bw.align();
    bw.put(g.shared_exponent, 8);
    bw.put(g.subgroup_down, 8);
    for (int i = 0; i < spec.group_size; ++i) {
      bw.put(g.signs[i], 1);
      bw.put(g.magnitudes[i], spec.mantissa_bits);
    }
    bw.align();
  }
  return out;
}

std::vector<MxGroup> unpack_groups(std::span<const std::uint8_t> bytes, std::uint64_t group_count,
                                   const MxFormatSpec& spec) {
  spec.validate();
  require(bytes.size() == group_count * spec.packed_group_bytes(), Errc::truncated_payload,
          "packed size does not match group count");
  std::vector<MxGroup> groups(group_count);
  BitReader br(bytes.data(), bytes.size());
  const std::uint32_t mag_mask = (1u << spec.mantissa_bits) - 1;
  for (auto& g : groups) {
    br.align();
    g.shared_exponent = std::uint8_t(br.get(8));
    require(g.shared_exponent != 255, Errc::bad_header, "reserved shared exponent 255");
    g.subgroup_down = std::uint8_t(br.get(8));
    g.signs.resize(spec.group_size);
    g.magnitudes.resize(spec.group_size);
    for (int i = 0; i < spec.group_size; ++i) {
      g.signs[i] = std::uint8_t(br.get(1));
      std::uint32_t mag = br.get(spec.mantissa_bits);
      require((mag & ~mag_mask) == 0, Errc::internal, "magnitude exceeds mantissa width");
      g.magnitudes[i] = std::uint8_t(mag);
    }
  }
  return groups;
}

namespace {

constexpr char kMxqMagic[4] = {'M', 'X', 'Q', '1'};

void put_u64_le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

void write_mx_tensor(const MxTensor& mt, const std::filesystem::path& path) {
  mt.spec.validate();
  require(mt.axis <= 255 && mt.shape.size() <= 255, Errc::invalid_argument,
          "axis/rank exceed container limits");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open for write: " + path.string());
  out.write(kMxqMagic, 4);
  out.put(1);  // version
  out.put(char(mt.spec.mantissa_bits));
  out.put(char(mt.spec.group_size));
  out.put(char(mt.spec.subgroup_size));
  out.put(char(mt.spec.shared_exponent_bits));
  out.put(char(mt.spec.subgroup_exponent_bits));
  out.put(char(mt.axis));
  out.put(char(mt.shape.size()));
  for (auto d : mt.shape) put_u64_le(out, d);
  put_u64_le(out, mt.groups.size());
  auto packed = pack_groups(mt.groups, mt.spec);
  out.write(reinterpret_cast<const char*>(packed.data()), std::streamsize(packed.size()));
  out.flush();
  require(out.good(), Errc::io_failure, "write failed: " + path.string());
}

MxTensor read_mx_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() >= 12, Errc::truncated_payload, "file shorter than MXQ1 header");
  require(std::memcmp(bytes.data(), kMxqMagic, 4) == 0, Errc::bad_magic,
          "bad magic in " + path.string());
  require(bytes[4] == 1, Errc::bad_header, "unsupported MXQ1 version");

  MxTensor mt;
  mt.spec.mantissa_bits = bytes[5];
  mt.spec.group_size = bytes[6];
  mt.spec.subgroup_size = bytes[7];
  mt.spec.shared_exponent_bits = bytes[8];
  mt.spec.subgroup_exponent_bits = bytes[9];
  mt.spec.validate();
  mt.axis = bytes[10];
  std::uint8_t ndim = bytes[11];
  require(ndim >= 1, Errc::bad_header, "ndim must be >= 1");

  std::size_t off = 12;
  require(bytes.size() >= off + 8ull * ndim + 8, Errc::truncated_payload, "dims truncated");
  mt.shape.resize(ndim);
  for (int i = 0; i < ndim; ++i, off += 8) mt.shape[i] = get_u64_le(bytes.data() + off);
  checked_numel(mt.shape);
  require(mt.axis < mt.shape.size(), Errc::bad_header, "axis out of range");

  std::uint64_t group_count = get_u64_le(bytes.data() + off);
  off += 8;
  require(group_count == mt.groups_per_fiber() * mt.fiber_count(), Errc::bad_header,
          "group count does not match shape");
  std::uint64_t blob = group_count * mt.spec.packed_group_bytes();
  require(bytes.size() == off + blob, Errc::truncated_payload, "packed payload truncated");
  mt.groups = unpack_groups(std::span<const std::uint8_t>(bytes.data() + off, blob), group_count,
                            mt.spec);
  return mt;
}

}  // namespace mixmx
