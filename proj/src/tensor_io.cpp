// SPDX-License-Identifier: Apache-2.0

#include "mixmx/tensor_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

namespace mixmx {

namespace {

constexpr char kMagic[4] = {'M', 'X', 'T', '1'};

void put_u16(std::ostream& os, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char(v >> 8)};
  os.write(b, 2);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
  return v;
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  require(!in.bad(), Errc::io_failure, "read failed: " + path.string());
  return bytes;
}

}  // namespace

FloatTensor read_tensor(const std::filesystem::path& path) {
  auto bytes = read_all(path);
  require(bytes.size() >= 8, Errc::truncated_payload, "file shorter than MXT1 header");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, Errc::bad_magic,
          "bad magic in " + path.string());
  std::uint8_t dtype = bytes[4];
  std::uint8_t ndim = bytes[5];
  std::uint16_t reserved = std::uint16_t(bytes[6] | (bytes[7] << 8));
  require(dtype == 0, Errc::bad_header, "unsupported dtype code");
  require(ndim >= 1, Errc::bad_header, "ndim must be >= 1");
  require(reserved == 0, Errc::bad_header, "reserved field must be zero");

  std::size_t off = 8;
  require(bytes.size() >= off + 8ull * ndim, Errc::truncated_payload, "dims truncated");
  FloatTensor t;
  t.shape.resize(ndim);
  for (int i = 0; i < ndim; ++i, off += 8) t.shape[i] = get_u64(bytes.data() + off);

  std::uint64_t count = checked_numel(t.shape);
  require(count <= (std::uint64_t(1) << 34), Errc::dimension_overflow,
          "tensor too large for in-memory load");
  require(bytes.size() == off + 4 * count, Errc::truncated_payload,
          "payload length does not match dims");

  t.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i, off += 4) {
    std::uint32_t u = get_u32(bytes.data() + off);
    float f;
    std::memcpy(&f, &u, 4);
    require(std::isfinite(f), Errc::non_finite_value, "non-finite value in tensor payload");
    t.data[i] = f;
  }
  return t;
}

void write_tensor(const FloatTensor& t, const std::filesystem::path& path) {
  validate_tensor(t);
  require(t.rank() <= 255, Errc::bad_header, "rank exceeds 255");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open for write: " + path.string());
  out.write(kMagic, 4);
  out.put(0);                        // dtype f32
  out.put(char(t.rank()));
  put_u16(out, 0);                   // reserved
  for (auto d : t.shape) put_u64(out, d);
  for (float f : t.data) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    char b[4] = {char(u & 0xff), char((u >> 8) & 0xff), char((u >> 16) & 0xff),
                 char((u >> 24) & 0xff)};
    out.write(b, 4);
  }
  out.flush();
  require(out.good(), Errc::io_failure, "write failed: " + path.string());
}

const char* role_name(TensorRole r) {
  switch (r) {
    case TensorRole::activation: return "activation";
    case TensorRole::weight: return "weight";
    case TensorRole::query: return "query";
    case TensorRole::key: return "key";
    case TensorRole::value: return "value";
  }
  return "unknown";
}

TensorRole role_from_name(const std::string& name) {
  if (name == "activation") return TensorRole::activation;
  if (name == "weight") return TensorRole::weight;
  if (name == "query") return TensorRole::query;
  if (name == "key") return TensorRole::key;
  if (name == "value") return TensorRole::value;
  fail(Errc::bad_header, "unknown tensor role: " + name);
}

std::uint32_t CalibrationBundle::timestep_count(const std::string& layer) const {
  std::uint32_t max_plus_one = 0;
  for (const auto& [key, path] : entries)
    if (key.layer == layer && key.timestep + 1 > max_plus_one) max_plus_one = key.timestep + 1;
  return max_plus_one;
}

FloatTensor CalibrationBundle::load(const std::string& layer, std::uint32_t timestep,
                                    TensorRole role) const {
  auto it = entries.find(BundleKey{layer, timestep, role});
  require(it != entries.end(), Errc::missing_file,
          "no bundle entry for layer '" + layer + "' timestep " + std::to_string(timestep) +
              " role " + role_name(role));
  return read_tensor(root / it->second);
}

CalibrationBundle load_bundle(const std::filesystem::path& root) {
  auto manifest_path = root / "manifest.json";
  require(std::filesystem::exists(manifest_path), Errc::missing_manifest,
          "missing manifest.json in " + root.string());
  std::ifstream in(manifest_path);
  require(in.good(), Errc::io_failure, "cannot open " + manifest_path.string());

  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::bad_header, std::string("manifest parse error: ") + e.what());
  }
  require(j.is_object() && j.contains("entries") && j["entries"].is_array(), Errc::bad_header,
          "manifest must be an object with an 'entries' array");

  CalibrationBundle bundle;
  bundle.root = root;
  for (const auto& e : j["entries"]) {
    require(e.is_object(), Errc::bad_header, "manifest entry must be an object");
    for (const char* field : {"layer", "timestep", "role", "path"})
      require(e.contains(field), Errc::bad_header,
              std::string("manifest entry missing field '") + field + "'");
    BundleKey key;
    key.layer = e["layer"].get<std::string>();
    auto ts = e["timestep"].get<std::int64_t>();
    require(ts >= 0, Errc::bad_header, "timestep must be >= 0");
    key.timestep = std::uint32_t(ts);
    key.role = role_from_name(e["role"].get<std::string>());
    std::string rel = e["path"].get<std::string>();

    auto [it, inserted] = bundle.entries.emplace(key, rel);
    (void)it;
    require(inserted, Errc::duplicate_manifest_key,
            "duplicate manifest key (" + key.layer + ", " + std::to_string(key.timestep) + ", " +
                role_name(key.role) + ")");
    require(std::filesystem::exists(root / rel), Errc::missing_file,
            "manifest references missing file " + rel);
    read_tensor(root / rel);  // must parse as FloatTensor
  }

  // Timesteps per layer must form 0..max with no gaps.
  std::map<std::string, std::set<std::uint32_t>> per_layer;
  for (const auto& [key, path] : bundle.entries) per_layer[key.layer].insert(key.timestep);
  for (const auto& [layer, steps] : per_layer) {
    std::uint32_t expect = 0;
    for (auto t : steps) {
      require(t == expect, Errc::non_contiguous_timesteps,
              "layer '" + layer + "' timesteps are not contiguous from 0");
      ++expect;
    }
  }
  return bundle;
}

void write_manifest(const CalibrationBundle& bundle) {
  nlohmann::json j;
  j["entries"] = nlohmann::json::array();
  for (const auto& [key, rel] : bundle.entries) {
    nlohmann::json e;
    e["layer"] = key.layer;
    e["timestep"] = key.timestep;
    e["role"] = role_name(key.role);
    e["path"] = rel;
    j["entries"].push_back(e);
  }
  std::ofstream out(bundle.root / "manifest.json", std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot write manifest.json");
  out << j.dump(2) << "\n";
  require(out.good(), Errc::io_failure, "manifest write failed");
}

}  // namespace mixmx
