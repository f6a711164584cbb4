// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace mixmx;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

Errc error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const MxError& e) {
    return e.code();
  }
  return Errc::internal;  // no error thrown
}

}  // namespace

TEST_CASE("mxt1 header decode") {
  auto dir = testutil::scratch_dir("tio_header");
  // ndim=1, dims=[3], payload {1,2,3}
  std::vector<unsigned char> bytes = {'M', 'X', 'T', '1', 0, 1, 0, 0,
                                      3,   0,   0,   0,   0, 0, 0, 0};
  for (float f : {1.0f, 2.0f, 3.0f}) {
    unsigned char b[4];
    std::memcpy(b, &f, 4);
    bytes.insert(bytes.end(), b, b + 4);
  }
  spit(dir / "t.mxt", bytes);
  FloatTensor t = read_tensor(dir / "t.mxt");
  CHECK(t.shape == std::vector<std::uint64_t>{3});
  CHECK(t.data == std::vector<float>{1.0f, 2.0f, 3.0f});
}

TEST_CASE("mxt1 truncated payload") {
  auto dir = testutil::scratch_dir("tio_trunc");
  std::vector<unsigned char> bytes = {'M', 'X', 'T', '1', 0, 2, 0, 0};
  for (std::uint64_t d : {2ull, 2ull})
    for (int i = 0; i < 8; ++i) bytes.push_back((d >> (8 * i)) & 0xff);
  for (int i = 0; i < 3; ++i) {  // 3 floats instead of 4
    float f = 1.0f;
    unsigned char b[4];
    std::memcpy(b, &f, 4);
    bytes.insert(bytes.end(), b, b + 4);
  }
  spit(dir / "t.mxt", bytes);
  CHECK(error_of([&] { read_tensor(dir / "t.mxt"); }) == Errc::truncated_payload);
}

TEST_CASE("mxt1 bad magic and non-finite rejection") {
  auto dir = testutil::scratch_dir("tio_bad");
  spit(dir / "bad.mxt", {'N', 'O', 'P', 'E', 0, 1, 0, 0});
  CHECK(error_of([&] { read_tensor(dir / "bad.mxt"); }) == Errc::bad_magic);

  std::vector<unsigned char> bytes = {'M', 'X', 'T', '1', 0, 1, 0, 0,
                                      1,   0,   0,   0,   0, 0, 0, 0};
  float nan = std::nanf("");
  unsigned char b[4];
  std::memcpy(b, &nan, 4);
  bytes.insert(bytes.end(), b, b + 4);
  spit(dir / "nan.mxt", bytes);
  CHECK(error_of([&] { read_tensor(dir / "nan.mxt"); }) == Errc::non_finite_value);
}

TEST_CASE("mxt1 dimension overflow") {
  auto dir = testutil::scratch_dir("tio_ovf");
  std::vector<unsigned char> bytes = {'M', 'X', 'T', '1', 0, 2, 0, 0};
  for (std::uint64_t d : {0xffffffffffffull, 0xffffffffffffull})
    for (int i = 0; i < 8; ++i) bytes.push_back((d >> (8 * i)) & 0xff);
  spit(dir / "t.mxt", bytes);
  CHECK(error_of([&] { read_tensor(dir / "t.mxt"); }) == Errc::dimension_overflow);
}

TEST_CASE("mxt1 write layout") {
  auto dir = testutil::scratch_dir("tio_layout");

  // shape [1], data [0.0] -> payload word 0x00000000
  FloatTensor z;
  z.shape = {1};
  z.data = {0.0f};
  write_tensor(z, dir / "z.mxt");
  auto bytes = slurp(dir / "z.mxt");
  REQUIRE(bytes.size() == 8 + 8 + 4);
  CHECK(bytes[16] == 0);
  CHECK(bytes[17] == 0);
  CHECK(bytes[18] == 0);
  CHECK(bytes[19] == 0);

  // shape [2,2] -> header ndim=2, dims 2,2 as u64 LE
  FloatTensor t = FloatTensor::zeros({2, 2});
  write_tensor(t, dir / "t.mxt");
  bytes = slurp(dir / "t.mxt");
  REQUIRE(bytes.size() == 8 + 16 + 16);
  CHECK(bytes[5] == 2);  // ndim
  std::vector<unsigned char> dims(bytes.begin() + 8, bytes.begin() + 24);
  CHECK(dims == std::vector<unsigned char>{2, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("mxt1 round trip is byte identity") {
  auto dir = testutil::scratch_dir("tio_rt");
  auto rng = testutil::make_rng(17);
  for (int it = 0; it < 40; ++it) {
    std::uniform_int_distribution<std::uint64_t> dim(1, 9);
    std::uniform_int_distribution<int> rank(1, 3);
    std::vector<std::uint64_t> shape;
    for (int r = rank(rng); r > 0; --r) shape.push_back(dim(rng));
    FloatTensor t = testutil::random_tensor(rng, shape, -1e6f, 1e6f);
    write_tensor(t, dir / "a.mxt");
    FloatTensor back = read_tensor(dir / "a.mxt");
    write_tensor(back, dir / "b.mxt");
    CHECK(slurp(dir / "a.mxt") == slurp(dir / "b.mxt"));
  }
}

TEST_CASE("load does not mutate files") {
  auto dir = testutil::scratch_dir("tio_ro");
  auto rng = testutil::make_rng(3);
  FloatTensor t = testutil::random_tensor(rng, {4, 5});
  write_tensor(t, dir / "t.mxt");
  auto before = slurp(dir / "t.mxt");
  read_tensor(dir / "t.mxt");
  read_tensor(dir / "t.mxt");
  CHECK(before == slurp(dir / "t.mxt"));
}

TEST_CASE("bundle: empty manifest") {
  auto dir = testutil::scratch_dir("tio_bundle_empty");
  std::ofstream(dir / "manifest.json") << R"({"entries": []})";
  CalibrationBundle b = load_bundle(dir);
  CHECK(b.entries.empty());
}

TEST_CASE("bundle: missing manifest and dangling file") {
  auto dir = testutil::scratch_dir("tio_bundle_missing");
  CHECK(error_of([&] { load_bundle(dir); }) == Errc::missing_manifest);

  std::ofstream(dir / "manifest.json")
      << R"({"entries": [{"layer": "l0", "timestep": 0, "role": "activation", "path": "gone.mxt"}]})";
  CHECK(error_of([&] { load_bundle(dir); }) == Errc::missing_file);
}

TEST_CASE("bundle: duplicate key rejected") {
  auto dir = testutil::scratch_dir("tio_bundle_dup");
  write_tensor(FloatTensor::zeros({2, 2}), dir / "t.mxt");
  std::ofstream(dir / "manifest.json") << R"({"entries": [
    {"layer": "l0", "timestep": 0, "role": "activation", "path": "t.mxt"},
    {"layer": "l0", "timestep": 0, "role": "activation", "path": "t.mxt"}]})";
  CHECK(error_of([&] { load_bundle(dir); }) == Errc::duplicate_manifest_key);
}

TEST_CASE("bundle: 25 contiguous timesteps load; gaps rejected") {
  auto dir = testutil::scratch_dir("tio_bundle_ts");
  write_tensor(FloatTensor::zeros({2, 4}), dir / "t.mxt");
  {
    nlohmann::json j;
    j["entries"] = nlohmann::json::array();
    for (int t = 0; t < 25; ++t)
      j["entries"].push_back({{"layer", "blk0.qkv"},
                              {"timestep", t},
                              {"role", "activation"},
                              {"path", "t.mxt"}});
    std::ofstream(dir / "manifest.json") << j.dump();
  }
  CalibrationBundle b = load_bundle(dir);
  CHECK(b.entries.size() == 25);
  CHECK(b.timestep_count("blk0.qkv") == 25);

  std::ofstream(dir / "manifest.json") << R"({"entries": [
    {"layer": "l0", "timestep": 1, "role": "activation", "path": "t.mxt"}]})";
  CHECK(error_of([&] { load_bundle(dir); }) == Errc::non_contiguous_timesteps);
}

TEST_CASE("bundle: manifest key set matches disk") {
  auto dir = testutil::scratch_dir("tio_bundle_keys");
  CalibrationBundle out;
  out.root = dir;
  write_tensor(FloatTensor::zeros({2, 2}), dir / "a.mxt");
  write_tensor(FloatTensor::zeros({2, 2}), dir / "w.mxt");
  out.entries.emplace(BundleKey{"l0", 0, TensorRole::activation}, "a.mxt");
  out.entries.emplace(BundleKey{"l0", 0, TensorRole::weight}, "w.mxt");
  write_manifest(out);
  CalibrationBundle in = load_bundle(dir);
  CHECK(in.entries == out.entries);
}
