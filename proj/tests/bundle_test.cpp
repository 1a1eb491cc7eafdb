#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "plop/bundle.hpp"
#include "plop/rng.hpp"
#include "plop/safetensors.hpp"
#include "plop/tensor.hpp"

using namespace plop;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* leaf) {
  fs::path p = fs::temp_directory_path() / "plopkit_tests" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put_u64le(std::string& s, uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32le(std::string& s, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void put_u16le(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

std::string wrap_safetensors(const std::string& header, const std::string& payload) {
  std::string out;
  put_u64le(out, header.size());
  out += header;
  out += payload;
  return out;
}

TensorBundle sample_bundle() {
  TensorBundle b;
  BundleEntry w;
  w.name = "layers.0.attn.q_proj";
  w.kind = TensorKind::kWeight;
  w.data = Matrix(2, 3);
  float vals[6] = {1.5f, -2.0f, 0.25f, 1e-7f, 3.0f, -0.5f};
  for (int i = 0; i < 6; ++i) w.data.data[static_cast<size_t>(i)] = vals[i];
  w.module_type = "q_proj";
  w.layer = 0;
  b.entries.push_back(w);

  BundleEntry a;
  a.name = "layers.0.attn.q_proj.inputs";
  a.kind = TensorKind::kActivations;
  a.data = Matrix(4, 3);
  Rng r = Rng::stream(31, "test/bundle");
  for (auto& x : a.data.data) x = static_cast<float>(r.next_gaussian());
  b.entries.push_back(a);
  return b;
}

}  // namespace

TEST_CASE("bundle round trips every field") {
  fs::path dir = fresh_dir("roundtrip");
  TensorBundle b = sample_bundle();
  std::string digest = write_bundle(b, dir / "t");
  CHECK(digest == b.digest);
  CHECK(digest.substr(0, 8) == "fnv1a64:");
  CHECK(digest.size() == 8 + 16);

  TensorBundle r = read_bundle(dir / "t.manifest.json");
  CHECK(r.digest == digest);
  REQUIRE(r.entries.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(r.entries[i].name == b.entries[i].name);
    CHECK(r.entries[i].kind == b.entries[i].kind);
    CHECK(r.entries[i].data.rows == b.entries[i].data.rows);
    CHECK(r.entries[i].data.cols == b.entries[i].data.cols);
    CHECK(std::memcmp(r.entries[i].data.data.data(), b.entries[i].data.data.data(),
                      r.entries[i].data.data.size() * sizeof(float)) == 0);
    CHECK(r.entries[i].module_type == b.entries[i].module_type);
    CHECK(r.entries[i].layer == b.entries[i].layer);
  }
  CHECK(r.find("layers.0.attn.q_proj") != nullptr);
  CHECK(r.find("nope") == nullptr);
}

TEST_CASE("identical bundles serialize to identical bytes") {
  fs::path one = fresh_dir("bytes_one");
  fs::path two = fresh_dir("bytes_two");
  TensorBundle a = sample_bundle();
  TensorBundle b = sample_bundle();
  // same prefix basename in both directories: the manifest names its blob file
  write_bundle(a, one / "t");
  write_bundle(b, two / "t");
  for (const char* leaf : {"t.manifest.json", "t.bin"}) {
    std::ifstream fa(one / leaf, std::ios::binary), fb(two / leaf, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
  }
}

TEST_CASE("damaged bundles are refused") {
  fs::path dir = fresh_dir("damage");
  TensorBundle b = sample_bundle();
  write_bundle(b, dir / "t");

  CHECK_THROWS(read_bundle(dir / "missing.manifest.json"));

  // truncate the blob
  fs::resize_file(dir / "t.bin", 5);
  CHECK_THROWS(read_bundle(dir / "t.manifest.json"));

  write_bundle(b, dir / "t");
  std::ofstream(dir / "t.manifest.json") << "{\"format\": \"someone.else/9\"}";
  CHECK_THROWS(read_bundle(dir / "t.manifest.json"));

  std::ofstream(dir / "t.manifest.json") << "definitely not json";
  CHECK_THROWS(read_bundle(dir / "t.manifest.json"));
}

TEST_CASE("non-finite payloads never reach disk") {
  fs::path dir = fresh_dir("nonfinite");
  TensorBundle b = sample_bundle();
  b.entries[0].data.at(1, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(write_bundle(b, dir / "t"),
                       doctest::Contains("layers.0.attn.q_proj"), std::runtime_error);
}

TEST_CASE("safetensors f32 payload parses exactly") {
  std::string header =
      "{\"w\":{\"dtype\":\"F32\",\"shape\":[2,2],\"data_offsets\":[0,16]}}";
  std::string payload;
  for (float f : {1.5f, -2.25f, 3.0f, 4.5f}) put_f32le(payload, f);
  TensorBundle b = parse_safetensors(wrap_safetensors(header, payload), "inline");
  REQUIRE(b.entries.size() == 1);
  const BundleEntry& e = b.entries[0];
  CHECK(e.name == "w");
  CHECK(e.data.rows == 2);
  CHECK(e.data.cols == 2);
  CHECK(e.data.at(0, 0) == 1.5f);
  CHECK(e.data.at(0, 1) == -2.25f);
  CHECK(e.data.at(1, 0) == 3.0f);
  CHECK(e.data.at(1, 1) == 4.5f);
}

TEST_CASE("safetensors half precision widens exactly") {
  std::string header =
      "{\"h\":{\"dtype\":\"F16\",\"shape\":[2],\"data_offsets\":[0,4]},"
      "\"b\":{\"dtype\":\"BF16\",\"shape\":[2],\"data_offsets\":[4,8]}}";
  std::string payload;
  put_u16le(payload, 0x3C00);  // f16 1.0
  put_u16le(payload, 0xC000);  // f16 -2.0
  put_u16le(payload, 0x3FC0);  // bf16 1.5
  put_u16le(payload, 0xC0A0);  // bf16 -5.0
  TensorBundle b = parse_safetensors(wrap_safetensors(header, payload), "inline");
  REQUIRE(b.entries.size() == 2);
  // entries come back sorted by name
  CHECK(b.entries[0].name == "b");
  CHECK(b.entries[0].data.at(0, 0) == 1.5f);
  CHECK(b.entries[0].data.at(0, 1) == -5.0f);
  CHECK(b.entries[1].name == "h");
  CHECK(b.entries[1].data.at(0, 0) == 1.0f);
  CHECK(b.entries[1].data.at(0, 1) == -2.0f);
  // 1-d tensors land as a single row
  CHECK(b.entries[0].data.rows == 1);
  CHECK(b.entries[0].data.cols == 2);
}

TEST_CASE("half conversions cover subnormals and extremes") {
  CHECK(f16_to_f32(0x3C00) == 1.0f);
  CHECK(f16_to_f32(0x0001) == doctest::Approx(5.9604644775390625e-8).epsilon(1e-12));
  CHECK(f16_to_f32(0x7BFF) == 65504.0f);
  CHECK(f16_to_f32(0x8000) == 0.0f);
  CHECK(bf16_to_f32(0x3F80) == 1.0f);
  CHECK(bf16_to_f32(0x0080) > 0.0f);  // smallest normal survives
}

TEST_CASE("malformed safetensors are rejected") {
  // rank 3
  std::string r3 = "{\"w\":{\"dtype\":\"F32\",\"shape\":[2,2,2],\"data_offsets\":[0,32]}}";
  std::string pay(32, '\0');
  CHECK_THROWS(parse_safetensors(wrap_safetensors(r3, pay), "t"));
  // unknown dtype
  std::string dt = "{\"w\":{\"dtype\":\"I64\",\"shape\":[1],\"data_offsets\":[0,8]}}";
  CHECK_THROWS(parse_safetensors(wrap_safetensors(dt, std::string(8, '\0')), "t"));
  // offsets beyond the payload
  std::string off = "{\"w\":{\"dtype\":\"F32\",\"shape\":[4],\"data_offsets\":[0,16]}}";
  CHECK_THROWS(parse_safetensors(wrap_safetensors(off, std::string(8, '\0')), "t"));
  // offsets inconsistent with the shape
  std::string sz = "{\"w\":{\"dtype\":\"F32\",\"shape\":[4],\"data_offsets\":[0,8]}}";
  CHECK_THROWS(parse_safetensors(wrap_safetensors(sz, std::string(8, '\0')), "t"));
  // header is not json
  CHECK_THROWS(parse_safetensors(wrap_safetensors("oops", ""), "t"));
  // file shorter than its own header length field
  std::string tiny;
  put_u64le(tiny, 1000);
  CHECK_THROWS(parse_safetensors(tiny, "t"));
  // non-finite value
  std::string inf = "{\"w\":{\"dtype\":\"F32\",\"shape\":[1],\"data_offsets\":[0,4]}}";
  std::string ipay;
  put_f32le(ipay, std::numeric_limits<float>::infinity());
  CHECK_THROWS_WITH_AS(parse_safetensors(wrap_safetensors(inf, ipay), "t"),
                       doctest::Contains("w"), std::runtime_error);
}

TEST_CASE("read_safetensors matches parse_safetensors") {
  fs::path dir = fresh_dir("stfile");
  std::string header = "{\"v\":{\"dtype\":\"F32\",\"shape\":[3],\"data_offsets\":[0,12]}}";
  std::string payload;
  for (float f : {0.5f, 1.5f, 2.5f}) put_f32le(payload, f);
  std::string bytes = wrap_safetensors(header, payload);
  std::ofstream(dir / "m.safetensors", std::ios::binary).write(bytes.data(),
                                                               static_cast<long>(bytes.size()));
  TensorBundle a = read_safetensors(dir / "m.safetensors");
  TensorBundle b = parse_safetensors(bytes, "inline");
  REQUIRE(a.entries.size() == b.entries.size());
  CHECK(a.entries[0].data.data == b.entries[0].data.data);
  CHECK_THROWS(read_safetensors(dir / "absent.safetensors"));
}
