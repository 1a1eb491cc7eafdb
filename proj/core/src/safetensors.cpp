#include "plop/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace plop {

namespace {

uint64_t read_le_u64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

uint16_t read_le_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

float read_le_f32(const unsigned char* p) {
  uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
               (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(v);
}

}  // namespace

float f16_to_f32(uint16_t bits) {
  uint32_t sign = (bits & 0x8000u) << 16;
  uint32_t exp = (bits >> 10) & 0x1f;
  uint32_t frac = bits & 0x3ff;
  uint32_t out;
  if (exp == 0) {
    if (frac == 0) {
      out = sign;  // +-0
    } else {
      // subnormal: renormalize
      int shift = 0;
      while ((frac & 0x400) == 0) {
        frac <<= 1;
        ++shift;
      }
      frac &= 0x3ff;
      out = sign | ((127 - 15 - shift + 1) << 23) | (frac << 13);
    }
  } else if (exp == 0x1f) {
    out = sign | 0x7f800000u | (frac << 13);  // inf / nan
  } else {
    out = sign | ((exp - 15 + 127) << 23) | (frac << 13);
  }
  return std::bit_cast<float>(out);
}

float bf16_to_f32(uint16_t bits) {
  return std::bit_cast<float>(static_cast<uint32_t>(bits) << 16);
}

TensorBundle parse_safetensors(std::string_view bytes, std::string_view origin) {
  std::string where(origin);
  if (bytes.size() < 8) {
    throw std::runtime_error("safetensors " + where + ": only " + std::to_string(bytes.size()) +
                             " bytes, header length needs 8");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  uint64_t header_len = read_le_u64(p);
  if (8 + header_len > bytes.size()) {
    throw std::runtime_error("safetensors " + where + ": header claims " +
                             std::to_string(header_len) + " bytes but file holds " +
                             std::to_string(bytes.size() - 8) + " past the length field");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const std::exception& e) {
    throw std::runtime_error("safetensors " + where + ": malformed JSON header: " + e.what());
  }
  std::string_view data = bytes.substr(8 + header_len);

  TensorBundle bundle;
  for (const auto& [name, desc] : header.items()) {
    if (name == "__metadata__") continue;
    if (!desc.contains("dtype") || !desc.contains("shape") || !desc.contains("data_offsets")) {
      throw std::runtime_error("safetensors " + where + ": tensor '" + name +
                               "' missing dtype/shape/data_offsets");
    }
    std::string dtype = desc["dtype"].get<std::string>();
    size_t dsize;
    if (dtype == "F32") {
      dsize = 4;
    } else if (dtype == "F16" || dtype == "BF16") {
      dsize = 2;
    } else {
      throw std::runtime_error("safetensors " + where + ": tensor '" + name +
                               "' has unsupported dtype " + dtype);
    }
    auto shape = desc["shape"].get<std::vector<int64_t>>();
    int64_t rows, cols;
    if (shape.size() == 1) {
      rows = 1;
      cols = shape[0];
    } else if (shape.size() == 2) {
      rows = shape[0];
      cols = shape[1];
    } else {
      throw std::runtime_error("safetensors " + where + ": tensor '" + name + "' has rank " +
                               std::to_string(shape.size()) + ", only 1 and 2 are supported");
    }
    if (rows < 1 || cols < 1) {
      throw std::runtime_error("safetensors " + where + ": tensor '" + name + "' has empty shape");
    }
    auto offs = desc["data_offsets"].get<std::vector<uint64_t>>();
    if (offs.size() != 2 || offs[1] < offs[0]) {
      throw std::runtime_error("safetensors " + where + ": tensor '" + name +
                               "' has invalid data_offsets");
    }
    size_t numel = static_cast<size_t>(rows) * static_cast<size_t>(cols);
    if (offs[1] - offs[0] != numel * dsize) {
      throw std::runtime_error("safetensors " + where + ": tensor '" + name + "' spans " +
                               std::to_string(offs[1] - offs[0]) + " bytes but shape needs " +
                               std::to_string(numel * dsize));
    }
    if (offs[1] > data.size()) {
      throw std::runtime_error("safetensors " + where + ": tensor '" + name +
                               "' ends at data byte " + std::to_string(offs[1]) +
                               " but the data region holds " + std::to_string(data.size()));
    }
    BundleEntry e;
    e.name = name;
    e.kind = TensorKind::kWeight;
    e.data = Matrix(rows, cols);
    const auto* src = reinterpret_cast<const unsigned char*>(data.data()) + offs[0];
    if (dtype == "F32") {
      for (size_t i = 0; i < numel; ++i) e.data.data[i] = read_le_f32(src + 4 * i);
    } else if (dtype == "F16") {
      for (size_t i = 0; i < numel; ++i) e.data.data[i] = f16_to_f32(read_le_u16(src + 2 * i));
    } else {
      for (size_t i = 0; i < numel; ++i) e.data.data[i] = bf16_to_f32(read_le_u16(src + 2 * i));
    }
    check_finite(e.data.data, "safetensors tensor '" + name + "'");
    bundle.entries.push_back(std::move(e));
  }
  return bundle;
}

TensorBundle read_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_safetensors(bytes, path.string());
}

}  // namespace plop
