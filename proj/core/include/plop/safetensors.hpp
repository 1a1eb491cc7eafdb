#pragma once

#include <cstdint>
#include <filesystem>

#include "plop/bundle.hpp"

namespace plop {

// Reads the safetensors container subset we need: an 8-byte little-endian
// header length, a JSON header mapping tensor names to {dtype, shape,
// data_offsets}, then the raw data region. F32 is taken as-is; F16 and BF16
// widen losslessly to f32. 1-D tensors load as 1 x n, higher ranks are
// rejected. Malformed headers, unknown dtypes and out-of-range or mis-sized
// data_offsets are errors naming the offending tensor.
TensorBundle read_safetensors(const std::filesystem::path& path);
TensorBundle parse_safetensors(std::string_view bytes, std::string_view origin);

float f16_to_f32(uint16_t bits);
float bf16_to_f32(uint16_t bits);

}  // namespace plop
