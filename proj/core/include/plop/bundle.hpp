#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "plop/tensor.hpp"

namespace plop {

// On-disk tensor bundle: <prefix>.manifest.json describing shapes and byte
// ranges, <prefix>.bin holding raw little-endian f32 data, row-major. The
// manifest's digest field is the FNV-1a hash of the blob, used as cheap
// provenance, not integrity protection.

inline constexpr const char* kBundleFormat = "plop.bundle/1";

enum class TensorKind { kWeight, kActivations };

const char* tensor_kind_name(TensorKind k);
TensorKind tensor_kind_from_name(std::string_view name);

struct BundleEntry {
  std::string name;
  TensorKind kind = TensorKind::kWeight;
  Matrix data;  // activations store one sample per row
  std::optional<std::string> module_type;
  std::optional<int> layer;
};

struct TensorBundle {
  std::vector<BundleEntry> entries;
  std::string digest;  // filled by write_bundle / read_bundle

  const BundleEntry* find(std::string_view name) const;
};

// Hex FNV-1a of the blob bytes the bundle serializes to.
std::string bundle_digest(const TensorBundle& bundle);

// Writes <prefix>.manifest.json and <prefix>.bin; returns the blob digest.
std::string write_bundle(TensorBundle& bundle, const std::filesystem::path& prefix);

// Accepts the prefix or the manifest path. Validates magic, dtype, byte
// ranges against the actual blob, and entry finiteness; errors name byte
// offsets where applicable.
TensorBundle read_bundle(const std::filesystem::path& path);

}  // namespace plop
