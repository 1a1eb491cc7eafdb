#include "plop/bundle.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace plop {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string to_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string blob_bytes(const TensorBundle& bundle) {
  std::string blob;
  for (const BundleEntry& e : bundle.entries) {
    size_t n = e.data.data.size() * sizeof(float);
    size_t at = blob.size();
    blob.resize(at + n);
    std::memcpy(blob.data() + at, e.data.data.data(), n);
  }
  return blob;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return out;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("short write to " + path.string());
  }
}

}  // namespace

const char* tensor_kind_name(TensorKind k) {
  return k == TensorKind::kWeight ? "weight" : "activations";
}

TensorKind tensor_kind_from_name(std::string_view name) {
  if (name == "weight") return TensorKind::kWeight;
  if (name == "activations") return TensorKind::kActivations;
  throw std::runtime_error("unknown tensor kind '" + std::string(name) + "'");
}

const BundleEntry* TensorBundle::find(std::string_view name) const {
  for (const BundleEntry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string bundle_digest(const TensorBundle& bundle) {
  return "fnv1a64:" + to_hex(fnv1a64(blob_bytes(bundle)));
}

std::string write_bundle(TensorBundle& bundle, const std::filesystem::path& prefix) {
  for (const BundleEntry& e : bundle.entries) {
    if (e.name.empty()) {
      throw std::runtime_error("write_bundle: entry with empty name");
    }
    if (e.data.rows < 1 || e.data.cols < 1) {
      throw std::runtime_error("write_bundle: entry '" + e.name + "' has empty shape");
    }
    check_finite(e.data.data, "bundle entry '" + e.name + "'");
  }
  std::string blob = blob_bytes(bundle);
  bundle.digest = "fnv1a64:" + to_hex(fnv1a64(blob));

  ordered_json manifest;
  manifest["format"] = kBundleFormat;
  manifest["byte_order"] = "little";
  manifest["dtype"] = "f32";
  manifest["blob"] = prefix.filename().string() + ".bin";
  manifest["digest"] = bundle.digest;
  ordered_json tensors = ordered_json::array();
  size_t offset = 0;
  for (const BundleEntry& e : bundle.entries) {
    size_t nbytes = e.data.data.size() * sizeof(float);
    ordered_json t;
    t["name"] = e.name;
    t["kind"] = tensor_kind_name(e.kind);
    t["shape"] = {e.data.rows, e.data.cols};
    t["offset"] = offset;
    t["nbytes"] = nbytes;
    if (e.module_type) t["module_type"] = *e.module_type;
    if (e.layer) t["layer"] = *e.layer;
    tensors.push_back(std::move(t));
    offset += nbytes;
  }
  manifest["tensors"] = std::move(tensors);

  std::filesystem::path manifest_path = prefix;
  manifest_path += ".manifest.json";
  std::filesystem::path blob_path = prefix;
  blob_path += ".bin";
  write_file(manifest_path, manifest.dump(2) + "\n");
  write_file(blob_path, blob);
  return bundle.digest;
}

TensorBundle read_bundle(const std::filesystem::path& path) {
  std::filesystem::path manifest_path = path;
  if (manifest_path.string().ends_with(".manifest.json")) {
    // already the manifest
  } else {
    manifest_path += ".manifest.json";
  }
  std::string manifest_text = read_file(manifest_path);
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(manifest_text);
  } catch (const std::exception& e) {
    throw std::runtime_error("read_bundle: malformed manifest " + manifest_path.string() + ": " +
                             e.what());
  }
  if (!manifest.contains("format") || manifest["format"] != kBundleFormat) {
    throw std::runtime_error("read_bundle: bad magic in " + manifest_path.string() +
                             " (expected format '" + std::string(kBundleFormat) + "')");
  }
  if (manifest.value("dtype", "") != "f32") {
    throw std::runtime_error("read_bundle: unsupported dtype '" +
                             manifest.value("dtype", std::string("<missing>")) + "'");
  }
  std::filesystem::path blob_path =
      manifest_path.parent_path() / manifest.value("blob", std::string());
  std::string blob = read_file(blob_path);

  TensorBundle bundle;
  for (const auto& t : manifest.at("tensors")) {
    BundleEntry e;
    e.name = t.at("name").get<std::string>();
    e.kind = tensor_kind_from_name(t.at("kind").get<std::string>());
    auto shape = t.at("shape").get<std::vector<int64_t>>();
    if (shape.size() != 2 || shape[0] < 1 || shape[1] < 1) {
      throw std::runtime_error("read_bundle: entry '" + e.name + "' has invalid shape");
    }
    size_t offset = t.at("offset").get<size_t>();
    size_t nbytes = t.at("nbytes").get<size_t>();
    size_t expect = static_cast<size_t>(shape[0]) * static_cast<size_t>(shape[1]) * sizeof(float);
    if (nbytes != expect) {
      throw std::runtime_error("read_bundle: entry '" + e.name + "' declares " +
                               std::to_string(nbytes) + " bytes but shape needs " +
                               std::to_string(expect));
    }
    if (offset + nbytes > blob.size()) {
      throw std::runtime_error("read_bundle: entry '" + e.name + "' spans bytes [" +
                               std::to_string(offset) + ", " + std::to_string(offset + nbytes) +
                               ") but blob " + blob_path.string() + " holds only " +
                               std::to_string(blob.size()) + " bytes (truncated?)");
    }
    e.data = Matrix(shape[0], shape[1]);
    std::memcpy(e.data.data.data(), blob.data() + offset, nbytes);
    check_finite(e.data.data, "bundle entry '" + e.name + "'");
    if (t.contains("module_type")) e.module_type = t["module_type"].get<std::string>();
    if (t.contains("layer")) e.layer = t["layer"].get<int>();
    bundle.entries.push_back(std::move(e));
  }
  bundle.digest = "fnv1a64:" + to_hex(fnv1a64(blob));
  if (manifest.contains("digest") && manifest["digest"] != bundle.digest) {
    throw std::runtime_error("read_bundle: digest mismatch for " + blob_path.string() +
                             " (manifest says " + manifest["digest"].get<std::string>() +
                             ", blob hashes to " + bundle.digest + ")");
  }
  return bundle;
}

}  // namespace plop
