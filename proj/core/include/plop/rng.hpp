#pragma once

#include <cstdint>
#include <string_view>

namespace plop {

// Counter-based splitmix64 stream. Consumers derive private substreams from
// (seed, label) pairs, so draws never depend on the order in which unrelated
// parts of a run touch the generator. Equal (seed, label) pairs produce
// byte-identical sequences on every platform we target.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  static Rng stream(uint64_t seed, std::string_view label);
  static Rng stream(uint64_t seed, std::string_view label, int64_t index);

  uint64_t next_u64();

  // Uniform in [0, 1), 53 significant bits.
  double next_double();

  // Standard normal via Box-Muller on two uniform draws; the second value of
  // each pair is cached, so a stream yields gaussians two uniforms at a time.
  double next_gaussian();

  double next_uniform(double lo, double hi);

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a over a byte string. Used for stream labels and content digests;
// not cryptographic.
uint64_t fnv1a64(std::string_view bytes, uint64_t basis = 0xcbf29ce484222325ull);

}  // namespace plop
