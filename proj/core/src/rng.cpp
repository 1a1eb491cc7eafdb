#include "plop/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace plop {

namespace {

constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ull;

uint64_t mix64(uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}

}  // namespace

uint64_t fnv1a64(std::string_view bytes, uint64_t basis) {
  uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

Rng::Rng(uint64_t seed) : state_(mix64(seed ^ kGamma)) {}

Rng Rng::stream(uint64_t seed, std::string_view label) {
  Rng r(seed);
  r.state_ = mix64(r.state_ ^ fnv1a64(label));
  return r;
}

Rng Rng::stream(uint64_t seed, std::string_view label, int64_t index) {
  std::string full(label);
  full += '/';
  full += std::to_string(index);
  return stream(seed, full);
}

uint64_t Rng::next_u64() {
  state_ += kGamma;
  return mix64(state_);
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 1.0 - next_double();  // (0, 1], keeps log() finite
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

double Rng::next_uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

}  // namespace plop
