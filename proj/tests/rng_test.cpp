#include <doctest.h>

#include <cmath>
#include <cstdint>

#include "plop/rng.hpp"

using plop::Rng;

TEST_CASE("streams are pure functions of (seed, label, index)") {
  Rng a = Rng::stream(42, "test/a");
  Rng b = Rng::stream(42, "test/a");
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c = Rng::stream(42, "test/a", 7);
  Rng d = Rng::stream(42, "test/a", 7);
  for (int i = 0; i < 64; ++i) CHECK(c.next_u64() == d.next_u64());
}

// Pinned outputs. These fix the generator's on-disk behavior: bundle digests
// and captured activations are only stable across builds if these are.
TEST_CASE("pinned values guard the generator against silent change") {
  Rng r = Rng::stream(1, "x");
  CHECK(r.next_u64() == 3037376454547499918ull);
  CHECK(r.next_u64() == 4758312850545177710ull);
  Rng s = Rng::stream(1, "x", 3);
  CHECK(s.next_u64() == 8020453211885091025ull);
}

TEST_CASE("distinct labels and indices give distinct streams") {
  Rng a = Rng::stream(9, "one");
  Rng b = Rng::stream(9, "two");
  Rng c = Rng::stream(9, "one", 0);
  Rng d = Rng::stream(9, "one", 1);
  CHECK(a.next_u64() != b.next_u64());
  CHECK(c.next_u64() != d.next_u64());
  // the indexed stream is not the plain one either
  Rng e = Rng::stream(9, "one");
  Rng f = Rng::stream(9, "one", 0);
  CHECK(e.next_u64() != f.next_u64());
}

TEST_CASE("uniform draws stay inside their interval") {
  Rng r = Rng::stream(3, "test/unif");
  for (int i = 0; i < 1000; ++i) {
    double u = r.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng s = Rng::stream(3, "test/unif2");
  for (int i = 0; i < 1000; ++i) {
    double u = s.next_uniform(-2.0, 5.0);
    CHECK(u >= -2.0);
    CHECK(u < 5.0);
  }
}

TEST_CASE("gaussian moments match a standard normal") {
  Rng r = Rng::stream(11, "test/gauss");
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double g = r.next_gaussian();
    s += g;
    s2 += g * g;
  }
  double mean = s / n;
  double var = s2 / n - mean * mean;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(var - 1.0) < 0.05);
}
