#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <vector>

#include "plop/nfn.hpp"
#include "plop/rng.hpp"
#include "plop/tensor.hpp"

using namespace plop;

namespace {

Matrix identity(int64_t n) {
  Matrix W(n, n);
  for (int64_t i = 0; i < n; ++i) W.at(i, i) = 1.0f;
  return W;
}

}  // namespace

TEST_CASE("convention names round trip") {
  CHECK(convention_from_name(convention_name(NfnConvention::kSquared)) == NfnConvention::kSquared);
  CHECK(convention_from_name(convention_name(NfnConvention::kUnsquared)) ==
        NfnConvention::kUnsquared);
  CHECK_THROWS(convention_from_name("cubed"));
}

TEST_CASE("identity scores one under both conventions") {
  Rng zr = Rng::stream(21, "test/idz");
  Vector z = gaussian_vector(zr, 48);
  Matrix W = identity(48);
  Rng mc1 = Rng::stream(21, "test/idmc");
  Rng mc2 = Rng::stream(21, "test/idmc");
  CHECK(nfn_sample(W, z, 4, mc1, NfnConvention::kSquared) == doctest::Approx(1.0f).epsilon(1e-5));
  CHECK(nfn_sample(W, z, 4, mc2, NfnConvention::kUnsquared) == doctest::Approx(1.0f).epsilon(1e-5));
  CHECK(nfn_closed_form(W, z) == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("rank one against its own direction hits n_in exactly") {
  // W = a b^T concentrates all its mass on b. Feeding z parallel to b gives
  // n_in ||a||^2 (b.z)^2 / (||a||^2 ||b||^2 ||z||^2) = n_in.
  Rng r = Rng::stream(22, "test/rank1");
  const int64_t n_out = 24, n_in = 40;
  Vector a = gaussian_vector(r, n_out);
  Vector b = gaussian_vector(r, n_in);
  Matrix W(n_out, n_in);
  for (int64_t i = 0; i < n_out; ++i)
    for (int64_t j = 0; j < n_in; ++j) W.at(i, j) = a[i] * b[j];
  Vector z(n_in);
  for (int64_t j = 0; j < n_in; ++j) z[j] = 2.5f * b[j];
  CHECK(nfn_closed_form(W, z) ==
        doctest::Approx(static_cast<float>(n_in)).epsilon(1e-4));
}

TEST_CASE("monte carlo at m=64 sits near the closed form") {
  Rng wr = Rng::stream(900, "pilot/w");
  Rng zr = Rng::stream(900, "pilot/z");
  Matrix W = gaussian_matrix(wr, 96, 128);
  Vector z = gaussian_vector(zr, 128);
  double cf = nfn_closed_form(W, z);
  Rng mc = Rng::stream(900, "pilot/mc");
  double est = nfn_sample(W, z, 64, mc, NfnConvention::kSquared);
  CHECK(std::fabs(est - cf) / cf < 0.15);
}

TEST_CASE("estimator variance decays like 1/m") {
  Rng wr = Rng::stream(901, "pilot/w");
  Rng zr = Rng::stream(901, "pilot/z");
  Matrix W = gaussian_matrix(wr, 96, 128);
  Vector z = gaussian_vector(zr, 128);
  auto var_at = [&](int m) {
    const int reps = 200;
    double s = 0, s2 = 0;
    for (int i = 0; i < reps; ++i) {
      Rng mc = Rng::stream(901, "pilot/mc", m * 1000 + i);
      double v = nfn_sample(W, z, m, mc, NfnConvention::kSquared);
      s += v;
      s2 += v * v;
    }
    double mean = s / reps;
    return s2 / reps - mean * mean;
  };
  double slope = (std::log(var_at(64)) - std::log(var_at(8))) / std::log(8.0);
  CHECK(slope > -1.2);
  CHECK(slope < -0.8);
}

TEST_CASE("power of two rescaling leaves the float bits alone") {
  Rng wr = Rng::stream(23, "test/sw");
  Rng zr = Rng::stream(23, "test/sz");
  Matrix W = gaussian_matrix(wr, 32, 48);
  Vector z = gaussian_vector(zr, 48);
  for (float c : {0.5f, 8.0f, 1024.0f}) {
    Matrix Wc = W;
    for (auto& x : Wc.data) x *= c;
    Rng m1 = Rng::stream(23, "test/smc");
    Rng m2 = Rng::stream(23, "test/smc");
    float base = nfn_sample(W, z, 4, m1);
    float scaled = nfn_sample(Wc, z, 4, m2);
    CHECK(std::memcmp(&base, &scaled, sizeof(float)) == 0);
  }
}

TEST_CASE("dataset scoring counts skipped zero inputs") {
  Matrix W = identity(8);
  ActivationBatch batch;
  batch.module_name = "layers.0.attn.q_proj";
  Rng r = Rng::stream(24, "test/ds");
  batch.inputs.push_back(gaussian_vector(r, 8));
  batch.inputs.push_back(Vector(8));  // all zeros, must be skipped
  batch.inputs.push_back(gaussian_vector(r, 8));
  NfnOptions opts;
  NFNScore s = nfn_dataset(W, batch, opts, 77);
  CHECK(s.n_samples == 2);
  CHECK(s.n_skipped == 1);
  CHECK(s.score == doctest::Approx(1.0f).epsilon(1e-5));
  CHECK(s.m_baseline_draws == opts.m);

  ActivationBatch zeros;
  zeros.module_name = "z";
  zeros.inputs.assign(2, Vector(8));
  CHECK_THROWS(nfn_dataset(W, zeros, opts, 77));
  ActivationBatch empty;
  empty.module_name = "e";
  CHECK_THROWS(nfn_dataset(W, empty, opts, 77));
}

TEST_CASE("non-finite activations are rejected with a name") {
  Matrix W = identity(4);
  ActivationBatch batch;
  batch.module_name = "layers.1.mlp.up_proj";
  Vector bad(4);
  bad[2] = std::numeric_limits<float>::quiet_NaN();
  batch.inputs.push_back(bad);
  NfnOptions opts;
  CHECK_THROWS_WITH_AS(nfn_dataset(W, batch, opts, 1),
                       doctest::Contains("layers.1.mlp.up_proj"), std::runtime_error);
}

TEST_CASE("module scores ignore evaluation order and pool size") {
  Rng r = Rng::stream(25, "test/pool");
  Matrix Wa = gaussian_matrix(r, 16, 16);
  Matrix Wb = gaussian_matrix(r, 16, 16);
  ActivationBatch ba, bb;
  ba.module_name = "a";
  bb.module_name = "b";
  for (int i = 0; i < 6; ++i) {
    ba.inputs.push_back(gaussian_vector(r, 16));
    bb.inputs.push_back(gaussian_vector(r, 16));
  }
  NfnOptions opts;
  auto fwd = score_modules({&Wa, &Wb}, {&ba, &bb}, opts, 5, 1);
  auto rev = score_modules({&Wb, &Wa}, {&bb, &ba}, opts, 5, 1);
  auto pool = score_modules({&Wa, &Wb}, {&ba, &bb}, opts, 5, 4);
  REQUIRE(fwd.size() == 2);
  CHECK(fwd[0].score == rev[1].score);
  CHECK(fwd[1].score == rev[0].score);
  CHECK(fwd[0].score == pool[0].score);
  CHECK(fwd[1].score == pool[1].score);

  CHECK_THROWS(score_modules({&Wa}, {&ba, &bb}, opts, 5, 1));
}
