#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plop/tensor.hpp"

namespace plop {

// Normalized feature norm. For an input z and a weight W, the score compares
// ||W z|| against ||W z~|| where z~ is an isotropic gaussian direction
// rescaled to ||z||. The squared convention averages squared-norm ratios and
// is the default; the unsquared one ratios plain norms.
enum class NfnConvention { kSquared, kUnsquared };

const char* convention_name(NfnConvention c);
NfnConvention convention_from_name(std::string_view name);

struct NfnOptions {
  NfnConvention convention = NfnConvention::kSquared;
  int m = 4;  // baseline draws per sample
};

struct ActivationBatch {
  std::string module_name;
  std::vector<Vector> inputs;
};

struct NFNScore {
  std::string module_name;
  float score = 0.0f;
  int64_t n_samples = 0;
  int64_t n_skipped = 0;  // zero-norm inputs dropped from the mean
  int m_baseline_draws = 0;
  double mean_feature_sqnorm = 0.0;
  double mean_baseline_sqnorm = 0.0;
};

// m gaussian draws rescaled to ||z||, consumed in order from `rng`.
std::vector<Vector> baseline_inputs(const Vector& z, int m, Rng& rng);

// Score of a single input against m baseline draws from `rng`. The interior
// runs in double; the returned float is the score's contract type (the ratio
// is scale-free at f32 granularity, exactly so for power-of-two scalings).
float nfn_sample(const Matrix& W, const Vector& z, int m, Rng& rng,
                 NfnConvention convention = NfnConvention::kSquared);

// Deterministic approximation n_in * ||W z||^2 / (||W||_F^2 ||z||^2): the
// denominator of the squared convention has expectation ||z||^2 ||W||_F^2 / n_in
// over rescaled-gaussian draws, so this is the m -> infinity limit.
float nfn_closed_form(const Matrix& W, const Vector& z);

// Mean score over a batch, one baseline substream per (seed, module, sample),
// so the result is independent of evaluation order. Zero-norm inputs are
// skipped and counted; an empty or fully-skipped batch is an error.
NFNScore nfn_dataset(const Matrix& W, const ActivationBatch& batch, const NfnOptions& opts,
                     uint64_t seed);

// Scores modules on a worker pool. weights[i] pairs with batches[i]; results
// keep input order and are byte-identical for any worker count >= 1.
std::vector<NFNScore> score_modules(const std::vector<const Matrix*>& weights,
                                    const std::vector<const ActivationBatch*>& batches,
                                    const NfnOptions& opts, uint64_t seed, int workers);

}  // namespace plop
