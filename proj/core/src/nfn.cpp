#include "plop/nfn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

namespace plop {

const char* convention_name(NfnConvention c) {
  return c == NfnConvention::kSquared ? "squared" : "unsquared";
}

NfnConvention convention_from_name(std::string_view name) {
  if (name == "squared") return NfnConvention::kSquared;
  if (name == "unsquared") return NfnConvention::kUnsquared;
  throw std::invalid_argument("unknown convention '" + std::string(name) +
                              "' (expected squared or unsquared)");
}

std::vector<Vector> baseline_inputs(const Vector& z, int m, Rng& rng) {
  if (m < 1) {
    throw std::invalid_argument("baseline_inputs: m must be >= 1, got " + std::to_string(m));
  }
  double target = norm(z);
  if (target == 0.0) {
    throw std::runtime_error("baseline_inputs: zero-norm input");
  }
  std::vector<Vector> out;
  out.reserve(static_cast<size_t>(m));
  for (int k = 0; k < m; ++k) {
    out.push_back(rescale_to_norm(gaussian_vector(rng, z.size()), target));
  }
  return out;
}

float nfn_sample(const Matrix& W, const Vector& z, int m, Rng& rng, NfnConvention convention) {
  auto draws = baseline_inputs(z, m, rng);
  bool squared = convention == NfnConvention::kSquared;
  double num = sqnorm(matvec(W, z));
  if (!squared) num = std::sqrt(num);
  double den = 0.0;
  for (const Vector& zt : draws) {
    double s = sqnorm(matvec(W, zt));
    den += squared ? s : std::sqrt(s);
  }
  den /= m;
  if (den == 0.0) {
    throw std::runtime_error("nfn_sample: degenerate baseline (W maps all draws to zero)");
  }
  return static_cast<float>(num / den);
}

float nfn_closed_form(const Matrix& W, const Vector& z) {
  double zz = sqnorm(z);
  double ff = frobenius_sqnorm(W);
  if (zz == 0.0 || ff == 0.0) {
    throw std::runtime_error("nfn_closed_form: zero-norm input or weight");
  }
  double num = sqnorm(matvec(W, z));
  return static_cast<float>(static_cast<double>(W.cols) * num / (ff * zz));
}

NFNScore nfn_dataset(const Matrix& W, const ActivationBatch& batch, const NfnOptions& opts,
                     uint64_t seed) {
  if (batch.inputs.empty()) {
    throw std::runtime_error("nfn_dataset: empty batch for module '" + batch.module_name + "'");
  }
  NFNScore out;
  out.module_name = batch.module_name;
  out.m_baseline_draws = opts.m;
  bool squared = opts.convention == NfnConvention::kSquared;
  double acc = 0.0, feat = 0.0, base = 0.0;
  for (size_t i = 0; i < batch.inputs.size(); ++i) {
    const Vector& z = batch.inputs[i];
    check_finite(z.data, batch.module_name + " input " + std::to_string(i));
    if (sqnorm(z) == 0.0) {
      ++out.n_skipped;
      continue;
    }
    Rng rng = Rng::stream(seed, batch.module_name, static_cast<int64_t>(i));
    auto draws = baseline_inputs(z, opts.m, rng);
    double num = sqnorm(matvec(W, z));
    double den = 0.0;
    for (const Vector& zt : draws) den += sqnorm(matvec(W, zt));
    den /= opts.m;
    if (den == 0.0) {
      throw std::runtime_error("nfn_dataset: degenerate baseline for module '" +
                               batch.module_name + "'");
    }
    feat += num;
    base += den;
    acc += squared ? num / den : std::sqrt(num) / std::sqrt(den);
    ++out.n_samples;
  }
  if (out.n_samples == 0) {
    throw std::runtime_error("nfn_dataset: all " + std::to_string(out.n_skipped) +
                             " inputs for module '" + batch.module_name + "' had zero norm");
  }
  out.score = static_cast<float>(acc / static_cast<double>(out.n_samples));
  out.mean_feature_sqnorm = feat / static_cast<double>(out.n_samples);
  out.mean_baseline_sqnorm = base / static_cast<double>(out.n_samples);
  return out;
}

std::vector<NFNScore> score_modules(const std::vector<const Matrix*>& weights,
                                    const std::vector<const ActivationBatch*>& batches,
                                    const NfnOptions& opts, uint64_t seed, int workers) {
  if (weights.size() != batches.size()) {
    throw std::invalid_argument("score_modules: " + std::to_string(weights.size()) +
                                " weights vs " + std::to_string(batches.size()) + " batches");
  }
  if (workers < 1) {
    throw std::invalid_argument("score_modules: workers must be >= 1");
  }
  std::vector<NFNScore> out(weights.size());
  std::atomic<size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto work = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= weights.size()) return;
      try {
        out[i] = nfn_dataset(*weights[i], *batches[i], opts, seed);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  if (workers == 1 || weights.size() <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    int n = std::min<int>(workers, static_cast<int>(weights.size()));
    pool.reserve(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

}  // namespace plop
