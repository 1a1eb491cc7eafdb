#include "plop/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace plop {

void check_finite(std::span<const float> x, std::string_view what) {
  for (size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw std::runtime_error("non-finite value in " + std::string(what) +
                               " at index " + std::to_string(i));
    }
  }
}

Vector matvec(const Matrix& W, const Vector& x) {
  if (W.cols != x.size()) {
    throw std::invalid_argument("matvec: shape mismatch, W is " + std::to_string(W.rows) +
                                "x" + std::to_string(W.cols) + ", x has " +
                                std::to_string(x.size()) + " entries");
  }
  Vector out(W.rows);
  const float* w = W.data.data();
  for (int64_t i = 0; i < W.rows; ++i) {
    double acc = 0.0;
    const float* row = w + i * W.cols;
    for (int64_t j = 0; j < W.cols; ++j) {
      acc += static_cast<double>(row[j]) * static_cast<double>(x[j]);
    }
    out[i] = static_cast<float>(acc);
  }
  return out;
}

double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: size mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

double sqnorm(const Vector& v) {
  double acc = 0.0;
  for (int64_t i = 0; i < v.size(); ++i) {
    acc += static_cast<double>(v[i]) * static_cast<double>(v[i]);
  }
  return acc;
}

double norm(const Vector& v) { return std::sqrt(sqnorm(v)); }

double l1norm(const Vector& v) {
  double acc = 0.0;
  for (int64_t i = 0; i < v.size(); ++i) {
    acc += std::abs(static_cast<double>(v[i]));
  }
  return acc;
}

double frobenius_sqnorm(const Matrix& W) {
  double acc = 0.0;
  for (float f : W.data) {
    acc += static_cast<double>(f) * static_cast<double>(f);
  }
  return acc;
}

float sign(float x) {
  if (std::isnan(x)) {
    throw std::runtime_error("sign: NaN input");
  }
  return x >= 0.0f ? 1.0f : -1.0f;
}

Vector sign_vector(const Vector& v) {
  Vector out(v.size());
  for (int64_t i = 0; i < v.size(); ++i) {
    out[i] = sign(v[i]);
  }
  return out;
}

Vector gaussian_vector(Rng& rng, int64_t n, double scale) {
  Vector out(n);
  for (int64_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(rng.next_gaussian() * scale);
  }
  return out;
}

Matrix gaussian_matrix(Rng& rng, int64_t rows, int64_t cols, double scale) {
  Matrix out(rows, cols);
  for (float& f : out.data) {
    f = static_cast<float>(rng.next_gaussian() * scale);
  }
  return out;
}

Vector rescale_to_norm(const Vector& v, double target) {
  double n = norm(v);
  if (n == 0.0) {
    throw std::runtime_error("rescale_to_norm: zero-norm input");
  }
  double s = target / n;
  Vector out(v.size());
  for (int64_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(v[i]) * s);
  }
  return out;
}

}  // namespace plop
