#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "plop/rng.hpp"

namespace plop {

// Dense f32 storage. Every reduction (matvec rows, norms, dots) accumulates
// in double with a fixed left-to-right order, so results are reproducible
// bit-for-bit regardless of how work is scheduled around them.

struct Vector {
  std::vector<float> data;

  Vector() = default;
  explicit Vector(int64_t n) : data(static_cast<size_t>(n), 0.0f) {}

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
};

struct Matrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<float> data;  // row-major

  Matrix() = default;
  Matrix(int64_t r, int64_t c)
      : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0f) {}

  float& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols + j)]; }
  float at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols + j)]; }
};

// Throws when any entry is NaN or infinite; `what` names the offending tensor
// in the message.
void check_finite(std::span<const float> x, std::string_view what);

Vector matvec(const Matrix& W, const Vector& x);
double dot(const Vector& a, const Vector& b);
double sqnorm(const Vector& v);
double norm(const Vector& v);
double l1norm(const Vector& v);
double frobenius_sqnorm(const Matrix& W);

// sign(0) == +1 by convention; NaN input is an error.
float sign(float x);
Vector sign_vector(const Vector& v);

Vector gaussian_vector(Rng& rng, int64_t n, double scale = 1.0);
Matrix gaussian_matrix(Rng& rng, int64_t rows, int64_t cols, double scale = 1.0);

// Returns v * (target / ||v||); zero-norm input is an error.
Vector rescale_to_norm(const Vector& v, double target);

}  // namespace plop
