#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "plop/rng.hpp"
#include "plop/tensor.hpp"

using namespace plop;

TEST_CASE("matvec against a hand computed product") {
  Matrix W(2, 2);
  W.at(0, 0) = 1; W.at(0, 1) = 2;
  W.at(1, 0) = 3; W.at(1, 1) = 4;
  Vector x(2);
  x[0] = 1; x[1] = 1;
  Vector y = matvec(W, x);
  CHECK(y.size() == 2);
  CHECK(y[0] == 3.0f);
  CHECK(y[1] == 7.0f);

  Vector wrong(3);
  CHECK_THROWS_AS(matvec(W, wrong), std::invalid_argument);
}

TEST_CASE("norms of the 3-4-5 triangle") {
  Vector v(2);
  v[0] = 3; v[1] = -4;
  CHECK(sqnorm(v) == doctest::Approx(25.0));
  CHECK(norm(v) == doctest::Approx(5.0));
  CHECK(l1norm(v) == doctest::Approx(7.0));

  Matrix W(2, 1);
  W.at(0, 0) = 3; W.at(1, 0) = 4;
  CHECK(frobenius_sqnorm(W) == doctest::Approx(25.0));

  Vector a(2), b(2);
  a[0] = 1; a[1] = 2; b[0] = 3; b[1] = -1;
  CHECK(dot(a, b) == doctest::Approx(1.0));
  CHECK_THROWS_AS(dot(a, Vector(3)), std::invalid_argument);
}

TEST_CASE("sign maps zero to plus one") {
  CHECK(sign(0.0f) == 1.0f);
  CHECK(sign(-0.0f) == 1.0f);
  CHECK(sign(2.5f) == 1.0f);
  CHECK(sign(-1e-30f) == -1.0f);
  CHECK_THROWS_AS(sign(std::numeric_limits<float>::quiet_NaN()), std::runtime_error);

  Vector v(3);
  v[0] = -2; v[1] = 0; v[2] = 7;
  Vector s = sign_vector(v);
  CHECK(s[0] == -1.0f);
  CHECK(s[1] == 1.0f);
  CHECK(s[2] == 1.0f);
}

TEST_CASE("gaussian helpers honor shape and scale") {
  Rng r = Rng::stream(5, "test/gv");
  Vector v = gaussian_vector(r, 2000, 3.0);
  CHECK(v.size() == 2000);
  double s2 = 0;
  for (int64_t i = 0; i < v.size(); ++i) s2 += static_cast<double>(v[i]) * v[i];
  double var = s2 / 2000.0;
  CHECK(var > 9.0 * 0.8);
  CHECK(var < 9.0 * 1.2);

  Rng r2 = Rng::stream(5, "test/gm");
  Matrix W = gaussian_matrix(r2, 3, 4);
  CHECK(W.rows == 3);
  CHECK(W.cols == 4);
}

TEST_CASE("rescale keeps direction and fixes the norm") {
  Vector v(3);
  v[0] = 1; v[1] = 2; v[2] = 2;  // norm 3
  Vector w = rescale_to_norm(v, 6.0);
  CHECK(norm(w) == doctest::Approx(6.0));
  CHECK(w[0] == doctest::Approx(2.0f));
  CHECK(w[1] == doctest::Approx(4.0f));
  CHECK_THROWS_AS(rescale_to_norm(Vector(4), 1.0), std::runtime_error);
}

TEST_CASE("check_finite names the offending tensor") {
  Vector v(2);
  v[1] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_WITH_AS(check_finite(v.data, "probe vector"),
                       doctest::Contains("probe vector"), std::runtime_error);
}
