#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "circuitseed/matrix.hpp"
#include "circuitseed/rng.hpp"
#include "circuitseed/svd.hpp"

using namespace circuitseed;

namespace {

// Independent oracle: naive triple loop.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j)
      for (std::size_t k = 0; k < a.cols; ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

Matrix reconstruct(const SvdResult& r) {
  Matrix us = r.u;
  for (std::size_t i = 0; i < us.rows; ++i)
    for (std::size_t j = 0; j < us.cols; ++j) us(i, j) *= r.s[j];
  return matmul(us, r.vt);
}

double max_abs(const Matrix& m) {
  double v = 0.0;
  for (double x : m.data) v = std::max(v, std::abs(x));
  return v;
}

Matrix identity_residual(const Matrix& q) {  // q^T q - I
  Matrix g = matmul(transpose(q), q);
  for (std::size_t i = 0; i < g.rows; ++i) g(i, i) -= 1.0;
  return g;
}

}  // namespace

TEST_CASE("matmul identity and annihilation") {
  Matrix eye(2, 2);
  eye(0, 0) = eye(1, 1) = 1.0;
  Matrix m(2, 2);
  m(0, 0) = 1; m(0, 1) = 2; m(1, 0) = 3; m(1, 1) = 4;
  CHECK(matmul(eye, m) == m);

  Matrix a(2, 2), b(2, 2);
  a(0, 0) = 1;
  b(1, 1) = 1;
  CHECK(max_abs(matmul(a, b)) == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(101);
  const Matrix a = gaussian_fill(rng, 5, 7, 0.0, 1.0);
  const Matrix b = gaussian_fill(rng, 7, 3, 0.0, 1.0);
  CHECK(max_abs(sub(matmul(a, b), matmul_oracle(a, b))) < 1e-12);
}

TEST_CASE("matmul rejects dimension mismatch") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("svd of a diagonal matrix") {
  Matrix m(2, 2);
  m(0, 0) = 3.0;
  m(1, 1) = 1.0;
  const SvdResult r = svd(m);
  CHECK(r.s[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(r.s[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("svd of a rank-1 outer product") {
  Rng rng(7);
  const Matrix u = gaussian_fill(rng, 6, 1, 0.0, 1.0);
  const Matrix v = gaussian_fill(rng, 1, 4, 0.0, 1.0);
  const SvdResult r = svd(matmul(u, v));
  std::size_t above = 0;
  for (double s : r.s)
    if (s > 1e-10) ++above;
  CHECK(above == 1);
  // Orthonormality must survive the null-space completion.
  CHECK(max_abs(identity_residual(r.u)) < 1e-8);
}

TEST_CASE("svd norm identity on a random 8x5") {
  Rng rng(42);
  const Matrix m = gaussian_fill(rng, 8, 5, 0.0, 1.0);
  const SvdResult r = svd(m);
  double sq = 0.0;
  for (double s : r.s) sq += s * s;
  CHECK(std::sqrt(sq) == doctest::Approx(frob_norm(m)).epsilon(1e-9));
}

TEST_CASE("svd reconstruction and orthonormality on random sizes") {
  Rng rng(314);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 1 + rng.below(128);
    const std::size_t cols = 1 + rng.below(128);
    const Matrix m = gaussian_fill(rng, rows, cols, 0.0, 1.0);
    const SvdResult r = svd(m);

    for (std::size_t i = 0; i + 1 < r.s.size(); ++i) CHECK(r.s[i] >= r.s[i + 1]);
    CHECK(frob_norm(sub(reconstruct(r), m)) < 1e-8 * std::max(1.0, frob_norm(m)));
    CHECK(max_abs(identity_residual(r.u)) < 1e-8);
    CHECK(max_abs(identity_residual(transpose(r.vt))) < 1e-8);
  }
}

TEST_CASE("gaussian_fill with zero std is constant") {
  Rng rng(5);
  const Matrix m = gaussian_fill(rng, 3, 4, 2.5, 0.0);
  for (double v : m.data) CHECK(v == 2.5);
}

TEST_CASE("gaussian_fill sample statistics") {
  Rng rng(99);
  const Matrix m = gaussian_fill(rng, 1000, 1000, 0.0, 1.0);
  double mean = 0.0;
  for (double v : m.data) mean += v;
  mean /= static_cast<double>(m.size());
  double var = 0.0;
  for (double v : m.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m.size());
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 0.01);
}

TEST_CASE("same seed reproduces draws exactly") {
  Rng a(123), b(123);
  CHECK(gaussian_fill(a, 10, 10, 0.0, 1.0) == gaussian_fill(b, 10, 10, 0.0, 1.0));
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}
