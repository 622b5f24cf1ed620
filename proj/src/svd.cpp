#include "circuitseed/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace circuitseed {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kRotationTol = 1e-12;

// One-sided Jacobi on a tall matrix held as columns. Rotates column pairs
// until all pairs are numerically orthogonal; singular values are the final
// column norms.
SvdResult svd_tall(const Matrix& m) {
  const std::size_t rows = m.rows;
  const std::size_t n = m.cols;

  std::vector<std::vector<double>> col(n, std::vector<double>(rows));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < rows; ++i) col[j][i] = m(i, j);

  // Right singular vectors accumulate the same rotations, starting from I.
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;

  auto col_dot = [rows](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += a[i] * b[i];
    return s;
  };

  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = col_dot(col[p], col[p]);
        const double beta = col_dot(col[q], col[q]);
        const double gamma = col_dot(col[p], col[q]);
        if (std::abs(gamma) <= kRotationTol * std::sqrt(alpha * beta)) continue;
        rotated = true;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t =
            std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;

        for (std::size_t i = 0; i < rows; ++i) {
          const double vp = col[p][i], vq = col[q][i];
          col[p][i] = c * vp - s * vq;
          col[q][i] = s * vp + c * vq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v[p][i], vq = v[q][i];
          v[p][i] = c * vp - s * vq;
          v[q][i] = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
  if (sweep == kMaxSweeps)
    throw std::runtime_error("svd: Jacobi rotations not converged after " +
                             std::to_string(kMaxSweeps) + " sweeps");

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(col_dot(col[j], col[j]));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  SvdResult out;
  out.s.resize(n);
  out.u = Matrix(rows, n);
  out.vt = Matrix(n, n);
  std::size_t filled = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.s[j] = sigma[src];
    for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = v[src][i];
    if (sigma[src] > rows * n * 1e-300 && sigma[src] > 0.0) {
      const double inv = 1.0 / sigma[src];
      for (std::size_t i = 0; i < rows; ++i) out.u(i, j) = col[src][i] * inv;
      ++filled;
    }
  }

  // Null-space columns of U: complete to an orthonormal set so U^T U = I
  // holds even for rank-deficient input.
  for (std::size_t j = filled; j < n; ++j) {
    std::vector<double> cand(rows, 0.0);
    for (std::size_t basis = 0; basis < rows; ++basis) {
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[basis] = 1.0;
      for (std::size_t prev = 0; prev < j; ++prev) {
        double proj = 0.0;
        for (std::size_t i = 0; i < rows; ++i) proj += cand[i] * out.u(i, prev);
        for (std::size_t i = 0; i < rows; ++i) cand[i] -= proj * out.u(i, prev);
      }
      double norm = 0.0;
      for (double x : cand) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.5) {
        for (std::size_t i = 0; i < rows; ++i) out.u(i, j) = cand[i] / norm;
        break;
      }
    }
  }
  return out;
}

}  // namespace

SvdResult svd(const Matrix& m) {
  if (m.empty()) throw std::invalid_argument("svd: empty matrix");
  if (m.rows >= m.cols) return svd_tall(m);
  // Wide input: decompose the transpose and swap the factors.
  SvdResult t = svd_tall(transpose(m));
  SvdResult out;
  out.s = std::move(t.s);
  out.u = transpose(t.vt);
  out.vt = transpose(t.u);
  return out;
}

}  // namespace circuitseed
