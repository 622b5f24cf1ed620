#pragma once

#include <cstddef>
#include <vector>

namespace circuitseed {

/// Dense row-major matrix of doubles. The only tensor type in the project;
/// everything (weights, gradients, batches, masks-as-scores) is one of these.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, data.size() == rows * cols

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool operator==(const Matrix& other) const = default;
};

// a * b; throws std::invalid_argument on inner-dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

// Elementwise; throw std::invalid_argument on shape mismatch.
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);

void scale_inplace(Matrix& m, double alpha);
void add_inplace(Matrix& dst, const Matrix& src, double alpha = 1.0);

double frob_norm(const Matrix& m);
double dot(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& m);

}  // namespace circuitseed
