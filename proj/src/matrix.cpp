#include "circuitseed/matrix.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace circuitseed {

namespace {

using EigenMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstEigenMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstEigenMap as_eigen(const Matrix& m) {
  return ConstEigenMap(m.data.data(), static_cast<Eigen::Index>(m.rows),
                       static_cast<Eigen::Index>(m.cols));
}

EigenMap as_eigen(Matrix& m) {
  return EigenMap(m.data.data(), static_cast<Eigen::Index>(m.rows),
                  static_cast<Eigen::Index>(m.cols));
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: inner dimensions disagree");
  Matrix out(a.rows, b.cols);
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b);
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  as_eigen(out) = as_eigen(m).transpose();
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] - b.data[i];
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

void scale_inplace(Matrix& m, double alpha) {
  for (auto& v : m.data) v *= alpha;
}

void add_inplace(Matrix& dst, const Matrix& src, double alpha) {
  require_same_shape(dst, src, "add_inplace");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += alpha * src.data[i];
}

double frob_norm(const Matrix& m) {
  double sum = 0.0;
  for (double v : m.data) sum += v * v;
  return std::sqrt(sum);
}

double dot(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "dot");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a.data[i] * b.data[i];
  return sum;
}

bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace circuitseed
