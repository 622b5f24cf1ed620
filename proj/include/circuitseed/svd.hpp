#pragma once

#include <vector>

#include "circuitseed/matrix.hpp"

namespace circuitseed {

/// Thin SVD: u is rows x p, vt is p x cols, s holds p = min(rows, cols)
/// singular values sorted non-increasing. u * diag(s) * vt reconstructs the
/// input.
struct SvdResult {
  Matrix u;
  std::vector<double> s;
  Matrix vt;
};

/// One-sided Jacobi SVD. Accurate at the problem's sizes (<= a few hundred);
/// throws std::runtime_error if rotations have not converged after 100 sweeps.
SvdResult svd(const Matrix& m);

}  // namespace circuitseed
