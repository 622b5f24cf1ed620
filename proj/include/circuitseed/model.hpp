#pragma once

#include <cstdint>

#include "circuitseed/matrix.hpp"
#include "circuitseed/rng.hpp"

namespace circuitseed {

/// Default architecture: y = W2 ReLU(W1 x) with a rank-16 adapter on W1.
struct ModelDims {
  std::size_t input = 128;
  std::size_t hidden = 64;
  std::size_t output = 32;
  std::size_t rank = 16;
};

/// Two-layer ReLU MLP with a low-rank adapter on the first layer.
/// The effective first-layer weight is w1 + scale * b * a; `a` is frozen,
/// `b` is the trainable factor and starts at zero.
struct AdaptedModel {
  Matrix w1;  // hidden x input
  Matrix w2;  // output x hidden
  Matrix a;   // rank x input, frozen down-projection
  Matrix b;   // hidden x rank, trainable up-projection
  double scale = 1.0;

  std::size_t input_dim() const { return w1.cols; }
  std::size_t hidden_dim() const { return w1.rows; }
  std::size_t output_dim() const { return w2.rows; }
  std::size_t rank() const { return a.rows; }
};

struct Batch {
  Matrix x;  // input x batch
  Matrix y;  // output x batch
};

struct Gradients {
  Matrix d_b;  // hidden x rank
  Matrix d_a;  // rank x input
  double loss = 0.0;
};

/// Kaiming-normal init (std = sqrt(2 / fan_in)) for w1, w2, a; b = 0.
AdaptedModel make_model(const ModelDims& dims, Rng& rng);

/// w1 + scale * b * a.
Matrix merge_effective_weight(const AdaptedModel& model);

/// Column-per-example forward pass; x is input x batch.
Matrix forward(const AdaptedModel& model, const Matrix& x);

/// Mean over all entries of the squared difference.
double mse_loss(const Matrix& pred, const Matrix& target);

/// Analytic gradients of mse_loss(forward(x), y) w.r.t. b and a.
/// ReLU subgradient at exactly zero is taken as zero. The loss mean includes
/// the 1/(batch * output_dim) factor, so per-example gradients come from
/// batch-size-1 calls.
Gradients backward(const AdaptedModel& model, const Batch& batch);

}  // namespace circuitseed
