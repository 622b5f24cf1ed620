#include "circuitseed/model.hpp"

#include <cmath>
#include <stdexcept>

namespace circuitseed {

AdaptedModel make_model(const ModelDims& dims, Rng& rng) {
  AdaptedModel m;
  m.w1 = gaussian_fill(rng, dims.hidden, dims.input, 0.0,
                       std::sqrt(2.0 / static_cast<double>(dims.input)));
  m.w2 = gaussian_fill(rng, dims.output, dims.hidden, 0.0,
                       std::sqrt(2.0 / static_cast<double>(dims.hidden)));
  m.a = gaussian_fill(rng, dims.rank, dims.input, 0.0,
                      std::sqrt(2.0 / static_cast<double>(dims.input)));
  m.b = Matrix(dims.hidden, dims.rank, 0.0);
  return m;
}

Matrix merge_effective_weight(const AdaptedModel& model) {
  Matrix eff = matmul(model.b, model.a);
  scale_inplace(eff, model.scale);
  add_inplace(eff, model.w1);
  return eff;
}

Matrix forward(const AdaptedModel& model, const Matrix& x) {
  if (x.rows != model.input_dim())
    throw std::invalid_argument("forward: input dimension mismatch");
  // W1 x + scale * B (A x); cheaper than merging when rank << hidden.
  Matrix pre = matmul(model.w1, x);
  add_inplace(pre, matmul(model.b, matmul(model.a, x)), model.scale);
  for (auto& v : pre.data) v = v > 0.0 ? v : 0.0;
  return matmul(model.w2, pre);
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows != target.rows || pred.cols != target.cols)
    throw std::invalid_argument("mse_loss: shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

Gradients backward(const AdaptedModel& model, const Batch& batch) {
  if (batch.x.rows != model.input_dim() || batch.y.rows != model.output_dim() ||
      batch.x.cols != batch.y.cols)
    throw std::invalid_argument("backward: batch shape mismatch");

  const Matrix ax = matmul(model.a, batch.x);  // rank x n
  Matrix pre = matmul(model.w1, batch.x);      // hidden x n
  add_inplace(pre, matmul(model.b, ax), model.scale);

  Matrix h = pre;
  for (auto& v : h.data) v = v > 0.0 ? v : 0.0;
  const Matrix pred = matmul(model.w2, h);

  Gradients g;
  g.loss = mse_loss(pred, batch.y);

  // dL/dpred = 2 (pred - y) / (output_dim * batch)
  Matrix dpred = sub(pred, batch.y);
  scale_inplace(dpred, 2.0 / static_cast<double>(pred.size()));

  Matrix dpre = matmul(transpose(model.w2), dpred);
  for (std::size_t i = 0; i < dpre.size(); ++i)
    if (pre.data[i] <= 0.0) dpre.data[i] = 0.0;

  // d_b = scale * dpre (A x)^T, d_a = scale * B^T dpre x^T.
  g.d_b = matmul(dpre, transpose(ax));
  scale_inplace(g.d_b, model.scale);
  g.d_a = matmul(matmul(transpose(model.b), dpre), transpose(batch.x));
  scale_inplace(g.d_a, model.scale);
  return g;
}

}  // namespace circuitseed
