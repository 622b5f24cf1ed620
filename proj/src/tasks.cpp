#include "circuitseed/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace circuitseed {

namespace {

Matrix teacher_forward(const Matrix& target_w1, const Matrix& w2, const Matrix& x) {
  Matrix pre = matmul(target_w1, x);
  for (auto& v : pre.data) v = v > 0.0 ? v : 0.0;
  return matmul(w2, pre);
}

Batch sample_teacher_batch(const TaskInstance& task, std::size_t batch, Rng& rng) {
  Batch out;
  out.x = gaussian_fill(rng, task.base.input_dim(), batch, 0.0, 1.0);
  out.y = teacher_forward(task.target_w1, task.base.w2, out.x);
  return out;
}

}  // namespace

TaskInstance make_task(const TargetSpec& spec, Rng& rng) {
  TaskInstance task;
  task.spec = spec;
  task.base = make_model(ModelDims{}, rng);

  if (spec.kind == TargetKind::dense_rank2) {
    // The residual lives in the span of the frozen adapter (a rank-2 true
    // B times the shared A), so a B-only trainee can reach it at full
    // budget; its gradient signal is still dense across all entries of B.
    const Matrix u = gaussian_fill(rng, task.base.hidden_dim(), spec.residual_rank,
                                   0.0, spec.residual_factor_std);
    const Matrix v = gaussian_fill(rng, spec.residual_rank, task.base.rank(),
                                   0.0, spec.residual_factor_std);
    task.target_w1 = add(task.base.w1, matmul(matmul(u, v), task.base.a));
  } else {
    const std::size_t hidden = task.base.hidden_dim();
    const std::size_t rank = task.base.rank();
    const std::size_t total = hidden * rank;
    const std::size_t n_large =
        static_cast<std::size_t>(std::lround(spec.sparse_fraction * total));

    // Partial Fisher-Yates: first n_large slots of a coordinate permutation.
    std::vector<std::size_t> coords(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
    for (std::size_t i = 0; i < n_large; ++i) {
      const std::size_t j = i + rng.below(total - i);
      std::swap(coords[i], coords[j]);
    }

    Matrix true_b(hidden, rank);
    for (auto& v : true_b.data) v = rng.gaussian(0.0, spec.small_std);
    for (std::size_t i = 0; i < n_large; ++i)
      true_b.data[coords[i]] = rng.gaussian(0.0, spec.large_std);

    task.target_w1 = add(task.base.w1, matmul(true_b, task.base.a));
    task.true_b = std::move(true_b);
    task.true_support.assign(coords.begin(), coords.begin() + n_large);
    std::sort(task.true_support.begin(), task.true_support.end());
  }

  task.heldout = sample_teacher_batch(task, kHeldoutExamples, rng);
  task.baseline_mse = mse_loss(forward(task.base, task.heldout.x), task.heldout.y);
  if (task.baseline_mse <= 0.0)
    throw std::runtime_error("make_task: degenerate task, baseline MSE is zero");
  return task;
}

Batch sample_batch(const TaskInstance& task, std::size_t batch, Rng& rng) {
  if (batch < 1) throw std::invalid_argument("sample_batch: batch must be >= 1");
  return sample_teacher_batch(task, batch, rng);
}

double relative_mse(const TaskInstance& task, const AdaptedModel& model,
                    const Batch& eval_set) {
  if (task.baseline_mse <= 0.0)
    throw std::runtime_error("relative_mse: degenerate task, baseline MSE is zero");
  return mse_loss(forward(model, eval_set.x), eval_set.y) / task.baseline_mse;
}

const char* to_string(TargetKind kind) {
  return kind == TargetKind::dense_rank2 ? "dense_rank2" : "sparse_b";
}

TargetKind target_kind_from_string(const std::string& s) {
  if (s == "dense_rank2" || s == "dense") return TargetKind::dense_rank2;
  if (s == "sparse_b" || s == "sparse") return TargetKind::sparse_b;
  throw std::invalid_argument("unknown target kind: " + s);
}

}  // namespace circuitseed
