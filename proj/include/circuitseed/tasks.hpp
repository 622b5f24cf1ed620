#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "circuitseed/model.hpp"

namespace circuitseed {

enum class TargetKind { dense_rank2, sparse_b };

/// Parameters of the two synthetic regimes: a dense low-rank residual on the
/// first-layer weight ("SFT-like") and a near-sparse true adapter ("RL-like").
struct TargetSpec {
  TargetKind kind = TargetKind::dense_rank2;
  std::size_t residual_rank = 2;      // dense kind
  double residual_factor_std = 0.5;   // dense kind, entries of the two factors
  double sparse_fraction = 0.05;      // sparse kind
  double large_std = 0.3;             // sparse kind, active entries
  double small_std = 0.01;            // sparse kind, background entries
  std::uint64_t seed = 0;
};

struct TaskInstance {
  AdaptedModel base;          // b == 0
  Matrix target_w1;           // effective first-layer weight of the teacher
  std::optional<Matrix> true_b;              // sparse kind only
  std::vector<std::size_t> true_support;     // flat coords of the large entries
  double baseline_mse = 0.0;  // held-out MSE of the unadapted base
  Batch heldout;              // 4096 examples, fixed at construction
  TargetSpec spec;
};

constexpr std::size_t kHeldoutExamples = 4096;

/// Builds base model, teacher target, and the held-out evaluation set.
/// Sparse kind: round(sparse_fraction * |B|) coordinates drawn without
/// replacement get N(0, large_std^2), the rest N(0, small_std^2), and the
/// teacher reuses the trainee's frozen A.
TaskInstance make_task(const TargetSpec& spec, Rng& rng);

/// x ~ N(0, I); y is the teacher's output W2 ReLU(target_w1 x).
Batch sample_batch(const TaskInstance& task, std::size_t batch, Rng& rng);

/// Held-out MSE normalized by the unadapted baseline; 1.0 = no improvement.
double relative_mse(const TaskInstance& task, const AdaptedModel& model,
                    const Batch& eval_set);

const char* to_string(TargetKind kind);
TargetKind target_kind_from_string(const std::string& s);

}  // namespace circuitseed
