#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "circuitseed/discovery.hpp"

namespace circuitseed {

enum class Regime { clean, noisy };

/// Adam moment state for one trainable matrix.
struct AdamState {
  Matrix m;
  Matrix v;
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  Regime regime = Regime::clean;
  std::size_t steps = 5000;
  std::size_t batch = 128;
  double lr = 5e-2;
  std::optional<Mask> mask;    // over b; absent = all of b trainable
  std::optional<Mask> mask_a;  // over a; sparse A+B ablation only
  bool train_a = false;        // full LoRA: both factors dense
  std::size_t eval_every = 250;
  std::uint64_t seed = 0;
  double noise_std = 0.005;  // noisy regime
  double clip_norm = 1.0;    // noisy regime, global L2 over trainable entries
  bool capture_trace = false;
  std::size_t trace_every = 10;
  std::size_t trace_count = 50;
};

/// Clean regime defaults: Adam, batch 128, lr 5e-2, 5000 steps.
/// Noisy regime defaults: noisy clipped SGD, batch 4, lr 3e-3, 15000 steps.
TrainConfig default_config(Regime regime);

struct EvalRecord {
  std::size_t step;
  double train_loss;
  double relative_mse;
};

struct RunReport {
  std::vector<EvalRecord> records;  // includes a step-0 record
  double final_relative_mse = 0.0;
  std::vector<std::vector<double>> gradient_trace;  // flattened raw d_b snapshots
  Matrix final_b;
  Matrix final_a;
  TrainConfig config;
  double wall_time_s = 0.0;
};

/// Loss went NaN; step index of the failure attached.
struct DivergedRun : std::runtime_error {
  explicit DivergedRun(std::size_t at_step)
      : std::runtime_error("training diverged at step " + std::to_string(at_step)),
        step(at_step) {}
  std::size_t step;
};

/// One Adam step on the masked entries. The gradient is zeroed outside the
/// mask before the moment update, so moments stay zero off-mask and off-mask
/// parameters are never touched.
void apply_masked_update(Matrix& param, const Matrix& grad, const Mask& mask,
                         AdamState& state, double lr);

/// grad + N(0, noise_std^2) entrywise, then rescaled to L2 norm <= clip_norm.
/// When `mask` is given, both the noise and the norm are restricted to the
/// masked (trainable) entries.
Matrix clip_and_noise(const Matrix& grad, double noise_std, double clip_norm,
                      Rng& rng, const Mask* mask = nullptr);

/// Full training loop for one cell. `circuit` restricts b; nullptr trains all
/// of b (or both factors when config.train_a is set). Throws DivergedRun on
/// NaN loss.
RunReport train(const TaskInstance& task, const Circuit* circuit,
                const TrainConfig& config);

/// Mean squared final displacement of b inside `numerator_mask` over that
/// inside `denominator_mask` (size-matched). b starts at zero, so final values
/// are total displacements.
double update_energy(const Matrix& final_b, const Mask& numerator_mask,
                     const Mask& denominator_mask);

const char* to_string(Regime regime);
Regime regime_from_string(const std::string& s);

}  // namespace circuitseed
