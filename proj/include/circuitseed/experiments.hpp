#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "circuitseed/diagnostics.hpp"
#include "circuitseed/training.hpp"

namespace circuitseed {

/// Runs fn(0..n-1) on up to `jobs` worker threads. Callers own any ordering:
/// results should be written into preallocated slots indexed by i.
void parallel_for(std::size_t n, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn);

/// Budget fraction -> entry count, round-half-to-even.
std::size_t fraction_to_k(double fraction, std::size_t total = 1024);

/// Discovery pipeline for one method: scoring passes at initialization,
/// score, top-k. `method` random -> uniform coordinates, no passes.
Circuit discover_circuit(const TaskInstance& task, ScoreMethod method,
                         std::size_t k, std::size_t n_passes, std::size_t batch,
                         std::uint64_t seed);

struct TrainOverrides {
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> eval_every;
  std::optional<double> lr;
  std::optional<double> noise_std;
  std::optional<double> clip_norm;
  bool capture_trace = false;
};

TrainConfig make_train_config(Regime regime, const TrainOverrides& overrides,
                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Budget sweep (the Fig.-2-style grid): method x fraction x seed.
// ---------------------------------------------------------------------------

/// Method name: any ScoreMethod string, "random", or "lora" (full LoRA,
/// trains both factors densely; the budget column is reported as 1.0).
struct SweepConfig {
  TargetKind kind = TargetKind::sparse_b;
  Regime regime = Regime::noisy;
  std::vector<std::string> methods{"s_hat", "random", "lora"};
  std::vector<double> fractions{0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
  std::size_t seeds = 10;
  std::uint64_t master_seed = 1;
  std::size_t discovery_passes = 100;
  std::size_t discovery_batch = 128;
  TargetSpec task_template;  // kind and seed filled per cell
  TrainOverrides train;
  std::size_t jobs = 1;
};

struct SweepRow {
  std::string method;
  double fraction = 0.0;
  std::size_t k = 0;
  std::size_t seed_index = 0;
  double relative_mse = 0.0;
  bool diverged = false;
  std::size_t diverged_step = 0;
};

struct SweepAggregate {
  std::string method;
  double fraction = 0.0;
  std::size_t k = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t n = 0;
  std::size_t n_diverged = 0;
};

/// Full cartesian grid; each cell gets RNG streams derived from the master
/// seed by cell index, and the task is regenerated per seed index. `on_cell`
/// (optional, called from worker threads, cells never share state) receives
/// the finished cell for file output.
using CellSink = std::function<void(const SweepRow&, const TaskInstance&,
                                    const Circuit*, const RunReport*)>;
std::vector<SweepRow> run_sweep(const SweepConfig& config,
                                const CellSink& on_cell = nullptr);

std::vector<SweepAggregate> aggregate_sweep(const std::vector<SweepRow>& rows);

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string aggregate_csv(const std::vector<SweepAggregate>& aggs);

// ---------------------------------------------------------------------------
// Stability protocols: Monte-Carlo convergence, A-perturbation, cross-target.
// ---------------------------------------------------------------------------

struct StabilityConfig {
  TargetKind kind = TargetKind::sparse_b;
  ScoreMethod method = ScoreMethod::s_hat;
  std::size_t k = 51;
  std::vector<std::size_t> pass_grid{10, 25, 50};
  std::size_t reference_passes = 100;
  std::vector<double> epsilon_grid{0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0};
  std::size_t seeds = 10;
  std::uint64_t master_seed = 1;
  std::size_t discovery_batch = 128;
  std::size_t jobs = 1;
};

struct StabilityResult {
  std::vector<std::pair<std::size_t, double>> pass_overlap;   // N -> mean overlap vs reference
  std::vector<std::pair<double, double>> epsilon_overlap;     // eps -> mean overlap (0 included)
  double cross_seed_overlap = 0.0;  // mean overlap across different task seeds
  double chance = 0.0;              // k / |B|
};

StabilityResult run_stability(const StabilityConfig& config);

// ---------------------------------------------------------------------------
// Diagnostic protocols.
// ---------------------------------------------------------------------------

/// Gradient trace of one training run: full-B training in the given regime on
/// the regime's matching task (clean -> dense, noisy -> sparse), snapshots
/// every 10 steps from the start.
GradientTrace capture_regime_trace(Regime regime, std::uint64_t seed,
                                   std::size_t snapshots = 50);

/// Circuit/random update-energy ratio after full-B training: circuit mask is
/// the s_hat top-k at initialization, random mask size-matched.
double energy_ratio(Regime regime, std::uint64_t seed, std::size_t k = 51);

/// Knockout protocol: full-LoRA noisy training on the sparse task, then
/// f_hat-ordered vs random zeroing over `fractions`. Random baseline uses a
/// fixed seed (42) unless overridden.
KnockoutCurves knockout_protocol(std::uint64_t seed,
                                 const std::vector<double>& fractions,
                                 std::uint64_t random_seed = 42);

const std::vector<double>& default_knockout_fractions();

// ---------------------------------------------------------------------------
// B-only vs A+B ablation at matched total budget.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::size_t k = 0;          // total budget
  std::size_t seed_index = 0;
  double b_only_mse = 0.0;
  double a_plus_b_mse = 0.0;
};

/// A+B splits the budget evenly; A entries are scored after a 50-step
/// full-B warm-up (A's gradient is identically zero at B = 0).
std::vector<AblationRow> run_ablation(TargetKind kind, Regime regime,
                                      const std::vector<std::size_t>& budgets,
                                      std::size_t seeds, std::uint64_t master_seed,
                                      std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// Serialization (all JSON files carry schema_version).
// ---------------------------------------------------------------------------

std::string circuit_to_json(const Circuit& c);
Circuit circuit_from_json(const std::string& text);

std::string task_manifest_json(const TaskInstance& task);

std::string run_report_json(const RunReport& report);
std::string metrics_csv(const RunReport& report);

std::string model_to_json(const AdaptedModel& model, std::uint64_t seed);
AdaptedModel model_from_json(const std::string& text);

}  // namespace circuitseed
