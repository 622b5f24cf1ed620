#pragma once

#include <vector>

#include "circuitseed/training.hpp"

namespace circuitseed {

/// Flattened per-step gradient snapshots from one training run.
struct GradientTrace {
  std::vector<std::vector<double>> vectors;
};

struct StructureReport {
  double effective_rank = 0.0;
  double mean_cosine = 0.0;
  double accumulation_efficiency = 0.0;
};

struct KnockoutPoint {
  double fraction_zeroed;
  double relative_mse;
};

struct KnockoutCurves {
  std::vector<KnockoutPoint> circuit;
  std::vector<KnockoutPoint> random;
};

/// Fraction of squared gradient norm inside the mask.
double signal_retention(const std::vector<double>& grad, const Mask& mask);

enum class RankEstimator { participation_ratio, entropy };

/// Participation ratio (sum s^2)^2 / sum s^4 of the stacked trace's singular
/// values; the entropy variant exp(H of the normalized s^2) is kept for
/// sensitivity checks.
double effective_rank(const GradientTrace& trace,
                      RankEstimator estimator = RankEstimator::participation_ratio);

/// Mean cosine similarity over consecutive snapshot pairs.
double mean_cosine(const GradientTrace& trace);

/// ||sum_t g_t|| / sum_t ||g_t||; 1 under perfect alignment, ~0 under
/// cancellation.
double accumulation_efficiency(const GradientTrace& trace);

StructureReport structure_report(const GradientTrace& trace);

/// Zeroes the top ceil(f * |B|) entries of a trained b by score (circuit
/// curve) or a size-matched uniform subset (random curve) and evaluates the
/// held-out relative MSE at each fraction. The model is not modified.
KnockoutCurves knockout_sweep(const AdaptedModel& trained, const Matrix& scores,
                              const std::vector<double>& fractions,
                              const TaskInstance& task, Rng& rng);

/// Entrywise fraction of samples whose gradient sign matches the majority
/// sign; zeros count as agreeing. Values in [0.5, 1].
Matrix sign_consistency(const std::vector<Matrix>& per_example_grads);

struct SvdAlignment {
  double left_align;     // ||U_r^T dW||_F^2 / ||dW||_F^2, U_r from w0
  double spectral_ratio; // top-r fraction of dW's own squared spectrum
};

SvdAlignment svd_alignment(const Matrix& delta_w, const Matrix& w0, std::size_t r);

}  // namespace circuitseed
