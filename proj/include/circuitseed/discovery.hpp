#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "circuitseed/tasks.hpp"

namespace circuitseed {

/// Running gradient moments over the scoring passes at initialization.
struct GradStats {
  Matrix sum_g;   // hidden x rank
  Matrix sum_g2;  // hidden x rank, entrywise squares
  std::size_t n = 0;
};

enum class ScoreMethod {
  s_hat,      // |mean gradient| — directional consistency
  f_hat,      // mean squared gradient — diagonal Fisher
  magnitude,  // |W1 A^T| projected weight magnitude
  wanda,      // |(W1 A^T) * mean gradient|
  row_f,
  row_mag,
  row_wanda,
  random_pick
};

struct CircuitEntry {
  std::size_t row;
  std::size_t col;
  double score;
};

/// Ranked selection over entries of B: scores non-increasing, ties broken by
/// (row, col) ascending.
struct Circuit {
  std::vector<CircuitEntry> entries;
  std::size_t k = 0;
  ScoreMethod method = ScoreMethod::random_pick;
  std::uint64_t discovery_seed = 0;
  std::size_t n_passes = 0;
};

/// Binary selection grid over B with popcount k.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;  // row-major
  std::size_t k = 0;

  bool at(std::size_t i, std::size_t j) const { return bits[i * cols + j] != 0; }
};

/// n scoring passes at the zero-adapter point; rejects models with b != 0
/// since the scores are only meaningful there.
GradStats accumulate(const AdaptedModel& model, const TaskInstance& task,
                     std::size_t n, std::size_t batch, Rng& rng);

/// Entrywise score matrix (hidden x rank, all >= 0). Row-level methods
/// broadcast each row's aggregated score to every entry of the row.
Matrix score(const GradStats& stats, ScoreMethod method, const AdaptedModel& model);

/// Top-k entries by score. Row methods take whole rows in row-score order and
/// require k to be a multiple of the rank.
Circuit select_top_k(const Matrix& scores, std::size_t k, ScoreMethod method);

Circuit random_circuit(std::size_t k, std::size_t rows, std::size_t cols, Rng& rng);

/// |intersection| / k for two equal-budget circuits.
double overlap(const Circuit& a, const Circuit& b);

/// A' = A + epsilon * ||A||_F * D / ||D||_F with D standard normal.
AdaptedModel perturb_a(const AdaptedModel& model, double epsilon, Rng& rng);

Mask circuit_mask(const Circuit& c, std::size_t rows, std::size_t cols);
Mask full_mask(std::size_t rows, std::size_t cols);

const char* to_string(ScoreMethod method);
ScoreMethod score_method_from_string(const std::string& s);

}  // namespace circuitseed
