#include "circuitseed/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace circuitseed {

GradStats accumulate(const AdaptedModel& model, const TaskInstance& task,
                     std::size_t n, std::size_t batch, Rng& rng) {
  if (n < 1) throw std::invalid_argument("accumulate: need at least one pass");
  for (double v : model.b.data)
    if (v != 0.0)
      throw std::invalid_argument("accumulate: scores require the zero-adapter point (b != 0)");

  GradStats stats;
  stats.sum_g = Matrix(model.hidden_dim(), model.rank());
  stats.sum_g2 = Matrix(model.hidden_dim(), model.rank());
  for (std::size_t pass = 0; pass < n; ++pass) {
    const Batch b = sample_batch(task, batch, rng);
    const Gradients g = backward(model, b);
    for (std::size_t i = 0; i < stats.sum_g.size(); ++i) {
      stats.sum_g.data[i] += g.d_b.data[i];
      stats.sum_g2.data[i] += g.d_b.data[i] * g.d_b.data[i];
    }
  }
  stats.n = n;
  return stats;
}

namespace {

bool is_row_method(ScoreMethod m) {
  return m == ScoreMethod::row_f || m == ScoreMethod::row_mag ||
         m == ScoreMethod::row_wanda;
}

Matrix broadcast_row_sums(const Matrix& element_scores) {
  Matrix out(element_scores.rows, element_scores.cols);
  for (std::size_t i = 0; i < out.rows; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < out.cols; ++j) row_sum += element_scores(i, j);
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) = row_sum;
  }
  return out;
}

}  // namespace

Matrix score(const GradStats& stats, ScoreMethod method, const AdaptedModel& model) {
  if (stats.n < 1) throw std::invalid_argument("score: empty stats");
  const double inv_n = 1.0 / static_cast<double>(stats.n);

  auto mean_abs = [&] {
    Matrix s(stats.sum_g.rows, stats.sum_g.cols);
    for (std::size_t i = 0; i < s.size(); ++i)
      s.data[i] = std::abs(stats.sum_g.data[i] * inv_n);
    return s;
  };
  auto fisher = [&] {
    Matrix s(stats.sum_g2.rows, stats.sum_g2.cols);
    for (std::size_t i = 0; i < s.size(); ++i) s.data[i] = stats.sum_g2.data[i] * inv_n;
    return s;
  };
  auto projected_weight = [&] { return matmul(model.w1, transpose(model.a)); };
  auto wanda = [&] {
    Matrix s = projected_weight();
    for (std::size_t i = 0; i < s.size(); ++i)
      s.data[i] = std::abs(s.data[i] * stats.sum_g.data[i] * inv_n);
    return s;
  };

  switch (method) {
    case ScoreMethod::s_hat:
      return mean_abs();
    case ScoreMethod::f_hat:
      return fisher();
    case ScoreMethod::magnitude: {
      Matrix s = projected_weight();
      for (auto& v : s.data) v = std::abs(v);
      return s;
    }
    case ScoreMethod::wanda:
      return wanda();
    case ScoreMethod::row_f:
      return broadcast_row_sums(fisher());
    case ScoreMethod::row_mag: {
      Matrix s = projected_weight();
      for (auto& v : s.data) v = std::abs(v);
      return broadcast_row_sums(s);
    }
    case ScoreMethod::row_wanda:
      return broadcast_row_sums(wanda());
    default:
      throw std::invalid_argument("score: method has no score matrix");
  }
}

Circuit select_top_k(const Matrix& scores, std::size_t k, ScoreMethod method) {
  const std::size_t total = scores.size();
  if (k > total) throw std::invalid_argument("select_top_k: k exceeds entry count");

  Circuit c;
  c.k = k;
  c.method = method;

  if (is_row_method(method)) {
    if (k % scores.cols != 0)
      throw std::invalid_argument("select_top_k: row methods need k divisible by rank");
    std::vector<std::size_t> rows(scores.rows);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    // Row score is constant across the row; take rows in score order.
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      if (scores(a, 0) != scores(b, 0)) return scores(a, 0) > scores(b, 0);
      return a < b;
    });
    const std::size_t n_rows = k / scores.cols;
    for (std::size_t r = 0; r < n_rows; ++r)
      for (std::size_t j = 0; j < scores.cols; ++j)
        c.entries.push_back({rows[r], j, scores(rows[r], j)});
    return c;
  }

  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  // Ties broken by flat index, i.e. (row, col) lexicographic.
  const auto by_score = [&](std::size_t a, std::size_t b) {
    if (scores.data[a] != scores.data[b]) return scores.data[a] > scores.data[b];
    return a < b;
  };
  if (k > 0 && k < total)
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), by_score);
  else
    std::sort(idx.begin(), idx.end(), by_score);
  for (std::size_t i = 0; i < k; ++i)
    c.entries.push_back({idx[i] / scores.cols, idx[i] % scores.cols, scores.data[idx[i]]});
  return c;
}

Circuit random_circuit(std::size_t k, std::size_t rows, std::size_t cols, Rng& rng) {
  const std::size_t total = rows * cols;
  if (k > total) throw std::invalid_argument("random_circuit: k exceeds entry count");

  std::vector<std::size_t> coords(total);
  for (std::size_t i = 0; i < total; ++i) coords[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(total - i);
    std::swap(coords[i], coords[j]);
  }
  std::sort(coords.begin(), coords.begin() + k);

  Circuit c;
  c.k = k;
  c.method = ScoreMethod::random_pick;
  for (std::size_t i = 0; i < k; ++i)
    c.entries.push_back({coords[i] / cols, coords[i] % cols, 0.0});
  return c;
}

double overlap(const Circuit& a, const Circuit& b) {
  if (a.k != b.k || a.k == 0)
    throw std::invalid_argument("overlap: circuits must share a nonzero budget");
  std::vector<std::uint64_t> in_a;
  in_a.reserve(a.k);
  for (const auto& e : a.entries) in_a.push_back(e.row * 1024 + e.col);
  std::sort(in_a.begin(), in_a.end());
  std::size_t hits = 0;
  for (const auto& e : b.entries)
    if (std::binary_search(in_a.begin(), in_a.end(), e.row * 1024 + e.col)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(a.k);
}

AdaptedModel perturb_a(const AdaptedModel& model, double epsilon, Rng& rng) {
  if (epsilon < 0.0) throw std::invalid_argument("perturb_a: epsilon must be >= 0");
  AdaptedModel out = model;
  if (epsilon == 0.0) return out;
  Matrix delta = gaussian_fill(rng, model.a.rows, model.a.cols, 0.0, 1.0);
  const double factor = epsilon * frob_norm(model.a) / frob_norm(delta);
  add_inplace(out.a, delta, factor);
  return out;
}

Mask circuit_mask(const Circuit& c, std::size_t rows, std::size_t cols) {
  Mask m;
  m.rows = rows;
  m.cols = cols;
  m.bits.assign(rows * cols, 0);
  for (const auto& e : c.entries) {
    if (e.row >= rows || e.col >= cols)
      throw std::invalid_argument("circuit_mask: entry out of range");
    m.bits[e.row * cols + e.col] = 1;
  }
  m.k = c.k;
  return m;
}

Mask full_mask(std::size_t rows, std::size_t cols) {
  Mask m;
  m.rows = rows;
  m.cols = cols;
  m.bits.assign(rows * cols, 1);
  m.k = rows * cols;
  return m;
}

const char* to_string(ScoreMethod method) {
  switch (method) {
    case ScoreMethod::s_hat: return "s_hat";
    case ScoreMethod::f_hat: return "f_hat";
    case ScoreMethod::magnitude: return "magnitude";
    case ScoreMethod::wanda: return "wanda";
    case ScoreMethod::row_f: return "row_f";
    case ScoreMethod::row_mag: return "row_mag";
    case ScoreMethod::row_wanda: return "row_wanda";
    case ScoreMethod::random_pick: return "random";
  }
  return "?";
}

ScoreMethod score_method_from_string(const std::string& s) {
  if (s == "s_hat") return ScoreMethod::s_hat;
  if (s == "f_hat") return ScoreMethod::f_hat;
  if (s == "magnitude") return ScoreMethod::magnitude;
  if (s == "wanda") return ScoreMethod::wanda;
  if (s == "row_f") return ScoreMethod::row_f;
  if (s == "row_mag") return ScoreMethod::row_mag;
  if (s == "row_wanda") return ScoreMethod::row_wanda;
  if (s == "random") return ScoreMethod::random_pick;
  throw std::invalid_argument("unknown score method: " + s);
}

}  // namespace circuitseed
