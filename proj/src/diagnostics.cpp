#include "circuitseed/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "circuitseed/svd.hpp"

namespace circuitseed {

double signal_retention(const std::vector<double>& grad, const Mask& mask) {
  if (grad.size() != mask.bits.size())
    throw std::invalid_argument("signal_retention: size mismatch");
  double total = 0.0, inside = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double sq = grad[i] * grad[i];
    total += sq;
    if (mask.bits[i]) inside += sq;
  }
  if (total == 0.0)
    throw std::runtime_error("signal_retention: zero gradient, retention undefined");
  return inside / total;
}

namespace {

std::vector<double> trace_singular_values(const GradientTrace& trace) {
  const std::size_t t = trace.vectors.size();
  const std::size_t d = trace.vectors.front().size();
  Matrix stacked(t, d);
  for (std::size_t i = 0; i < t; ++i)
    std::copy(trace.vectors[i].begin(), trace.vectors[i].end(),
              stacked.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  return svd(stacked).s;
}

double norm(const std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

}  // namespace

double effective_rank(const GradientTrace& trace, RankEstimator estimator) {
  if (trace.vectors.size() < 2)
    throw std::invalid_argument("effective_rank: need at least two snapshots");
  const std::vector<double> s = trace_singular_values(trace);
  double sum2 = 0.0, sum4 = 0.0;
  for (double v : s) {
    sum2 += v * v;
    sum4 += v * v * v * v;
  }
  if (sum2 == 0.0)
    throw std::runtime_error("effective_rank: all-zero trace");
  if (estimator == RankEstimator::participation_ratio) return sum2 * sum2 / sum4;
  double entropy = 0.0;
  for (double v : s) {
    const double p = v * v / sum2;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

double mean_cosine(const GradientTrace& trace) {
  if (trace.vectors.size() < 2)
    throw std::invalid_argument("mean_cosine: need at least two snapshots");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i + 1 < trace.vectors.size(); ++i) {
    const auto& a = trace.vectors[i];
    const auto& b = trace.vectors[i + 1];
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) continue;  // skip pairs with a zero vector
    double d = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) d += a[j] * b[j];
    sum += d / (na * nb);
    ++pairs;
  }
  if (pairs == 0)
    throw std::runtime_error("mean_cosine: all pairs degenerate");
  return sum / static_cast<double>(pairs);
}

double accumulation_efficiency(const GradientTrace& trace) {
  if (trace.vectors.size() < 2)
    throw std::invalid_argument("accumulation_efficiency: need at least two snapshots");
  std::vector<double> total(trace.vectors.front().size(), 0.0);
  double norm_sum = 0.0;
  for (const auto& g : trace.vectors) {
    for (std::size_t j = 0; j < g.size(); ++j) total[j] += g[j];
    norm_sum += norm(g);
  }
  if (norm_sum == 0.0)
    throw std::runtime_error("accumulation_efficiency: all-zero trace");
  return norm(total) / norm_sum;
}

StructureReport structure_report(const GradientTrace& trace) {
  return {effective_rank(trace), mean_cosine(trace), accumulation_efficiency(trace)};
}

KnockoutCurves knockout_sweep(const AdaptedModel& trained, const Matrix& scores,
                              const std::vector<double>& fractions,
                              const TaskInstance& task, Rng& rng) {
  if (scores.rows != trained.b.rows || scores.cols != trained.b.cols)
    throw std::invalid_argument("knockout_sweep: score shape mismatch");
  const std::size_t total = trained.b.size();

  // Score order once, reused across fractions.
  std::vector<std::size_t> by_score(total);
  for (std::size_t i = 0; i < total; ++i) by_score[i] = i;
  std::sort(by_score.begin(), by_score.end(), [&](std::size_t a, std::size_t b) {
    if (scores.data[a] != scores.data[b]) return scores.data[a] > scores.data[b];
    return a < b;
  });

  KnockoutCurves curves;
  AdaptedModel probe = trained;
  for (double f : fractions) {
    const std::size_t n_zero =
        std::min(total, static_cast<std::size_t>(std::ceil(f * static_cast<double>(total))));

    probe.b = trained.b;
    for (std::size_t i = 0; i < n_zero; ++i) probe.b.data[by_score[i]] = 0.0;
    curves.circuit.push_back({f, relative_mse(task, probe, task.heldout)});

    const Circuit rc = random_circuit(n_zero, trained.b.rows, trained.b.cols, rng);
    probe.b = trained.b;
    for (const auto& e : rc.entries) probe.b.data[e.row * trained.b.cols + e.col] = 0.0;
    curves.random.push_back({f, relative_mse(task, probe, task.heldout)});
  }
  return curves;
}

Matrix sign_consistency(const std::vector<Matrix>& per_example_grads) {
  if (per_example_grads.size() < 2)
    throw std::invalid_argument("sign_consistency: need at least two samples");
  const Matrix& first = per_example_grads.front();
  Matrix out(first.rows, first.cols);
  const double n = static_cast<double>(per_example_grads.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t pos = 0, neg = 0, zero = 0;
    for (const auto& g : per_example_grads) {
      const double v = g.data[i];
      if (v > 0.0)
        ++pos;
      else if (v < 0.0)
        ++neg;
      else
        ++zero;
    }
    out.data[i] = (static_cast<double>(std::max(pos, neg)) + zero) / n;
  }
  return out;
}

SvdAlignment svd_alignment(const Matrix& delta_w, const Matrix& w0, std::size_t r) {
  if (delta_w.rows != w0.rows || delta_w.cols != w0.cols)
    throw std::invalid_argument("svd_alignment: shape mismatch");
  if (r < 1 || r > std::min(w0.rows, w0.cols))
    throw std::invalid_argument("svd_alignment: r out of range");
  const double dw_sq = frob_norm(delta_w) * frob_norm(delta_w);
  if (dw_sq == 0.0)
    throw std::runtime_error("svd_alignment: zero update, alignment undefined");

  const SvdResult base = svd(w0);
  Matrix u_r(w0.rows, r);
  for (std::size_t i = 0; i < w0.rows; ++i)
    for (std::size_t j = 0; j < r; ++j) u_r(i, j) = base.u(i, j);
  const Matrix projected = matmul(transpose(u_r), delta_w);
  const double proj_sq = frob_norm(projected) * frob_norm(projected);

  const SvdResult own = svd(delta_w);
  double top = 0.0, all = 0.0;
  for (std::size_t i = 0; i < own.s.size(); ++i) {
    const double sq = own.s[i] * own.s[i];
    all += sq;
    if (i < r) top += sq;
  }
  return {proj_sq / dw_sq, top / all};
}

}  // namespace circuitseed
