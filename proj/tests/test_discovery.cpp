#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <set>

#include "circuitseed/discovery.hpp"

using namespace circuitseed;

namespace {

TaskInstance sparse_task(std::uint64_t seed) {
  TargetSpec spec;
  spec.kind = TargetKind::sparse_b;
  spec.seed = seed;
  Rng rng(seed);
  return make_task(spec, rng);
}

GradStats stats_from(const Matrix& g1, const Matrix& g2_sample) {
  GradStats s;
  s.sum_g = add(g1, g2_sample);
  s.sum_g2 = add(hadamard(g1, g1), hadamard(g2_sample, g2_sample));
  s.n = 2;
  return s;
}

}  // namespace

TEST_CASE("accumulate matches a manual replay of the same stream") {
  const TaskInstance task = sparse_task(20);
  Rng rng_a(55), rng_b(55);
  const GradStats stats = accumulate(task.base, task, 3, 16, rng_a);
  CHECK(stats.n == 3);

  Matrix sum_g(64, 16), sum_g2(64, 16);
  for (int pass = 0; pass < 3; ++pass) {
    const Batch b = sample_batch(task, 16, rng_b);
    const Gradients g = backward(task.base, b);
    for (std::size_t i = 0; i < sum_g.size(); ++i) {
      sum_g.data[i] += g.d_b.data[i];
      sum_g2.data[i] += g.d_b.data[i] * g.d_b.data[i];
    }
  }
  CHECK(stats.sum_g == sum_g);
  CHECK(stats.sum_g2 == sum_g2);

  // Cauchy-Schwarz: sum g^2 >= (sum g)^2 / n.
  for (std::size_t i = 0; i < sum_g.size(); ++i)
    CHECK(stats.sum_g2.data[i] >= sum_g.data[i] * sum_g.data[i] / 3.0 - 1e-12);
}

TEST_CASE("accumulate rejects a nonzero adapter") {
  const TaskInstance task = sparse_task(21);
  AdaptedModel touched = task.base;
  touched.b(0, 0) = 0.1;
  Rng rng(1);
  CHECK_THROWS_AS(accumulate(touched, task, 1, 4, rng), std::invalid_argument);
}

TEST_CASE("score handles sign flips and constant gradients") {
  Matrix g1(64, 16), g2(64, 16);
  g1(0, 0) = 1.0;
  g2(0, 0) = -1.0;  // flips sign
  g1(0, 1) = 2.0;
  g2(0, 1) = 2.0;  // consistent
  const GradStats stats = stats_from(g1, g2);
  const AdaptedModel model = sparse_task(22).base;

  const Matrix s = score(stats, ScoreMethod::s_hat, model);
  const Matrix f = score(stats, ScoreMethod::f_hat, model);
  CHECK(s(0, 0) == 0.0);
  CHECK(f(0, 0) == 1.0);
  CHECK(s(0, 1) == 2.0);
  CHECK(f(0, 1) == 4.0);
}

TEST_CASE("fisher dominates squared mean entrywise") {
  const TaskInstance task = sparse_task(23);
  Rng rng(9);
  const GradStats stats = accumulate(task.base, task, 8, 8, rng);
  const Matrix s = score(stats, ScoreMethod::s_hat, task.base);
  const Matrix f = score(stats, ScoreMethod::f_hat, task.base);
  for (std::size_t i = 0; i < s.size(); ++i)
    CHECK(f.data[i] - s.data[i] * s.data[i] >= -1e-12);
}

TEST_CASE("weight-statistic scores have the documented shapes") {
  const TaskInstance task = sparse_task(24);
  Rng rng(3);
  const GradStats stats = accumulate(task.base, task, 2, 8, rng);
  const Matrix projected = matmul(task.base.w1, transpose(task.base.a));

  const Matrix mag = score(stats, ScoreMethod::magnitude, task.base);
  const Matrix wanda = score(stats, ScoreMethod::wanda, task.base);
  CHECK(mag.rows == 64);
  CHECK(mag.cols == 16);
  for (std::size_t i = 0; i < mag.size(); ++i) {
    CHECK(mag.data[i] == std::abs(projected.data[i]));
    CHECK(wanda.data[i] ==
          doctest::Approx(std::abs(projected.data[i] * stats.sum_g.data[i] / 2.0))
              .epsilon(1e-14));
  }

  const Matrix row_f = score(stats, ScoreMethod::row_f, task.base);
  const Matrix f = score(stats, ScoreMethod::f_hat, task.base);
  for (std::size_t i = 0; i < 64; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < 16; ++j) row_sum += f(i, j);
    for (std::size_t j = 0; j < 16; ++j)
      CHECK(row_f(i, j) == doctest::Approx(row_sum).epsilon(1e-14));
  }
}

TEST_CASE("select_top_k edge budgets") {
  Rng rng(31);
  const Matrix scores = gaussian_fill(rng, 64, 16, 0.0, 1.0);
  CHECK(select_top_k(scores, 0, ScoreMethod::s_hat).entries.empty());
  const Circuit all = select_top_k(scores, 1024, ScoreMethod::s_hat);
  CHECK(all.entries.size() == 1024);
}

TEST_CASE("select_top_k equals a full-sort oracle") {
  Rng rng(32);
  const Matrix scores = gaussian_fill(rng, 64, 16, 0.0, 1.0);
  const Circuit c = select_top_k(scores, 100, ScoreMethod::s_hat);

  std::vector<double> sorted(scores.data);
  std::sort(sorted.rbegin(), sorted.rend());
  REQUIRE(c.entries.size() == 100);
  for (std::size_t i = 0; i < 100; ++i)
    CHECK(c.entries[i].score == sorted[i]);
}

TEST_CASE("top-k maximizes the selected score sum (exhaustive 4x4)") {
  Rng rng(33);
  const Matrix scores = gaussian_fill(rng, 4, 4, 0.0, 1.0);
  for (std::size_t k = 0; k <= 16; ++k) {
    const Circuit c = select_top_k(scores, k, ScoreMethod::s_hat);
    double selected = 0.0;
    for (const auto& e : c.entries) selected += e.score;

    double best = -1e300;
    for (std::uint32_t subset = 0; subset < (1u << 16); ++subset) {
      if (static_cast<std::size_t>(__builtin_popcount(subset)) != k) continue;
      double sum = 0.0;
      for (std::size_t i = 0; i < 16; ++i)
        if (subset & (1u << i)) sum += scores.data[i];
      best = std::max(best, sum);
    }
    if (k == 0) best = 0.0;
    CHECK(selected == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("row methods take whole rows and reject partial budgets") {
  Rng rng(34);
  const Matrix scores = score(
      stats_from(gaussian_fill(rng, 64, 16, 0.0, 1.0), gaussian_fill(rng, 64, 16, 0.0, 1.0)),
      ScoreMethod::row_f, sparse_task(25).base);
  CHECK_THROWS_AS(select_top_k(scores, 17, ScoreMethod::row_f), std::invalid_argument);

  const Circuit c = select_top_k(scores, 32, ScoreMethod::row_f);
  std::set<std::size_t> rows;
  for (const auto& e : c.entries) rows.insert(e.row);
  CHECK(rows.size() == 2);
}

TEST_CASE("random_circuit covers all coordinates at full budget") {
  Rng rng(35);
  const Circuit c = random_circuit(1024, 64, 16, rng);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : c.entries) seen.insert({e.row, e.col});
  CHECK(seen.size() == 1024);

  Rng r1(36), r2(36);
  const Circuit a = random_circuit(10, 64, 16, r1);
  const Circuit b = random_circuit(10, 64, 16, r2);
  CHECK(overlap(a, b) == 1.0);
}

TEST_CASE("expected overlap of independent circuits is hypergeometric") {
  Rng rng(37);
  double total = 0.0;
  const int pairs = 1000;
  for (int i = 0; i < pairs; ++i) {
    const Circuit a = random_circuit(102, 64, 16, rng);
    const Circuit b = random_circuit(102, 64, 16, rng);
    total += overlap(a, b) * 102.0;
  }
  const double expected = 102.0 * 102.0 / 1024.0;  // ~10.16 entries
  CHECK(total / pairs == doctest::Approx(expected).epsilon(0.15));
}

TEST_CASE("overlap basics") {
  Rng rng(38);
  const Circuit a = random_circuit(50, 64, 16, rng);
  CHECK(overlap(a, a) == 1.0);

  Circuit top, bottom;
  top.k = bottom.k = 16;
  for (std::size_t j = 0; j < 16; ++j) {
    top.entries.push_back({0, j, 0.0});
    bottom.entries.push_back({1, j, 0.0});
  }
  CHECK(overlap(top, bottom) == 0.0);
  CHECK_THROWS_AS(overlap(a, top), std::invalid_argument);
}

TEST_CASE("perturb_a formula") {
  const AdaptedModel model = sparse_task(26).base;
  Rng rng(39);
  const AdaptedModel same = perturb_a(model, 0.0, rng);
  CHECK(same.a == model.a);

  for (double eps : {0.01, 0.5, 2.0}) {
    Rng r(40);
    const AdaptedModel p = perturb_a(model, eps, r);
    CHECK(frob_norm(sub(p.a, model.a)) ==
          doctest::Approx(eps * frob_norm(model.a)).epsilon(1e-10));
    CHECK(p.w1 == model.w1);
    CHECK(p.b == model.b);
  }
}

TEST_CASE("deterministic discovery: same inputs, same circuit") {
  const TaskInstance task = sparse_task(27);
  Rng r1(41), r2(41);
  const GradStats s1 = accumulate(task.base, task, 5, 16, r1);
  const GradStats s2 = accumulate(task.base, task, 5, 16, r2);
  const Circuit c1 = select_top_k(score(s1, ScoreMethod::s_hat, task.base), 51, ScoreMethod::s_hat);
  const Circuit c2 = select_top_k(score(s2, ScoreMethod::s_hat, task.base), 51, ScoreMethod::s_hat);
  CHECK(overlap(c1, c2) == 1.0);
  for (std::size_t i = 0; i < c1.entries.size(); ++i)
    CHECK(c1.entries[i].score == c2.entries[i].score);
}
