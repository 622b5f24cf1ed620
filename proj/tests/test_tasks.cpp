#include <doctest.h>

#include <stdexcept>

#include <set>

#include "circuitseed/svd.hpp"
#include "circuitseed/tasks.hpp"

using namespace circuitseed;

TEST_CASE("sparse target has exactly round(0.05 * 1024) large entries") {
  TargetSpec spec;
  spec.kind = TargetKind::sparse_b;
  spec.seed = 10;
  Rng rng(spec.seed);
  const TaskInstance task = make_task(spec, rng);

  REQUIRE(task.true_b.has_value());
  CHECK(task.true_support.size() == 51);
  CHECK(std::set<std::size_t>(task.true_support.begin(), task.true_support.end()).size() == 51);
  // The teacher's effective weight is exactly base + true_b * A.
  const Matrix expected = add(task.base.w1, matmul(*task.true_b, task.base.a));
  CHECK(task.target_w1 == expected);
}

TEST_CASE("dense target residual has numerical rank 2") {
  TargetSpec spec;
  spec.kind = TargetKind::dense_rank2;
  spec.seed = 11;
  Rng rng(spec.seed);
  const TaskInstance task = make_task(spec, rng);

  const SvdResult r = svd(sub(task.target_w1, task.base.w1));
  CHECK(r.s[1] > 1e-10);
  for (std::size_t i = 2; i < r.s.size(); ++i) CHECK(r.s[i] < 1e-10);
}

TEST_CASE("baseline MSE is positive across seeds and kinds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (TargetKind kind : {TargetKind::dense_rank2, TargetKind::sparse_b}) {
      TargetSpec spec;
      spec.kind = kind;
      spec.seed = seed;
      Rng rng(spec.seed);
      CHECK(make_task(spec, rng).baseline_mse > 0.0);
    }
  }
}

TEST_CASE("sample_batch shapes, determinism, and teacher oracle") {
  TargetSpec spec;
  spec.kind = TargetKind::sparse_b;
  spec.seed = 12;
  Rng rng(spec.seed);
  const TaskInstance task = make_task(spec, rng);

  Rng r1(77), r2(77);
  const Batch one = sample_batch(task, 1, r1);
  CHECK(one.x.rows == 128);
  CHECK(one.x.cols == 1);
  CHECK(one.y.rows == 32);
  CHECK(one.y.cols == 1);
  const Batch again = sample_batch(task, 1, r2);
  CHECK(one.x == again.x);
  CHECK(one.y == again.y);

  // Loop oracle over the teacher network.
  Rng r3(78);
  const Batch b = sample_batch(task, 3, r3);
  for (std::size_t c = 0; c < b.x.cols; ++c)
    for (std::size_t o = 0; o < b.y.rows; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < task.base.hidden_dim(); ++i) {
        double pre = 0.0;
        for (std::size_t j = 0; j < task.base.input_dim(); ++j)
          pre += task.target_w1(i, j) * b.x(j, c);
        acc += task.base.w2(o, i) * (pre > 0.0 ? pre : 0.0);
      }
      CHECK(std::abs(b.y(o, c) - acc) < 1e-12 * std::max(1.0, std::abs(acc)));
    }
}

TEST_CASE("relative MSE anchors") {
  TargetSpec spec;
  spec.kind = TargetKind::sparse_b;
  spec.seed = 13;
  Rng rng(spec.seed);
  const TaskInstance task = make_task(spec, rng);

  // Unadapted base on the baseline's own held-out set: exactly 1.
  CHECK(relative_mse(task, task.base, task.heldout) == 1.0);

  // Exact recovery: b = true_b drives the error to (near) zero.
  AdaptedModel solved = task.base;
  solved.b = *task.true_b;
  CHECK(relative_mse(task, solved, task.heldout) < 1e-6);
}
