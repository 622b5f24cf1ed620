#include <doctest.h>

#include <cmath>
#include <limits>

#include "circuitseed/training.hpp"

using namespace circuitseed;

namespace {

TaskInstance make_sparse(std::uint64_t seed) {
  TargetSpec spec;
  spec.kind = TargetKind::sparse_b;
  spec.seed = seed;
  Rng rng(seed);
  return make_task(spec, rng);
}

Mask single_entry_mask(std::size_t rows, std::size_t cols, std::size_t flat) {
  Mask m;
  m.rows = rows;
  m.cols = cols;
  m.bits.assign(rows * cols, 0);
  m.bits[flat] = 1;
  m.k = 1;
  return m;
}

}  // namespace

TEST_CASE("all-zero mask freezes parameters and moments") {
  Matrix b(4, 4, 1.0), grad(4, 4, 2.0);
  Mask empty;
  empty.rows = empty.cols = 4;
  empty.bits.assign(16, 0);
  empty.k = 0;
  AdamState state;
  apply_masked_update(b, grad, empty, state, 0.1);
  CHECK(b == Matrix(4, 4, 1.0));
  for (double v : state.m.data) CHECK(v == 0.0);
  for (double v : state.v.data) CHECK(v == 0.0);
}

TEST_CASE("single-entry masked Adam matches a scalar oracle over 100 steps") {
  Rng rng(50);
  Matrix b(4, 4, 0.0);
  const Mask mask = single_entry_mask(4, 4, 5);
  AdamState state;
  const double lr = 0.01;

  // Scalar Adam tracked independently.
  double m = 0.0, v = 0.0, x = 0.0;
  for (int t = 1; t <= 100; ++t) {
    Matrix grad = gaussian_fill(rng, 4, 4, 0.0, 1.0);
    const double g = grad.data[5];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);

    apply_masked_update(b, grad, mask, state, lr);
  }
  CHECK(b.data[5] == doctest::Approx(x).epsilon(1e-10));
  for (std::size_t i = 0; i < 16; ++i)
    if (i != 5) CHECK(b.data[i] == 0.0);
}

TEST_CASE("clip_and_noise basics") {
  Rng rng(51);
  Matrix small(3, 3, 0.1);
  CHECK(clip_and_noise(small, 0.0, 10.0, rng) == small);

  Matrix big(1, 4, 5.0);  // norm 10
  const Matrix clipped = clip_and_noise(big, 0.0, 1.0, rng);
  CHECK(frob_norm(clipped) == doctest::Approx(1.0).epsilon(1e-12));

  // Plain SGD step equivalence with noise off and clip off.
  Matrix b(2, 2, 1.0), grad(2, 2, 0.5);
  const Matrix g = clip_and_noise(grad, 0.0, std::numeric_limits<double>::infinity(), rng);
  add_inplace(b, g, -0.1);
  CHECK(b == Matrix(2, 2, 0.95));
}

TEST_CASE("clipped output never exceeds the clip norm") {
  Rng rng(52);
  for (int i = 0; i < 10000; ++i) {
    Matrix grad = gaussian_fill(rng, 4, 4, 0.0, 2.0);
    CHECK(frob_norm(clip_and_noise(grad, 0.01, 1.0, rng)) <= 1.0 + 1e-12);
  }
}

TEST_CASE("masked clip_and_noise leaves off-mask entries at zero") {
  Rng rng(53);
  Matrix grad = gaussian_fill(rng, 4, 4, 0.0, 1.0);
  const Mask mask = single_entry_mask(4, 4, 3);
  const Matrix g = clip_and_noise(grad, 0.1, 1.0, rng, &mask);
  for (std::size_t i = 0; i < 16; ++i)
    if (i != 3) CHECK(g.data[i] == 0.0);
}

TEST_CASE("step-0 record is the normalization anchor") {
  const TaskInstance task = make_sparse(60);
  TrainConfig tc = default_config(Regime::clean);
  tc.steps = 1;
  tc.seed = 1;
  const RunReport report = train(task, nullptr, tc);
  CHECK(report.records.front().step == 0);
  CHECK(report.records.front().relative_mse == 1.0);
}

TEST_CASE("captured traces have the requested length and obey the clip") {
  const TaskInstance task = make_sparse(58);
  for (Regime regime : {Regime::clean, Regime::noisy}) {
    TrainConfig tc = default_config(regime);
    tc.steps = 20;
    tc.eval_every = 20;
    tc.seed = 59;
    tc.capture_trace = true;
    tc.trace_count = 20;
    tc.trace_every = 1;
    const RunReport report = train(task, nullptr, tc);
    REQUIRE(report.gradient_trace.size() == 20);
    for (const auto& snap : report.gradient_trace) {
      CHECK(snap.size() == 64 * 16);
      if (regime == Regime::noisy) {
        double sq = 0.0;
        for (double v : snap) sq += v * v;
        // The noisy trace records the post-clip gradient.
        CHECK(std::sqrt(sq) <= tc.clip_norm + 1e-12);
      }
    }
  }
}

TEST_CASE("mask sanctity: off-circuit entries of b stay exactly zero") {
  const TaskInstance task = make_sparse(61);
  Rng rng(62);
  const Circuit circuit = random_circuit(20, 64, 16, rng);
  for (Regime regime : {Regime::clean, Regime::noisy}) {
    TrainConfig tc = default_config(regime);
    tc.steps = 50;
    tc.eval_every = 50;
    tc.seed = 63;
    const RunReport report = train(task, &circuit, tc);
    const Mask mask = circuit_mask(circuit, 64, 16);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < report.final_b.size(); ++i) {
      if (!mask.bits[i])
        CHECK(report.final_b.data[i] == 0.0);
      else if (report.final_b.data[i] != 0.0)
        ++moved;
    }
    CHECK(moved > 0);
  }
}

TEST_CASE("full-budget masked training equals unmasked training bit for bit") {
  const TaskInstance task = make_sparse(64);
  Rng rng(65);
  const Circuit full = random_circuit(1024, 64, 16, rng);
  for (Regime regime : {Regime::clean, Regime::noisy}) {
    TrainConfig tc = default_config(regime);
    tc.steps = 30;
    tc.eval_every = 30;
    tc.seed = 66;
    const RunReport masked = train(task, &full, tc);
    const RunReport dense = train(task, nullptr, tc);
    CHECK(masked.final_b == dense.final_b);
  }
}

TEST_CASE("a stays frozen in b-only runs and dormant at the first a+b step") {
  const TaskInstance task = make_sparse(67);
  TrainConfig tc = default_config(Regime::clean);
  tc.steps = 25;
  tc.eval_every = 25;
  tc.seed = 68;
  const RunReport b_only = train(task, nullptr, tc);
  CHECK(b_only.final_a == task.base.a);

  TrainConfig joint = tc;
  joint.train_a = true;
  joint.steps = 1;
  joint.eval_every = 1;
  const RunReport one_step = train(task, nullptr, joint);
  CHECK(one_step.final_a == task.base.a);  // zero gradient through b = 0
  CHECK(one_step.final_b != task.base.b);
}

TEST_CASE("full LoRA config rejects masks") {
  const TaskInstance task = make_sparse(69);
  Rng rng(70);
  const Circuit c = random_circuit(4, 64, 16, rng);
  TrainConfig tc = default_config(Regime::clean);
  tc.train_a = true;
  CHECK_THROWS_AS(train(task, &c, tc), std::invalid_argument);
}

TEST_CASE("update_energy ratio of identical masks is one") {
  Rng rng(71);
  const Matrix b = gaussian_fill(rng, 64, 16, 0.0, 1.0);
  const Mask m = circuit_mask(random_circuit(51, 64, 16, rng), 64, 16);
  CHECK(update_energy(b, m, m) == 1.0);

  const Mask other = circuit_mask(random_circuit(50, 64, 16, rng), 64, 16);
  CHECK_THROWS_AS(update_energy(b, m, other), std::invalid_argument);
  CHECK_THROWS_AS(update_energy(Matrix(64, 16, 0.0), m, m), std::runtime_error);
}

TEST_CASE("training rejects nonsense configs") {
  const TaskInstance task = make_sparse(72);
  TrainConfig tc = default_config(Regime::clean);
  tc.steps = 0;
  CHECK_THROWS_AS(train(task, nullptr, tc), std::invalid_argument);
}
