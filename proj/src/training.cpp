#include "circuitseed/training.hpp"

#include <chrono>
#include <cmath>

namespace circuitseed {

TrainConfig default_config(Regime regime) {
  TrainConfig c;
  c.regime = regime;
  if (regime == Regime::clean) {
    c.steps = 5000;
    c.batch = 128;
    c.lr = 5e-2;
    c.eval_every = 250;
  } else {
    c.steps = 15000;
    c.batch = 4;
    c.lr = 3e-3;
    c.eval_every = 500;
  }
  return c;
}

void apply_masked_update(Matrix& param, const Matrix& grad, const Mask& mask,
                         AdamState& state, double lr) {
  if (param.rows != grad.rows || param.cols != grad.cols ||
      mask.bits.size() != param.size())
    throw std::invalid_argument("apply_masked_update: shape mismatch");
  if (state.m.empty()) {
    state.m = Matrix(param.rows, param.cols);
    state.v = Matrix(param.rows, param.cols);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (!mask.bits[i]) continue;
    const double g = grad.data[i];
    state.m.data[i] = state.beta1 * state.m.data[i] + (1.0 - state.beta1) * g;
    state.v.data[i] = state.beta2 * state.v.data[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m.data[i] / bc1;
    const double v_hat = state.v.data[i] / bc2;
    param.data[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

Matrix clip_and_noise(const Matrix& grad, double noise_std, double clip_norm,
                      Rng& rng, const Mask* mask) {
  if (noise_std < 0.0 || clip_norm < 0.0)
    throw std::invalid_argument("clip_and_noise: negative noise or clip norm");
  Matrix out = grad;
  double sq = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask && !mask->bits[i]) {
      out.data[i] = 0.0;
      continue;
    }
    if (noise_std > 0.0) out.data[i] += rng.gaussian(0.0, noise_std);
    sq += out.data[i] * out.data[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > clip_norm && norm > 0.0) scale_inplace(out, clip_norm / norm);
  return out;
}

namespace {

struct Block {
  Matrix* param;
  Mask mask;
  AdamState adam;
};

void mask_grad(Matrix& grad, const Mask& mask) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!mask.bits[i]) grad.data[i] = 0.0;
}

}  // namespace

RunReport train(const TaskInstance& task, const Circuit* circuit,
                const TrainConfig& config) {
  if (config.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (config.train_a && (config.mask || config.mask_a || circuit))
    throw std::invalid_argument("train: full LoRA trains both factors densely, no masks");

  const auto started = std::chrono::steady_clock::now();
  AdaptedModel model = task.base;
  Rng rng(config.seed);

  std::vector<Block> blocks;
  {
    Mask b_mask = circuit ? circuit_mask(*circuit, model.b.rows, model.b.cols)
                  : config.mask ? *config.mask
                                : full_mask(model.b.rows, model.b.cols);
    blocks.push_back({&model.b, std::move(b_mask), {}});
    if (config.train_a)
      blocks.push_back({&model.a, full_mask(model.a.rows, model.a.cols), {}});
    else if (config.mask_a)
      blocks.push_back({&model.a, *config.mask_a, {}});
  }

  RunReport report;
  report.config = config;
  report.records.push_back(
      {0, task.baseline_mse, relative_mse(task, model, task.heldout)});

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const Batch batch = sample_batch(task, config.batch, rng);
    const Gradients g = backward(model, batch);
    if (!std::isfinite(g.loss)) throw DivergedRun(step);

    const bool capture = config.capture_trace &&
                         report.gradient_trace.size() < config.trace_count &&
                         (step - 1) % config.trace_every == 0;
    if (capture && config.regime == Regime::clean)
      report.gradient_trace.push_back(g.d_b.data);

    std::vector<Matrix> grads;
    grads.push_back(g.d_b);
    if (blocks.size() > 1) grads.push_back(g.d_a);
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) mask_grad(grads[bi], blocks[bi].mask);

    if (config.regime == Regime::noisy) {
      // Noise on trainable entries, then one global clip across all blocks.
      double sq = 0.0;
      for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        Matrix& grad = grads[bi];
        const Mask& mask = blocks[bi].mask;
        for (std::size_t i = 0; i < grad.size(); ++i) {
          if (!mask.bits[i]) continue;
          grad.data[i] += rng.gaussian(0.0, config.noise_std);
          sq += grad.data[i] * grad.data[i];
        }
      }
      const double norm = std::sqrt(sq);
      const double factor = norm > config.clip_norm && norm > 0.0
                                ? config.clip_norm / norm
                                : 1.0;
      if (capture) {
        // The noisy trace records the gradient the optimizer actually sees:
        // noise and clipping included.
        std::vector<double> snap = grads[0].data;
        for (double& v : snap) v *= factor;
        report.gradient_trace.push_back(std::move(snap));
      }
      for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        Matrix& grad = grads[bi];
        const Mask& mask = blocks[bi].mask;
        Matrix& param = *blocks[bi].param;
        for (std::size_t i = 0; i < grad.size(); ++i)
          if (mask.bits[i]) param.data[i] -= config.lr * factor * grad.data[i];
      }
    } else {
      for (std::size_t bi = 0; bi < blocks.size(); ++bi)
        apply_masked_update(*blocks[bi].param, grads[bi], blocks[bi].mask,
                            blocks[bi].adam, config.lr);
    }

    if (step % config.eval_every == 0 || step == config.steps) {
      const double rel = relative_mse(task, model, task.heldout);
      if (!std::isfinite(rel)) throw DivergedRun(step);
      report.records.push_back({step, g.loss, rel});
    }
  }

  report.final_relative_mse = report.records.back().relative_mse;
  report.final_b = model.b;
  report.final_a = model.a;
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

double update_energy(const Matrix& final_b, const Mask& numerator_mask,
                     const Mask& denominator_mask) {
  if (numerator_mask.k != denominator_mask.k)
    throw std::invalid_argument("update_energy: masks must be size-matched");
  auto mean_sq = [&](const Mask& mask) {
    double sum = 0.0;
    for (std::size_t i = 0; i < final_b.size(); ++i)
      if (mask.bits[i]) sum += final_b.data[i] * final_b.data[i];
    return sum / static_cast<double>(mask.k);
  };
  const double denom = mean_sq(denominator_mask);
  if (denom == 0.0)
    throw std::runtime_error("update_energy: reference mask carries zero energy");
  return mean_sq(numerator_mask) / denom;
}

const char* to_string(Regime regime) {
  return regime == Regime::clean ? "clean" : "noisy";
}

Regime regime_from_string(const std::string& s) {
  if (s == "clean") return Regime::clean;
  if (s == "noisy") return Regime::noisy;
  throw std::invalid_argument("unknown regime: " + s);
}

}  // namespace circuitseed
