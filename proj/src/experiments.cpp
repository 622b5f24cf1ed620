#include "circuitseed/experiments.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace circuitseed {

using nlohmann::json;

void parallel_for(std::size_t n, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const std::size_t n_workers = std::min(jobs, n);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::size_t fraction_to_k(double fraction, std::size_t total) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("fraction_to_k: fraction outside [0, 1]");
  return static_cast<std::size_t>(std::nearbyint(fraction * static_cast<double>(total)));
}

Circuit discover_circuit(const TaskInstance& task, ScoreMethod method,
                         std::size_t k, std::size_t n_passes, std::size_t batch,
                         std::uint64_t seed) {
  Rng rng(seed);
  if (method == ScoreMethod::random_pick) {
    Circuit c = random_circuit(k, task.base.hidden_dim(), task.base.rank(), rng);
    c.discovery_seed = seed;
    return c;
  }
  const GradStats stats = accumulate(task.base, task, n_passes, batch, rng);
  Circuit c = select_top_k(score(stats, method, task.base), k, method);
  c.discovery_seed = seed;
  c.n_passes = n_passes;
  return c;
}

TrainConfig make_train_config(Regime regime, const TrainOverrides& overrides,
                              std::uint64_t seed) {
  TrainConfig c = default_config(regime);
  if (overrides.steps) c.steps = *overrides.steps;
  if (overrides.batch) c.batch = *overrides.batch;
  if (overrides.eval_every) c.eval_every = *overrides.eval_every;
  if (overrides.lr) c.lr = *overrides.lr;
  if (overrides.noise_std) c.noise_std = *overrides.noise_std;
  if (overrides.clip_norm) c.clip_norm = *overrides.clip_norm;
  c.capture_trace = overrides.capture_trace;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

constexpr std::uint64_t kTaskStream = 0x7a5bULL;
constexpr std::uint64_t kDiscoveryStream = 0x11d1ULL;
constexpr std::uint64_t kTrainStream = 0x7241ULL;

}  // namespace

std::vector<SweepRow> run_sweep(const SweepConfig& config, const CellSink& on_cell) {
  const std::size_t n_methods = config.methods.size();
  const std::size_t n_fracs = config.fractions.size();
  const std::size_t n_units = n_methods * config.seeds;
  std::vector<SweepRow> rows(n_methods * n_fracs * config.seeds);

  parallel_for(n_units, config.jobs, [&](std::size_t unit) {
    const std::size_t mi = unit / config.seeds;
    const std::size_t si = unit % config.seeds;
    const std::string& method = config.methods[mi];
    const bool is_lora = method == "lora";

    TargetSpec spec = config.task_template;
    spec.kind = config.kind;
    spec.seed = derive_seed(config.master_seed, kTaskStream + si);
    Rng task_rng(spec.seed);
    const TaskInstance task = make_task(spec, task_rng);

    const std::uint64_t disc_base =
        derive_seed(config.master_seed, kDiscoveryStream + unit);
    const std::uint64_t train_base =
        derive_seed(config.master_seed, kTrainStream + unit);

    // Scoring passes are shared across budgets; circuits are top-k cuts of
    // the same scores.
    std::optional<GradStats> stats;
    std::optional<Matrix> scores;
    if (!is_lora && method != "random") {
      Rng disc_rng(disc_base);
      stats = accumulate(task.base, task, config.discovery_passes,
                         config.discovery_batch, disc_rng);
      scores = score(*stats, score_method_from_string(method), task.base);
    }

    // Full LoRA ignores the budget; train once and reuse across fractions.
    std::optional<RunReport> lora_report;

    for (std::size_t fi = 0; fi < n_fracs; ++fi) {
      const double fraction = config.fractions[fi];
      SweepRow row;
      row.method = method;
      row.fraction = fraction;
      row.k = is_lora ? task.base.b.size() : fraction_to_k(fraction, task.base.b.size());
      row.seed_index = si;

      std::optional<Circuit> circuit;
      const RunReport* report_ptr = nullptr;
      RunReport report;
      try {
        if (is_lora) {
          if (!lora_report) {
            TrainConfig tc = make_train_config(config.regime, config.train,
                                               derive_seed(train_base, 0));
            tc.train_a = true;
            lora_report = train(task, nullptr, tc);
          }
          report = *lora_report;
        } else {
          if (method == "random") {
            Rng rng(derive_seed(disc_base, fi));
            circuit = random_circuit(row.k, task.base.hidden_dim(),
                                     task.base.rank(), rng);
            circuit->discovery_seed = disc_base;
          } else {
            circuit = select_top_k(*scores, row.k, score_method_from_string(method));
            circuit->discovery_seed = disc_base;
            circuit->n_passes = config.discovery_passes;
          }
          const TrainConfig tc = make_train_config(config.regime, config.train,
                                                   derive_seed(train_base, fi));
          report = train(task, &*circuit, tc);
        }
        row.relative_mse = report.final_relative_mse;
        report_ptr = &report;
      } catch (const DivergedRun& err) {
        row.diverged = true;
        row.diverged_step = err.step;
        row.relative_mse = std::numeric_limits<double>::quiet_NaN();
      }

      rows[(mi * n_fracs + fi) * config.seeds + si] = row;
      if (on_cell) on_cell(row, task, circuit ? &*circuit : nullptr, report_ptr);
    }
  });
  return rows;
}

std::vector<SweepAggregate> aggregate_sweep(const std::vector<SweepRow>& rows) {
  std::vector<SweepAggregate> out;
  for (const auto& row : rows) {
    SweepAggregate* agg = nullptr;
    for (auto& a : out)
      if (a.method == row.method && a.fraction == row.fraction) agg = &a;
    if (!agg) {
      out.push_back({row.method, row.fraction, row.k, 0.0,
                     std::numeric_limits<double>::infinity(),
                     -std::numeric_limits<double>::infinity(), 0, 0});
      agg = &out.back();
    }
    if (row.diverged) {
      ++agg->n_diverged;
      continue;
    }
    agg->mean += row.relative_mse;
    agg->min = std::min(agg->min, row.relative_mse);
    agg->max = std::max(agg->max, row.relative_mse);
    ++agg->n;
  }
  for (auto& a : out)
    if (a.n > 0) a.mean /= static_cast<double>(a.n);
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "# k = round_half_to_even(fraction * |B|)\n";
  out << "method,fraction,k,seed,relative_mse,status\n";
  for (const auto& r : rows)
    out << r.method << ',' << fmt(r.fraction) << ',' << r.k << ',' << r.seed_index
        << ',' << (r.diverged ? "nan" : fmt(r.relative_mse)) << ','
        << (r.diverged ? "diverged" : "ok") << '\n';
  return out.str();
}

std::string aggregate_csv(const std::vector<SweepAggregate>& aggs) {
  std::ostringstream out;
  out << "# k = round_half_to_even(fraction * |B|); mean/min/max over non-diverged seeds\n";
  out << "method,fraction,k,mean,min,max,n,n_diverged\n";
  for (const auto& a : aggs)
    out << a.method << ',' << fmt(a.fraction) << ',' << a.k << ',' << fmt(a.mean)
        << ',' << fmt(a.min) << ',' << fmt(a.max) << ',' << a.n << ','
        << a.n_diverged << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Stability
// ---------------------------------------------------------------------------

StabilityResult run_stability(const StabilityConfig& config) {
  struct PerSeed {
    std::vector<double> pass_overlap;
    std::vector<double> eps_overlap;
    Circuit reference;
  };
  std::vector<PerSeed> per_seed(config.seeds);

  parallel_for(config.seeds, config.jobs, [&](std::size_t si) {
    TargetSpec spec;
    spec.kind = config.kind;
    spec.seed = derive_seed(config.master_seed, kTaskStream + si);
    Rng task_rng(spec.seed);
    const TaskInstance task = make_task(spec, task_rng);
    const std::uint64_t disc_seed =
        derive_seed(config.master_seed, kDiscoveryStream + si);

    PerSeed& slot = per_seed[si];
    slot.reference = discover_circuit(task, config.method, config.k,
                                      config.reference_passes,
                                      config.discovery_batch, disc_seed);

    // Smaller-N circuits share the discovery stream, so their passes are a
    // prefix of the reference's.
    for (std::size_t n : config.pass_grid) {
      const Circuit c = discover_circuit(task, config.method, config.k, n,
                                         config.discovery_batch, disc_seed);
      slot.pass_overlap.push_back(overlap(c, slot.reference));
    }

    std::vector<double> eps_grid = config.epsilon_grid;
    eps_grid.insert(eps_grid.begin(), 0.0);
    for (std::size_t ei = 0; ei < eps_grid.size(); ++ei) {
      Rng perturb_rng(derive_seed(config.master_seed, 0x9e11ULL + si * 64 + ei));
      const AdaptedModel perturbed = perturb_a(task.base, eps_grid[ei], perturb_rng);
      TaskInstance perturbed_task = task;
      perturbed_task.base = perturbed;
      const Circuit c = discover_circuit(perturbed_task, config.method, config.k,
                                         config.reference_passes,
                                         config.discovery_batch, disc_seed);
      slot.eps_overlap.push_back(overlap(c, slot.reference));
    }
  });

  StabilityResult result;
  result.chance = static_cast<double>(config.k) / 1024.0;
  for (std::size_t ni = 0; ni < config.pass_grid.size(); ++ni) {
    double mean = 0.0;
    for (const auto& s : per_seed) mean += s.pass_overlap[ni];
    result.pass_overlap.emplace_back(config.pass_grid[ni],
                                     mean / static_cast<double>(config.seeds));
  }
  std::vector<double> eps_grid = config.epsilon_grid;
  eps_grid.insert(eps_grid.begin(), 0.0);
  for (std::size_t ei = 0; ei < eps_grid.size(); ++ei) {
    double mean = 0.0;
    for (const auto& s : per_seed) mean += s.eps_overlap[ei];
    result.epsilon_overlap.emplace_back(eps_grid[ei],
                                        mean / static_cast<double>(config.seeds));
  }
  if (config.seeds > 1) {
    double mean = 0.0;
    for (std::size_t si = 0; si + 1 < config.seeds; ++si)
      mean += overlap(per_seed[si].reference, per_seed[si + 1].reference);
    result.cross_seed_overlap = mean / static_cast<double>(config.seeds - 1);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Diagnostic protocols
// ---------------------------------------------------------------------------

namespace {

TaskInstance regime_task(Regime regime, std::uint64_t seed) {
  TargetSpec spec;
  spec.kind = regime == Regime::clean ? TargetKind::dense_rank2 : TargetKind::sparse_b;
  spec.seed = seed;
  Rng rng(spec.seed);
  return make_task(spec, rng);
}

}  // namespace

GradientTrace capture_regime_trace(Regime regime, std::uint64_t seed,
                                   std::size_t snapshots) {
  const TaskInstance task = regime_task(regime, derive_seed(seed, 0));
  TrainConfig tc = default_config(regime);
  tc.steps = snapshots;
  tc.eval_every = tc.steps;
  tc.capture_trace = true;
  tc.trace_count = snapshots;
  tc.trace_every = 1;
  tc.seed = derive_seed(seed, 1);
  const RunReport report = train(task, nullptr, tc);
  return GradientTrace{report.gradient_trace};
}

double energy_ratio(Regime regime, std::uint64_t seed, std::size_t k) {
  const TaskInstance task = regime_task(regime, derive_seed(seed, 0));
  const Circuit informed = discover_circuit(task, ScoreMethod::s_hat, k, 100, 128,
                                            derive_seed(seed, 1));
  Rng rng(derive_seed(seed, 2));
  const Circuit rand = random_circuit(k, task.base.hidden_dim(), task.base.rank(), rng);

  TrainConfig tc = default_config(regime);
  tc.seed = derive_seed(seed, 3);
  const RunReport report = train(task, nullptr, tc);

  const std::size_t rows = task.base.hidden_dim(), cols = task.base.rank();
  return update_energy(report.final_b, circuit_mask(informed, rows, cols),
                       circuit_mask(rand, rows, cols));
}

const std::vector<double>& default_knockout_fractions() {
  static const std::vector<double> fractions{0.001, 0.01, 0.03, 0.05,
                                             0.1,   0.2,  0.35, 0.5, 0.75};
  return fractions;
}

KnockoutCurves knockout_protocol(std::uint64_t seed,
                                 const std::vector<double>& fractions,
                                 std::uint64_t random_seed) {
  const TaskInstance task = regime_task(Regime::noisy, derive_seed(seed, 0));

  Rng disc_rng(derive_seed(seed, 1));
  const GradStats stats = accumulate(task.base, task, 100, 128, disc_rng);
  const Matrix scores = score(stats, ScoreMethod::f_hat, task.base);

  TrainConfig tc = default_config(Regime::noisy);
  tc.train_a = true;
  tc.seed = derive_seed(seed, 2);
  const RunReport report = train(task, nullptr, tc);

  AdaptedModel trained = task.base;
  trained.b = report.final_b;
  trained.a = report.final_a;

  Rng knockout_rng(random_seed);
  return knockout_sweep(trained, scores, fractions, task, knockout_rng);
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

std::vector<AblationRow> run_ablation(TargetKind kind, Regime regime,
                                      const std::vector<std::size_t>& budgets,
                                      std::size_t seeds, std::uint64_t master_seed,
                                      std::size_t jobs) {
  for (std::size_t k : budgets)
    if (k % 2 != 0)
      throw std::invalid_argument("run_ablation: A+B split needs an even budget");

  std::vector<AblationRow> rows(budgets.size() * seeds);
  parallel_for(seeds, jobs, [&](std::size_t si) {
    TargetSpec spec;
    spec.kind = kind;
    spec.seed = derive_seed(master_seed, kTaskStream + si);
    Rng task_rng(spec.seed);
    const TaskInstance task = make_task(spec, task_rng);
    const std::size_t b_rows = task.base.hidden_dim();
    const std::size_t b_cols = task.base.rank();

    Rng disc_rng(derive_seed(master_seed, kDiscoveryStream + si));
    const GradStats stats = accumulate(task.base, task, 100, 128, disc_rng);
    const Matrix b_scores = score(stats, ScoreMethod::s_hat, task.base);

    // Warm-up run to give A a nonzero gradient, then score A the same way.
    TrainConfig warm = default_config(regime);
    warm.steps = 50;
    warm.eval_every = warm.steps;
    warm.seed = derive_seed(master_seed, 0xab01ULL + si);
    const RunReport warm_report = train(task, nullptr, warm);
    AdaptedModel warmed = task.base;
    warmed.b = warm_report.final_b;

    Matrix a_sum(task.base.a.rows, task.base.a.cols);
    Rng a_rng(derive_seed(master_seed, 0xab02ULL + si));
    for (int pass = 0; pass < 100; ++pass) {
      const Batch batch = sample_batch(task, 128, a_rng);
      add_inplace(a_sum, backward(warmed, batch).d_a);
    }
    Matrix a_scores(a_sum.rows, a_sum.cols);
    for (std::size_t i = 0; i < a_sum.size(); ++i)
      a_scores.data[i] = std::abs(a_sum.data[i] / 100.0);

    for (std::size_t ki = 0; ki < budgets.size(); ++ki) {
      const std::size_t k = budgets[ki];
      AblationRow row;
      row.k = k;
      row.seed_index = si;

      const Circuit b_only = select_top_k(b_scores, k, ScoreMethod::s_hat);
      TrainConfig tc = default_config(regime);
      tc.seed = derive_seed(master_seed, 0xab03ULL + si * 64 + ki);
      row.b_only_mse = train(task, &b_only, tc).final_relative_mse;

      const Circuit b_half = select_top_k(b_scores, k / 2, ScoreMethod::s_hat);
      const Circuit a_half = select_top_k(a_scores, k / 2, ScoreMethod::s_hat);
      TrainConfig ab = default_config(regime);
      ab.mask = circuit_mask(b_half, b_rows, b_cols);
      ab.mask_a = circuit_mask(a_half, task.base.a.rows, task.base.a.cols);
      ab.seed = tc.seed;
      row.a_plus_b_mse = train(task, nullptr, ab).final_relative_mse;

      rows[ki * seeds + si] = row;
    }
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json matrix_to_json(const Matrix& m) { return m.data; }

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  if (j.size() != m.size())
    throw std::invalid_argument("matrix_from_json: element count mismatch");
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = j[i].get<double>();
  return m;
}

}  // namespace

std::string circuit_to_json(const Circuit& c) {
  json entries = json::array();
  for (const auto& e : c.entries) entries.push_back({e.row, e.col, e.score});
  const json j{{"schema_version", 1},
               {"method", to_string(c.method)},
               {"k", c.k},
               {"n_passes", c.n_passes},
               {"discovery_seed", c.discovery_seed},
               {"entries", entries}};
  return j.dump(2) + "\n";
}

Circuit circuit_from_json(const std::string& text) {
  const json j = json::parse(text);
  Circuit c;
  c.method = score_method_from_string(j.at("method").get<std::string>());
  c.k = j.at("k").get<std::size_t>();
  c.n_passes = j.at("n_passes").get<std::size_t>();
  c.discovery_seed = j.at("discovery_seed").get<std::uint64_t>();
  for (const auto& e : j.at("entries"))
    c.entries.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>(),
                         e[2].get<double>()});
  if (c.entries.size() != c.k)
    throw std::invalid_argument("circuit_from_json: entry count != k");
  return c;
}

std::string task_manifest_json(const TaskInstance& task) {
  const json j{
      {"schema_version", 1},
      {"kind", to_string(task.spec.kind)},
      {"seed", task.spec.seed},
      {"dims",
       {{"input", task.base.input_dim()},
        {"hidden", task.base.hidden_dim()},
        {"output", task.base.output_dim()},
        {"rank", task.base.rank()}}},
      {"baseline_mse", task.baseline_mse},
      {"residual_rank", task.spec.residual_rank},
      {"residual_factor_std", task.spec.residual_factor_std},
      {"sparse_fraction", task.spec.sparse_fraction},
      {"large_std", task.spec.large_std},
      {"small_std", task.spec.small_std}};
  return j.dump(2) + "\n";
}

std::string run_report_json(const RunReport& report) {
  json records = json::array();
  for (const auto& r : report.records)
    records.push_back({{"step", r.step},
                       {"train_loss", r.train_loss},
                       {"relative_mse", r.relative_mse}});
  const json j{{"schema_version", 1},
               {"config",
                {{"regime", to_string(report.config.regime)},
                 {"steps", report.config.steps},
                 {"batch", report.config.batch},
                 {"lr", report.config.lr},
                 {"eval_every", report.config.eval_every},
                 {"seed", report.config.seed},
                 {"train_a", report.config.train_a},
                 {"noise_std", report.config.noise_std},
                 {"clip_norm", report.config.clip_norm}}},
               {"records", records},
               {"final_relative_mse", report.final_relative_mse},
               {"wall_time_s", report.wall_time_s}};
  return j.dump(2) + "\n";
}

std::string metrics_csv(const RunReport& report) {
  std::ostringstream out;
  out << "step,train_loss,relative_mse\n";
  for (const auto& r : report.records)
    out << r.step << ',' << fmt(r.train_loss) << ',' << fmt(r.relative_mse) << '\n';
  return out.str();
}

std::string model_to_json(const AdaptedModel& model, std::uint64_t seed) {
  const json j{{"schema_version", 1},
               {"dims",
                {{"input", model.input_dim()},
                 {"hidden", model.hidden_dim()},
                 {"output", model.output_dim()},
                 {"rank", model.rank()}}},
               {"seed", seed},
               {"scale", model.scale},
               {"w1", matrix_to_json(model.w1)},
               {"w2", matrix_to_json(model.w2)},
               {"a", matrix_to_json(model.a)},
               {"b", matrix_to_json(model.b)}};
  return j.dump() + "\n";
}

AdaptedModel model_from_json(const std::string& text) {
  const json j = json::parse(text);
  const auto& dims = j.at("dims");
  const std::size_t input = dims.at("input").get<std::size_t>();
  const std::size_t hidden = dims.at("hidden").get<std::size_t>();
  const std::size_t output = dims.at("output").get<std::size_t>();
  const std::size_t rank = dims.at("rank").get<std::size_t>();
  AdaptedModel m;
  m.scale = j.at("scale").get<double>();
  m.w1 = matrix_from_json(j.at("w1"), hidden, input);
  m.w2 = matrix_from_json(j.at("w2"), output, hidden);
  m.a = matrix_from_json(j.at("a"), rank, input);
  m.b = matrix_from_json(j.at("b"), hidden, rank);
  return m;
}

}  // namespace circuitseed
