// circuit-seed: experiment runner for the LoRA placement lab.
//
// Subcommands: discover, train, sweep, knockout, diagnose, stability,
// ablate-ab, compare. Options can come from a flat key=value config file
// (--config, # comments); command-line flags win.
//
// Exit codes: 0 success, 2 config error, 3 diverged runs present, 4 I/O error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "circuitseed/experiments.hpp"
#include "circuitseed/svd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace circuitseed;

namespace {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Budgets on the command line are either fractions of |B| (values <= 1) or
// absolute entry counts.
double budget_to_fraction(double budget) {
  if (budget < 0.0 || budget > 1024.0)
    throw std::invalid_argument("budget outside [0, 1024]");
  return budget <= 1.0 ? budget : budget / 1024.0;
}

std::string budget_dir(double fraction) { return fmt(fraction); }

TaskInstance build_task(TargetKind kind, std::uint64_t master_seed, std::size_t seed_index) {
  TargetSpec spec;
  spec.kind = kind;
  spec.seed = derive_seed(master_seed, 0x7a5bULL + seed_index);
  Rng rng(spec.seed);
  return make_task(spec, rng);
}

// Options shared by the experiment subcommands; each subcommand registers the
// subset it uses so config keys stay flat.
struct CommonOpts {
  std::string out = "out";
  std::string task = "sparse_b";
  std::string regime;
  std::vector<std::string> methods;
  std::vector<double> budgets;
  std::uint64_t seed = 1;
  std::size_t seeds = 10;
  std::size_t jobs = 1;
  std::size_t passes = 100;
  std::size_t discovery_batch = 128;
  std::size_t steps = 0;  // 0 = regime default
  double lr = 0.0;        // 0 = regime default
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->set_config("--config", "", "flat key=value config file; flags win");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--jobs", o.jobs, "max parallel cells");
}

void add_grid(CLI::App* cmd, CommonOpts& o, const std::string& default_regime) {
  o.regime = default_regime;
  cmd->add_option("--task", o.task, "target kind: dense_rank2 | sparse_b");
  cmd->add_option("--regime", o.regime, "training regime: clean | noisy");
  cmd->add_option("--method", o.methods, "score methods (repeatable)");
  cmd->add_option("--budget", o.budgets, "budgets: fraction of |B| or entry count");
  cmd->add_option("--seeds", o.seeds, "number of task seeds");
  cmd->add_option("--passes", o.passes, "discovery scoring passes");
  cmd->add_option("--discovery-batch", o.discovery_batch, "discovery batch size");
  cmd->add_option("--steps", o.steps, "training steps override");
  cmd->add_option("--lr", o.lr, "learning rate override");
}

TrainOverrides overrides_of(const CommonOpts& o) {
  TrainOverrides t;
  if (o.steps > 0) t.steps = o.steps;
  if (o.lr > 0.0) t.lr = o.lr;
  return t;
}

// ---------------------------------------------------------------------------
// discover
// ---------------------------------------------------------------------------

std::string score_histogram_csv(const Matrix& scores) {
  double lo = scores.data[0], hi = scores.data[0];
  for (double v : scores.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const int bins = 50;
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  std::vector<std::size_t> counts(bins, 0);
  for (double v : scores.data) {
    int b = static_cast<int>((v - lo) / width);
    if (b >= bins) b = bins - 1;
    counts[b] += 1;
  }
  std::ostringstream out;
  out << "bin_low,bin_high,count\n";
  for (int b = 0; b < bins; ++b)
    out << fmt(lo + b * width) << ',' << fmt(lo + (b + 1) * width) << ','
        << counts[b] << '\n';
  return out.str();
}

int cmd_discover(const CommonOpts& o) {
  const TargetKind kind = target_kind_from_string(o.task);
  const std::vector<std::string> methods =
      o.methods.empty() ? std::vector<std::string>{"s_hat", "f_hat"} : o.methods;
  const std::vector<double> budgets = o.budgets.empty() ? std::vector<double>{0.05} : o.budgets;

  for (std::size_t si = 0; si < o.seeds; ++si) {
    const TaskInstance task = build_task(kind, o.seed, si);
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      const ScoreMethod method = score_method_from_string(methods[mi]);
      const std::uint64_t disc_seed =
          derive_seed(o.seed, 0x11d1ULL + mi * o.seeds + si);
      for (double budget : budgets) {
        const double fraction = budget_to_fraction(budget);
        const std::size_t k = fraction_to_k(fraction);
        const Circuit circuit =
            discover_circuit(task, method, k, o.passes, o.discovery_batch, disc_seed);
        const fs::path dir = fs::path(o.out) / "discover" / methods[mi] /
                             budget_dir(fraction) / std::to_string(si);
        write_file(dir / "circuit.json", circuit_to_json(circuit));
        write_file(dir / "task_manifest.json", task_manifest_json(task));
        if (method != ScoreMethod::random_pick) {
          Rng rng(disc_seed);
          const GradStats stats =
              accumulate(task.base, task, o.passes, o.discovery_batch, rng);
          write_file(dir / "score_histogram.csv",
                     score_histogram_csv(score(stats, method, task.base)));
        }
      }
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train (one cell)
// ---------------------------------------------------------------------------

int cmd_train(const CommonOpts& o, std::size_t seed_index) {
  const TargetKind kind = target_kind_from_string(o.task);
  const Regime regime = regime_from_string(o.regime);
  const std::string method = o.methods.empty() ? "s_hat" : o.methods.front();
  const double fraction =
      budget_to_fraction(o.budgets.empty() ? 0.05 : o.budgets.front());

  const TaskInstance task = build_task(kind, o.seed, seed_index);
  const fs::path dir = fs::path(o.out) / "train" / method / budget_dir(fraction) /
                       std::to_string(seed_index);
  write_file(dir / "task_manifest.json", task_manifest_json(task));

  TrainConfig tc = make_train_config(regime, overrides_of(o),
                                     derive_seed(o.seed, 0x7241ULL + seed_index));
  try {
    RunReport report;
    if (method == "lora") {
      tc.train_a = true;
      report = train(task, nullptr, tc);
    } else {
      Circuit circuit;
      const std::size_t k = fraction_to_k(fraction);
      const std::uint64_t disc_seed = derive_seed(o.seed, 0x11d1ULL + seed_index);
      if (method == "random") {
        Rng rng(disc_seed);
        circuit = random_circuit(k, task.base.hidden_dim(), task.base.rank(), rng);
        circuit.discovery_seed = disc_seed;
      } else {
        circuit = discover_circuit(task, score_method_from_string(method), k,
                                   o.passes, o.discovery_batch, disc_seed);
      }
      write_file(dir / "circuit.json", circuit_to_json(circuit));
      report = train(task, &circuit, tc);
    }
    write_file(dir / "metrics.csv", metrics_csv(report));
    write_file(dir / "report.json", run_report_json(report));
    std::printf("final relative MSE: %s\n", fmt(report.final_relative_mse).c_str());
  } catch (const DivergedRun& err) {
    std::fprintf(stderr, "%s\n", err.what());
    return 3;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

int cmd_sweep(const CommonOpts& o) {
  SweepConfig config;
  config.kind = target_kind_from_string(o.task);
  config.regime = regime_from_string(o.regime);
  if (!o.methods.empty()) config.methods = o.methods;
  if (!o.budgets.empty()) {
    config.fractions.clear();
    for (double b : o.budgets) config.fractions.push_back(budget_to_fraction(b));
  }
  config.seeds = o.seeds;
  config.master_seed = o.seed;
  config.discovery_passes = o.passes;
  config.discovery_batch = o.discovery_batch;
  config.task_template.kind = config.kind;
  config.train = overrides_of(o);
  config.jobs = o.jobs;

  const fs::path root = fs::path(o.out) / "sweep";
  std::mutex io_mutex;
  std::exception_ptr io_error;
  const CellSink sink = [&](const SweepRow& row, const TaskInstance& task,
                            const Circuit* circuit, const RunReport* report) {
    try {
      const fs::path dir = root / row.method / budget_dir(row.fraction) /
                           std::to_string(row.seed_index);
      write_file(dir / "task_manifest.json", task_manifest_json(task));
      if (circuit) write_file(dir / "circuit.json", circuit_to_json(*circuit));
      if (report) {
        write_file(dir / "metrics.csv", metrics_csv(*report));
        write_file(dir / "report.json", run_report_json(*report));
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(io_mutex);
      if (!io_error) io_error = std::current_exception();
    }
  };

  const std::vector<SweepRow> rows = run_sweep(config, sink);
  if (io_error) std::rethrow_exception(io_error);
  write_file(root / "sweep.csv", sweep_csv(rows));
  write_file(root / "aggregate.csv", aggregate_csv(aggregate_sweep(rows)));

  bool any_diverged = false;
  for (const auto& r : rows) any_diverged = any_diverged || r.diverged;
  std::printf("%zu cells, output in %s\n", rows.size(), root.string().c_str());
  return any_diverged ? 3 : 0;
}

// ---------------------------------------------------------------------------
// knockout
// ---------------------------------------------------------------------------

int cmd_knockout(const CommonOpts& o) {
  const std::vector<double>& fractions = default_knockout_fractions();
  std::ostringstream rows;
  rows << "seed,fraction,circuit_relative_mse,random_relative_mse\n";
  std::vector<double> circuit_mean(fractions.size(), 0.0);
  std::vector<double> random_mean(fractions.size(), 0.0);
  for (std::size_t si = 0; si < o.seeds; ++si) {
    const KnockoutCurves curves =
        knockout_protocol(derive_seed(o.seed, si), fractions);
    for (std::size_t i = 0; i < fractions.size(); ++i) {
      rows << si << ',' << fmt(fractions[i]) << ','
           << fmt(curves.circuit[i].relative_mse) << ','
           << fmt(curves.random[i].relative_mse) << '\n';
      circuit_mean[i] += curves.circuit[i].relative_mse / static_cast<double>(o.seeds);
      random_mean[i] += curves.random[i].relative_mse / static_cast<double>(o.seeds);
    }
  }
  std::ostringstream agg;
  agg << "fraction,circuit_mean,random_mean\n";
  for (std::size_t i = 0; i < fractions.size(); ++i)
    agg << fmt(fractions[i]) << ',' << fmt(circuit_mean[i]) << ','
        << fmt(random_mean[i]) << '\n';
  const fs::path dir = fs::path(o.out) / "knockout";
  write_file(dir / "knockout.csv", rows.str());
  write_file(dir / "knockout_mean.csv", agg.str());
  return 0;
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

json diagnose_regime(Regime regime, std::uint64_t seed) {
  const TargetKind kind =
      regime == Regime::clean ? TargetKind::dense_rank2 : TargetKind::sparse_b;
  TargetSpec spec;
  spec.kind = kind;
  spec.seed = derive_seed(seed, 0);
  Rng task_rng(spec.seed);
  const TaskInstance task = make_task(spec, task_rng);

  const StructureReport structure =
      structure_report(capture_regime_trace(regime, seed));
  const double energy = energy_ratio(regime, seed);

  // Retention of the informed circuit on the mean initialization gradient.
  Rng disc_rng(derive_seed(seed, 1));
  const GradStats stats = accumulate(task.base, task, 100, 128, disc_rng);
  const Matrix scores = score(stats, ScoreMethod::s_hat, task.base);
  const Circuit circuit = select_top_k(scores, 51, ScoreMethod::s_hat);
  std::vector<double> mean_grad(stats.sum_g.data);
  for (auto& v : mean_grad) v /= static_cast<double>(stats.n);
  const double retention =
      signal_retention(mean_grad, circuit_mask(circuit, 64, 16));

  // Sign consistency over single-example gradients at initialization.
  Rng sign_rng(derive_seed(seed, 2));
  std::vector<Matrix> per_example;
  for (int i = 0; i < 64; ++i)
    per_example.push_back(backward(task.base, sample_batch(task, 1, sign_rng)).d_b);
  const Matrix consistency = sign_consistency(per_example);
  double mean_consistency = 0.0;
  for (double v : consistency.data) mean_consistency += v;
  mean_consistency /= static_cast<double>(consistency.size());

  // Alignment of the learned update with the base weight's top subspace.
  TrainConfig tc = default_config(regime);
  tc.seed = derive_seed(seed, 3);
  const RunReport report = train(task, nullptr, tc);
  const Matrix delta_w = matmul(report.final_b, task.base.a);
  const SvdAlignment alignment = svd_alignment(delta_w, task.base.w1, 16);

  return json{{"regime", to_string(regime)},
              {"task", to_string(kind)},
              {"effective_rank", structure.effective_rank},
              {"mean_cosine", structure.mean_cosine},
              {"accumulation_efficiency", structure.accumulation_efficiency},
              {"update_energy_ratio", energy},
              {"circuit_retention_k51", retention},
              {"chance_retention_k51", 51.0 / 1024.0},
              {"mean_sign_consistency", mean_consistency},
              {"final_relative_mse", report.final_relative_mse},
              {"svd_left_align_r16", alignment.left_align},
              {"svd_spectral_ratio_r16", alignment.spectral_ratio}};
}

int cmd_diagnose(const CommonOpts& o) {
  const json j{{"schema_version", 1},
               {"clean", diagnose_regime(Regime::clean, o.seed)},
               {"noisy", diagnose_regime(Regime::noisy, o.seed)}};
  const fs::path dir = fs::path(o.out) / "diagnose";
  write_file(dir / "diagnostics.json", j.dump(2) + "\n");

  const KnockoutCurves curves =
      knockout_protocol(derive_seed(o.seed, 4), default_knockout_fractions());
  std::ostringstream csv;
  csv << "fraction,circuit_relative_mse,random_relative_mse\n";
  for (std::size_t i = 0; i < curves.circuit.size(); ++i)
    csv << fmt(curves.circuit[i].fraction_zeroed) << ','
        << fmt(curves.circuit[i].relative_mse) << ','
        << fmt(curves.random[i].relative_mse) << '\n';
  write_file(dir / "knockout.csv", csv.str());
  return 0;
}

// ---------------------------------------------------------------------------
// stability
// ---------------------------------------------------------------------------

int cmd_stability(const CommonOpts& o) {
  StabilityConfig config;
  config.kind = target_kind_from_string(o.task);
  if (!o.methods.empty())
    config.method = score_method_from_string(o.methods.front());
  if (!o.budgets.empty())
    config.k = fraction_to_k(budget_to_fraction(o.budgets.front()));
  config.seeds = o.seeds;
  config.master_seed = o.seed;
  config.discovery_batch = o.discovery_batch;
  config.reference_passes = o.passes;
  config.jobs = o.jobs;
  const StabilityResult r = run_stability(config);

  std::ostringstream passes;
  passes << "passes,mean_overlap\n";
  for (const auto& [n, ov] : r.pass_overlap) passes << n << ',' << fmt(ov) << '\n';
  std::ostringstream eps;
  eps << "epsilon,mean_overlap\n";
  for (const auto& [e, ov] : r.epsilon_overlap) eps << fmt(e) << ',' << fmt(ov) << '\n';
  std::ostringstream cross;
  cross << "cross_seed_overlap,chance\n"
        << fmt(r.cross_seed_overlap) << ',' << fmt(r.chance) << '\n';

  const fs::path dir = fs::path(o.out) / "stability";
  write_file(dir / "pass_overlap.csv", passes.str());
  write_file(dir / "epsilon_overlap.csv", eps.str());
  write_file(dir / "cross_seed.csv", cross.str());
  return 0;
}

// ---------------------------------------------------------------------------
// ablate-ab
// ---------------------------------------------------------------------------

int cmd_ablate_ab(const CommonOpts& o) {
  const TargetKind kind = target_kind_from_string(o.task);
  const Regime regime = regime_from_string(o.regime);
  std::vector<std::size_t> budgets;
  const std::vector<double> defaults{0.02, 0.1, 0.2, 0.5};
  for (double b : o.budgets.empty() ? defaults : o.budgets)
    budgets.push_back(fraction_to_k(budget_to_fraction(b)));

  const std::vector<AblationRow> rows =
      run_ablation(kind, regime, budgets, o.seeds, o.seed, o.jobs);
  std::ostringstream csv;
  csv << "k,seed,b_only_relative_mse,a_plus_b_relative_mse\n";
  for (const auto& r : rows)
    csv << r.k << ',' << r.seed_index << ',' << fmt(r.b_only_mse) << ','
        << fmt(r.a_plus_b_mse) << '\n';
  std::ostringstream agg;
  agg << "k,b_only_mean,a_plus_b_mean\n";
  for (std::size_t ki = 0; ki < budgets.size(); ++ki) {
    double b_mean = 0.0, ab_mean = 0.0;
    for (const auto& r : rows)
      if (r.k == budgets[ki]) {
        b_mean += r.b_only_mse / static_cast<double>(o.seeds);
        ab_mean += r.a_plus_b_mse / static_cast<double>(o.seeds);
      }
    agg << budgets[ki] << ',' << fmt(b_mean) << ',' << fmt(ab_mean) << '\n';
  }
  const fs::path dir = fs::path(o.out) / "ablate-ab";
  write_file(dir / "ablation.csv", csv.str());
  write_file(dir / "ablation_mean.csv", agg.str());
  return 0;
}

// ---------------------------------------------------------------------------
// compare: join two sweep CSVs cell by cell.
// ---------------------------------------------------------------------------

int cmd_compare(const std::string& left, const std::string& right,
                const std::string& out_dir) {
  auto parse = [](const std::string& text) {
    std::map<std::string, double> cells;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("method,", 0) == 0) continue;
      std::vector<std::string> fields;
      std::istringstream row(line);
      std::string field;
      while (std::getline(row, field, ',')) fields.push_back(field);
      if (fields.size() < 5)
        throw std::invalid_argument("compare: malformed sweep row: " + line);
      cells[fields[0] + "," + fields[1] + "," + fields[3]] = std::stod(fields[4]);
    }
    return cells;
  };
  const auto a = parse(read_file(left));
  const auto b = parse(read_file(right));

  std::ostringstream csv;
  csv << "method,fraction,seed,left_relative_mse,right_relative_mse,delta\n";
  for (const auto& [key, left_mse] : a) {
    const auto it = b.find(key);
    if (it == b.end()) continue;
    csv << key << ',' << fmt(left_mse) << ',' << fmt(it->second) << ','
        << fmt(it->second - left_mse) << '\n';
  }
  write_file(fs::path(out_dir) / "compare" / "compare.csv", csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRA placement lab experiment runner"};
  app.require_subcommand(1);

  CommonOpts discover_opts, train_opts, sweep_opts, knockout_opts, diagnose_opts,
      stability_opts, ablate_opts;
  std::size_t train_seed_index = 0;
  std::string compare_left, compare_right, compare_out = "out";

  CLI::App* discover = app.add_subcommand("discover", "score and select circuits");
  add_common(discover, discover_opts);
  add_grid(discover, discover_opts, "noisy");

  CLI::App* train_cmd = app.add_subcommand("train", "train one (method, budget, seed) cell");
  add_common(train_cmd, train_opts);
  add_grid(train_cmd, train_opts, "noisy");
  train_cmd->add_option("--seed-index", train_seed_index, "task seed index");

  CLI::App* sweep = app.add_subcommand("sweep", "method x budget x seed grid");
  add_common(sweep, sweep_opts);
  add_grid(sweep, sweep_opts, "noisy");

  CLI::App* knockout = app.add_subcommand("knockout", "score-ordered vs random knockout");
  add_common(knockout, knockout_opts);
  knockout->add_option("--seeds", knockout_opts.seeds, "number of task seeds");

  CLI::App* diagnose = app.add_subcommand("diagnose", "per-regime gradient diagnostics");
  add_common(diagnose, diagnose_opts);

  CLI::App* stability = app.add_subcommand("stability", "discovery stability studies");
  add_common(stability, stability_opts);
  add_grid(stability, stability_opts, "noisy");

  CLI::App* ablate = app.add_subcommand("ablate-ab", "B-only vs A+B at matched budget");
  add_common(ablate, ablate_opts);
  add_grid(ablate, ablate_opts, "noisy");

  CLI::App* compare = app.add_subcommand("compare", "join two sweep CSVs");
  compare->add_option("left", compare_left, "first sweep.csv")->required();
  compare->add_option("right", compare_right, "second sweep.csv")->required();
  compare->add_option("--out", compare_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (discover->parsed()) return cmd_discover(discover_opts);
    if (train_cmd->parsed()) return cmd_train(train_opts, train_seed_index);
    if (sweep->parsed()) return cmd_sweep(sweep_opts);
    if (knockout->parsed()) return cmd_knockout(knockout_opts);
    if (diagnose->parsed()) return cmd_diagnose(diagnose_opts);
    if (stability->parsed()) return cmd_stability(stability_opts);
    if (ablate->parsed()) return cmd_ablate_ab(ablate_opts);
    if (compare->parsed()) return cmd_compare(compare_left, compare_right, compare_out);
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return 4;
  } catch (const DivergedRun& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  return 0;
}
