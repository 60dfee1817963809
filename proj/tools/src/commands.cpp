/* Copyright 2026 The NRDM Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
        limitations under the License.
==============================================================================*/


#include "nrdm/app/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "nrdm/app/config.hpp"
#include "nrdm/app/run.hpp"
#include "nrdm/data_eval.hpp"
#include "nrdm/dynamics.hpp"
#include "nrdm/sensitivity.hpp"
#include "nrdm/training.hpp"
#include "nrdm/version.hpp"

namespace nrdm::app {

namespace fs = std::filesystem;

namespace {

// Stream ids for seed derivation.
constexpr std::uint64_t kReferenceStream = 0x524546;
constexpr std::uint64_t kProbeStream = 0x534E53;

std::uint64_t useed(const RunConfig& c) { return static_cast<std::uint64_t>(c.seed); }

std::unique_ptr<ClosedFormSchedule> make_schedule(const RunConfig& c, std::string_view command) {
  const ScheduleSpec spec = schedule_spec(c);
  if (spec.kind == ScheduleKind::parameterized) {
    throw ConfigError("schedule.kind = \"parameterized\" is not supported by `" + std::string(command) +
                      "`: it needs closed-form marginals (use vp, ve or ou)");
  }
  return std::make_unique<ClosedFormSchedule>(spec);
}

std::map<std::string, std::string> checkpoint_meta(const RunConfig& c, std::string_view command) {
  return {{"artifact_version", kVersionString}, {"command", std::string(command)}, {"config", to_toml(c)}};
}

/// Runs fn(0..count-1) on up to `jobs` threads; the first exception wins.
void run_jobs(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
  std::vector<std::exception_ptr> errors(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Context {
  RunConfig config;
  std::optional<Checkpoint> checkpoint;
};

RunConfig config_from_file(const CliOptions& o) {
  if (o.config.empty()) throw ConfigError("--config is required for `" + o.command + "`");
  return load_config(o.config);
}

void apply_cli_overrides(RunConfig& c, const CliOptions& o) {
  for (const auto& s : o.sets) apply_override(c, s);
  if (o.seed) {
    if (*o.seed < 0) throw ConfigError("--seed must be >= 0");
    c.seed = *o.seed;
  }
  if (o.n) {
    if (*o.n < 1) throw ConfigError("--n must be >= 1");
    c.eval.n = *o.n;
  }
  if (!o.solver.empty()) {
    try {
      parse_solver(o.solver);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--solver: ") + e.what());
    }
    c.eval.solver = o.solver;
  }
  if (o.steps) {
    if (*o.steps < 1) throw ConfigError("--steps must be >= 1");
    c.eval.steps = *o.steps;
  }
  validate(c);
}

/// Config and checkpoint for commands that can start from a checkpoint:
/// model, schedule, data and train come from the checkpoint, eval and
/// report from --config when given.
Context load_with_checkpoint(const CliOptions& o) {
  Context ctx;
  std::optional<RunConfig> file;
  if (!o.config.empty()) {
    file = load_config(o.config);
    // report.checkpoint may itself be overridden.
    for (const auto& a : o.sets) apply_override(*file, a);
  }
  fs::path ckpt_path;
  if (!o.checkpoint.empty()) {
    ckpt_path = o.checkpoint;
  } else if (file && !file->report.checkpoint.empty()) {
    ckpt_path = file->resolve(file->report.checkpoint);
  }
  if (ckpt_path.empty()) {
    if (!file) throw ConfigError("`" + o.command + "` needs --config or --checkpoint");
    ctx.config = *file;
  } else {
    if (!fs::exists(ckpt_path)) throw ConfigError("checkpoint not found: " + ckpt_path.string());
    ctx.checkpoint = load_checkpoint(ckpt_path);
    const auto it = ctx.checkpoint->meta.find("config");
    if (it == ctx.checkpoint->meta.end()) throw ConfigError(ckpt_path.string() + " carries no config snapshot");
    ctx.config = parse_config(it->second, ckpt_path.parent_path());
    ctx.config.seed = static_cast<std::int64_t>(ctx.checkpoint->seed);
    if (file) {
      ctx.config.eval = file->eval;
      ctx.config.report = file->report;
      ctx.config.seed = file->seed;
    }
  }
  apply_cli_overrides(ctx.config, o);
  return ctx;
}

ScoreNetwork network_for(const Context& ctx) {
  ScoreNetwork net = make_network(ctx.config);
  if (ctx.checkpoint) restore_parameters(net, *ctx.checkpoint, ctx.config.eval.use_ema);
  return net;
}

void maybe_svg(RunDir& run, const RunConfig& c, const std::string& name, const CsvTable& table,
               const std::string& x, const std::string& y, const std::string& group, const std::string& title,
               bool log_y = false) {
  if (c.report.svg) run.write(name, svg_from_csv(table, x, y, group, title, log_y));
}

// ---------------------------------------------------------------- train

int cmd_train(const CliOptions& o, std::ostream& out, CommandResult& res) {
  RunConfig c = config_from_file(o);
  apply_cli_overrides(c, o);
  const auto schedule = make_schedule(c, "train");
  ScoreNetwork net = make_network(c);
  const TrainConfig tc = train_config(c);
  const DatasetSpec data = dataset_spec(c);

  RunDir run(output_root(o.out), "train", useed(c), to_toml(c));
  res.run_dir = run.path();
  out << "run directory: " << run.path().string() << "\n";

  const TrainResult r = train_score_model(net, tc, *schedule, data, useed(c));
  const CsvTable log = metric_log_table(r.log);
  run.write_csv("metrics.csv", log);
  if (!r.log.empty()) maybe_svg(run, c, "loss.svg", log, "step", "loss", "", "training loss", true);

  CsvTable summary;
  summary.header = {"steps", "initial_loss", "final_loss", "final_score_term", "final_gamma_term"};
  summary.rows.push_back({std::to_string(tc.steps), format_double(r.initial.loss), format_double(r.final.loss),
                          format_double(r.final.score_term), format_double(r.final.gamma_term)});
  run.write_csv("summary.csv", summary);

  if (!r.reports.empty()) {
    const CsvTable sens = sensitivity_table(r.reports);
    run.write_csv("sensitivity.csv", sens);
    maybe_svg(run, c, "sensitivity.svg", sens, "depth", "normalized", "step", "normalized sensitivity by depth");
  }

  const Checkpoint ckpt = make_checkpoint(net, &r.optim, &r.ema, useed(c), tc.steps, checkpoint_meta(c, "train"));
  save_checkpoint(run.path() / "checkpoint.nrdm", ckpt);
  run.add("checkpoint.nrdm");
  run.finish();
  out << "initial loss " << format_double(r.initial.loss) << ", final loss " << format_double(r.final.loss) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- sample

int cmd_sample(const CliOptions& o, std::ostream& out, CommandResult& res) {
  const Context ctx = load_with_checkpoint(o);
  const RunConfig& c = ctx.config;
  const auto schedule = make_schedule(c, "sample");
  const ScoreNetwork net = network_for(ctx);
  const DatasetSpec data = dataset_spec(c);
  const auto n = static_cast<std::size_t>(c.eval.n);

  RunDir run(output_root(o.out), "sample", useed(c), to_toml(c));
  res.run_dir = run.path();
  out << "run directory: " << run.path().string() << "\n";

  const Tensor reference = sample_dataset(data, n, Rng(useed(c)).split(kReferenceStream).next_u64()).x;
  const Generation gen = eval_generated(score_function(net, *schedule), *schedule, reference, n,
                                        parse_solver(c.eval.solver), static_cast<std::size_t>(c.eval.steps),
                                        useed(c), metric_options(c));
  run.write_csv("samples.csv", dataset_table(gen.samples));
  const MetricReport reports[] = {gen.metrics};
  run.write_csv("metrics.csv", metric_table(reports));
  run.finish();
  out << "sliced-wasserstein " << format_double(gen.metrics.sliced_wasserstein) << ", mmd "
      << format_double(gen.metrics.mmd) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- sensitivity

struct Probe {
  Tensor x;
  std::vector<double> times;
  Tensor target;
};

/// Perturbed data at report.sensitivity_t with its score target: exact for
/// the mixture family, the denoising target -eps / sqrt(v) otherwise.
Probe make_probe(const RunConfig& c, const Schedule& schedule) {
  const DatasetSpec data = dataset_spec(c);
  const auto n = static_cast<std::size_t>(c.report.sensitivity_n);
  Rng rng = Rng(useed(c)).split(kProbeStream);
  const Tensor x0 = sample_dataset(data, n, rng.next_u64()).x;
  const double t = std::max(c.report.sensitivity_t, c.train.t_min);
  const double s = schedule.mean_scale(t), sd = std::sqrt(schedule.added_variance(t));
  const Tensor eps = rng.normal_tensor(x0.shape());
  Probe p{s * x0 + sd * eps, std::vector<double>(n, t), Tensor()};
  p.target = data.family == DatasetFamily::gaussian_mixture_2d ? analytic_score_t(data.mixture, p.x, t, schedule)
                                                               : (-1.0 / sd) * eps;
  return p;
}

int cmd_sensitivity(const CliOptions& o, std::ostream& out, CommandResult& res) {
  const Context ctx = load_with_checkpoint(o);
  const RunConfig& c = ctx.config;
  const auto schedule = make_schedule(c, "sensitivity");
  ScoreNetwork net = network_for(ctx);
  const std::size_t step = ctx.checkpoint ? static_cast<std::size_t>(ctx.checkpoint->step) : 0;
  const Probe probe = make_probe(c, *schedule);

  RunDir run(output_root(o.out), "sensitivity", useed(c), to_toml(c));
  res.run_dir = run.path();
  out << "run directory: " << run.path().string() << "\n";

  std::vector<std::pair<std::string, SensitivityReport>> series;
  series.emplace_back("gated", sensitivity_report(net, probe.x, probe.times, probe.target, step));
  if (c.report.series == "both") {
    ScoreNetwork ungated = net;
    ungated.stack().set_all_gates(1.0, 0.0);
    series.emplace_back("ungated", sensitivity_report(ungated, probe.x, probe.times, probe.target, step));
  }
  if (c.report.finetune_steps > 0) {
    ScoreNetwork tuned = net;
    TrainConfig tc = train_config(c);
    tc.steps = static_cast<std::size_t>(c.report.finetune_steps);
    tuned.stack().freeze_gates(false);
    finetune_gates(tuned, tc, *schedule, dataset_spec(c), useed(c));
    series.emplace_back("finetuned",
                        sensitivity_report(tuned, probe.x, probe.times, probe.target, step + tc.steps));
  }

  CsvTable table;
  for (const auto& [name, report] : series) {
    const SensitivityReport one[] = {report};
    CsvTable part = sensitivity_table(one);
    if (table.header.empty()) {
      table.header = part.header;
      table.header.insert(table.header.begin(), "series");
    }
    const std::size_t depth_col = part.column("depth");
    for (auto& row : part.rows) {
      const auto depth = static_cast<std::int64_t>(std::stoll(row[depth_col]));
      const auto& keep = c.report.depths;
      if (!keep.empty() && std::find(keep.begin(), keep.end(), depth) == keep.end()) continue;
      row.insert(row.begin(), name);
      table.rows.push_back(std::move(row));
    }
    out << name << ": min normalized " << format_double(report.min_normalized()) << ", monotone "
        << (report.monotone() ? "yes" : "no") << "\n";
  }
  run.write_csv("sensitivity.csv", table);
  maybe_svg(run, c, "sensitivity.svg", table, "depth", "normalized", "series", "normalized sensitivity by depth");
  run.finish();
  return kOk;
}

// ---------------------------------------------------------------- variants

struct TrainedRun {
  TrainResult result;
  MetricReport metrics;
};

TrainedRun train_and_eval(const RunConfig& c, bool evaluate) {
  const auto schedule = make_schedule(c, "train");
  ScoreNetwork net = make_network(c);
  TrainedRun run{train_score_model(net, train_config(c), *schedule, dataset_spec(c), useed(c)), {}};
  if (evaluate) {
    ScoreNetwork eval_net = net;
    if (c.eval.use_ema) assign_parameters(eval_net, run.result.ema.shadow);
    const auto n = static_cast<std::size_t>(c.eval.n);
    const Tensor reference =
        sample_dataset(dataset_spec(c), n, Rng(useed(c)).split(kReferenceStream).next_u64()).x;
    run.metrics = eval_generated(score_function(eval_net, *schedule), *schedule, reference, n,
                                 parse_solver(c.eval.solver), static_cast<std::size_t>(c.eval.steps), useed(c),
                                 metric_options(c))
                      .metrics;
  }
  return run;
}

int cmd_variants(const CliOptions& o, std::ostream& out, CommandResult& res) {
  RunConfig c = config_from_file(o);
  apply_cli_overrides(c, o);
  make_schedule(c, "variants");

  constexpr Variant kVariants[] = {Variant::v0, Variant::v1, Variant::v2, Variant::v3, Variant::v4};
  std::vector<RunConfig> configs;
  for (Variant v : kVariants) {
    for (std::int64_t k = 0; k < c.eval.seeds; ++k) {
      RunConfig rc = c;
      rc.model.variant = std::string(to_string(v));
      rc.seed = c.seed + k;
      configs.push_back(std::move(rc));
    }
  }

  RunDir run(output_root(o.out), "variants", useed(c), to_toml(c));
  res.run_dir = run.path();
  out << "run directory: " << run.path().string() << " (" << configs.size() << " runs)\n";

  std::vector<TrainedRun> results(configs.size());
  run_jobs(configs.size(), o.jobs, [&](std::size_t i) { results[i] = train_and_eval(configs[i], true); });

  CsvTable table;
  table.header = {"variant", "seed", "steps", "final_loss", "sw", "mmd"};
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& rc = configs[i];
    const auto& r = results[i];
    const std::string id = rc.model.variant + "-s" + std::to_string(rc.seed);
    run.write_csv("runs/" + id + "/metrics.csv", metric_log_table(r.result.log));
    table.rows.push_back({rc.model.variant, std::to_string(rc.seed), std::to_string(rc.train.steps),
                          format_double(r.result.final.loss), format_double(r.metrics.sliced_wasserstein),
                          format_double(r.metrics.mmd)});
  }
  run.write_csv("variants.csv", table);
  maybe_svg(run, c, "variants.svg", table, "seed", "final_loss", "variant", "final loss per variant");
  run.finish();
  return kOk;
}

// ---------------------------------------------------------------- pfode-check

int cmd_pfode_check(const CliOptions& o, std::ostream& out, CommandResult& res) {
  RunConfig c = config_from_file(o);
  if (!c.has_section("schedule")) throw ConfigError(o.config + ": missing [schedule] section");
  apply_cli_overrides(c, o);
  const auto schedule = make_schedule(c, "pfode-check");
  const GaussianMixture p0 =
      c.eval.pfode_p0 == "gaussian" ? GaussianMixture::standard_normal(2) : dataset_spec(c).mixture;

  MarginalCheckOptions opts;
  opts.n = static_cast<std::size_t>(c.eval.pfode_n);
  opts.steps = static_cast<std::size_t>(c.eval.pfode_steps);
  opts.seed = useed(c);
  const auto points = static_cast<std::size_t>(c.eval.pfode_points);
  for (std::size_t i = 1; i <= points; ++i) {
    opts.times.push_back(c.eval.pfode_t_max * static_cast<double>(i) / static_cast<double>(points));
  }

  RunDir run(output_root(o.out), "pfode-check", useed(c), to_toml(c));
  res.run_dir = run.path();
  out << "run directory: " << run.path().string() << "\n";

  const MarginalReport report = sde_vs_pfode_marginal_check(p0, *schedule, opts);
  CsvTable table;
  table.header = {"t", "mean_diff", "cov_diff", "solver_tol", "mc_tol"};
  for (const auto& r : report.rows) {
    table.rows.push_back({format_double(r.t), format_double(r.mean_diff), format_double(r.cov_diff),
                          format_double(r.solver_tol), format_double(r.mc_tol)});
  }
  run.write_csv("pfode.csv", table);
  if (c.report.svg) {
    std::vector<SvgSeries> series(2);
    series[0].label = "mean_diff";
    series[1].label = "cov_diff";
    for (const auto& r : report.rows) {
      for (auto& s : series) s.x.push_back(r.t);
      series[0].y.push_back(r.mean_diff);
      series[1].y.push_back(r.cov_diff);
    }
    run.write("pfode.svg", svg_line_chart("SDE vs PF-ODE marginals", "t", "discrepancy", series));
  }
  run.finish();
  out << "max mean discrepancy " << format_double(report.max_mean_diff()) << ", max covariance discrepancy "
      << format_double(report.max_cov_diff()) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- depth-scaling

int cmd_depth_scaling(const CliOptions& o, std::ostream& out, CommandResult& res) {
  RunConfig c = config_from_file(o);
  apply_cli_overrides(c, o);
  make_schedule(c, "depth-scaling");
  const std::string gated_variant = c.model.variant == "v3" ? "v0" : c.model.variant;

  std::vector<RunConfig> configs;
  for (std::int64_t depth : c.eval.depths) {
    for (bool gated : {true, false}) {
      RunConfig rc = c;
      rc.model.depth = depth;
      rc.model.variant = gated ? gated_variant : "v3";
      validate(rc);
      configs.push_back(std::move(rc));
    }
  }

  RunDir run(output_root(o.out), "depth-scaling", useed(c), to_toml(c));
  res.run_dir = run.path();
  out << "run directory: " << run.path().string() << " (" << configs.size() << " runs)\n";

  std::vector<TrainedRun> results(configs.size());
  run_jobs(configs.size(), o.jobs, [&](std::size_t i) { results[i] = train_and_eval(configs[i], false); });

  CsvTable table;
  table.header = {"depth", "gated", "variant", "steps", "initial_loss", "final_loss", "final_score_term",
                  "final_gamma_term"};
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& rc = configs[i];
    const auto& r = results[i].result;
    table.rows.push_back({std::to_string(rc.model.depth), rc.model.variant == "v3" ? "0" : "1", rc.model.variant,
                          std::to_string(rc.train.steps), format_double(r.initial.loss),
                          format_double(r.final.loss), format_double(r.final.score_term),
                          format_double(r.final.gamma_term)});
  }
  run.write_csv("depth_scaling.csv", table);
  maybe_svg(run, c, "depth_scaling.svg", table, "depth", "final_loss", "gated", "final loss by depth", true);
  run.finish();
  return kOk;
}

}  // namespace

CommandResult execute(const CliOptions& o, std::ostream& out, std::ostream& err) {
  CommandResult res;
  try {
    if (o.command == "train") {
      res.exit_code = cmd_train(o, out, res);
    } else if (o.command == "sample") {
      res.exit_code = cmd_sample(o, out, res);
    } else if (o.command == "sensitivity") {
      res.exit_code = cmd_sensitivity(o, out, res);
    } else if (o.command == "variants") {
      res.exit_code = cmd_variants(o, out, res);
    } else if (o.command == "pfode-check") {
      res.exit_code = cmd_pfode_check(o, out, res);
    } else if (o.command == "depth-scaling") {
      res.exit_code = cmd_depth_scaling(o, out, res);
    } else {
      err << "error: unknown command '" << o.command << "'\n";
      res.exit_code = kUsage;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    res.exit_code = kUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    res.exit_code = kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    res.exit_code = kNumerical;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    res.exit_code = kUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    res.exit_code = kInternal;
  }
  return res;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"nrdm: gated residual diffusion lab", "nrdm"};
  app.set_version_flag("--version", std::string(kVersionString));
  app.require_subcommand(1);

  CliOptions o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "TOML config file");
    sub->add_option("--set", o.sets, "Override, section.key=value (repeatable)");
    sub->add_option("--seed", o.seed, "Run seed");
    sub->add_option("--jobs", o.jobs, "Parallel independent runs")->check(CLI::PositiveNumber);
    sub->add_option("--out", o.out, "Output root (default $NRDM_OUT_ROOT or ./runs)");
  };
  auto* train = app.add_subcommand("train", "Train a score network");
  auto* sample = app.add_subcommand("sample", "Sample a checkpoint with the PF-ODE");
  auto* sens = app.add_subcommand("sensitivity", "Per-depth sensitivity profile");
  auto* variants = app.add_subcommand("variants", "Train v0-v4 over seeds");
  auto* pfode = app.add_subcommand("pfode-check", "SDE vs PF-ODE marginal check");
  auto* depth = app.add_subcommand("depth-scaling", "Gated vs ungated over depths");
  for (auto* sub : {train, sample, sens, variants, pfode, depth}) common(sub);
  for (auto* sub : {sample, sens}) sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  sample->add_option("--n", o.n, "Number of samples");
  sample->add_option("--solver", o.solver, "euler or heun");
  sample->add_option("--steps", o.steps, "Solver steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersionString << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  o.command = app.get_subcommands().front()->get_name();
  return execute(o, out, err).exit_code;
}

}  // namespace nrdm::app
