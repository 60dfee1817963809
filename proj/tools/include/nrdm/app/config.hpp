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


#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nrdm/data_eval.hpp"
#include "nrdm/dynamics.hpp"
#include "nrdm/residual_stack.hpp"
#include "nrdm/training.hpp"

namespace nrdm::app {

/// Bad config file, unknown key, bad value or bad command-line usage.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelSection {
  std::string fashion = "flow";
  std::int64_t depth = 8;
  /// Residual state width; the data dimension is used when 0.
  std::int64_t width = 0;
  std::int64_t hidden = 64;
  std::string mapper = "mlp2";
  std::string activation = "silu";
  std::string conditioning = "concat";
  std::int64_t embed_dim = 32;
  std::string variant = "v0";
  std::string gate_mode = "scalar";
  double init_alpha = 1.0;
  double init_beta = 0.0;
  double init_scale = 0.1;
  double linear_init = 1.0;
  double step = 1.0;
  bool freeze_gates = false;
  std::string output = "score";
};

struct ScheduleSection {
  std::string kind = "ou";
  double beta_min = 0.1;
  double beta_max = 20.0;
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  double theta = 5.0;
  double sigma = 3.1622776601683795;
};

struct TrainSection {
  std::int64_t steps = 5000;
  std::int64_t batch = 256;
  std::string optimizer = "adamw";
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double ema_decay = 0.999;
  std::string objective = "sensitivity-regularized";
  double gamma = 0.35;
  std::string target = "analytic-oracle";
  std::string jacobian = "auto";
  double t_min = 1e-3;
  std::int64_t eval_size = 1024;
  std::int64_t report_every = 0;
  bool gates_only = false;
  double divergence_threshold = 1e6;
};

struct DataSection {
  std::string family = "gaussian-mixture-2d";
  std::int64_t size = 4096;
  std::int64_t seed = 0;
  double noise = 0.05;
  bool labels = false;
  /// Mixture components sit at +-offset on every axis.
  double offset = 1.5;
  double variance = 0.25;
};

struct EvalSection {
  std::int64_t n = 2000;
  std::string solver = "heun";
  std::int64_t steps = 200;
  std::int64_t projections = 128;
  std::int64_t mmd_rows = 2000;
  std::int64_t bins = 32;
  bool use_ema = false;
  /// Seeds per variant in `variants`: seed, seed + 1, ...
  std::int64_t seeds = 5;
  std::vector<std::int64_t> depths = {8, 16, 32, 64};
  std::int64_t pfode_n = 10000;
  std::int64_t pfode_points = 20;
  std::int64_t pfode_steps = 200;
  double pfode_t_max = 1.0;
  /// "mixture" (the data mixture) or "gaussian" (standard normal).
  std::string pfode_p0 = "mixture";
};

struct ReportSection {
  bool svg = true;
  /// Checkpoint for `sample` and `sensitivity` when --checkpoint is absent.
  std::string checkpoint;
  /// Depth rows kept in the sensitivity CSV; empty keeps all.
  std::vector<std::int64_t> depths;
  /// "gated" or "both" (adds the profile with gates reset to (1, 0)).
  std::string series = "gated";
  /// Gate fine-tuning steps for an extra "finetuned" series; 0 skips it.
  std::int64_t finetune_steps = 0;
  std::int64_t sensitivity_n = 256;
  double sensitivity_t = 0.5;
};

struct RunConfig {
  std::int64_t seed = 0;
  ModelSection model;
  ScheduleSection schedule;
  TrainSection train;
  DataSection data;
  EvalSection eval;
  ReportSection report;

  /// Directory that relative paths resolve against.
  std::filesystem::path base_dir = ".";
  /// Sections present in the loaded file.
  std::vector<std::string> sections;

  bool has_section(std::string_view name) const;
  std::filesystem::path resolve(const std::string& path) const;
};

/// Parses a config file; unknown sections or keys throw ConfigError.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = ".");
/// Applies `section.key=value` (or `seed=value`).
void apply_override(RunConfig& config, std::string_view assignment);
/// Checks every enum name and numeric range; throws ConfigError.
void validate(const RunConfig& config);
/// Canonical TOML text of every field, in a fixed order.
std::string to_toml(const RunConfig& config);

// Builders for the library types.
DatasetSpec dataset_spec(const RunConfig& config);
ScoreNetworkConfig network_config(const RunConfig& config);
/// The network at initialization, drawn from a stream of the run seed.
ScoreNetwork make_network(const RunConfig& config);
ScheduleSpec schedule_spec(const RunConfig& config);
TrainConfig train_config(const RunConfig& config);
MetricOptions metric_options(const RunConfig& config);

}  // namespace nrdm::app
