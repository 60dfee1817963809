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
#include <map>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nrdm/autodiff.hpp"
#include "nrdm/csv.hpp"
#include "nrdm/data_eval.hpp"
#include "nrdm/dynamics.hpp"
#include "nrdm/residual_stack.hpp"
#include "nrdm/sensitivity.hpp"
#include "nrdm/tensor.hpp"

namespace nrdm {

enum class Objective { score_matching, eps_prediction, sensitivity_regularized };
enum class ScoreTarget { analytic_oracle, denoising_estimate };
enum class JacobianMode { automatic, exact, hutchinson };
std::string_view to_string(Objective o);
std::string_view to_string(ScoreTarget t);
std::string_view to_string(JacobianMode m);
Objective parse_objective(std::string_view s);
ScoreTarget parse_score_target(std::string_view s);
JacobianMode parse_jacobian_mode(std::string_view s);

struct LossConfig {
  Objective objective = Objective::sensitivity_regularized;
  double gamma = 0.35;
  ScoreTarget target = ScoreTarget::analytic_oracle;
  /// automatic: exact diagonals up to width 8, one Rademacher probe above.
  JacobianMode jacobian = JacobianMode::automatic;

  void validate() const;
};

// Losses reduce by the mean over batch and elements; shapes must match exactly.
double loss_simple(const Tensor& eps, const Tensor& eps_pred);
double loss_score_matching(const Tensor& f_out, const Tensor& score_target);
Var loss_simple(Var eps, Var eps_pred);
Var loss_score_matching(Var f_out, Var score_target);

/// Diagonal of the mapper Jacobian of unit `unit` at each batch row of z,
/// shape [B, W]: exact (one vjp per channel) or a Hutchinson estimate
/// v * (J^T v) with one Rademacher vector v drawn from `rng`.
Tensor mapper_jacobian_diag(const StackModel& model, std::size_t unit, const Tensor& z,
                            const std::optional<Tensor>& embedding, JacobianMode mode, Rng& rng);

/// Input state of every unit in a forward pass (in unit order).
std::vector<Var> unit_inputs(const StackModel& model, const StackModel::Pass& pass);

/// sum_units mean((alpha * D_u - beta)^2) on the tape, with the Jacobian
/// diagonals D_u treated as constants so gradients reach the gates only.
Var sensitivity_reg_term(const StackModel& model, std::span<const Var> bound, std::span<const Tensor> jacobian_diags);
/// Value-level regularizer at the unit inputs of a forward pass from z0
/// (not multiplied by gamma).
double loss_sensitivity_reg(const StackModel& model, const Tensor& z0, double t = 0.0,
                            JacobianMode mode = JacobianMode::automatic, std::uint64_t probe_seed = 0);

enum class OptimMethod { sgd, adamw };
std::string_view to_string(OptimMethod m);
OptimMethod parse_optim_method(std::string_view s);

struct OptimConfig {
  OptimMethod method = OptimMethod::adamw;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW) or plain L2-style decay for SGD.
  double weight_decay = 0.0;

  void validate() const;
};

/// Moments exist for the trainable parameters only, matched by name.
struct OptimState {
  OptimConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

OptimState make_optim_state(const OptimConfig& config, std::span<Parameter* const> params);
/// Updates `params` (aligned with the state) in place, skipping frozen ones.
/// A non-finite gradient throws NumericalError naming the parameter.
void optimizer_step(OptimState& state, std::span<Parameter* const> params, std::span<const Tensor> grads);

struct EmaState {
  double decay = 0.999;
  std::vector<Tensor> shadow;
};

EmaState make_ema(double decay, std::span<Parameter* const> params);
/// shadow <- decay * shadow + (1 - decay) * params.
void ema_update(EmaState& ema, std::span<Parameter* const> params);
void ema_update(EmaState& ema, std::span<const Tensor> values);

std::vector<Tensor> parameter_values(const ScoreNetwork& net);
void assign_parameters(ScoreNetwork& net, std::span<const Tensor> values);

/// Score estimate of a network at (z, t): the output itself, or -out / sqrt(v(t))
/// for eps-predicting networks.
TimeFn score_function(const ScoreNetwork& net, const Schedule& schedule);

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch = 128;
  LossConfig loss;
  OptimConfig optim;
  double ema_decay = 0.999;
  /// Training times are drawn from U[t_min, 1].
  double t_min = 1e-3;
  /// Size of the fixed evaluation set behind initial/final loss.
  std::size_t eval_size = 1024;
  /// Sensitivity report period in steps; 0 disables periodic reports.
  std::size_t report_every = 0;
  /// Only gate parameters move (theta frozen).
  bool gates_only = false;
  double divergence_threshold = 1e6;

  void validate() const;
};

struct MetricRow {
  std::size_t step = 0;
  double loss = 0.0;
  double score_term = 0.0;
  double gamma_term = 0.0;
  double lr = 0.0;
  double ema_decay = 0.0;
};

struct EvalLoss {
  double loss = 0.0;
  double score_term = 0.0;
  double gamma_term = 0.0;
};

struct TrainResult {
  std::vector<MetricRow> log;
  /// Objective on the fixed evaluation set with raw (non-EMA) parameters.
  EvalLoss initial;
  EvalLoss final;
  std::vector<SensitivityReport> reports;
  OptimState optim;
  EmaState ema;
};

/// Trains on a fixed dataset of data.size points drawn with data.seed;
/// minibatches, times, noise and probes come from `seed`. Needs a schedule
/// with closed-form marginals. Divergence throws NumericalError.
TrainResult train_score_model(ScoreNetwork& model, const TrainConfig& config, const Schedule& schedule,
                              const DatasetSpec& data, std::uint64_t seed);
/// train_score_model with theta frozen and the sensitivity-regularized loss.
TrainResult finetune_gates(ScoreNetwork& model, TrainConfig config, const Schedule& schedule, const DatasetSpec& data,
                           std::uint64_t seed);

/// The objective of `config` on a fixed evaluation set drawn from `seed`.
EvalLoss evaluate_objective(const ScoreNetwork& model, const TrainConfig& config, const Schedule& schedule,
                            const DatasetSpec& data, std::uint64_t seed);

/// Header `step,loss,score_term,gamma_term,lr,ema_decay`.
CsvTable metric_log_table(std::span<const MetricRow> rows);

/// Malformed, truncated or unsupported checkpoint files.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Binary checkpoint: magic `NRDM1`, u32 version, u32 header length, UTF-8
/// JSON header, then raw little-endian doubles in header order.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  /// Architecture and run context as flat key/value strings.
  std::map<std::string, std::string> meta;
  /// "param/<name>", "adam.m/<name>", "adam.v/<name>", "ema/<name>".
  std::vector<NamedTensor> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
  const Tensor& tensor(std::string_view name) const;
  bool has(std::string_view name) const;
};

Checkpoint make_checkpoint(const ScoreNetwork& net, const OptimState* optim, const EmaState* ema, std::uint64_t seed,
                           std::uint64_t step, std::map<std::string, std::string> meta);
/// Copies "param/..." tensors into `net`; with use_ema, "ema/..." wins when present.
void restore_parameters(ScoreNetwork& net, const Checkpoint& ckpt, bool use_ema = false);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nrdm
