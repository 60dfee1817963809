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
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "nrdm/autodiff.hpp"
#include "nrdm/residual_stack.hpp"
#include "nrdm/rng.hpp"
#include "nrdm/tensor.hpp"

namespace nrdm {

// Time runs over [0, 1]: data at t = 0, noise at t = 1.

enum class ScheduleKind { vp, ve, ou, parameterized };
std::string_view to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view s);

/// Forward noising process dz = mu(z, t) dt + sigma(t) dw with a
/// state-independent, per-channel sigma.
class Schedule {
 public:
  virtual ~Schedule() = default;

  virtual ScheduleKind kind() const = 0;
  /// mu(z, t), shaped like z.
  virtual Tensor drift(const Tensor& z, double t) const = 0;
  /// sigma(t) per channel, shape [dim].
  virtual Tensor diffusion(double t, std::size_t dim) const = 0;

  /// True when mu(z, t) = f(t) z, so Gaussian mixtures stay mixtures.
  virtual bool linear_drift() const { return false; }
  /// s(t) = exp(int_0^t f): z_t = s(t) z_0 + sqrt(v(t)) eps.
  virtual double mean_scale(double t) const;
  /// v(t), the variance added by the forward process up to t.
  virtual double added_variance(double t) const;
};

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::vp;
  double beta_min = 0.1;
  double beta_max = 20.0;
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  double theta = 0.5;
  /// OU diffusion; 0 gives a deterministic flow.
  double sigma = 1.0;
};

/// VP: mu = -beta(t) z / 2, sigma = sqrt(beta(t)), beta linear in t.
/// VE: mu = 0, sigma(t) = sigma_min (sigma_max/sigma_min)^t sqrt(2 log(sigma_max/sigma_min)).
/// OU: mu = -theta z, sigma constant.
class ClosedFormSchedule final : public Schedule {
 public:
  explicit ClosedFormSchedule(ScheduleSpec spec);

  const ScheduleSpec& spec() const noexcept { return spec_; }
  ScheduleKind kind() const override { return spec_.kind; }
  Tensor drift(const Tensor& z, double t) const override;
  Tensor diffusion(double t, std::size_t dim) const override;
  bool linear_drift() const override { return true; }
  double mean_scale(double t) const override;
  double added_variance(double t) const override;

  double drift_coefficient(double t) const;
  double sigma(double t) const;

 private:
  ScheduleSpec spec_;
};

enum class BetaMode { time_only, drift_composed };
std::string_view to_string(BetaMode m);
BetaMode parse_beta_mode(std::string_view s);

struct ParameterizedScheduleConfig {
  std::size_t dim = 2;
  std::size_t hidden = 32;
  std::size_t embed_dim = 32;
  /// time_only: beta_hat = b(t). drift_composed: beta_hat = mu_base(z, t) + b(t).
  BetaMode beta_mode = BetaMode::time_only;
  ScheduleSpec base;
  /// Initial value of alpha_hat, i.e. -sigma^2 / 2.
  double init_alpha = -0.5;
};

/**
 * Learnable mean-variance scheduler. alpha_hat(t) = -softplus(a(t)) and
 * b(t) are two-layer networks over the sinusoidal time embedding emitting
 * one value per channel; sigma(t)^2 = -2 alpha_hat(t) is non-negative by
 * construction.
 */
class ParameterizedSchedule final : public Schedule {
 public:
  ParameterizedSchedule(ParameterizedScheduleConfig config, Rng& rng);

  const ParameterizedScheduleConfig& config() const noexcept { return config_; }
  ScheduleKind kind() const override { return ScheduleKind::parameterized; }
  Tensor drift(const Tensor& z, double t) const override;
  Tensor diffusion(double t, std::size_t dim) const override;

  /// [dim], every entry <= 0.
  Tensor alpha_hat(double t) const;
  /// Shaped like z.
  Tensor beta_hat(const Tensor& z, double t) const;

  std::vector<Parameter>& params() noexcept { return params_; }
  const std::vector<Parameter>& params() const noexcept { return params_; }
  std::vector<Var> bind(Tape& tape) const;
  /// Tape-level gates at time t, each shaped [1, dim].
  Var alpha_hat(std::span<const Var> bound, Tape& tape, double t) const;
  Var beta_time(std::span<const Var> bound, Tape& tape, double t) const;

 private:
  Var net(std::span<const Var> bound, Tape& tape, std::size_t first, double t) const;

  ParameterizedScheduleConfig config_;
  ClosedFormSchedule base_;
  std::vector<Parameter> params_;
};

/// Euler-Maruyama: z + mu(z, t) dt + sigma(t) sqrt(dt) eps.
Tensor forward_sde_step(const Tensor& z, double t, double dt, const Schedule& schedule, const Tensor& eps);

/// Discrete accumulated-noise table alpha_bar[0..T-1].
class DiscreteSchedule {
 public:
  explicit DiscreteSchedule(std::vector<double> alpha_bar);
  /// alpha_bar_t = 1 - (t / (T - 1))^2 clipped to [1e-5, 0.9999].
  static DiscreteSchedule quadratic(std::size_t steps = 1000);
  /// CSV with header `t,alpha_bar`; alpha_bar must be strictly decreasing.
  static DiscreteSchedule load_csv(const std::filesystem::path& path);
  void save_csv(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return alpha_bar_.size(); }
  double alpha_bar(std::size_t t) const;
  std::span<const double> values() const noexcept { return alpha_bar_; }

 private:
  std::vector<double> alpha_bar_;
};

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Tensor ddpm_forward(const Tensor& x0, std::size_t t, const DiscreteSchedule& schedule, const Tensor& eps);

/// State-and-time function: the right-hand side of an ODE or a score.
using TimeFn = std::function<Tensor(const Tensor&, double)>;

/// mu(z, t) - sigma(t)^2 / 2 * score(z, t). For a ParameterizedSchedule this
/// equals alpha_hat(t) * score + beta_hat(z, t).
Tensor pf_ode_rhs(const Tensor& z, double t, const Schedule& schedule, const TimeFn& score);

/// Integrated path. times are strictly increasing; reverse integrations
/// (t1 < t0) are stored in time order with `reversed` set, so the initial
/// state is states.back().
struct Trajectory {
  std::vector<double> times;
  std::vector<Tensor> states;
  std::uint64_t seed = 0;
  bool reversed = false;

  const Tensor& start() const;
  const Tensor& end() const;
};

enum class Solver { euler, heun };
std::string_view to_string(Solver s);
Solver parse_solver(std::string_view s);

/// Fixed-step solvers. With keep_states = false only the two end points are
/// recorded.
Trajectory euler_solve(const TimeFn& rhs, const Tensor& z0, double t0, double t1, std::size_t steps,
                       bool keep_states = true);
Trajectory heun_solve(const TimeFn& rhs, const Tensor& z0, double t0, double t1, std::size_t steps,
                      bool keep_states = true);
Trajectory ode_solve(Solver solver, const TimeFn& rhs, const Tensor& z0, double t0, double t1, std::size_t steps,
                     bool keep_states = true);
/// Forward SDE paths from t0 to t1 > t0 with noise drawn from `rng`.
Trajectory euler_maruyama_solve(const Schedule& schedule, const Tensor& z0, double t0, double t1, std::size_t steps,
                                Rng& rng, bool keep_states = true);

/// Gaussian mixture with diagonal covariances.
struct GaussianMixture {
  std::vector<double> weights;
  /// [K, D]
  Tensor means;
  /// [K, D], strictly positive.
  Tensor variances;

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.rank() == 2 ? means.extent(1) : 0; }
  /// Throws std::invalid_argument when weights/variances are invalid.
  void validate() const;

  static GaussianMixture standard_normal(std::size_t dim);
  /// Two equal-weight components at +-offset on every axis.
  static GaussianMixture symmetric_pair(std::size_t dim, double offset, double variance);
};

/// Log density for a batch [N, D] (or a single point [D]); one value per row.
std::vector<double> log_density(const GaussianMixture& oracle, const Tensor& z);
/// Exact grad log p(z), shaped like z.
Tensor analytic_score(const GaussianMixture& oracle, const Tensor& z);
/// The mixture after z -> s z + sqrt(v) eps.
GaussianMixture pushforward(const GaussianMixture& oracle, double scale, double added_variance);
/// Exact score of the perturbed mixture at time t. Needs a linear-drift schedule.
Tensor analytic_score_t(const GaussianMixture& oracle, const Tensor& z, double t, const Schedule& schedule);
/// Row-wise version: row i of z is scored at times[i].
Tensor analytic_score_t(const GaussianMixture& oracle, const Tensor& z, std::span<const double> times,
                        const Schedule& schedule);
/// n draws as [n, D] with optional component labels.
Tensor sample_mixture(const GaussianMixture& oracle, std::size_t n, Rng& rng, std::vector<int>* labels = nullptr);

struct MarginalCheckOptions {
  std::size_t n = 10000;
  /// Report times; must start at or after 0 and increase strictly.
  std::vector<double> times;
  /// Integration steps over [0, times.back()].
  std::size_t steps = 200;
  std::uint64_t seed = 0;
};

struct MarginalRow {
  double t = 0.0;
  /// max_d |mean_sde - mean_ode|
  double mean_diff = 0.0;
  /// max_ij |cov_sde - cov_ode|
  double cov_diff = 0.0;
  /// Discretization error estimate from a half-resolution rerun.
  double solver_tol = 0.0;
  /// Three standard errors of the mean difference.
  double mc_tol = 0.0;
};

struct MarginalReport {
  std::vector<MarginalRow> rows;
  double max_mean_diff() const;
  double max_cov_diff() const;
};

/// Euler-Maruyama SDE paths and Heun PF-ODE paths from the same p0 samples,
/// with the PF-ODE driven by the exact perturbed score.
MarginalReport sde_vs_pfode_marginal_check(const GaussianMixture& oracle, const Schedule& schedule,
                                           const MarginalCheckOptions& options);

/// Sample mean [D] and covariance [D, D] of a batch [N, D].
Tensor sample_mean(const Tensor& x);
Tensor sample_covariance(const Tensor& x);

/// Integrates the PF-ODE from t = 1 back to t = 0 starting at `prior`.
Tensor sample_pf_ode(const Schedule& schedule, const TimeFn& score, const Tensor& prior, Solver solver,
                     std::size_t steps);
/// n draws from the t = 1 marginal of a standard-normal-like prior,
/// N(0, s(1)^2 + v(1)) per channel.
Tensor sample_prior(const Schedule& schedule, std::size_t n, std::size_t dim, Rng& rng);

}  // namespace nrdm
