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

#include "nrdm/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "nrdm/csv.hpp"

namespace nrdm {

namespace {

double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

Tensor as_rows(const Tensor& z) {
  if (z.rank() == 1) return z.reshaped({1, z.size()});
  if (z.rank() == 2) return z;
  throw std::invalid_argument("expected a point [D] or a batch [N, D], got " + to_string(z.shape()));
}

std::size_t channels(const Tensor& z) { return z.rank() == 0 ? 1 : z.shape().back(); }

}  // namespace

std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::vp: return "vp";
    case ScheduleKind::ve: return "ve";
    case ScheduleKind::ou: return "ou";
    case ScheduleKind::parameterized: return "parameterized";
  }
  return "unknown";
}

ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "vp") return ScheduleKind::vp;
  if (s == "ve") return ScheduleKind::ve;
  if (s == "ou") return ScheduleKind::ou;
  if (s == "parameterized") return ScheduleKind::parameterized;
  throw std::invalid_argument("unknown schedule kind '" + std::string(s) + "' (expected vp, ve, ou, parameterized)");
}

std::string_view to_string(BetaMode m) { return m == BetaMode::time_only ? "time-only" : "drift-composed"; }

BetaMode parse_beta_mode(std::string_view s) {
  if (s == "time-only") return BetaMode::time_only;
  if (s == "drift-composed") return BetaMode::drift_composed;
  throw std::invalid_argument("unknown beta mode '" + std::string(s) + "' (expected time-only, drift-composed)");
}

std::string_view to_string(Solver s) { return s == Solver::euler ? "euler" : "heun"; }

Solver parse_solver(std::string_view s) {
  if (s == "euler") return Solver::euler;
  if (s == "heun") return Solver::heun;
  throw std::invalid_argument("unknown solver '" + std::string(s) + "' (expected euler, heun)");
}

double Schedule::mean_scale(double) const {
  throw std::invalid_argument("schedule '" + std::string(to_string(kind())) + "' has no closed-form mean scale");
}

double Schedule::added_variance(double) const {
  throw std::invalid_argument("schedule '" + std::string(to_string(kind())) + "' has no closed-form variance");
}

ClosedFormSchedule::ClosedFormSchedule(ScheduleSpec spec) : spec_(spec) {
  switch (spec_.kind) {
    case ScheduleKind::vp:
      if (!(spec_.beta_min >= 0.0 && spec_.beta_max >= spec_.beta_min)) {
        throw std::invalid_argument("vp schedule needs 0 <= beta_min <= beta_max");
      }
      break;
    case ScheduleKind::ve:
      if (!(spec_.sigma_min > 0.0 && spec_.sigma_max > spec_.sigma_min)) {
        throw std::invalid_argument("ve schedule needs 0 < sigma_min < sigma_max");
      }
      break;
    case ScheduleKind::ou:
      if (!(spec_.theta >= 0.0 && spec_.sigma >= 0.0)) {
        throw std::invalid_argument("ou schedule needs theta >= 0 and sigma >= 0");
      }
      break;
    case ScheduleKind::parameterized:
      throw std::invalid_argument("parameterized schedules are not closed-form");
  }
}

double ClosedFormSchedule::drift_coefficient(double t) const {
  switch (spec_.kind) {
    case ScheduleKind::vp: return -0.5 * (spec_.beta_min + t * (spec_.beta_max - spec_.beta_min));
    case ScheduleKind::ve: return 0.0;
    case ScheduleKind::ou: return -spec_.theta;
    default: break;
  }
  return 0.0;
}

double ClosedFormSchedule::sigma(double t) const {
  switch (spec_.kind) {
    case ScheduleKind::vp: return std::sqrt(spec_.beta_min + t * (spec_.beta_max - spec_.beta_min));
    case ScheduleKind::ve: {
      const double r = spec_.sigma_max / spec_.sigma_min;
      return spec_.sigma_min * std::pow(r, t) * std::sqrt(2.0 * std::log(r));
    }
    case ScheduleKind::ou: return spec_.sigma;
    default: break;
  }
  return 0.0;
}

Tensor ClosedFormSchedule::drift(const Tensor& z, double t) const { return drift_coefficient(t) * z; }

Tensor ClosedFormSchedule::diffusion(double t, std::size_t dim) const { return Tensor(Shape{dim}, sigma(t)); }

double ClosedFormSchedule::mean_scale(double t) const {
  switch (spec_.kind) {
    case ScheduleKind::vp:
      return std::exp(-0.5 * (spec_.beta_min * t + 0.5 * (spec_.beta_max - spec_.beta_min) * t * t));
    case ScheduleKind::ve: return 1.0;
    case ScheduleKind::ou: return std::exp(-spec_.theta * t);
    default: break;
  }
  return 1.0;
}

double ClosedFormSchedule::added_variance(double t) const {
  switch (spec_.kind) {
    case ScheduleKind::vp: {
      const double s = mean_scale(t);
      return 1.0 - s * s;
    }
    case ScheduleKind::ve: {
      const double r = spec_.sigma_max / spec_.sigma_min;
      return spec_.sigma_min * spec_.sigma_min * (std::pow(r, 2.0 * t) - 1.0);
    }
    case ScheduleKind::ou: {
      const double s2 = spec_.sigma * spec_.sigma;
      if (spec_.theta == 0.0) return s2 * t;
      return s2 * -std::expm1(-2.0 * spec_.theta * t) / (2.0 * spec_.theta);
    }
    default: break;
  }
  return 0.0;
}

namespace {

ScheduleSpec base_or_ou(ScheduleSpec s) {
  if (s.kind == ScheduleKind::parameterized) s.kind = ScheduleKind::ou;
  return s;
}

}  // namespace

ParameterizedSchedule::ParameterizedSchedule(ParameterizedScheduleConfig config, Rng& rng)
    : config_(std::move(config)), base_(base_or_ou(config_.base)) {
  if (config_.dim == 0 || config_.hidden == 0 || config_.embed_dim == 0) {
    throw std::invalid_argument("parameterized schedule needs positive dim, hidden and embed_dim");
  }
  if (!(config_.init_alpha < 0.0)) throw std::invalid_argument("parameterized schedule needs init_alpha < 0");
  const std::size_t e = config_.embed_dim;
  const std::size_t h = config_.hidden;
  const std::size_t d = config_.dim;
  auto gaussian = [&](Shape shape, double stddev) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(v));
  };
  for (const char* net : {"a", "b"}) {
    const std::string p = std::string("sched.") + net + ".";
    const bool is_a = net[0] == 'a';
    params_.push_back({p + "w1", gaussian({e, h}, 1.0 / std::sqrt(static_cast<double>(e))), ParamGroup::gate, false});
    params_.push_back({p + "b1", Tensor(Shape{h}, 0.0), ParamGroup::gate, false});
    params_.push_back({p + "w2", is_a ? gaussian({h, d}, 0.1 / std::sqrt(static_cast<double>(h))) : Tensor(Shape{h, d}),
                       ParamGroup::gate, false});
    params_.push_back(
        {p + "b2", Tensor(Shape{d}, is_a ? softplus_inverse(-config_.init_alpha) : 0.0), ParamGroup::gate, false});
  }
}

std::vector<Var> ParameterizedSchedule::bind(Tape& tape) const {
  std::vector<Var> out;
  for (const Parameter& p : params_) out.push_back(tape.leaf(p.value));
  return out;
}

Var ParameterizedSchedule::net(std::span<const Var> bound, Tape& tape, std::size_t first, double t) const {
  const double times[1] = {t};
  const Var emb = tape.constant(time_embedding(times, config_.embed_dim));
  const Var h = silu(affine(emb, bound[first], bound[first + 1]));
  return affine(h, bound[first + 2], bound[first + 3]);
}

Var ParameterizedSchedule::alpha_hat(std::span<const Var> bound, Tape& tape, double t) const {
  return scale(softplus(net(bound, tape, 0, t)), -1.0);
}

Var ParameterizedSchedule::beta_time(std::span<const Var> bound, Tape& tape, double t) const {
  return net(bound, tape, 4, t);
}

Tensor ParameterizedSchedule::alpha_hat(double t) const {
  Tape tape;
  const auto bound = bind(tape);
  return alpha_hat(bound, tape, t).value().reshaped({config_.dim});
}

Tensor ParameterizedSchedule::beta_hat(const Tensor& z, double t) const {
  if (channels(z) != config_.dim) {
    throw std::invalid_argument("parameterized schedule has dim " + std::to_string(config_.dim) + ", state is " +
                                to_string(z.shape()));
  }
  Tape tape;
  const auto bound = bind(tape);
  const Tensor b = beta_time(bound, tape, t).value().reshaped({config_.dim});
  Tensor out = Tensor(z.shape(), 0.0) + b;
  if (config_.beta_mode == BetaMode::drift_composed) out = out + base_.drift(z, t);
  return out;
}

Tensor ParameterizedSchedule::drift(const Tensor& z, double t) const { return beta_hat(z, t); }

Tensor ParameterizedSchedule::diffusion(double t, std::size_t dim) const {
  if (dim != config_.dim) {
    throw std::invalid_argument("parameterized schedule has dim " + std::to_string(config_.dim) + ", asked for " +
                                std::to_string(dim));
  }
  const Tensor a = alpha_hat(t);
  std::vector<double> s(dim);
  for (std::size_t i = 0; i < dim; ++i) s[i] = std::sqrt(std::max(0.0, -2.0 * a[i]));
  return Tensor(Shape{dim}, std::move(s));
}

Tensor forward_sde_step(const Tensor& z, double t, double dt, const Schedule& schedule, const Tensor& eps) {
  if (!(dt >= 0.0)) throw std::invalid_argument("forward_sde_step needs dt >= 0");
  if (eps.shape() != z.shape()) {
    throw std::invalid_argument("noise shape " + to_string(eps.shape()) + " does not match state " +
                                to_string(z.shape()));
  }
  if (dt == 0.0) return z;
  const Tensor sigma = schedule.diffusion(t, channels(z));
  return z + dt * schedule.drift(z, t) + std::sqrt(dt) * (sigma * eps);
}

DiscreteSchedule::DiscreteSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.empty()) throw std::invalid_argument("discrete schedule needs at least one step");
  for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
    const double a = alpha_bar_[i];
    if (!(a >= 0.0 && a <= 1.0)) {
      throw std::invalid_argument("alpha_bar[" + std::to_string(i) + "] = " + format_double(a) +
                                  " is outside [0, 1]");
    }
    if (i > 0 && a > alpha_bar_[i - 1]) {
      throw std::invalid_argument("alpha_bar must be non-increasing (step " + std::to_string(i) + ")");
    }
  }
}

DiscreteSchedule DiscreteSchedule::quadratic(std::size_t steps) {
  if (steps < 2) throw std::invalid_argument("quadratic schedule needs at least 2 steps");
  std::vector<double> a(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const double u = static_cast<double>(t) / static_cast<double>(steps - 1);
    a[t] = std::clamp(1.0 - u * u, 1e-5, 0.9999);
  }
  return DiscreteSchedule(std::move(a));
}

DiscreteSchedule DiscreteSchedule::load_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  if (table.header != std::vector<std::string>{"t", "alpha_bar"}) {
    throw std::invalid_argument(path.string() + ": expected header 't,alpha_bar'");
  }
  std::vector<double> a;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const double v = parse_double(table.rows[r][1], path.string() + " row " + std::to_string(r + 1));
    if (!a.empty() && !(v < a.back())) {
      throw std::invalid_argument(path.string() + ": alpha_bar must be strictly decreasing (row " +
                                  std::to_string(r + 1) + ")");
    }
    a.push_back(v);
  }
  return DiscreteSchedule(std::move(a));
}

void DiscreteSchedule::save_csv(const std::filesystem::path& path) const {
  CsvTable table;
  table.header = {"t", "alpha_bar"};
  for (std::size_t t = 0; t < alpha_bar_.size(); ++t) table.rows.push_back({std::to_string(t), format_double(alpha_bar_[t])});
  write_csv(path, table);
}

double DiscreteSchedule::alpha_bar(std::size_t t) const {
  if (t >= alpha_bar_.size()) {
    throw std::out_of_range("step index " + std::to_string(t) + " outside [0, " + std::to_string(alpha_bar_.size()) +
                            ")");
  }
  return alpha_bar_[t];
}

Tensor ddpm_forward(const Tensor& x0, std::size_t t, const DiscreteSchedule& schedule, const Tensor& eps) {
  if (eps.shape() != x0.shape()) throw std::invalid_argument("ddpm_forward: noise and data shapes differ");
  const double a = schedule.alpha_bar(t);
  return std::sqrt(a) * x0 + std::sqrt(1.0 - a) * eps;
}

Tensor pf_ode_rhs(const Tensor& z, double t, const Schedule& schedule, const TimeFn& score) {
  const Tensor sigma = schedule.diffusion(t, channels(z));
  const Tensor s = score(z, t);
  if (s.shape() != z.shape()) {
    throw std::invalid_argument("score shape " + to_string(s.shape()) + " does not match state " +
                                to_string(z.shape()));
  }
  return schedule.drift(z, t) - 0.5 * (sigma * sigma * s);
}

const Tensor& Trajectory::start() const {
  if (states.empty()) throw std::logic_error("empty trajectory");
  return reversed ? states.back() : states.front();
}

const Tensor& Trajectory::end() const {
  if (states.empty()) throw std::logic_error("empty trajectory");
  return reversed ? states.front() : states.back();
}

namespace {

template <typename Step>
Trajectory integrate(const Tensor& z0, double t0, double t1, std::size_t steps, bool keep, Step step) {
  if (steps < 1) throw std::invalid_argument("solver needs steps >= 1");
  if (t0 == t1) throw std::invalid_argument("solver needs t0 != t1");
  Trajectory traj;
  traj.reversed = t1 < t0;
  traj.times.push_back(t0);
  traj.states.push_back(z0);
  Tensor z = z0;
  const double span = t1 - t0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double ta = t0 + span * static_cast<double>(k) / static_cast<double>(steps);
    const double tb = k + 1 == steps ? t1 : t0 + span * static_cast<double>(k + 1) / static_cast<double>(steps);
    z = step(z, ta, tb - ta);
    z.require_finite("solver step " + std::to_string(k + 1));
    if (keep || k + 1 == steps) {
      traj.times.push_back(tb);
      traj.states.push_back(z);
    }
  }
  if (traj.reversed) {
    std::reverse(traj.times.begin(), traj.times.end());
    std::reverse(traj.states.begin(), traj.states.end());
  }
  return traj;
}

}  // namespace

Trajectory euler_solve(const TimeFn& rhs, const Tensor& z0, double t0, double t1, std::size_t steps,
                       bool keep_states) {
  return integrate(z0, t0, t1, steps, keep_states,
                   [&](const Tensor& z, double t, double dt) { return z + dt * rhs(z, t); });
}

Trajectory heun_solve(const TimeFn& rhs, const Tensor& z0, double t0, double t1, std::size_t steps,
                      bool keep_states) {
  return integrate(z0, t0, t1, steps, keep_states, [&](const Tensor& z, double t, double dt) {
    const Tensor k1 = rhs(z, t);
    const Tensor pred = z + dt * k1;
    const Tensor k2 = rhs(pred, t + dt);
    return z + (0.5 * dt) * (k1 + k2);
  });
}

Trajectory ode_solve(Solver solver, const TimeFn& rhs, const Tensor& z0, double t0, double t1, std::size_t steps,
                     bool keep_states) {
  return solver == Solver::euler ? euler_solve(rhs, z0, t0, t1, steps, keep_states)
                                 : heun_solve(rhs, z0, t0, t1, steps, keep_states);
}

Trajectory euler_maruyama_solve(const Schedule& schedule, const Tensor& z0, double t0, double t1, std::size_t steps,
                                Rng& rng, bool keep_states) {
  if (!(t1 > t0)) throw std::invalid_argument("forward SDE integration needs t1 > t0");
  Trajectory traj = integrate(z0, t0, t1, steps, keep_states, [&](const Tensor& z, double t, double dt) {
    return forward_sde_step(z, t, dt, schedule, rng.normal_tensor(z.shape()));
  });
  traj.seed = rng.seed();
  return traj;
}

void GaussianMixture::validate() const {
  const std::size_t k = weights.size();
  if (k == 0) throw std::invalid_argument("mixture needs at least one component");
  if (means.rank() != 2 || means.extent(0) != k) {
    throw std::invalid_argument("mixture means must be [K, D] with K = " + std::to_string(k) + ", got " +
                                to_string(means.shape()));
  }
  if (variances.shape() != means.shape()) {
    throw std::invalid_argument("mixture variances " + to_string(variances.shape()) + " must match means " +
                                to_string(means.shape()));
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("mixture weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture weights must sum to 1");
  for (double v : variances.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("mixture variances must be positive");
  }
  means.require_finite("mixture means");
}

GaussianMixture GaussianMixture::standard_normal(std::size_t dim) {
  return {{1.0}, Tensor(Shape{1, dim}, 0.0), Tensor(Shape{1, dim}, 1.0)};
}

GaussianMixture GaussianMixture::symmetric_pair(std::size_t dim, double offset, double variance) {
  std::vector<double> m(2 * dim);
  for (std::size_t d = 0; d < dim; ++d) {
    m[d] = -offset;
    m[dim + d] = offset;
  }
  return {{0.5, 0.5}, Tensor(Shape{2, dim}, std::move(m)), Tensor(Shape{2, dim}, variance)};
}

namespace {

/// Per-row, per-component log(w_k N(z; mu_k, v_k)), row-major [N, K].
std::vector<double> component_log_terms(const GaussianMixture& g, const Tensor& rows) {
  g.validate();
  const std::size_t n = rows.extent(0);
  const std::size_t d = rows.extent(1);
  const std::size_t k = g.components();
  if (d != g.dim()) {
    throw std::invalid_argument("mixture has dim " + std::to_string(g.dim()) + ", input is " +
                                to_string(rows.shape()));
  }
  std::vector<double> base(k);
  for (std::size_t c = 0; c < k; ++c) {
    double s = std::log(g.weights[c]);
    for (std::size_t j = 0; j < d; ++j) s -= 0.5 * std::log(2.0 * std::numbers::pi * g.variances.at(c, j));
    base[c] = s;
  }
  std::vector<double> out(n * k);
  const auto z = rows.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = z[i * d + j] - g.means.at(c, j);
        q += diff * diff / g.variances.at(c, j);
      }
      out[i * k + c] = base[c] - 0.5 * q;
    }
  }
  return out;
}

}  // namespace

std::vector<double> log_density(const GaussianMixture& oracle, const Tensor& z) {
  const Tensor rows = as_rows(z);
  const std::size_t n = rows.extent(0);
  const std::size_t k = oracle.components();
  const auto terms = component_log_terms(oracle, rows);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = terms.data() + i * k;
    const double m = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(row[c] - m);
    out[i] = m + std::log(s);
  }
  return out;
}

Tensor analytic_score(const GaussianMixture& oracle, const Tensor& z) {
  const Tensor rows = as_rows(z);
  const std::size_t n = rows.extent(0);
  const std::size_t d = rows.extent(1);
  const std::size_t k = oracle.components();
  const auto terms = component_log_terms(oracle, rows);
  std::vector<double> out(n * d, 0.0);
  std::vector<double> r(k);
  const auto zd = rows.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = terms.data() + i * k;
    const double m = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += r[c] = std::exp(row[c] - m);
    for (std::size_t c = 0; c < k; ++c) {
      const double w = r[c] / total;
      for (std::size_t j = 0; j < d; ++j) {
        out[i * d + j] -= w * (zd[i * d + j] - oracle.means.at(c, j)) / oracle.variances.at(c, j);
      }
    }
  }
  return Tensor(z.shape(), std::move(out));
}

GaussianMixture pushforward(const GaussianMixture& oracle, double scale, double added_variance) {
  oracle.validate();
  if (!(added_variance >= 0.0)) throw std::invalid_argument("pushforward needs a non-negative added variance");
  GaussianMixture out = oracle;
  out.means = scale * oracle.means;
  out.variances = (scale * scale) * oracle.variances + Tensor(oracle.variances.shape(), added_variance);
  return out;
}

Tensor analytic_score_t(const GaussianMixture& oracle, const Tensor& z, double t, const Schedule& schedule) {
  if (!schedule.linear_drift()) {
    throw std::invalid_argument("analytic_score_t needs a linear-drift schedule; '" +
                                std::string(to_string(schedule.kind())) + "' has no closed-form marginal");
  }
  if (t == 0.0) return analytic_score(oracle, z);
  return analytic_score(pushforward(oracle, schedule.mean_scale(t), schedule.added_variance(t)), z);
}

Tensor analytic_score_t(const GaussianMixture& oracle, const Tensor& z, std::span<const double> times,
                        const Schedule& schedule) {
  if (z.rank() != 2 || z.extent(0) != times.size()) {
    throw std::invalid_argument("analytic_score_t needs one time per row of a [N, D] batch");
  }
  const std::size_t d = z.extent(1);
  std::vector<double> out;
  out.reserve(z.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const Tensor row(Shape{1, d}, std::vector<double>(z.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                                                      z.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
    const Tensor s = analytic_score_t(oracle, row, times[i], schedule);
    out.insert(out.end(), s.data().begin(), s.data().end());
  }
  return Tensor(z.shape(), std::move(out));
}

Tensor sample_mixture(const GaussianMixture& oracle, std::size_t n, Rng& rng, std::vector<int>* labels) {
  oracle.validate();
  if (n == 0) throw std::invalid_argument("sample_mixture needs n > 0");
  const std::size_t d = oracle.dim();
  const std::size_t k = oracle.components();
  std::vector<double> out(n * d);
  if (labels) labels->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    if (k > 1) {
      double u = rng.uniform();
      while (c + 1 < k && u >= oracle.weights[c]) u -= oracle.weights[c++];
    }
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = oracle.means.at(c, j) + std::sqrt(oracle.variances.at(c, j)) * rng.normal();
    }
    if (labels) (*labels)[i] = static_cast<int>(c);
  }
  return Tensor(Shape{n, d}, std::move(out));
}

Tensor sample_mean(const Tensor& x) {
  const Tensor rows = as_rows(x);
  const std::size_t n = rows.extent(0);
  const std::size_t d = rows.extent(1);
  std::vector<double> m(d, 0.0);
  const auto v = rows.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m[j] += v[i * d + j];
  }
  for (double& e : m) e /= static_cast<double>(n);
  return Tensor(Shape{d}, std::move(m));
}

Tensor sample_covariance(const Tensor& x) {
  const Tensor rows = as_rows(x);
  const std::size_t n = rows.extent(0);
  const std::size_t d = rows.extent(1);
  if (n < 2) throw std::invalid_argument("sample_covariance needs at least 2 rows");
  const Tensor m = sample_mean(rows);
  std::vector<double> c(d * d, 0.0);
  const auto v = rows.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      const double da = v[i * d + a] - m[a];
      for (std::size_t b = 0; b < d; ++b) c[a * d + b] += da * (v[i * d + b] - m[b]);
    }
  }
  for (double& e : c) e /= static_cast<double>(n - 1);
  return Tensor(Shape{d, d}, std::move(c));
}

double MarginalReport::max_mean_diff() const {
  double m = 0.0;
  for (const auto& r : rows) m = std::max(m, r.mean_diff);
  return m;
}

double MarginalReport::max_cov_diff() const {
  double m = 0.0;
  for (const auto& r : rows) m = std::max(m, r.cov_diff);
  return m;
}

namespace {

struct Moments {
  Tensor mean;
  Tensor cov;
};

Moments moments(const Tensor& x) { return {sample_mean(x), sample_covariance(x)}; }

double moment_gap(const Moments& a, const Moments& b) {
  return std::max(max_abs(a.mean - b.mean), max_abs(a.cov - b.cov));
}

}  // namespace

MarginalReport sde_vs_pfode_marginal_check(const GaussianMixture& oracle, const Schedule& schedule,
                                           const MarginalCheckOptions& options) {
  oracle.validate();
  if (options.n < 2) throw std::invalid_argument("marginal check needs n >= 2");
  if (options.times.empty()) throw std::invalid_argument("marginal check needs at least one report time");
  if (options.steps < 1) throw std::invalid_argument("marginal check needs steps >= 1");
  for (std::size_t i = 0; i < options.times.size(); ++i) {
    const double t = options.times[i];
    if (!(t >= 0.0 && t <= 1.0) || (i > 0 && !(t > options.times[i - 1]))) {
      throw std::invalid_argument("marginal check times must increase strictly within [0, 1]");
    }
  }
  const Rng root(options.seed);
  Rng data_rng = root.split(1);
  Rng noise_rng = root.split(2);
  const Tensor p0 = sample_mixture(oracle, options.n, data_rng);
  const std::size_t dim = oracle.dim();

  const TimeFn score = [&](const Tensor& z, double t) { return analytic_score_t(oracle, z, t, schedule); };
  const TimeFn rhs = [&](const Tensor& z, double t) { return pf_ode_rhs(z, t, schedule, score); };
  const double h = options.times.back() / static_cast<double>(options.steps);

  Tensor sde_fine = p0, sde_coarse = p0, ode_fine = p0, ode_coarse = p0;
  double t = 0.0;
  MarginalReport report;
  for (const double target : options.times) {
    if (target > t) {
      // An even number of fine steps so the half-resolution run lands on the grid too.
      const auto half = static_cast<std::size_t>(std::max(1.0, std::round((target - t) / (2.0 * h))));
      const double dt = (target - t) / static_cast<double>(2 * half);
      for (std::size_t k = 0; k < half; ++k) {
        const double ta = t + static_cast<double>(2 * k) * dt;
        const Tensor e1 = noise_rng.normal_tensor(p0.shape());
        const Tensor e2 = noise_rng.normal_tensor(p0.shape());
        sde_fine = forward_sde_step(sde_fine, ta, dt, schedule, e1);
        sde_fine = forward_sde_step(sde_fine, ta + dt, dt, schedule, e2);
        sde_coarse = forward_sde_step(sde_coarse, ta, 2.0 * dt, schedule, std::sqrt(0.5) * (e1 + e2));
      }
      ode_fine = heun_solve(rhs, ode_fine, t, target, 2 * half, false).end();
      ode_coarse = heun_solve(rhs, ode_coarse, t, target, half, false).end();
      sde_fine.require_finite("sde paths");
      t = target;
    }
    const Moments ms = moments(sde_fine);
    const Moments mo = moments(ode_fine);
    MarginalRow row;
    row.t = target;
    row.mean_diff = max_abs(ms.mean - mo.mean);
    row.cov_diff = max_abs(ms.cov - mo.cov);
    row.solver_tol = 2.0 * moment_gap(ms, moments(sde_coarse)) + 2.0 * moment_gap(mo, moments(ode_coarse));
    double se = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      se = std::max(se, std::sqrt((ms.cov.at(j, j) + mo.cov.at(j, j)) / static_cast<double>(options.n)));
    }
    row.mc_tol = 3.0 * se;
    report.rows.push_back(row);
  }
  return report;
}

Tensor sample_pf_ode(const Schedule& schedule, const TimeFn& score, const Tensor& prior, Solver solver,
                     std::size_t steps) {
  const TimeFn rhs = [&](const Tensor& z, double t) { return pf_ode_rhs(z, t, schedule, score); };
  return ode_solve(solver, rhs, prior, 1.0, 0.0, steps, false).end();
}

Tensor sample_prior(const Schedule& schedule, std::size_t n, std::size_t dim, Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample_prior needs n > 0");
  const double s = schedule.mean_scale(1.0);
  const double sd = std::sqrt(s * s + schedule.added_variance(1.0));
  return sd * rng.normal_tensor({n, dim});
}

}  // namespace nrdm
