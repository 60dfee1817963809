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

#include "nrdm/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nrdm {

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::score_matching: return "score-matching";
    case Objective::eps_prediction: return "eps-prediction";
    case Objective::sensitivity_regularized: return "sensitivity-regularized";
  }
  return "unknown";
}

std::string_view to_string(ScoreTarget t) {
  return t == ScoreTarget::analytic_oracle ? "analytic-oracle" : "denoising-estimate";
}

std::string_view to_string(JacobianMode m) {
  switch (m) {
    case JacobianMode::automatic: return "auto";
    case JacobianMode::exact: return "exact";
    case JacobianMode::hutchinson: return "hutchinson";
  }
  return "unknown";
}

std::string_view to_string(OptimMethod m) { return m == OptimMethod::sgd ? "sgd" : "adamw"; }

Objective parse_objective(std::string_view s) {
  for (auto o : {Objective::score_matching, Objective::eps_prediction, Objective::sensitivity_regularized}) {
    if (to_string(o) == s) return o;
  }
  throw std::invalid_argument("unknown objective '" + std::string(s) +
                              "' (expected score-matching, eps-prediction, sensitivity-regularized)");
}

ScoreTarget parse_score_target(std::string_view s) {
  for (auto t : {ScoreTarget::analytic_oracle, ScoreTarget::denoising_estimate}) {
    if (to_string(t) == s) return t;
  }
  throw std::invalid_argument("unknown score target '" + std::string(s) +
                              "' (expected analytic-oracle, denoising-estimate)");
}

JacobianMode parse_jacobian_mode(std::string_view s) {
  for (auto m : {JacobianMode::automatic, JacobianMode::exact, JacobianMode::hutchinson}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown jacobian mode '" + std::string(s) + "' (expected auto, exact, hutchinson)");
}

OptimMethod parse_optim_method(std::string_view s) {
  if (s == "sgd") return OptimMethod::sgd;
  if (s == "adamw") return OptimMethod::adamw;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "' (expected sgd, adamw)");
}

void LossConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be a finite value >= 0");
}

void OptimConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("adam eps must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
}

void TrainConfig::validate() const {
  loss.validate();
  optim.validate();
  if (batch == 0) throw std::invalid_argument("batch size must be positive");
  if (eval_size < 2) throw std::invalid_argument("eval_size must be at least 2");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw std::invalid_argument("ema decay must lie in [0, 1]");
  if (!(t_min > 0.0 && t_min < 1.0)) throw std::invalid_argument("t_min must lie in (0, 1)");
  if (!(divergence_threshold > 0.0)) throw std::invalid_argument("divergence threshold must be > 0");
}

namespace {

void require_same_shape(const Shape& a, const Shape& b, std::string_view what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

}  // namespace

double loss_simple(const Tensor& eps, const Tensor& eps_pred) {
  require_same_shape(eps.shape(), eps_pred.shape(), "loss_simple");
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) s += (eps[i] - eps_pred[i]) * (eps[i] - eps_pred[i]);
  return s / static_cast<double>(eps.size());
}

double loss_score_matching(const Tensor& f_out, const Tensor& score_target) {
  require_same_shape(f_out.shape(), score_target.shape(), "loss_score_matching");
  return loss_simple(score_target, f_out);
}

Var loss_simple(Var eps, Var eps_pred) {
  require_same_shape(eps.shape(), eps_pred.shape(), "loss_simple");
  return mean(square(sub(eps, eps_pred)));
}

Var loss_score_matching(Var f_out, Var score_target) {
  require_same_shape(f_out.shape(), score_target.shape(), "loss_score_matching");
  return mean(square(sub(f_out, score_target)));
}

Tensor mapper_jacobian_diag(const StackModel& model, std::size_t unit, const Tensor& z,
                            const std::optional<Tensor>& embedding, JacobianMode mode, Rng& rng) {
  if (z.rank() != 2 || z.extent(1) != model.width()) {
    throw std::invalid_argument("jacobian probe needs a [B, " + std::to_string(model.width()) + "] state, got " +
                                to_string(z.shape()));
  }
  const std::size_t b = z.extent(0);
  const std::size_t w = z.extent(1);
  if (mode == JacobianMode::automatic) mode = w <= 8 ? JacobianMode::exact : JacobianMode::hutchinson;
  const Unit& u = model.units()[unit];
  auto vjp_at = [&](const Tensor& cotangent) {
    Tape tape;
    std::vector<Var> bound(model.params().size());
    for (std::size_t idx : u.theta) bound[idx] = tape.constant(model.params()[idx].value);
    Conditioning cond;
    if (embedding) cond.embedding = tape.constant(*embedding);
    const Var zv = tape.leaf(z);
    const Var out = model.mapper(bound, unit, zv, cond);
    return vjp(out, cotangent)[zv];
  };
  std::vector<double> diag(b * w, 0.0);
  if (mode == JacobianMode::exact) {
    for (std::size_t k = 0; k < w; ++k) {
      std::vector<double> e(b * w, 0.0);
      for (std::size_t r = 0; r < b; ++r) e[r * w + k] = 1.0;
      const Tensor g = vjp_at(Tensor(z.shape(), std::move(e)));
      for (std::size_t r = 0; r < b; ++r) diag[r * w + k] = g[r * w + k];
    }
  } else {
    std::vector<double> v(b * w);
    for (double& x : v) x = rng.rademacher();
    const Tensor g = vjp_at(Tensor(z.shape(), v));
    for (std::size_t i = 0; i < v.size(); ++i) diag[i] = v[i] * g[i];
  }
  return Tensor(z.shape(), std::move(diag));
}

std::vector<Var> unit_inputs(const StackModel& model, const StackModel::Pass& pass) {
  std::vector<Var> out;
  if (model.fashion() == Fashion::flow) {
    out.assign(pass.states.begin(), pass.states.begin() + static_cast<std::ptrdiff_t>(model.units().size()));
    return out;
  }
  for (std::size_t i = 0; i + 1 < model.depth(); ++i) {
    out.push_back(pass.states[i]);
    out.push_back(pass.decoder[i + 1]);
  }
  return out;
}

Var sensitivity_reg_term(const StackModel& model, std::span<const Var> bound, std::span<const Tensor> diags) {
  if (diags.size() != model.units().size()) {
    throw std::invalid_argument("sensitivity_reg_term needs one Jacobian diagonal per unit");
  }
  Tape& tape = bound.front().tape();
  Var total;
  for (std::size_t u = 0; u < diags.size(); ++u) {
    const GateParams& g = model.units()[u].gate;
    const Var term = mean(square(sub(mul(bound[g.alpha], tape.constant(diags[u])), bound[g.beta])));
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

double loss_sensitivity_reg(const StackModel& model, const Tensor& z0, double t, JacobianMode mode,
                            std::uint64_t probe_seed) {
  const Tensor x = z0.rank() == 1 ? z0.reshaped({1, z0.size()}) : z0;
  Tape tape;
  const auto bound = model.bind(tape);
  Conditioning cond;
  const MapperSpec& m = model.config().mapper;
  if (m.conditioning != TimeConditioning::none && m.kind != MapperKind::linear_scalar) {
    const std::vector<double> times(x.extent(0), t);
    cond.embedding = tape.constant(time_embedding(times, m.embed_dim));
  }
  const auto pass = model.forward(tape, bound, tape.constant(x), cond);
  const auto inputs = unit_inputs(model, pass);
  Rng rng(probe_seed, 0x4A4143ull);
  std::optional<Tensor> emb;
  if (cond.embedding) emb = cond.embedding->value();
  std::vector<Tensor> diags;
  for (std::size_t u = 0; u < inputs.size(); ++u) {
    diags.push_back(mapper_jacobian_diag(model, u, inputs[u].value(), emb, mode, rng));
  }
  return sensitivity_reg_term(model, bound, diags).value().item();
}

OptimState make_optim_state(const OptimConfig& config, std::span<Parameter* const> params) {
  config.validate();
  OptimState s;
  s.config = config;
  for (const Parameter* p : params) {
    s.names.push_back(p->name);
    s.m.emplace_back(p->value.shape(), 0.0);
    s.v.emplace_back(p->value.shape(), 0.0);
  }
  return s;
}

void optimizer_step(OptimState& state, std::span<Parameter* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("optimizer_step: " + std::to_string(params.size()) + " params, " +
                                std::to_string(grads.size()) + " grads, state for " +
                                std::to_string(state.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i]->value.shape(), grads[i].shape(), "optimizer_step '" + params[i]->name + "'");
    if (!grads[i].all_finite()) {
      throw NumericalError("non-finite gradient for parameter '" + params[i]->name + "'");
    }
  }
  const OptimConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.frozen) continue;
    const auto theta = p.value.data();
    const auto g = grads[i].data();
    std::vector<double> out(theta.begin(), theta.end());
    if (c.method == OptimMethod::sgd) {
      for (std::size_t k = 0; k < out.size(); ++k) out[k] -= c.lr * (g[k] + c.weight_decay * theta[k]);
    } else {
      std::vector<double> m = state.m[i].to_vector();
      std::vector<double> v = state.v[i].to_vector();
      for (std::size_t k = 0; k < out.size(); ++k) {
        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
        v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
        const double mh = m[k] / bc1;
        const double vh = v[k] / bc2;
        out[k] -= c.lr * (mh / (std::sqrt(vh) + c.eps) + c.weight_decay * theta[k]);
      }
      state.m[i] = Tensor(p.value.shape(), std::move(m));
      state.v[i] = Tensor(p.value.shape(), std::move(v));
    }
    p.value = Tensor(p.value.shape(), std::move(out));
  }
}

EmaState make_ema(double decay, std::span<Parameter* const> params) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("ema decay must lie in [0, 1]");
  EmaState e;
  e.decay = decay;
  for (const Parameter* p : params) e.shadow.push_back(p->value);
  return e;
}

void ema_update(EmaState& ema, std::span<const Tensor> values) {
  if (values.size() != ema.shadow.size()) throw std::invalid_argument("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    require_same_shape(ema.shadow[i].shape(), values[i].shape(), "ema_update");
    if (ema.decay == 1.0) continue;
    std::vector<double> s = ema.shadow[i].to_vector();
    const auto p = values[i].data();
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = ema.decay * s[k] + (1.0 - ema.decay) * p[k];
    ema.shadow[i] = Tensor(values[i].shape(), std::move(s));
  }
}

void ema_update(EmaState& ema, std::span<Parameter* const> params) {
  std::vector<Tensor> values;
  for (const Parameter* p : params) values.push_back(p->value);
  ema_update(ema, std::span<const Tensor>(values));
}

std::vector<Tensor> parameter_values(const ScoreNetwork& net) {
  std::vector<Tensor> out;
  for (const Parameter* p : net.parameters()) out.push_back(p->value);
  return out;
}

void assign_parameters(ScoreNetwork& net, std::span<const Tensor> values) {
  auto params = net.parameters();
  if (values.size() != params.size()) throw std::invalid_argument("assign_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    require_same_shape(params[i]->value.shape(), values[i].shape(), "assign_parameters '" + params[i]->name + "'");
    params[i]->value = values[i];
  }
}

TimeFn score_function(const ScoreNetwork& net, const Schedule& schedule) {
  return [&net, &schedule](const Tensor& z, double t) {
    const Tensor out = net.evaluate(z, t);
    if (net.config().output == OutputKind::score) return out;
    // eps networks are never trained below t = 1e-3, so the noise level is floored there.
    const double v = schedule.added_variance(std::max(t, 1e-3));
    return (-1.0 / std::sqrt(v)) * out;
  };
}

namespace {

struct Batch {
  Tensor x0;
  Tensor xt;
  Tensor eps;
  std::vector<double> times;
  std::vector<int> labels;
};

Batch perturb(const Tensor& data, std::span<const int> data_labels, std::span<const std::size_t> rows,
              const Schedule& schedule, double t_min, Rng& rng) {
  const std::size_t d = data.extent(1);
  const std::size_t b = rows.size();
  Batch batch;
  std::vector<double> x0(b * d), xt(b * d), eps(b * d);
  batch.times.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double t = t_min + (1.0 - t_min) * rng.uniform();
    batch.times[i] = t;
    const double s = schedule.mean_scale(t);
    const double sd = std::sqrt(schedule.added_variance(t));
    for (std::size_t j = 0; j < d; ++j) {
      const double e = rng.normal();
      x0[i * d + j] = data.data()[rows[i] * d + j];
      eps[i * d + j] = e;
      xt[i * d + j] = s * x0[i * d + j] + sd * e;
    }
    if (!data_labels.empty()) batch.labels.push_back(data_labels[rows[i]]);
  }
  batch.x0 = Tensor(Shape{b, d}, std::move(x0));
  batch.xt = Tensor(Shape{b, d}, std::move(xt));
  batch.eps = Tensor(Shape{b, d}, std::move(eps));
  return batch;
}

struct LossVars {
  Var total;
  double score_term = 0.0;
  double gamma_term = 0.0;
};

/// Target of the score term: the oracle score, -eps (for sqrt(v)-weighted
/// denoising matching) or eps.
Tensor score_term_target(const ScoreNetwork& net, const TrainConfig& config, const Schedule& schedule,
                         const DatasetSpec& data, const Batch& b) {
  if (net.config().output == OutputKind::eps) return b.eps;
  if (config.loss.target == ScoreTarget::analytic_oracle) {
    return analytic_score_t(data.mixture, b.xt, b.times, schedule);
  }
  return -1.0 * b.eps;
}

LossVars batch_loss(const ScoreNetwork& net, Tape& tape, const ScoreNetwork::Binding& bound, const Batch& b,
                    const Tensor& target, const TrainConfig& config, const Schedule& schedule, Rng& probe_rng) {
  const auto pass = net.forward(tape, bound, tape.constant(b.xt), b.times, b.labels);
  Var out = pass.output;
  if (net.config().output == OutputKind::score && config.loss.target == ScoreTarget::denoising_estimate) {
    std::vector<double> w(b.times.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sqrt(schedule.added_variance(b.times[i]));
    out = mul(out, tape.constant(Tensor(Shape{w.size(), 1}, std::move(w))));
  }
  const Var first = net.config().output == OutputKind::eps ? loss_simple(tape.constant(target), out)
                                                           : loss_score_matching(out, tape.constant(target));
  LossVars lv;
  lv.total = first;
  lv.score_term = first.value().item();
  if (config.loss.objective == Objective::sensitivity_regularized && config.loss.gamma > 0.0) {
    const StackModel& stack = net.stack();
    const auto inputs = unit_inputs(stack, pass.stack);
    std::optional<Tensor> emb;
    if (pass.cond.embedding) emb = pass.cond.embedding->value();
    std::vector<Tensor> diags;
    for (std::size_t u = 0; u < inputs.size(); ++u) {
      diags.push_back(mapper_jacobian_diag(stack, u, inputs[u].value(), emb, config.loss.jacobian, probe_rng));
    }
    const Var reg = scale(sensitivity_reg_term(stack, bound.stack, diags), config.loss.gamma);
    lv.gamma_term = reg.value().item();
    lv.total = add(first, reg);
  }
  return lv;
}

void check_compatible(const ScoreNetwork& net, const TrainConfig& config, const Schedule& schedule,
                      const DatasetSpec& data) {
  config.validate();
  data.validate();
  if (!schedule.linear_drift()) {
    throw std::invalid_argument("training needs a schedule with closed-form marginals (vp, ve or ou)");
  }
  if (net.config().data_dim != data.dim()) {
    throw std::invalid_argument("model data_dim " + std::to_string(net.config().data_dim) + " does not match dataset dim " +
                                std::to_string(data.dim()));
  }
  const bool eps_out = net.config().output == OutputKind::eps;
  if (config.loss.objective == Objective::eps_prediction && !eps_out) {
    throw std::invalid_argument("eps-prediction needs a network with output = eps");
  }
  if (config.loss.objective == Objective::score_matching && eps_out) {
    throw std::invalid_argument("score-matching needs a network with output = score");
  }
  if (!eps_out && config.loss.target == ScoreTarget::analytic_oracle &&
      data.family != DatasetFamily::gaussian_mixture_2d) {
    throw std::invalid_argument("analytic-oracle targets need the gaussian-mixture-2d dataset");
  }
  if (net.config().num_classes > 0 && !data.labels) {
    throw std::invalid_argument("a class-conditional model needs a labelled dataset");
  }
}

Dataset training_data(const ScoreNetwork& net, const DatasetSpec& data) {
  Dataset ds = sample_dataset(data, data.size, data.seed);
  if (net.config().num_classes == 0) ds.labels.clear();
  return ds;
}

struct EvalSet {
  Batch batch;
  Tensor target;
};

EvalSet make_eval_set(const ScoreNetwork& net, const TrainConfig& config, const Schedule& schedule,
                      const DatasetSpec& data, const Dataset& ds, std::uint64_t seed) {
  Rng rng = Rng(seed).split(0xE7A1ull);
  std::vector<std::size_t> rows(config.eval_size);
  for (auto& r : rows) r = rng.index(ds.x.extent(0));
  EvalSet e;
  e.batch = perturb(ds.x, ds.labels, rows, schedule, config.t_min, rng);
  e.target = score_term_target(net, config, schedule, data, e.batch);
  return e;
}

EvalLoss eval_on(const ScoreNetwork& net, const TrainConfig& config, const Schedule& schedule, const EvalSet& e,
                 std::uint64_t seed) {
  Tape tape;
  const auto bound = net.bind(tape);
  Rng probe = Rng(seed).split(0xE7A2ull);
  const LossVars lv = batch_loss(net, tape, bound, e.batch, e.target, config, schedule, probe);
  return {lv.total.value().item(), lv.score_term, lv.gamma_term};
}

SensitivityReport report_on(const ScoreNetwork& net, const EvalSet& e, std::size_t step) {
  const std::size_t rows = std::min<std::size_t>(256, e.batch.xt.extent(0));
  const std::size_t d = e.batch.xt.extent(1);
  auto head = [&](const Tensor& t) {
    return Tensor(Shape{rows, d}, std::vector<double>(t.data().begin(), t.data().begin() + static_cast<std::ptrdiff_t>(rows * d)));
  };
  const std::vector<double> times(e.batch.times.begin(), e.batch.times.begin() + static_cast<std::ptrdiff_t>(rows));
  return sensitivity_report(net, head(e.batch.xt), times, head(e.target), step);
}

}  // namespace

EvalLoss evaluate_objective(const ScoreNetwork& model, const TrainConfig& config, const Schedule& schedule,
                            const DatasetSpec& data, std::uint64_t seed) {
  check_compatible(model, config, schedule, data);
  const Dataset ds = training_data(model, data);
  return eval_on(model, config, schedule, make_eval_set(model, config, schedule, data, ds, seed), seed);
}

TrainResult train_score_model(ScoreNetwork& model, const TrainConfig& config, const Schedule& schedule,
                              const DatasetSpec& data, std::uint64_t seed) {
  check_compatible(model, config, schedule, data);
  const Dataset ds = training_data(model, data);
  const EvalSet eval = make_eval_set(model, config, schedule, data, ds, seed);

  auto all = model.parameters();
  std::vector<Parameter*> trainable;
  std::vector<std::size_t> trainable_index;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i]->frozen) continue;
    if (config.gates_only && all[i]->group != ParamGroup::gate) continue;
    trainable.push_back(all[i]);
    trainable_index.push_back(i);
  }

  TrainResult result;
  result.optim = make_optim_state(config.optim, trainable);
  result.ema = make_ema(config.ema_decay, all);
  result.initial = eval_on(model, config, schedule, eval, seed);
  if (config.report_every > 0) result.reports.push_back(report_on(model, eval, 0));

  const Rng root(seed);
  std::vector<std::size_t> rows(config.batch);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    Rng rng = root.split(step);
    for (auto& r : rows) r = rng.index(ds.x.extent(0));
    const Batch b = perturb(ds.x, ds.labels, rows, schedule, config.t_min, rng);
    const Tensor target = score_term_target(model, config, schedule, data, b);

    Tape tape;
    const auto bound = model.bind(tape);
    const LossVars lv = batch_loss(model, tape, bound, b, target, config, schedule, rng);
    const double loss = lv.total.value().item();
    if (!std::isfinite(loss) || loss > config.divergence_threshold) {
      throw NumericalError("training diverged at step " + std::to_string(step) + ": loss " + format_double(loss) +
                           " exceeds " + format_double(config.divergence_threshold));
    }
    const Gradients grads = backward(lv.total);
    std::vector<Tensor> g;
    g.reserve(trainable.size());
    for (std::size_t i : trainable_index) g.push_back(grads[bound.all[i]]);
    optimizer_step(result.optim, trainable, g);
    ema_update(result.ema, all);

    result.log.push_back({step, loss, lv.score_term, lv.gamma_term, config.optim.lr, config.ema_decay});
    if (config.report_every > 0 && (step % config.report_every == 0 || step == config.steps)) {
      result.reports.push_back(report_on(model, eval, step));
    }
  }
  result.final = eval_on(model, config, schedule, eval, seed);
  return result;
}

TrainResult finetune_gates(ScoreNetwork& model, TrainConfig config, const Schedule& schedule, const DatasetSpec& data,
                           std::uint64_t seed) {
  config.gates_only = true;
  config.loss.objective = Objective::sensitivity_regularized;
  return train_score_model(model, config, schedule, data, seed);
}

CsvTable metric_log_table(std::span<const MetricRow> rows) {
  CsvTable t;
  t.header = {"step", "loss", "score_term", "gamma_term", "lr", "ema_decay"};
  for (const auto& r : rows) {
    t.rows.push_back({std::to_string(r.step), format_double(r.loss), format_double(r.score_term),
                      format_double(r.gamma_term), format_double(r.lr), format_double(r.ema_decay)});
  }
  return t;
}

}  // namespace nrdm
