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

#include "nrdm/residual_stack.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace nrdm {

namespace {

template <typename E, std::size_t N>
std::string_view enum_name(E value, const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "unknown";
}

template <typename E, std::size_t N>
E enum_parse(std::string_view s, const std::array<std::pair<E, std::string_view>, N>& table, std::string_view what) {
  for (const auto& [v, name] : table) {
    if (name == s) return v;
  }
  std::string options;
  for (const auto& [v, name] : table) {
    if (!options.empty()) options += ", ";
    options += name;
  }
  throw std::invalid_argument("unknown " + std::string(what) + " '" + std::string(s) + "' (expected one of " +
                              options + ")");
}

constexpr std::array<std::pair<MapperKind, std::string_view>, 3> kMapperKinds{
    {{MapperKind::affine, "affine"}, {MapperKind::mlp2, "mlp2"}, {MapperKind::linear_scalar, "linear-scalar"}}};
constexpr std::array<std::pair<Activation, std::string_view>, 2> kActivations{
    {{Activation::tanh, "tanh"}, {Activation::silu, "silu"}}};
constexpr std::array<std::pair<TimeConditioning, std::string_view>, 3> kConditionings{
    {{TimeConditioning::none, "none"}, {TimeConditioning::concat, "concat"}, {TimeConditioning::film, "film"}}};
constexpr std::array<std::pair<Fashion, std::string_view>, 2> kFashions{
    {{Fashion::flow, "flow"}, {Fashion::u_shaped, "u-shaped"}}};
constexpr std::array<std::pair<Variant, std::string_view>, 5> kVariants{{{Variant::v0, "v0"},
                                                                          {Variant::v1, "v1"},
                                                                          {Variant::v2, "v2"},
                                                                          {Variant::v3, "v3"},
                                                                          {Variant::v4, "v4"}}};
constexpr std::array<std::pair<GateMode, std::string_view>, 2> kGateModes{
    {{GateMode::scalar, "scalar"}, {GateMode::per_channel, "per-channel"}}};
constexpr std::array<std::pair<Branch, std::string_view>, 3> kBranches{
    {{Branch::unified, "unified"}, {Branch::left, "left"}, {Branch::right, "right"}}};
constexpr std::array<std::pair<OutputKind, std::string_view>, 2> kOutputs{
    {{OutputKind::score, "score"}, {OutputKind::eps, "eps"}}};

Tensor gaussian_init(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

Var activate(Activation a, Var x) { return a == Activation::tanh ? tanh(x) : silu(x); }

}  // namespace

std::string_view to_string(MapperKind v) { return enum_name(v, kMapperKinds); }
std::string_view to_string(Activation v) { return enum_name(v, kActivations); }
std::string_view to_string(TimeConditioning v) { return enum_name(v, kConditionings); }
std::string_view to_string(Fashion v) { return enum_name(v, kFashions); }
std::string_view to_string(Variant v) { return enum_name(v, kVariants); }
std::string_view to_string(GateMode v) { return enum_name(v, kGateModes); }
std::string_view to_string(Branch v) { return enum_name(v, kBranches); }
std::string_view to_string(OutputKind v) { return enum_name(v, kOutputs); }
MapperKind parse_mapper_kind(std::string_view s) { return enum_parse(s, kMapperKinds, "mapper kind"); }
Activation parse_activation(std::string_view s) { return enum_parse(s, kActivations, "activation"); }
TimeConditioning parse_time_conditioning(std::string_view s) {
  return enum_parse(s, kConditionings, "time conditioning");
}
Fashion parse_fashion(std::string_view s) { return enum_parse(s, kFashions, "stacking fashion"); }
Variant parse_variant(std::string_view s) { return enum_parse(s, kVariants, "residual variant"); }
GateMode parse_gate_mode(std::string_view s) { return enum_parse(s, kGateModes, "gate mode"); }
OutputKind parse_output_kind(std::string_view s) { return enum_parse(s, kOutputs, "output kind"); }

Tensor time_embedding(std::span<const double> times, std::size_t dim) {
  if (times.empty() || dim == 0) throw std::invalid_argument("time_embedding needs times and a positive dim");
  const std::size_t half = dim / 2;
  std::vector<double> out(times.size() * dim, 0.0);
  for (std::size_t b = 0; b < times.size(); ++b) {
    const double t = times[b];
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double arg = 1000.0 * t * freq;
      out[b * dim + k] = std::sin(arg);
      out[b * dim + half + k] = std::cos(arg);
    }
  }
  return Tensor(Shape{times.size(), dim}, std::move(out));
}

Var apply_residual(Variant variant, Var skip, Var input, Var alpha, Var beta, const MapperFn& f) {
  switch (variant) {
    case Variant::v0:
      return add(add(skip, mul(alpha, f(input))), beta);
    case Variant::v1:
      return add(skip, f(add(mul(alpha, input), beta)));
    case Variant::v2:
      return add(add(mul(alpha, skip), f(input)), beta);
    case Variant::v3:
      return add(skip, f(input));
    case Variant::v4:
      return add(skip, mul(alpha, f(input)));
  }
  throw std::invalid_argument("unknown residual variant");
}

Var apply_read_in(Variant variant, Var input, Var alpha, Var beta, const MapperFn& f) {
  switch (variant) {
    case Variant::v0:
      return add(mul(alpha, f(input)), beta);
    case Variant::v1:
      return f(add(mul(alpha, input), beta));
    case Variant::v2:
      return add(f(input), beta);
    case Variant::v3:
      return f(input);
    case Variant::v4:
      return mul(alpha, f(input));
  }
  throw std::invalid_argument("unknown residual variant");
}

StackModel::StackModel(StackConfig config, Rng& rng) : config_(std::move(config)) {
  if (config_.depth == 0) throw std::invalid_argument("stack depth must be positive");
  if (config_.mapper.width == 0) throw std::invalid_argument("mapper width must be positive");
  if (config_.fashion == Fashion::u_shaped && config_.depth < 2) {
    throw std::invalid_argument("u-shaped stacks need depth L >= 2, got " + std::to_string(config_.depth));
  }
  if (config_.fashion == Fashion::flow) {
    for (std::size_t i = 0; i < config_.depth; ++i) add_unit("stack.u" + std::to_string(i), Branch::unified, rng);
  } else {
    for (std::size_t i = 0; i + 1 < config_.depth; ++i) {
      add_unit("stack.l" + std::to_string(i), Branch::left, rng);
      add_unit("stack.r" + std::to_string(i), Branch::right, rng);
    }
  }
  if (config_.freeze_gates) freeze_gates(true);
}

void StackModel::add_unit(const std::string& prefix, Branch branch, Rng& rng) {
  const MapperSpec& m = config_.mapper;
  Unit unit;
  unit.mapper = m;
  auto push = [&](const std::string& suffix, Tensor value, ParamGroup group) {
    params_.push_back(Parameter{prefix + "." + suffix, std::move(value), group, false});
    return params_.size() - 1;
  };
  const std::size_t w = m.width;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(w));
  const double e_std = 1.0 / std::sqrt(static_cast<double>(m.embed_dim));
  switch (m.kind) {
    case MapperKind::linear_scalar:
      unit.theta.push_back(push("a", Tensor(Shape{1}, config_.linear_init), ParamGroup::theta));
      break;
    case MapperKind::affine:
      unit.theta.push_back(push("w", gaussian_init(rng, {w, w}, w_std * config_.init_scale), ParamGroup::theta));
      unit.theta.push_back(push("b", Tensor(Shape{w}, 0.0), ParamGroup::theta));
      if (m.conditioning == TimeConditioning::concat) {
        unit.theta.push_back(push("wc", gaussian_init(rng, {m.embed_dim, w}, e_std * config_.init_scale),
                                  ParamGroup::theta));
      } else if (m.conditioning == TimeConditioning::film) {
        unit.theta.push_back(push("wg", gaussian_init(rng, {m.embed_dim, w}, 0.1 * e_std), ParamGroup::theta));
        unit.theta.push_back(push("wb", gaussian_init(rng, {m.embed_dim, w}, 0.1 * e_std), ParamGroup::theta));
      }
      break;
    case MapperKind::mlp2: {
      if (m.hidden == 0) throw std::invalid_argument("mlp2 mapper needs a positive hidden width");
      const std::size_t h = m.hidden;
      unit.theta.push_back(push("w1", gaussian_init(rng, {w, h}, w_std), ParamGroup::theta));
      unit.theta.push_back(push("b1", Tensor(Shape{h}, 0.0), ParamGroup::theta));
      if (m.conditioning == TimeConditioning::concat) {
        unit.theta.push_back(push("wc", gaussian_init(rng, {m.embed_dim, h}, e_std), ParamGroup::theta));
      } else if (m.conditioning == TimeConditioning::film) {
        unit.theta.push_back(push("wg", gaussian_init(rng, {m.embed_dim, h}, 0.1 * e_std), ParamGroup::theta));
        unit.theta.push_back(push("wb", gaussian_init(rng, {m.embed_dim, h}, 0.1 * e_std), ParamGroup::theta));
      }
      const double h_std = 1.0 / std::sqrt(static_cast<double>(h));
      unit.theta.push_back(push("w2", gaussian_init(rng, {h, w}, h_std * config_.init_scale), ParamGroup::theta));
      unit.theta.push_back(push("b2", Tensor(Shape{w}, 0.0), ParamGroup::theta));
      break;
    }
  }
  const Shape gate_shape = config_.gate_mode == GateMode::scalar ? Shape{1} : Shape{w};
  double a0 = config_.init_alpha;
  double b0 = config_.init_beta;
  bool freeze_a = false;
  bool freeze_b = false;
  if (config_.variant == Variant::v3) {
    a0 = 1.0;
    b0 = 0.0;
    freeze_a = freeze_b = true;
  } else if (config_.variant == Variant::v4) {
    b0 = 0.0;
    freeze_b = true;
  }
  unit.gate.alpha = push("alpha", Tensor(gate_shape, a0), ParamGroup::gate);
  params_.back().frozen = freeze_a;
  unit.gate.beta = push("beta", Tensor(gate_shape, b0), ParamGroup::gate);
  params_.back().frozen = freeze_b;
  unit.gate.branch = branch;
  units_.push_back(std::move(unit));
}

std::size_t StackModel::residual_unit(std::size_t i) const {
  if (i >= residual_count()) throw std::out_of_range("residual unit index " + std::to_string(i) + " out of range");
  return config_.fashion == Fashion::flow ? i : 2 * i + 1;
}

std::size_t StackModel::residual_count() const {
  return config_.fashion == Fashion::flow ? units_.size() : units_.size() / 2;
}

std::size_t StackModel::param_index(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw std::invalid_argument("no parameter named '" + std::string(name) + "'");
}

void StackModel::set_gates(std::size_t unit, const Tensor& alpha, const Tensor& beta) {
  const GateParams& g = units_.at(unit).gate;
  if (alpha.shape() != params_[g.alpha].value.shape() || beta.shape() != params_[g.beta].value.shape()) {
    throw std::invalid_argument("set_gates: gate shape must be " + to_string(params_[g.alpha].value.shape()));
  }
  params_[g.alpha].value = alpha;
  params_[g.beta].value = beta;
}

void StackModel::set_all_gates(double alpha, double beta) {
  for (std::size_t u = 0; u < units_.size(); ++u) {
    const Shape& s = params_[units_[u].gate.alpha].value.shape();
    set_gates(u, Tensor(s, alpha), Tensor(s, beta));
  }
}

void StackModel::freeze_gates(bool frozen) {
  for (Parameter& p : params_) {
    if (p.group == ParamGroup::gate) p.frozen = frozen;
  }
}

std::vector<Var> StackModel::bind(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const Parameter& p : params_) out.push_back(tape.leaf(p.value));
  return out;
}

Var StackModel::mapper(std::span<const Var> bound, std::size_t unit_index, Var z, const Conditioning& cond) const {
  const Unit& unit = units_.at(unit_index);
  const MapperSpec& m = unit.mapper;
  if (z.shape().size() != 2 || z.shape()[1] != m.width) {
    throw std::invalid_argument("mapper width mismatch: input " + to_string(z.shape()) + ", mapper width " +
                                std::to_string(m.width));
  }
  auto p = [&](std::size_t k) { return bound[unit.theta[k]]; };
  const bool conditioned = m.conditioning != TimeConditioning::none && m.kind != MapperKind::linear_scalar;
  if (conditioned && !cond.embedding) {
    throw std::invalid_argument("time-conditioned mapper called without a conditioning embedding");
  }
  switch (m.kind) {
    case MapperKind::linear_scalar:
      return mul(z, p(0));
    case MapperKind::affine: {
      Var out = affine(z, p(0), p(1));
      if (m.conditioning == TimeConditioning::concat) {
        out = add(out, matmul(*cond.embedding, p(2)));
      } else if (m.conditioning == TimeConditioning::film) {
        out = add(add(out, mul(out, matmul(*cond.embedding, p(2)))), matmul(*cond.embedding, p(3)));
      }
      return out;
    }
    case MapperKind::mlp2: {
      Var pre = affine(z, p(0), p(1));
      std::size_t next = 2;
      if (m.conditioning == TimeConditioning::concat) {
        pre = add(pre, matmul(*cond.embedding, p(2)));
        next = 3;
      } else if (m.conditioning == TimeConditioning::film) {
        pre = add(add(pre, mul(pre, matmul(*cond.embedding, p(2)))), matmul(*cond.embedding, p(3)));
        next = 4;
      }
      const Var h = activate(m.activation, pre);
      return affine(h, p(next), p(next + 1));
    }
  }
  throw std::invalid_argument("unknown mapper kind");
}

Var StackModel::unit_forward(std::span<const Var> bound, std::size_t unit_index, Var skip, Var input,
                             const Conditioning& cond) const {
  const Unit& unit = units_.at(unit_index);
  const MapperFn f = [&](Var v) { return mapper(bound, unit_index, v, cond); };
  Var out = apply_residual(config_.variant, skip, input, bound[unit.gate.alpha], bound[unit.gate.beta], f);
  if (config_.step != 1.0) out = add(skip, scale(sub(out, skip), config_.step));
  return out;
}

Var StackModel::read_in_forward(std::span<const Var> bound, std::size_t unit_index, Var input,
                                const Conditioning& cond) const {
  const Unit& unit = units_.at(unit_index);
  const MapperFn f = [&](Var v) { return mapper(bound, unit_index, v, cond); };
  return apply_read_in(config_.variant, input, bound[unit.gate.alpha], bound[unit.gate.beta], f);
}

StackModel::Pass StackModel::forward(Tape& tape, std::span<const Var> bound, Var z0, const Conditioning& cond) const {
  if (bound.size() != params_.size()) {
    throw std::invalid_argument("forward: binding has " + std::to_string(bound.size()) + " vars for " +
                                std::to_string(params_.size()) + " parameters");
  }
  if (&z0.tape() != &tape) throw std::invalid_argument("forward: input belongs to another tape");
  Pass pass;
  if (config_.fashion == Fashion::flow) {
    pass.states.reserve(config_.depth + 1);
    pass.states.push_back(z0);
    Var z = z0;
    for (std::size_t i = 0; i < units_.size(); ++i) {
      z = unit_forward(bound, i, z, z, cond);
      pass.states.push_back(z);
    }
    pass.output = z;
    return pass;
  }
  const std::size_t L = config_.depth;
  pass.states.reserve(L);
  pass.states.push_back(z0);
  for (std::size_t i = 0; i + 1 < L; ++i) pass.states.push_back(read_in_forward(bound, 2 * i, pass.states[i], cond));
  pass.decoder.assign(L, Var{});
  pass.decoder[L - 1] = pass.states[L - 1];
  for (std::size_t i = L - 1; i-- > 0;) {
    pass.decoder[i] = unit_forward(bound, 2 * i + 1, pass.states[i], pass.decoder[i + 1], cond);
  }
  pass.output = pass.decoder[0];
  return pass;
}

namespace {

Tensor as_batch(const Tensor& z) {
  if (z.rank() == 1) return z.reshaped({1, z.size()});
  if (z.rank() == 2) return z;
  throw std::invalid_argument("stack input must be rank 1 or 2, got " + to_string(z.shape()));
}

Tensor like_input(const Tensor& out, const Tensor& z) { return z.rank() == 1 ? out.reshaped(z.shape()) : out; }

Conditioning constant_conditioning(Tape& tape, const StackModel& model, std::size_t batch, double t) {
  Conditioning cond;
  const MapperSpec& m = model.config().mapper;
  if (m.conditioning != TimeConditioning::none && m.kind != MapperKind::linear_scalar) {
    const std::vector<double> times(batch, t);
    cond.embedding = tape.constant(time_embedding(times, m.embed_dim));
  }
  return cond;
}

}  // namespace

Tensor mrs_forward(const Tensor& z, const Tensor& alpha, const Tensor& beta, const MapperFn& f) {
  return variant_forward(z, Variant::v0, alpha, beta, f);
}

Tensor variant_forward(const Tensor& z, Variant variant, const Tensor& alpha, const Tensor& beta, const MapperFn& f) {
  if (alpha.shape() != beta.shape()) {
    throw std::invalid_argument("gate shapes differ: alpha " + to_string(alpha.shape()) + ", beta " +
                                to_string(beta.shape()));
  }
  Tape tape;
  const Var zv = tape.constant(z);
  const Var out = apply_residual(variant, zv, zv, tape.constant(alpha), tape.constant(beta), f);
  if (out.shape() != z.shape()) {
    throw std::invalid_argument("width mismatch: mapper output " + to_string(out.shape()) + " for input " +
                                to_string(z.shape()));
  }
  return out.value();
}

FlowResult flow_stack_forward(const Tensor& z0, const StackModel& model, double t) {
  if (model.fashion() != Fashion::flow) throw std::invalid_argument("flow_stack_forward needs a flow-shaped model");
  const Tensor batch = as_batch(z0);
  Tape tape;
  const auto bound = model.bind(tape);
  const auto pass = model.forward(tape, bound, tape.constant(batch),
                                  constant_conditioning(tape, model, batch.extent(0), t));
  FlowResult result;
  result.output = like_input(pass.output.value(), z0);
  for (const Var& s : pass.states) result.states.push_back(like_input(s.value(), z0));
  return result;
}

UResult u_stack_forward(const Tensor& z0, const StackModel& model, double t) {
  if (model.fashion() != Fashion::u_shaped) throw std::invalid_argument("u_stack_forward needs a u-shaped model");
  const Tensor batch = as_batch(z0);
  Tape tape;
  const auto bound = model.bind(tape);
  const auto pass = model.forward(tape, bound, tape.constant(batch),
                                  constant_conditioning(tape, model, batch.extent(0), t));
  UResult result;
  result.output = like_input(pass.output.value(), z0);
  for (const Var& s : pass.states) result.encoder.push_back(like_input(s.value(), z0));
  for (const Var& d : pass.decoder) result.decoder.push_back(like_input(d.value(), z0));
  return result;
}

Tensor gating_residual_ode_rhs(const Tensor& z, double t, const std::function<Tensor(const Tensor&, double)>& mapper,
                               const Tensor& alpha, const Tensor& beta) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("gating_residual_ode_rhs: t must lie in [0, 1]");
  return alpha * mapper(z, t) + beta;
}

ScoreNetwork::ScoreNetwork(ScoreNetworkConfig config, Rng& rng)
    : config_(std::move(config)), stack_(config_.stack, rng) {
  if (config_.data_dim == 0) throw std::invalid_argument("data_dim must be positive");
  const std::size_t w = stack_.width();
  const std::size_t d = config_.data_dim;
  if (projects()) {
    head_.push_back({"head.in.w", gaussian_init(rng, {d, w}, 1.0 / std::sqrt(static_cast<double>(d))),
                     ParamGroup::theta, false});
    head_.push_back({"head.in.b", Tensor(Shape{w}, 0.0), ParamGroup::theta, false});
    head_.push_back({"head.out.w", gaussian_init(rng, {w, d}, 1.0 / std::sqrt(static_cast<double>(w))),
                     ParamGroup::theta, false});
    head_.push_back({"head.out.b", Tensor(Shape{d}, 0.0), ParamGroup::theta, false});
  }
  if (config_.num_classes > 0) {
    head_.push_back({"head.class_embed", gaussian_init(rng, {config_.num_classes, config_.stack.mapper.embed_dim}, 1.0),
                     ParamGroup::theta, false});
  }
}

std::vector<Parameter*> ScoreNetwork::parameters() {
  std::vector<Parameter*> out;
  for (Parameter& p : stack_.params()) out.push_back(&p);
  for (Parameter& p : head_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ScoreNetwork::parameters() const {
  std::vector<const Parameter*> out;
  for (const Parameter& p : stack_.params()) out.push_back(&p);
  for (const Parameter& p : head_) out.push_back(&p);
  return out;
}

ScoreNetwork::Binding ScoreNetwork::bind(Tape& tape) const {
  Binding b;
  b.stack = stack_.bind(tape);
  for (const Parameter& p : head_) b.head.push_back(tape.leaf(p.value));
  b.all = b.stack;
  b.all.insert(b.all.end(), b.head.begin(), b.head.end());
  return b;
}

ScoreNetwork::Pass ScoreNetwork::forward(Tape& tape, const Binding& bound, Var x, std::span<const double> times,
                                         std::span<const int> labels) const {
  if (x.shape().size() != 2 || x.shape()[1] != config_.data_dim) {
    throw std::invalid_argument("score network input must be [B, " + std::to_string(config_.data_dim) + "], got " +
                                to_string(x.shape()));
  }
  const std::size_t batch = x.shape()[0];
  if (times.size() != batch) throw std::invalid_argument("score network needs one time per batch row");
  Pass pass;
  const MapperSpec& m = config_.stack.mapper;
  if (m.conditioning != TimeConditioning::none && m.kind != MapperKind::linear_scalar) {
    // A shared time (the sampling case) is embedded once and broadcast over rows.
    const bool shared = labels.empty() && std::all_of(times.begin(), times.end(), [&](double t) { return t == times[0]; });
    Var emb = tape.constant(time_embedding(shared ? times.first(1) : times, m.embed_dim));
    if (config_.num_classes > 0 && !labels.empty()) {
      if (labels.size() != batch) throw std::invalid_argument("score network needs one label per batch row");
      std::vector<double> onehot(batch * config_.num_classes, 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= config_.num_classes) {
          throw std::invalid_argument("class label " + std::to_string(labels[b]) + " out of range");
        }
        onehot[b * config_.num_classes + static_cast<std::size_t>(labels[b])] = 1.0;
      }
      const Var table = bound.head.back();
      emb = add(emb, matmul(tape.constant(Tensor::matrix(batch, config_.num_classes, std::move(onehot))), table));
    }
    pass.cond.embedding = emb;
  }
  Var h = projects() ? affine(x, bound.head[0], bound.head[1]) : x;
  pass.stack = stack_.forward(tape, bound.stack, h, pass.cond);
  pass.output = projects() ? affine(pass.stack.output, bound.head[2], bound.head[3]) : pass.stack.output;
  return pass;
}

Tensor ScoreNetwork::evaluate(const Tensor& x, std::span<const double> times, std::span<const int> labels) const {
  Tape tape;
  const Binding bound = bind(tape);
  return forward(tape, bound, tape.constant(x), times, labels).output.value();
}

Tensor ScoreNetwork::evaluate(const Tensor& x, double t) const {
  const std::vector<double> times(x.extent(0), t);
  return evaluate(x, times);
}

}  // namespace nrdm
