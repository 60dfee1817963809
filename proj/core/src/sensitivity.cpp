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

#include "nrdm/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nrdm {

namespace {

Tensor vjp_of(const TapeMapper& f, const Tensor& z, double t, const Tensor& cotangent) {
  Tape tape;
  const Var zv = tape.leaf(z);
  const Var out = f(zv, t);
  if (out.shape() != z.shape()) {
    throw std::invalid_argument("sensitivity mapper changes shape " + to_string(z.shape()) + " -> " +
                                to_string(out.shape()));
  }
  return vjp(out, cotangent)[zv];
}

void check_pair(const Tensor& s, const Tensor& z) {
  if (s.shape() != z.shape()) {
    throw std::invalid_argument("sensitivity " + to_string(s.shape()) + " and state " + to_string(z.shape()) +
                                " differ in shape");
  }
}

template <typename Rhs>
SensitivityTrace integrate(const Tensor& s_start, const Trajectory& traj, Direction direction, bool gated, Rhs rhs) {
  const std::size_t n = traj.times.size();
  if (n < 2 || traj.states.size() != n) {
    throw std::invalid_argument("sensitivity integration needs a trajectory with >= 2 aligned nodes, got " +
                                std::to_string(n) + " times and " + std::to_string(traj.states.size()) + " states");
  }
  SensitivityTrace trace;
  trace.times = traj.times;
  trace.values.assign(n, Tensor());
  trace.gated = gated;
  if (direction == Direction::forward) {
    trace.values[0] = s_start;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const double dt = traj.times[k + 1] - traj.times[k];
      trace.values[k + 1] = trace.values[k] + dt * rhs(trace.values[k], traj.states[k], traj.times[k]);
    }
  } else {
    trace.values[n - 1] = s_start;
    for (std::size_t k = n - 1; k > 0; --k) {
      const double dt = traj.times[k - 1] - traj.times[k];
      trace.values[k - 1] = trace.values[k] + dt * rhs(trace.values[k], traj.states[k], traj.times[k]);
    }
  }
  return trace;
}

Tensor as_batch(const Tensor& z) {
  if (z.rank() == 1) return z.reshaped({1, z.size()});
  if (z.rank() == 2) return z;
  throw std::invalid_argument("stack input must be rank 1 or 2, got " + to_string(z.shape()));
}

Conditioning conditioning_at(Tape& tape, const StackModel& model, std::size_t batch, double t) {
  Conditioning cond;
  const MapperSpec& m = model.config().mapper;
  if (m.conditioning != TimeConditioning::none && m.kind != MapperKind::linear_scalar) {
    const std::vector<double> times(batch, t);
    cond.embedding = tape.constant(time_embedding(times, m.embed_dim));
  }
  return cond;
}

Tensor loss_gradient(const LossFn& loss, const Tensor& output) {
  Tape tape;
  const Var out = tape.leaf(output);
  return backward(loss(out))[out];
}

double gate_mean(const Tensor& g) { return sum(g) / static_cast<double>(g.size()); }

}  // namespace

Tensor sensitivity_ode_rhs_vanilla(const Tensor& s, const Tensor& z, double t, const TapeMapper& f) {
  check_pair(s, z);
  return -1.0 * vjp_of(f, z, t, s);
}

Tensor sensitivity_ode_rhs_gated(const Tensor& s, const Tensor& z, double t, const TapeMapper& f, const Tensor& alpha,
                                 const Tensor& beta) {
  check_pair(s, z);
  if (alpha.shape() != beta.shape()) throw std::invalid_argument("gated sensitivity needs equal gate shapes");
  return -1.0 * vjp_of(f, z, t, alpha * s) - beta * s;
}

SensitivityTrace integrate_sensitivity_vanilla(const Tensor& s_start, const Trajectory& trajectory,
                                               const TapeMapper& f, Direction direction) {
  return integrate(s_start, trajectory, direction, false, [&](const Tensor& s, const Tensor& z, double t) {
    return sensitivity_ode_rhs_vanilla(s, z, t, f);
  });
}

SensitivityTrace integrate_sensitivity_gated(const Tensor& s_start, const Trajectory& trajectory, const TapeMapper& f,
                                             const GateSchedule& gates, Direction direction) {
  return integrate(s_start, trajectory, direction, true, [&](const Tensor& s, const Tensor& z, double t) {
    const GatePair g = gates(t);
    return sensitivity_ode_rhs_gated(s, z, t, f, g.alpha, g.beta);
  });
}

AdjointCheck adjoint_vs_autodiff_check(const StackModel& model, const Tensor& z0, const LossFn& loss, double t) {
  const Tensor x = as_batch(z0);
  const std::size_t batch = x.extent(0);
  const auto& params = model.params();
  AdjointCheck result;

  std::vector<Tensor> auto_params;
  {
    Tape tape;
    const Var zv = tape.leaf(x);
    const auto bound = model.bind(tape);
    const auto pass = model.forward(tape, bound, zv, conditioning_at(tape, model, batch, t));
    const Gradients g = backward(loss(pass.output));
    result.autodiff_grad = g[zv];
    for (const Var& p : bound) auto_params.push_back(g[p]);
  }

  std::vector<Tensor> adj_params(params.size());
  auto collect = [&](const Gradients& g, std::span<const Var> bound, std::size_t unit) {
    const Unit& u = model.units()[unit];
    for (std::size_t idx : u.theta) adj_params[idx] = g[bound[idx]];
    adj_params[u.gate.alpha] = g[bound[u.gate.alpha]];
    adj_params[u.gate.beta] = g[bound[u.gate.beta]];
  };

  if (model.fashion() == Fashion::flow) {
    const FlowResult fwd = flow_stack_forward(x, model, t);
    Tensor s = loss_gradient(loss, fwd.output);
    for (std::size_t i = model.units().size(); i-- > 0;) {
      Tape tape;
      const Var zi = tape.leaf(fwd.states[i]);
      const auto bound = model.bind(tape);
      const Var out = model.unit_forward(bound, i, zi, zi, conditioning_at(tape, model, batch, t));
      const Gradients g = vjp(out, s);
      s = g[zi];
      collect(g, bound, i);
    }
    result.adjoint_grad = s;
  } else {
    const UResult fwd = u_stack_forward(x, model, t);
    const std::size_t L = model.depth();
    std::vector<Tensor> gs(L, Tensor(x.shape(), 0.0));
    Tensor carry = loss_gradient(loss, fwd.output);
    for (std::size_t i = 0; i + 1 < L; ++i) {
      Tape tape;
      const Var si = tape.leaf(fwd.encoder[i]);
      const Var dn = tape.leaf(fwd.decoder[i + 1]);
      const auto bound = model.bind(tape);
      const Var out = model.unit_forward(bound, 2 * i + 1, si, dn, conditioning_at(tape, model, batch, t));
      const Gradients g = vjp(out, carry);
      gs[i] = gs[i] + g[si];
      carry = g[dn];
      collect(g, bound, 2 * i + 1);
    }
    gs[L - 1] = gs[L - 1] + carry;
    for (std::size_t i = L - 1; i-- > 0;) {
      Tape tape;
      const Var si = tape.leaf(fwd.encoder[i]);
      const auto bound = model.bind(tape);
      const Var out = model.read_in_forward(bound, 2 * i, si, conditioning_at(tape, model, batch, t));
      const Gradients g = vjp(out, gs[i + 1]);
      gs[i] = gs[i] + g[si];
      collect(g, bound, 2 * i);
    }
    result.adjoint_grad = gs[0];
  }

  result.state_discrepancy = relative_error(result.autodiff_grad, result.adjoint_grad);
  for (std::size_t p = 0; p < params.size(); ++p) {
    result.param_discrepancy = std::max(result.param_discrepancy, relative_error(auto_params[p], adj_params[p]));
  }
  return result;
}

double SensitivityReport::min_normalized() const {
  double m = 1.0;
  for (const auto& r : rows) m = std::min(m, r.normalized);
  return m;
}

bool SensitivityReport::monotone() const {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].normalized < rows[i - 1].normalized) return false;
  }
  return true;
}

namespace {

SensitivityReport build_report(const StackModel& model, const StackModel::Pass& pass, const Gradients& g,
                               std::size_t step) {
  SensitivityReport report;
  report.step = step;
  const std::size_t depths = model.residual_count();
  double max_norm = 0.0;
  for (std::size_t i = 0; i < depths; ++i) {
    SensitivityRow row;
    row.depth = i;
    const GateParams& gate = model.units()[model.residual_unit(i)].gate;
    row.alpha = gate_mean(model.params()[gate.alpha].value);
    row.beta = gate_mean(model.params()[gate.beta].value);
    row.norm = l2_norm(g[pass.states[i]]);
    max_norm = std::max(max_norm, row.norm);
    report.rows.push_back(row);
  }
  for (auto& row : report.rows) row.normalized = max_norm > 0.0 ? row.norm / max_norm : 1.0;
  return report;
}

}  // namespace

SensitivityReport sensitivity_report(const StackModel& model, const Tensor& z0, const LossFn& loss, std::size_t step,
                                     double t) {
  const Tensor x = as_batch(z0);
  Tape tape;
  const Var zv = tape.leaf(x);
  const auto bound = model.bind(tape);
  const auto pass = model.forward(tape, bound, zv, conditioning_at(tape, model, x.extent(0), t));
  return build_report(model, pass, backward(loss(pass.output)), step);
}

SensitivityReport sensitivity_report(const ScoreNetwork& net, const Tensor& x, std::span<const double> times,
                                     const Tensor& target, std::size_t step) {
  Tape tape;
  const auto bound = net.bind(tape);
  const auto pass = net.forward(tape, bound, tape.leaf(x), times);
  if (target.shape() != pass.output.shape()) {
    throw std::invalid_argument("sensitivity target " + to_string(target.shape()) + " does not match output " +
                                to_string(pass.output.shape()));
  }
  const Var loss = mean(square(sub(pass.output, tape.constant(target))));
  return build_report(net.stack(), pass.stack, backward(loss), step);
}

CsvTable sensitivity_table(std::span<const SensitivityReport> reports) {
  CsvTable table;
  table.header = {"step", "depth", "alpha", "beta", "sensitivity_norm", "normalized"};
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      table.rows.push_back({std::to_string(rep.step), std::to_string(r.depth), format_double(r.alpha),
                            format_double(r.beta), format_double(r.norm), format_double(r.normalized)});
    }
  }
  return table;
}

}  // namespace nrdm
