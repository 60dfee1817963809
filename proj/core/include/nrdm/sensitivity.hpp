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

#include <functional>
#include <span>
#include <vector>

#include "nrdm/autodiff.hpp"
#include "nrdm/csv.hpp"
#include "nrdm/dynamics.hpp"
#include "nrdm/residual_stack.hpp"
#include "nrdm/tensor.hpp"

namespace nrdm {

enum class SensitivityKind { state, parameter };

/// s_t = dL/dz_t (or dL/dtheta) recorded on increasing times or depths.
struct SensitivityTrace {
  std::vector<double> times;
  std::vector<Tensor> values;
  SensitivityKind kind = SensitivityKind::state;
  bool gated = false;
};

/// Mapper as a tape function of state and time; Jacobians come from vjp.
using TapeMapper = std::function<Var(Var, double)>;

/// -s J_f(z, t), a vector-Jacobian product.
Tensor sensitivity_ode_rhs_vanilla(const Tensor& s, const Tensor& z, double t, const TapeMapper& f);
/// -(alpha s) J_f(z, t) - beta s.
Tensor sensitivity_ode_rhs_gated(const Tensor& s, const Tensor& z, double t, const TapeMapper& f, const Tensor& alpha,
                                 const Tensor& beta);

/// Forward: start at the first trajectory time. Backward: start at the last
/// one and step towards smaller t.
enum class Direction { forward, backward };

struct GatePair {
  Tensor alpha;
  Tensor beta;
};
using GateSchedule = std::function<GatePair(double)>;

/// Explicit Euler on the trajectory's own time nodes; `s_start` is the value
/// at the starting end. values[k] aligns with trajectory.times[k].
SensitivityTrace integrate_sensitivity_vanilla(const Tensor& s_start, const Trajectory& trajectory,
                                               const TapeMapper& f, Direction direction = Direction::forward);
SensitivityTrace integrate_sensitivity_gated(const Tensor& s_start, const Trajectory& trajectory, const TapeMapper& f,
                                             const GateSchedule& gates, Direction direction = Direction::forward);

/// Tape-level scalar loss of the stack output.
using LossFn = std::function<Var(Var)>;

struct AdjointCheck {
  Tensor autodiff_grad;
  Tensor adjoint_grad;
  /// relative_error of dL/dz0 between the two methods.
  double state_discrepancy = 0.0;
  /// Max over parameters of the per-tensor relative_error of dL/dtheta.
  double param_discrepancy = 0.0;
  double max_discrepancy() const { return std::max(state_discrepancy, param_discrepancy); }
};

/// dL/dz0 and dL/dtheta by (a) one tape through the unrolled stack and
/// (b) the discrete adjoint recursion s_i = s_{i+1} dz_{i+1}/dz_i, one unit
/// at a time.
AdjointCheck adjoint_vs_autodiff_check(const StackModel& model, const Tensor& z0, const LossFn& loss, double t = 0.0);

struct SensitivityRow {
  std::size_t depth = 0;
  double alpha = 0.0;
  double beta = 0.0;
  double norm = 0.0;
  double normalized = 0.0;
};

/// Per-depth ||dL/dz_i||_2 scaled by the max over depths, with the gates of
/// the unit reading z_i (per-channel gates are averaged). Flow stacks report
/// z_0..z_{L-1}; U-shaped stacks report the encoder states s_0..s_{L-2}
/// against their read-out gates.
struct SensitivityReport {
  std::size_t step = 0;
  std::vector<SensitivityRow> rows;

  double min_normalized() const;
  /// True when normalized values are non-decreasing in depth.
  bool monotone() const;
};

SensitivityReport sensitivity_report(const StackModel& model, const Tensor& z0, const LossFn& loss, std::size_t step,
                                     double t = 0.0);
/// Same, using the stack states inside a score network pass and the
/// score-matching loss against `target`.
SensitivityReport sensitivity_report(const ScoreNetwork& net, const Tensor& x, std::span<const double> times,
                                     const Tensor& target, std::size_t step);

/// Header `step,depth,alpha,beta,sensitivity_norm,normalized`.
CsvTable sensitivity_table(std::span<const SensitivityReport> reports);

}  // namespace nrdm
