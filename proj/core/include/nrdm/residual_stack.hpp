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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nrdm/autodiff.hpp"
#include "nrdm/rng.hpp"
#include "nrdm/tensor.hpp"

namespace nrdm {

enum class MapperKind { affine, mlp2, linear_scalar };
enum class Activation { tanh, silu };
enum class TimeConditioning { none, concat, film };
enum class Fashion { flow, u_shaped };
/// v0: z + a f(z) + b, v1: z + f(a z + b), v2: a z + f(z) + b,
/// v3: z + f(z), v4: z + a f(z).
enum class Variant { v0, v1, v2, v3, v4 };
enum class GateMode { scalar, per_channel };
enum class Branch { unified, left, right };
enum class ParamGroup { theta, gate };
enum class OutputKind { score, eps };

std::string_view to_string(MapperKind v);
std::string_view to_string(Activation v);
std::string_view to_string(TimeConditioning v);
std::string_view to_string(Fashion v);
std::string_view to_string(Variant v);
std::string_view to_string(GateMode v);
std::string_view to_string(Branch v);
std::string_view to_string(OutputKind v);
MapperKind parse_mapper_kind(std::string_view s);
Activation parse_activation(std::string_view s);
TimeConditioning parse_time_conditioning(std::string_view s);
Fashion parse_fashion(std::string_view s);
Variant parse_variant(std::string_view s);
GateMode parse_gate_mode(std::string_view s);
OutputKind parse_output_kind(std::string_view s);

struct Parameter {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::theta;
  bool frozen = false;
};

struct MapperSpec {
  MapperKind kind = MapperKind::mlp2;
  std::size_t width = 2;
  std::size_t hidden = 32;
  Activation activation = Activation::silu;
  TimeConditioning conditioning = TimeConditioning::concat;
  std::size_t embed_dim = 32;
};

/// Indices of a unit's gates inside the owning model's parameter list.
struct GateParams {
  std::size_t alpha = 0;
  std::size_t beta = 0;
  Branch branch = Branch::unified;
};

struct Unit {
  MapperSpec mapper;
  std::vector<std::size_t> theta;
  GateParams gate;
};

struct StackConfig {
  Fashion fashion = Fashion::flow;
  std::size_t depth = 4;
  MapperSpec mapper;
  Variant variant = Variant::v0;
  GateMode gate_mode = GateMode::scalar;
  double init_alpha = 1.0;
  double init_beta = 0.0;
  /// Std multiplier for the output layer of each mapper.
  double init_scale = 1.0;
  /// Initial coefficient of linear-scalar mappers.
  double linear_init = 1.0;
  /// Residual increment scale; 1/L turns a flow stack into the Euler
  /// discretization of the gating-residual ODE.
  double step = 1.0;
  bool freeze_gates = false;
};

/// Optional [B, embed_dim] conditioning fed to time-conditioned mappers.
struct Conditioning {
  std::optional<Var> embedding;
};

/// Sinusoidal embedding of times in [0, 1], shape [times.size(), dim].
Tensor time_embedding(std::span<const double> times, std::size_t dim);

/// A mapper as a tape-level function of its input.
using MapperFn = std::function<Var(Var)>;

/// Residual branch of one unit under `variant`. For flow stacks skip and
/// input are the same state; the U-shaped read-out passes the encoder skip
/// and the decoder state separately.
Var apply_residual(Variant variant, Var skip, Var input, Var alpha, Var beta, const MapperFn& f);
/// Read-in (encoder) branch of a U-shaped unit: the variant without a skip.
Var apply_read_in(Variant variant, Var input, Var alpha, Var beta, const MapperFn& f);

/**
 * Depth-L composition of gated residual units.
 *
 * Flow fashion holds L unified units and records states z_0..z_L. The
 * U-shaped fashion holds L-1 (read-in, read-out) pairs: the encoder maps
 * s_0..s_{L-1}, the decoder starts from d_{L-1} = s_{L-1} and unit i reads
 * out d_i = s_i + a_r f_r(d_{i+1}) + b_r, so every encoder state is
 * consumed once as a skip.
 */
class StackModel {
 public:
  StackModel(StackConfig config, Rng& rng);

  const StackConfig& config() const noexcept { return config_; }
  Fashion fashion() const noexcept { return config_.fashion; }
  std::size_t depth() const noexcept { return config_.depth; }
  Variant variant() const noexcept { return config_.variant; }
  std::size_t width() const noexcept { return config_.mapper.width; }

  /// Flow: unit i. U-shaped: read-in i at 2i, read-out i at 2i + 1.
  std::span<const Unit> units() const noexcept { return units_; }
  /// Units whose gates modulate the residual path (flow units or read-outs).
  std::size_t residual_unit(std::size_t i) const;
  std::size_t residual_count() const;

  std::vector<Parameter>& params() noexcept { return params_; }
  const std::vector<Parameter>& params() const noexcept { return params_; }
  std::size_t param_index(std::string_view name) const;

  void set_gates(std::size_t unit, const Tensor& alpha, const Tensor& beta);
  void set_all_gates(double alpha, double beta);
  void freeze_gates(bool frozen);

  /// One leaf per parameter, in params() order.
  std::vector<Var> bind(Tape& tape) const;

  struct Pass {
    Var output;
    /// Flow: z_0..z_L. U-shaped: encoder s_0..s_{L-1}.
    std::vector<Var> states;
    /// U-shaped only: d_0..d_{L-1}.
    std::vector<Var> decoder;
  };
  Pass forward(Tape& tape, std::span<const Var> bound, Var z0, const Conditioning& cond = {}) const;

  Var mapper(std::span<const Var> bound, std::size_t unit, Var z, const Conditioning& cond) const;
  /// One residual unit (flow unit or read-out) applied to (skip, input).
  Var unit_forward(std::span<const Var> bound, std::size_t unit, Var skip, Var input,
                   const Conditioning& cond) const;
  Var read_in_forward(std::span<const Var> bound, std::size_t unit, Var input, const Conditioning& cond) const;

 private:
  void add_unit(const std::string& prefix, Branch branch, Rng& rng);

  StackConfig config_;
  std::vector<Unit> units_;
  std::vector<Parameter> params_;
};

// Value-level entry points.
Tensor mrs_forward(const Tensor& z, const Tensor& alpha, const Tensor& beta, const MapperFn& f);
Tensor variant_forward(const Tensor& z, Variant variant, const Tensor& alpha, const Tensor& beta, const MapperFn& f);

struct FlowResult {
  Tensor output;
  std::vector<Tensor> states;
};
FlowResult flow_stack_forward(const Tensor& z0, const StackModel& model, double t = 0.0);

struct UResult {
  Tensor output;
  std::vector<Tensor> encoder;
  std::vector<Tensor> decoder;
};
UResult u_stack_forward(const Tensor& z0, const StackModel& model, double t = 0.0);

/// alpha(t) * F(z, t) + beta(t), the continuous-depth limit of flow stacking.
Tensor gating_residual_ode_rhs(const Tensor& z, double t, const std::function<Tensor(const Tensor&, double)>& mapper,
                               const Tensor& alpha, const Tensor& beta);

struct ScoreNetworkConfig {
  std::size_t data_dim = 2;
  StackConfig stack;
  std::size_t num_classes = 0;
  OutputKind output = OutputKind::score;
};

/**
 * The score network: optional input/output projections around a
 * StackModel when the data dimension differs from the stack width, a
 * sinusoidal time embedding and an optional class embedding added to it.
 */
class ScoreNetwork {
 public:
  ScoreNetwork(ScoreNetworkConfig config, Rng& rng);

  const ScoreNetworkConfig& config() const noexcept { return config_; }
  StackModel& stack() noexcept { return stack_; }
  const StackModel& stack() const noexcept { return stack_; }
  bool projects() const noexcept { return config_.data_dim != stack_.width(); }

  std::vector<Parameter>& head_params() noexcept { return head_; }
  const std::vector<Parameter>& head_params() const noexcept { return head_; }
  /// Stack parameters followed by head parameters.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  struct Binding {
    std::vector<Var> stack;
    std::vector<Var> head;
    std::vector<Var> all;
  };
  Binding bind(Tape& tape) const;

  struct Pass {
    Var output;
    StackModel::Pass stack;
    Conditioning cond;
  };
  Pass forward(Tape& tape, const Binding& bound, Var x, std::span<const double> times,
               std::span<const int> labels = {}) const;

  Tensor evaluate(const Tensor& x, std::span<const double> times, std::span<const int> labels = {}) const;
  Tensor evaluate(const Tensor& x, double t) const;

 private:
  ScoreNetworkConfig config_;
  StackModel stack_;
  std::vector<Parameter> head_;
};

}  // namespace nrdm
