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

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "nrdm/tensor.hpp"

namespace nrdm {

/**
 * Reverse-mode automatic differentiation over a tape.
 *
 * A Tape records every operation of one forward evaluation in topological
 * order. Var is a lightweight handle (tape pointer + node index); it stays
 * valid as long as the tape does. Tapes are single-threaded and are meant
 * to be discarded after backward().
 *
 * The primitive set is fixed. Mappers, losses and stacks are compositions
 * of these primitives, so the gradient checks in the test suite cover every
 * path gradients can take.
 */
enum class OpTag : std::uint8_t {
  leaf,
  constant,
  add,
  sub,
  mul,
  matmul,
  scale,
  affine,
  tanh,
  silu,
  softplus,
  square,
  sum,
  mean,
  broadcast_add,
};

std::string_view to_string(OpTag tag);
/// Parses an operation name such as "matmul"; throws std::invalid_argument
/// for unknown names.
OpTag parse_op_tag(std::string_view name);

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct Node {
  Tensor value;
  OpTag op = OpTag::constant;
  std::array<std::size_t, 3> parents{};
  std::uint8_t arity = 0;
  double scalar = 0.0;  // factor for OpTag::scale
  bool needs_grad = false;
};

class Tape {
 public:
  /// With `check_finite`, every recorded value is validated and a
  /// NumericalError names the op that produced NaN/Inf.
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Input excluded from differentiation.
  Var constant(Tensor value);

  /// Records `tag` applied to `inputs`. `scalar` is the factor for scale.
  Var apply(OpTag tag, std::span<const Var> inputs, double scalar = 1.0);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

 private:
  Var push(Node node);

  std::vector<Node> nodes_;
  bool check_finite_;
};

/// Gradient of one backward pass with respect to every node of a tape.
class Gradients {
 public:
  /// Gradient for `v`; a zero tensor of v's shape when `v` is not reachable
  /// from the differentiated output.
  Tensor operator[](Var v) const;
  bool reached(Var v) const;

 private:
  friend Gradients vjp(Var output, const Tensor& cotangent);
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> grads_;
};

/// Gradients of a scalar-shaped loss. Throws for non-scalar losses.
Gradients backward(Var loss);
/// Vector-Jacobian product: propagates `cotangent` (shaped like output).
Gradients vjp(Var output, const Tensor& cotangent);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
Var scale(Var a, double factor);
/// x[B,in] * w[in,out] + b[out]
Var affine(Var x, Var w, Var b);
Var tanh(Var a);
Var silu(Var a);
Var softplus(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
/// a + b where b broadcasts to a's shape (one-directional).
Var broadcast_add(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

/// Central differences (f(z + h e_i) - f(z - h e_i)) / 2h per coordinate.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& z, double h);

}  // namespace nrdm
