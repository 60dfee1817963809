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

#include "nrdm/autodiff.hpp"

#include <cmath>
#include <string>

#include "broadcast.hpp"

namespace nrdm {

namespace {

constexpr std::array<std::pair<OpTag, std::string_view>, 15> kOpNames{{
    {OpTag::leaf, "leaf"},
    {OpTag::constant, "constant"},
    {OpTag::add, "add"},
    {OpTag::sub, "sub"},
    {OpTag::mul, "mul"},
    {OpTag::matmul, "matmul"},
    {OpTag::scale, "scale"},
    {OpTag::affine, "affine"},
    {OpTag::tanh, "tanh"},
    {OpTag::silu, "silu"},
    {OpTag::softplus, "softplus"},
    {OpTag::square, "square"},
    {OpTag::sum, "sum"},
    {OpTag::mean, "mean"},
    {OpTag::broadcast_add, "broadcast-add"},
}};

std::size_t arity_of(OpTag tag) {
  switch (tag) {
    case OpTag::leaf:
    case OpTag::constant:
      return 0;
    case OpTag::add:
    case OpTag::sub:
    case OpTag::mul:
    case OpTag::matmul:
    case OpTag::broadcast_add:
      return 2;
    case OpTag::affine:
      return 3;
    default:
      return 1;
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

template <typename Op>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(ad[i], bd[i]);
    return Tensor(a.shape(), std::move(out));
  }
  detail::BroadcastPlan plan(a.shape(), b.shape());
  std::vector<double> out(numel(plan.out));
  auto ad = a.data();
  auto bd = b.data();
  plan.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = op(ad[ia], bd[ib]); });
  return Tensor(plan.out, std::move(out));
}

template <typename Fn>
Tensor elementwise_unary(const Tensor& a, Fn fn) {
  std::vector<double> out(a.size());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(ad[i]);
  return Tensor(a.shape(), std::move(out));
}

void require_rank2(const Tensor& t, std::string_view op, std::string_view role) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": " + std::string(role) + " must be rank 2, got " +
                                to_string(t.shape()));
  }
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g.data() + i * n;
    double* crow = c.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    const double* grow = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

// Accumulates a gradient laid out like `out_shape` into an operand of
// `operand_shape`, summing over broadcast axes.
void accumulate_broadcast(std::vector<double>& dst, const Shape& operand_shape, const Shape& other_shape,
                          std::span<const double> g, bool operand_is_lhs) {
  if (dst.empty()) dst.assign(numel(operand_shape), 0.0);
  if (operand_shape.size() >= other_shape.size() && operand_shape == broadcast_shape(operand_shape, other_shape) &&
      numel(operand_shape) == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    return;
  }
  const detail::BroadcastPlan plan = operand_is_lhs ? detail::BroadcastPlan(operand_shape, other_shape)
                                                    : detail::BroadcastPlan(other_shape, operand_shape);
  plan.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
    dst[operand_is_lhs ? ia : ib] += g[o];
  });
}

}  // namespace

std::string_view to_string(OpTag tag) {
  for (const auto& [t, name] : kOpNames) {
    if (t == tag) return name;
  }
  return "unknown";
}

OpTag parse_op_tag(std::string_view name) {
  for (const auto& [t, n] : kOpNames) {
    if (n == name) return t;
  }
  throw std::invalid_argument("unsupported operation tag '" + std::string(name) + "'");
}

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("Var is not bound to a tape");
  return tape_->node(id_).value;
}

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("Var is not bound to a tape");
  return *tape_;
}

Var Tape::push(Node node) {
  if (check_finite_) node.value.require_finite(to_string(node.op));
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = OpTag::leaf;
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = OpTag::constant;
  n.needs_grad = false;
  return push(std::move(n));
}

Var Tape::apply(OpTag tag, std::span<const Var> inputs, double scalar) {
  if (tag == OpTag::leaf || tag == OpTag::constant) {
    throw std::invalid_argument("apply(): use Tape::leaf/constant to create inputs");
  }
  const std::size_t arity = arity_of(tag);
  if (inputs.size() != arity) {
    throw std::invalid_argument(std::string(to_string(tag)) + " expects " + std::to_string(arity) +
                                " inputs, got " + std::to_string(inputs.size()));
  }
  Node n;
  n.op = tag;
  n.arity = static_cast<std::uint8_t>(arity);
  n.scalar = scalar;
  for (std::size_t i = 0; i < arity; ++i) {
    if (&inputs[i].tape() != this) throw std::invalid_argument("apply(): input belongs to another tape");
    n.parents[i] = inputs[i].id();
    n.needs_grad = n.needs_grad || nodes_[inputs[i].id()].needs_grad;
  }
  const Tensor& a = nodes_[n.parents[0]].value;
  switch (tag) {
    case OpTag::add:
      n.value = elementwise_binary(a, nodes_[n.parents[1]].value, [](double x, double y) { return x + y; });
      break;
    case OpTag::sub:
      n.value = elementwise_binary(a, nodes_[n.parents[1]].value, [](double x, double y) { return x - y; });
      break;
    case OpTag::mul:
      n.value = elementwise_binary(a, nodes_[n.parents[1]].value, [](double x, double y) { return x * y; });
      break;
    case OpTag::broadcast_add: {
      const Tensor& b = nodes_[n.parents[1]].value;
      if (broadcast_shape(a.shape(), b.shape()) != a.shape()) {
        throw std::invalid_argument("broadcast-add: shape mismatch, " + to_string(b.shape()) +
                                    " does not broadcast to " + to_string(a.shape()));
      }
      n.value = elementwise_binary(a, b, [](double x, double y) { return x + y; });
      break;
    }
    case OpTag::matmul: {
      const Tensor& b = nodes_[n.parents[1]].value;
      require_rank2(a, "matmul", "lhs");
      require_rank2(b, "matmul", "rhs");
      if (a.extent(1) != b.extent(0)) {
        throw std::invalid_argument("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
      }
      const std::size_t m = a.extent(0), k = a.extent(1), cols = b.extent(1);
      std::vector<double> out(m * cols, 0.0);
      gemm_nn(a.data(), b.data(), out, m, k, cols);
      n.value = Tensor(Shape{m, cols}, std::move(out));
      break;
    }
    case OpTag::affine: {
      const Tensor& w = nodes_[n.parents[1]].value;
      const Tensor& b = nodes_[n.parents[2]].value;
      require_rank2(a, "affine", "input");
      require_rank2(w, "affine", "weight");
      if (a.extent(1) != w.extent(0)) {
        throw std::invalid_argument("affine: shape mismatch " + to_string(a.shape()) + " x " + to_string(w.shape()));
      }
      const std::size_t m = a.extent(0), k = a.extent(1), cols = w.extent(1);
      if (b.size() != cols || b.rank() != 1) {
        throw std::invalid_argument("affine: bias shape " + to_string(b.shape()) + " does not match output width " +
                                    std::to_string(cols));
      }
      std::vector<double> out(m * cols);
      for (std::size_t i = 0; i < m; ++i) {
        std::copy(b.data().begin(), b.data().end(), out.begin() + static_cast<std::ptrdiff_t>(i * cols));
      }
      gemm_nn(a.data(), w.data(), out, m, k, cols);
      n.value = Tensor(Shape{m, cols}, std::move(out));
      break;
    }
    case OpTag::scale:
      n.value = elementwise_unary(a, [scalar](double x) { return x * scalar; });
      break;
    case OpTag::tanh:
      n.value = elementwise_unary(a, [](double x) { return std::tanh(x); });
      break;
    case OpTag::silu:
      n.value = elementwise_unary(a, [](double x) { return x * sigmoid(x); });
      break;
    case OpTag::softplus:
      n.value = elementwise_unary(a, softplus_value);
      break;
    case OpTag::square:
      n.value = elementwise_unary(a, [](double x) { return x * x; });
      break;
    case OpTag::sum:
      n.value = Tensor::scalar(nrdm::sum(a));
      break;
    case OpTag::mean:
      n.value = Tensor::scalar(nrdm::sum(a) / static_cast<double>(a.size()));
      break;
    default:
      throw std::invalid_argument("unsupported operation tag '" + std::string(to_string(tag)) + "'");
  }
  return push(std::move(n));
}

Tensor Gradients::operator[](Var v) const {
  if (&v.tape() != tape_) throw std::invalid_argument("gradient requested for a Var of another tape");
  const auto& g = grads_.at(v.id());
  if (g.empty()) return Tensor(v.shape(), 0.0);
  return Tensor(v.shape(), g);
}

bool Gradients::reached(Var v) const { return &v.tape() == tape_ && !grads_.at(v.id()).empty(); }

Gradients backward(Var loss) {
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward() needs a scalar-shaped loss, got shape " + to_string(loss.shape()));
  }
  return vjp(loss, Tensor(loss.shape(), 1.0));
}

Gradients vjp(Var output, const Tensor& cotangent) {
  const Tape& tape = output.tape();
  if (cotangent.shape() != output.shape()) {
    throw std::invalid_argument("vjp: cotangent shape " + to_string(cotangent.shape()) + " does not match output " +
                                to_string(output.shape()));
  }
  Gradients result;
  result.tape_ = &tape;
  result.grads_.resize(tape.size());
  auto& grads = result.grads_;
  grads[output.id()] = cotangent.to_vector();

  auto grad_buffer = [&](std::size_t id) -> std::vector<double>& {
    auto& g = grads[id];
    if (g.empty()) g.assign(tape.node(id).value.size(), 0.0);
    return g;
  };

  for (std::size_t id = output.id() + 1; id-- > 0;) {
    const Node& node = tape.node(id);
    if (grads[id].empty() || !node.needs_grad || node.arity == 0) continue;
    const std::vector<double>& g = grads[id];
    const std::size_t p0 = node.parents[0];
    const std::size_t p1 = node.parents[1];
    const Node& n0 = tape.node(p0);
    switch (node.op) {
      case OpTag::add:
      case OpTag::broadcast_add:
      case OpTag::sub: {
        const Node& n1 = tape.node(p1);
        if (n0.needs_grad) accumulate_broadcast(grads[p0], n0.value.shape(), n1.value.shape(), g, true);
        if (n1.needs_grad) {
          if (node.op == OpTag::sub) {
            std::vector<double> neg(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
            accumulate_broadcast(grads[p1], n1.value.shape(), n0.value.shape(), neg, false);
          } else {
            accumulate_broadcast(grads[p1], n1.value.shape(), n0.value.shape(), g, false);
          }
        }
        break;
      }
      case OpTag::mul: {
        const Node& n1 = tape.node(p1);
        const auto ad = n0.value.data();
        const auto bd = n1.value.data();
        if (n0.value.shape() == n1.value.shape()) {
          if (n0.needs_grad) {
            auto& ga = grad_buffer(p0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
          }
          if (n1.needs_grad) {
            auto& gb = grad_buffer(p1);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
          }
        } else {
          detail::BroadcastPlan plan(n0.value.shape(), n1.value.shape());
          if (n0.needs_grad) {
            auto& ga = grad_buffer(p0);
            plan.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) { ga[ia] += g[o] * bd[ib]; });
          }
          if (n1.needs_grad) {
            auto& gb = grad_buffer(p1);
            plan.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) { gb[ib] += g[o] * ad[ia]; });
          }
        }
        break;
      }
      case OpTag::matmul: {
        const Node& n1 = tape.node(p1);
        const std::size_t m = n0.value.extent(0), k = n0.value.extent(1), cols = n1.value.extent(1);
        if (n0.needs_grad) gemm_nt(g, n1.value.data(), grad_buffer(p0), m, k, cols);
        if (n1.needs_grad) gemm_tn(n0.value.data(), g, grad_buffer(p1), m, k, cols);
        break;
      }
      case OpTag::affine: {
        const Node& nw = tape.node(p1);
        const std::size_t pb = node.parents[2];
        const Node& nb = tape.node(pb);
        const std::size_t m = n0.value.extent(0), k = n0.value.extent(1), cols = nw.value.extent(1);
        if (n0.needs_grad) gemm_nt(g, nw.value.data(), grad_buffer(p0), m, k, cols);
        if (nw.needs_grad) gemm_tn(n0.value.data(), g, grad_buffer(p1), m, k, cols);
        if (nb.needs_grad) {
          auto& gb = grad_buffer(pb);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
          }
        }
        break;
      }
      case OpTag::scale: {
        if (!n0.needs_grad) break;
        auto& ga = grad_buffer(p0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * node.scalar;
        break;
      }
      case OpTag::tanh: {
        if (!n0.needs_grad) break;
        auto& ga = grad_buffer(p0);
        const auto y = node.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case OpTag::silu: {
        if (!n0.needs_grad) break;
        auto& ga = grad_buffer(p0);
        const auto x = n0.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = sigmoid(x[i]);
          ga[i] += g[i] * (s + x[i] * s * (1.0 - s));
        }
        break;
      }
      case OpTag::softplus: {
        if (!n0.needs_grad) break;
        auto& ga = grad_buffer(p0);
        const auto x = n0.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid(x[i]);
        break;
      }
      case OpTag::square: {
        if (!n0.needs_grad) break;
        auto& ga = grad_buffer(p0);
        const auto x = n0.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * x[i] * g[i];
        break;
      }
      case OpTag::sum:
      case OpTag::mean: {
        if (!n0.needs_grad) break;
        auto& ga = grad_buffer(p0);
        const double factor = node.op == OpTag::mean ? g[0] / static_cast<double>(ga.size()) : g[0];
        for (double& v : ga) v += factor;
        break;
      }
      default:
        break;
    }
  }
  return result;
}

namespace {

Var apply1(OpTag tag, Var a, double scalar = 1.0) {
  const std::array<Var, 1> in{a};
  return a.tape().apply(tag, in, scalar);
}

Var apply2(OpTag tag, Var a, Var b) {
  const std::array<Var, 2> in{a, b};
  return a.tape().apply(tag, in);
}

}  // namespace

Var add(Var a, Var b) { return apply2(OpTag::add, a, b); }
Var sub(Var a, Var b) { return apply2(OpTag::sub, a, b); }
Var mul(Var a, Var b) { return apply2(OpTag::mul, a, b); }
Var matmul(Var a, Var b) { return apply2(OpTag::matmul, a, b); }
Var broadcast_add(Var a, Var b) { return apply2(OpTag::broadcast_add, a, b); }
Var scale(Var a, double factor) { return apply1(OpTag::scale, a, factor); }
Var tanh(Var a) { return apply1(OpTag::tanh, a); }
Var silu(Var a) { return apply1(OpTag::silu, a); }
Var softplus(Var a) { return apply1(OpTag::softplus, a); }
Var square(Var a) { return apply1(OpTag::square, a); }
Var sum(Var a) { return apply1(OpTag::sum, a); }
Var mean(Var a) { return apply1(OpTag::mean, a); }

Var affine(Var x, Var w, Var b) {
  const std::array<Var, 3> in{x, w, b};
  return x.tape().apply(OpTag::affine, in);
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& z, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_grad: step h must be positive");
  std::vector<double> probe = z.to_vector();
  std::vector<double> grad(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(Tensor(z.shape(), probe));
    probe[i] = orig - h;
    const double fm = f(Tensor(z.shape(), probe));
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalError("finite_difference_grad: non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor(z.shape(), std::move(grad));
}

}  // namespace nrdm
