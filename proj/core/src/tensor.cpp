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

#include "nrdm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "broadcast.hpp"

namespace nrdm {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive, got " + to_string(shape_));
  }
  if (numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor shape " + to_string(shape_) + " needs " +
                                std::to_string(numel(shape_)) + " elements, got " +
                                std::to_string(data_.size()));
  }
}

Tensor::Tensor(Shape shape, double fill) : Tensor(shape, std::vector<double>(numel(shape), fill)) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw std::invalid_argument("at(row, col) needs a rank-2 tensor, got " + to_string(shape_));
  return data_[row * shape_[1] + col];
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() needs one element, shape is " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::row(std::size_t r) const {
  if (rank() != 2) throw std::invalid_argument("row() needs a rank-2 tensor, got " + to_string(shape_));
  const std::size_t cols = shape_[1];
  return Tensor(Shape{cols}, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                                 data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols)));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(std::string_view context) const {
  if (!all_finite()) {
    throw NumericalError("non-finite value produced by " + std::string(context) + " (shape " +
                         to_string(shape_) + ")");
  }
}

bool Tensor::bit_identical(const Tensor& other) const noexcept {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

namespace detail {

BroadcastPlan::BroadcastPlan(const Shape& a, const Shape& b) {
  if (a.size() > kMaxRank || b.size() > kMaxRank) {
    throw std::invalid_argument("broadcasting supports rank <= 4, got " + to_string(a) + " and " +
                                to_string(b));
  }
  std::array<std::size_t, kMaxRank> ae{1, 1, 1, 1};
  std::array<std::size_t, kMaxRank> be{1, 1, 1, 1};
  std::copy(a.begin(), a.end(), ae.begin() + static_cast<std::ptrdiff_t>(kMaxRank - a.size()));
  std::copy(b.begin(), b.end(), be.begin() + static_cast<std::ptrdiff_t>(kMaxRank - b.size()));
  for (std::size_t i = 0; i < kMaxRank; ++i) {
    if (ae[i] != be[i] && ae[i] != 1 && be[i] != 1) {
      throw std::invalid_argument("shape mismatch: cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    extent[i] = std::max(ae[i], be[i]);
  }
  std::size_t as = 1;
  std::size_t bs = 1;
  for (std::size_t i = kMaxRank; i-- > 0;) {
    a_stride[i] = ae[i] == 1 ? 0 : as;
    b_stride[i] = be[i] == 1 ? 0 : bs;
    as *= ae[i];
    bs *= be[i];
  }
  const std::size_t out_rank = std::max(a.size(), b.size());
  out.assign(extent.begin() + static_cast<std::ptrdiff_t>(kMaxRank - out_rank), extent.end());
}

}  // namespace detail

Shape broadcast_shape(const Shape& a, const Shape& b) { return detail::BroadcastPlan(a, b).out; }

namespace {

template <typename Op>
Tensor binary(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(a[i], b[i]);
    return Tensor(a.shape(), std::move(out));
  }
  detail::BroadcastPlan plan(a.shape(), b.shape());
  std::vector<double> out(numel(plan.out));
  auto ad = a.data();
  auto bd = b.data();
  plan.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = op(ad[ia], bd[ib]); });
  return Tensor(plan.out, std::move(out));
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x + y; });
}
Tensor operator-(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x - y; });
}
Tensor operator*(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x * y; });
}

Tensor operator*(double s, const Tensor& a) {
  std::vector<double> out = a.to_vector();
  for (double& v : out) v *= s;
  return Tensor(a.shape(), std::move(out));
}

Tensor map(const Tensor& a, double (*fn)(double)) {
  std::vector<double> out = a.to_vector();
  for (double& v : out) v = fn(v);
  return Tensor(a.shape(), std::move(out));
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows needs at least one row");
  const std::size_t cols = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * cols);
  for (const Tensor& r : rows) {
    if (r.size() != cols) throw std::invalid_argument("stack_rows: rows have different lengths");
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return Tensor::matrix(rows.size(), cols, std::move(out));
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double relative_error(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("relative_error: size mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  const double scale = std::max(max_abs(a), max_abs(b));
  if (scale == 0.0) return diff;
  return diff / scale;
}

}  // namespace nrdm
