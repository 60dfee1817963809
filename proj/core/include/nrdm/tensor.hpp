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

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nrdm {

using Shape = std::vector<std::size_t>;

/// Raised when a computation produces NaN or Inf, or diverges.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. Immutable once constructed; all
/// arithmetic lives in the autodiff layer or in free helpers below.
class Tensor {
 public:
  /// Rank-0 zero.
  Tensor();
  Tensor(Shape shape, std::vector<double> data);
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const;

  std::span<const double> data() const noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t row, std::size_t col) const;
  /// Value of a single-element tensor.
  double item() const;

  /// Copy of the underlying storage.
  std::vector<double> to_vector() const { return data_; }

  Tensor reshaped(Shape shape) const;
  /// Row `r` of a rank-2 tensor as a rank-1 tensor.
  Tensor row(std::size_t r) const;

  bool all_finite() const noexcept;
  /// Throws NumericalError naming `context` if any element is NaN or Inf.
  void require_finite(std::string_view context) const;

  /// Exact storage comparison, distinguishing +0 and -0 and NaN payloads.
  bool bit_identical(const Tensor& other) const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Broadcast result shape of two operands (numpy rules, rank <= 4).
Shape broadcast_shape(const Shape& a, const Shape& b);

// Small value-level helpers used outside of taped computations.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor map(const Tensor& a, double (*fn)(double));
Tensor stack_rows(std::span<const Tensor> rows);

double max_abs(const Tensor& a);
double l2_norm(const Tensor& a);
double sum(const Tensor& a);
/// ||a - b||_inf / max(||a||_inf, ||b||_inf); zero when both are zero.
double relative_error(const Tensor& a, const Tensor& b);

}  // namespace nrdm
