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
#include <cstddef>

#include "nrdm/tensor.hpp"

namespace nrdm::detail {

inline constexpr std::size_t kMaxRank = 4;

// Index plan for a broadcast binary op. Both operands are right-aligned into
// four axes; a broadcast axis gets stride 0 so the same element is revisited.
struct BroadcastPlan {
  Shape out;
  std::array<std::size_t, kMaxRank> extent{1, 1, 1, 1};
  std::array<std::size_t, kMaxRank> a_stride{0, 0, 0, 0};
  std::array<std::size_t, kMaxRank> b_stride{0, 0, 0, 0};

  BroadcastPlan(const Shape& a, const Shape& b);

  // Calls fn(out_index, a_index, b_index) in row-major output order.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    std::size_t o = 0;
    for (std::size_t i0 = 0; i0 < extent[0]; ++i0) {
      for (std::size_t i1 = 0; i1 < extent[1]; ++i1) {
        for (std::size_t i2 = 0; i2 < extent[2]; ++i2) {
          const std::size_t a_base = i0 * a_stride[0] + i1 * a_stride[1] + i2 * a_stride[2];
          const std::size_t b_base = i0 * b_stride[0] + i1 * b_stride[1] + i2 * b_stride[2];
          for (std::size_t i3 = 0; i3 < extent[3]; ++i3, ++o) {
            fn(o, a_base + i3 * a_stride[3], b_base + i3 * b_stride[3]);
          }
        }
      }
    }
  }
};

}  // namespace nrdm::detail
