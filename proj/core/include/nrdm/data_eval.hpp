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

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "nrdm/csv.hpp"
#include "nrdm/dynamics.hpp"
#include "nrdm/tensor.hpp"

namespace nrdm {

enum class DatasetFamily { gaussian_mixture_2d, two_moons, swiss_roll_2d, checkerboard_2d, image_grid };
std::string_view to_string(DatasetFamily f);
DatasetFamily parse_dataset_family(std::string_view s);

struct DatasetSpec {
  DatasetFamily family = DatasetFamily::gaussian_mixture_2d;
  /// Used by gaussian-mixture-2d.
  GaussianMixture mixture = GaussianMixture::symmetric_pair(2, 1.5, 0.25);
  /// Gaussian jitter for two-moons, swiss-roll and image-grid pixels.
  double noise = 0.05;
  std::size_t size = 4096;
  std::uint64_t seed = 0;
  bool labels = false;

  void validate() const;
  std::size_t dim() const;
  /// 0 when the family carries no labels.
  std::size_t num_classes() const;
};

struct Dataset {
  /// [n, dim]
  Tensor x;
  /// Empty unless labels were requested.
  std::vector<int> labels;
};

/// Deterministic in (spec, n, seed). spec.size and spec.seed are not used
/// here; they describe the training set drawn by the training loop.
Dataset sample_dataset(const DatasetSpec& spec, std::size_t n, std::uint64_t seed);

/// Columns x0..x{D-1} plus `label` when labels are present.
CsvTable dataset_table(const Tensor& x, std::span<const int> labels = {});

/// 1-D Wasserstein-1 between two empirical distributions.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);
/// Mean W1 over random unit projections.
double sliced_wasserstein(const Tensor& a, const Tensor& b, std::size_t projections = 128, std::uint64_t seed = 0);
/// Unbiased RBF MMD^2 with k(x, y) = exp(-|x - y|^2 / (2 h^2)), clipped at 0.
double mmd_rbf(const Tensor& a, const Tensor& b, double bandwidth);
/// Median pairwise distance of the pooled batches (at most 1000 rows used).
double median_bandwidth(const Tensor& a, const Tensor& b, std::uint64_t seed = 0);
/// KL(reference || model) between histograms on a shared grid: joint for
/// D <= 2, mean over marginals otherwise. Bins get a 0.5 pseudo-count.
double histogram_kl(const Tensor& reference, const Tensor& model, std::size_t bins = 32);

struct MetricOptions {
  std::size_t projections = 128;
  /// MMD uses the first mmd_rows rows of each batch (quadratic cost).
  std::size_t mmd_rows = 2000;
  std::size_t bins = 32;
};

struct MetricReport {
  double sliced_wasserstein = 0.0;
  double mmd = 0.0;
  double histogram_kl = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

MetricReport compare_samples(const Tensor& reference, const Tensor& generated, std::uint64_t seed,
                             const MetricOptions& options = {});
/// Header `n,seed,sliced_wasserstein,mmd,histogram_kl`.
CsvTable metric_table(std::span<const MetricReport> reports);

struct Generation {
  Tensor samples;
  MetricReport metrics;
};

/// Draws n prior samples at t = 1, integrates the PF-ODE back to t = 0 with
/// `score`, and compares the result with `reference`.
Generation eval_generated(const TimeFn& score, const Schedule& schedule, const Tensor& reference, std::size_t n,
                          Solver solver, std::size_t steps, std::uint64_t seed, const MetricOptions& options = {});

}  // namespace nrdm
