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

#include "nrdm/data_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace nrdm {

namespace {

constexpr std::size_t kImageSide = 8;
constexpr std::size_t kImageClasses = 4;

void require_batch(const Tensor& x, std::string_view what) {
  if (x.rank() != 2 || x.extent(0) == 0) {
    throw std::invalid_argument(std::string(what) + " must be a non-empty batch [N, D], got " + to_string(x.shape()));
  }
}

void require_same_dim(const Tensor& a, const Tensor& b) {
  require_batch(a, "first batch");
  require_batch(b, "second batch");
  if (a.extent(1) != b.extent(1)) {
    throw std::invalid_argument("batches differ in dimension: " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
}

Tensor head_rows(const Tensor& x, std::size_t rows) {
  if (x.extent(0) <= rows) return x;
  const std::size_t d = x.extent(1);
  const auto v = x.data();
  return Tensor(Shape{rows, d}, std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rows * d)));
}

void image_pattern(std::size_t cls, Rng& rng, std::span<double> px) {
  std::fill(px.begin(), px.end(), 0.0);
  const std::size_t n = kImageSide;
  switch (cls) {
    case 0: {
      const std::size_t r = rng.index(n);
      for (std::size_t c = 0; c < n; ++c) px[r * n + c] = 1.0;
      break;
    }
    case 1: {
      const std::size_t c = rng.index(n);
      for (std::size_t r = 0; r < n; ++r) px[r * n + c] = 1.0;
      break;
    }
    case 2: {
      const std::size_t r0 = rng.index(n - 2);
      const std::size_t c0 = rng.index(n - 2);
      for (std::size_t r = r0; r < r0 + 3; ++r) {
        for (std::size_t c = c0; c < c0 + 3; ++c) px[r * n + c] = 1.0;
      }
      break;
    }
    default: {
      const bool anti = rng.uniform() < 0.5;
      for (std::size_t r = 0; r < n; ++r) px[r * n + (anti ? n - 1 - r : r)] = 1.0;
      break;
    }
  }
}

}  // namespace

std::string_view to_string(DatasetFamily f) {
  switch (f) {
    case DatasetFamily::gaussian_mixture_2d: return "gaussian-mixture-2d";
    case DatasetFamily::two_moons: return "two-moons";
    case DatasetFamily::swiss_roll_2d: return "swiss-roll-2d";
    case DatasetFamily::checkerboard_2d: return "checkerboard-2d";
    case DatasetFamily::image_grid: return "image-grid";
  }
  return "unknown";
}

DatasetFamily parse_dataset_family(std::string_view s) {
  for (auto f : {DatasetFamily::gaussian_mixture_2d, DatasetFamily::two_moons, DatasetFamily::swiss_roll_2d,
                 DatasetFamily::checkerboard_2d, DatasetFamily::image_grid}) {
    if (to_string(f) == s) return f;
  }
  throw std::invalid_argument("unknown dataset family '" + std::string(s) +
                              "' (expected gaussian-mixture-2d, two-moons, swiss-roll-2d, checkerboard-2d, "
                              "image-grid)");
}

void DatasetSpec::validate() const {
  if (size == 0) throw std::invalid_argument("dataset size must be positive");
  if (!(noise >= 0.0)) throw std::invalid_argument("dataset noise must be non-negative");
  if (family == DatasetFamily::gaussian_mixture_2d) {
    mixture.validate();
    if (mixture.dim() != 2) throw std::invalid_argument("gaussian-mixture-2d needs a 2-D mixture");
  }
}

std::size_t DatasetSpec::dim() const { return family == DatasetFamily::image_grid ? kImageSide * kImageSide : 2; }

std::size_t DatasetSpec::num_classes() const {
  switch (family) {
    case DatasetFamily::gaussian_mixture_2d: return mixture.components();
    case DatasetFamily::two_moons: return 2;
    case DatasetFamily::image_grid: return kImageClasses;
    default: return 0;
  }
}

Dataset sample_dataset(const DatasetSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw std::invalid_argument("sample_dataset needs n > 0");
  if (spec.labels && spec.num_classes() == 0) {
    throw std::invalid_argument("dataset family '" + std::string(to_string(spec.family)) + "' has no labels");
  }
  Rng rng(seed, 0x6461746173ull);
  Dataset out;
  std::vector<int> labels(n, 0);
  const std::size_t d = spec.dim();
  std::vector<double> x(n * d);
  switch (spec.family) {
    case DatasetFamily::gaussian_mixture_2d: {
      const Tensor s = sample_mixture(spec.mixture, n, rng, &labels);
      x = s.to_vector();
      break;
    }
    case DatasetFamily::two_moons:
      for (std::size_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i % 2);
        const double th = std::numbers::pi * rng.uniform();
        double a = cls == 0 ? std::cos(th) : 1.0 - std::cos(th);
        double b = cls == 0 ? std::sin(th) : 0.5 - std::sin(th);
        a += spec.noise * rng.normal() - 0.5;
        b += spec.noise * rng.normal() - 0.25;
        x[2 * i] = a;
        x[2 * i + 1] = b;
        labels[i] = cls;
      }
      break;
    case DatasetFamily::swiss_roll_2d:
      for (std::size_t i = 0; i < n; ++i) {
        const double th = 1.5 * std::numbers::pi * (1.0 + 2.0 * rng.uniform());
        x[2 * i] = th * std::cos(th) / 5.0 + spec.noise * rng.normal();
        x[2 * i + 1] = th * std::sin(th) / 5.0 + spec.noise * rng.normal();
      }
      break;
    case DatasetFamily::checkerboard_2d:
      // 4x4 board on [-2, 2]^2; cells with even (row + col) are filled.
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cell = rng.index(8);
        const std::size_t row = cell / 2;
        const std::size_t col = 2 * (cell % 2) + (row % 2);
        x[2 * i] = -2.0 + static_cast<double>(col) + rng.uniform();
        x[2 * i + 1] = -2.0 + static_cast<double>(row) + rng.uniform();
      }
      break;
    case DatasetFamily::image_grid:
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = rng.index(kImageClasses);
        std::span<double> px(x.data() + i * d, d);
        image_pattern(cls, rng, px);
        for (double& p : px) p = 2.0 * p - 1.0 + spec.noise * rng.normal();
        labels[i] = static_cast<int>(cls);
      }
      break;
  }
  out.x = Tensor(Shape{n, d}, std::move(x));
  if (spec.labels) out.labels = std::move(labels);
  return out;
}

CsvTable dataset_table(const Tensor& x, std::span<const int> labels) {
  require_batch(x, "dataset");
  const std::size_t n = x.extent(0);
  const std::size_t d = x.extent(1);
  if (!labels.empty() && labels.size() != n) throw std::invalid_argument("dataset_table: one label per row");
  CsvTable table;
  for (std::size_t j = 0; j < d; ++j) table.header.push_back("x" + std::to_string(j));
  if (!labels.empty()) table.header.push_back("label");
  const auto v = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> row;
    row.reserve(d + 1);
    for (std::size_t j = 0; j < d; ++j) row.push_back(format_double(v[i * d + j]));
    if (!labels.empty()) row.push_back(std::to_string(labels[i]));
    table.rows.push_back(std::move(row));
  }
  return table;
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein_1d needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double wa = 1.0 / static_cast<double>(a.size());
  const double wb = 1.0 / static_cast<double>(b.size());
  // Integrate |F_a - F_b| between consecutive points of the merged support.
  std::size_t i = 0, j = 0;
  double fa = 0.0, fb = 0.0;
  double prev = std::min(a.front(), b.front());
  double total = 0.0;
  while (i < a.size() || j < b.size()) {
    const double next = j >= b.size() || (i < a.size() && a[i] <= b[j]) ? a[i] : b[j];
    total += std::abs(fa - fb) * (next - prev);
    prev = next;
    while (i < a.size() && a[i] == next) {
      fa += wa;
      ++i;
    }
    while (j < b.size() && b[j] == next) {
      fb += wb;
      ++j;
    }
  }
  return total;
}

double sliced_wasserstein(const Tensor& a, const Tensor& b, std::size_t projections, std::uint64_t seed) {
  require_same_dim(a, b);
  if (projections == 0) throw std::invalid_argument("sliced_wasserstein needs at least one projection");
  const std::size_t d = a.extent(1);
  Rng rng(seed, 0x534c49434544ull);
  double total = 0.0;
  std::vector<double> u(d);
  auto project = [&](const Tensor& x) {
    const std::size_t n = x.extent(0);
    const auto v = x.data();
    std::vector<double> p(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) p[i] += v[i * d + k] * u[k];
    }
    return p;
  };
  for (std::size_t p = 0; p < projections; ++p) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& e : u) {
        e = rng.normal();
        norm += e * e;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& e : u) e /= norm;
    total += wasserstein_1d(project(a), project(b));
  }
  return total / static_cast<double>(projections);
}

double mmd_rbf(const Tensor& a, const Tensor& b, double bandwidth) {
  require_same_dim(a, b);
  if (!(bandwidth > 0.0)) throw std::invalid_argument("mmd_rbf needs bandwidth > 0");
  if (a.extent(0) < 2 || b.extent(0) < 2) throw std::invalid_argument("mmd_rbf needs at least 2 rows per batch");
  const std::size_t d = a.extent(1);
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  auto kernel_mean = [&](const Tensor& x, const Tensor& y, bool same) {
    const std::size_t n = x.extent(0);
    const std::size_t m = y.extent(0);
    const auto xv = x.data();
    const auto yv = y.data();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        if (same && i == j) continue;
        double q = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = xv[i * d + k] - yv[j * d + k];
          q += diff * diff;
        }
        s += std::exp(-q * inv);
      }
    }
    const double pairs = same ? static_cast<double>(n) * static_cast<double>(n - 1)
                              : static_cast<double>(n) * static_cast<double>(m);
    return s / pairs;
  };
  const double v = kernel_mean(a, a, true) + kernel_mean(b, b, true) - 2.0 * kernel_mean(a, b, false);
  return std::max(0.0, v);
}

double median_bandwidth(const Tensor& a, const Tensor& b, std::uint64_t seed) {
  require_same_dim(a, b);
  const std::size_t d = a.extent(1);
  const std::size_t total = a.extent(0) + b.extent(0);
  std::vector<std::size_t> pick(total);
  for (std::size_t i = 0; i < total; ++i) pick[i] = i;
  constexpr std::size_t kMax = 1000;
  if (total > kMax) {
    Rng rng(seed, 0x4D4544ull);
    for (std::size_t i = 0; i < kMax; ++i) std::swap(pick[i], pick[i + rng.index(total - i)]);
    pick.resize(kMax);
  }
  auto row = [&](std::size_t r) {
    return r < a.extent(0) ? a.data().subspan(r * d, d) : b.data().subspan((r - a.extent(0)) * d, d);
  };
  std::vector<double> dist;
  dist.reserve(pick.size() * (pick.size() - 1) / 2);
  for (std::size_t i = 0; i < pick.size(); ++i) {
    for (std::size_t j = i + 1; j < pick.size(); ++j) {
      const auto x = row(pick[i]);
      const auto y = row(pick[j]);
      double q = 0.0;
      for (std::size_t k = 0; k < d; ++k) q += (x[k] - y[k]) * (x[k] - y[k]);
      dist.push_back(std::sqrt(q));
    }
  }
  if (dist.empty()) return 1.0;
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  return *mid > 0.0 ? *mid : 1.0;
}

namespace {

double kl_of_counts(const std::vector<double>& p, const std::vector<double>& q, double np, double nq) {
  const double bins = static_cast<double>(p.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + 0.5) / (np + 0.5 * bins);
    const double qi = (q[i] + 0.5) / (nq + 0.5 * bins);
    kl += pi * std::log(pi / qi);
  }
  return std::max(0.0, kl);
}

}  // namespace

double histogram_kl(const Tensor& reference, const Tensor& model, std::size_t bins) {
  require_same_dim(reference, model);
  if (bins == 0) throw std::invalid_argument("histogram_kl needs bins > 0");
  const std::size_t d = reference.extent(1);
  std::vector<double> lo(d, INFINITY), hi(d, -INFINITY);
  for (const Tensor* x : {&reference, &model}) {
    const auto v = x->data();
    for (std::size_t i = 0; i < x->extent(0); ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        lo[k] = std::min(lo[k], v[i * d + k]);
        hi[k] = std::max(hi[k], v[i * d + k]);
      }
    }
  }
  auto bin_of = [&](double v, std::size_t k) {
    const double width = hi[k] - lo[k];
    if (!(width > 0.0)) return std::size_t{0};
    const auto b = static_cast<std::size_t>((v - lo[k]) / width * static_cast<double>(bins));
    return std::min(b, bins - 1);
  };
  const double na = static_cast<double>(reference.extent(0));
  const double nb = static_cast<double>(model.extent(0));
  if (d <= 2) {
    const std::size_t cells = d == 1 ? bins : bins * bins;
    std::vector<double> p(cells, 0.0), q(cells, 0.0);
    auto fill = [&](const Tensor& x, std::vector<double>& h) {
      const auto v = x.data();
      for (std::size_t i = 0; i < x.extent(0); ++i) {
        std::size_t c = bin_of(v[i * d], 0);
        if (d == 2) c = c * bins + bin_of(v[i * d + 1], 1);
        h[c] += 1.0;
      }
    };
    fill(reference, p);
    fill(model, q);
    return kl_of_counts(p, q, na, nb);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    std::vector<double> p(bins, 0.0), q(bins, 0.0);
    for (std::size_t i = 0; i < reference.extent(0); ++i) p[bin_of(reference.data()[i * d + k], k)] += 1.0;
    for (std::size_t i = 0; i < model.extent(0); ++i) q[bin_of(model.data()[i * d + k], k)] += 1.0;
    total += kl_of_counts(p, q, na, nb);
  }
  return total / static_cast<double>(d);
}

MetricReport compare_samples(const Tensor& reference, const Tensor& generated, std::uint64_t seed,
                             const MetricOptions& options) {
  require_same_dim(reference, generated);
  MetricReport r;
  r.n = generated.extent(0);
  r.seed = seed;
  r.sliced_wasserstein = sliced_wasserstein(reference, generated, options.projections, seed);
  const Tensor a = head_rows(reference, options.mmd_rows);
  const Tensor b = head_rows(generated, options.mmd_rows);
  r.mmd = mmd_rbf(a, b, median_bandwidth(a, b, seed));
  r.histogram_kl = histogram_kl(reference, generated, options.bins);
  return r;
}

CsvTable metric_table(std::span<const MetricReport> reports) {
  CsvTable t;
  t.header = {"n", "seed", "sliced_wasserstein", "mmd", "histogram_kl"};
  for (const auto& r : reports) {
    t.rows.push_back({std::to_string(r.n), std::to_string(r.seed), format_double(r.sliced_wasserstein),
                      format_double(r.mmd), format_double(r.histogram_kl)});
  }
  return t;
}

Generation eval_generated(const TimeFn& score, const Schedule& schedule, const Tensor& reference, std::size_t n,
                          Solver solver, std::size_t steps, std::uint64_t seed, const MetricOptions& options) {
  if (n == 0) throw std::invalid_argument("eval_generated needs n > 0");
  require_batch(reference, "reference");
  Rng rng = Rng(seed).split(0x5052494F52ull);
  const Tensor prior = sample_prior(schedule, n, reference.extent(1), rng);
  Generation g;
  g.samples = sample_pf_ode(schedule, score, prior, solver, steps);
  g.metrics = compare_samples(reference, g.samples, seed, options);
  return g;
}

}  // namespace nrdm
