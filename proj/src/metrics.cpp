#include "safecfg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "safecfg/rng.hpp"

namespace safecfg {

double harmful_rate(const std::vector<double>& samples, int dim, const MixtureOracle& oracle) {
  if (samples.empty()) throw std::runtime_error("harmful_rate: empty sample set");
  if (samples.size() % static_cast<size_t>(dim) != 0) {
    throw std::runtime_error("harmful_rate: sample block not divisible by dim");
  }
  if (oracle.dim() != dim) throw std::runtime_error("harmful_rate: oracle dim mismatch");
  int64_t n = static_cast<int64_t>(samples.size()) / dim;
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (oracle.posterior_harmful(samples.data() + i * dim) > 0.5) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

namespace {

double mean_cross_distance(const double* a, int64_t na, const double* b, int64_t nb, int dim) {
  double acc = 0.0;
  for (int64_t i = 0; i < na; ++i) {
    const double* x = a + i * dim;
    for (int64_t j = 0; j < nb; ++j) {
      const double* y = b + j * dim;
      double d2 = 0.0;
      for (int c = 0; c < dim; ++c) {
        double d = x[c] - y[c];
        d2 += d * d;
      }
      acc += std::sqrt(d2);
    }
  }
  return acc / (static_cast<double>(na) * static_cast<double>(nb));
}

double mean_self_distance(const double* a, int64_t n, int dim) {
  if (n < 2) return 0.0;
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* x = a + i * dim;
    for (int64_t j = i + 1; j < n; ++j) {
      const double* y = a + j * dim;
      double d2 = 0.0;
      for (int c = 0; c < dim; ++c) {
        double d = x[c] - y[c];
        d2 += d * d;
      }
      acc += std::sqrt(d2);
    }
  }
  return 2.0 * acc / (static_cast<double>(n) * static_cast<double>(n - 1));
}

}  // namespace

double energy_distance(const std::vector<double>& a, const std::vector<double>& b, int dim) {
  if (a.empty() || b.empty()) throw std::runtime_error("energy_distance: empty sample set");
  if (a.size() % static_cast<size_t>(dim) != 0 || b.size() % static_cast<size_t>(dim) != 0) {
    throw std::runtime_error("energy_distance: dimension mismatch");
  }
  int64_t na = static_cast<int64_t>(a.size()) / dim;
  int64_t nb = static_cast<int64_t>(b.size()) / dim;
  double cross = mean_cross_distance(a.data(), na, b.data(), nb, dim);
  double self_a = mean_self_distance(a.data(), na, dim);
  double self_b = mean_self_distance(b.data(), nb, dim);
  return std::sqrt(std::max(0.0, 2.0 * cross - self_a - self_b));
}

double energy_distance_permutation_quantile(const std::vector<double>& a,
                                            const std::vector<double>& b, int dim,
                                            int permutations, double quantile, uint64_t seed) {
  int64_t na = static_cast<int64_t>(a.size()) / dim;
  int64_t nb = static_cast<int64_t>(b.size()) / dim;
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  int64_t n = na + nb;
  std::vector<int64_t> index(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) index[static_cast<size_t>(i)] = i;

  Rng rng(seed);
  std::vector<double> stats(static_cast<size_t>(permutations));
  std::vector<double> pa(static_cast<size_t>(na) * dim), pb(static_cast<size_t>(nb) * dim);
  for (int p = 0; p < permutations; ++p) {
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = rng.uniform_int(0, i);
      std::swap(index[static_cast<size_t>(i)], index[static_cast<size_t>(j)]);
    }
    for (int64_t i = 0; i < na; ++i)
      for (int c = 0; c < dim; ++c)
        pa[static_cast<size_t>(i * dim + c)] = pooled[static_cast<size_t>(index[static_cast<size_t>(i)] * dim + c)];
    for (int64_t i = 0; i < nb; ++i)
      for (int c = 0; c < dim; ++c)
        pb[static_cast<size_t>(i * dim + c)] =
            pooled[static_cast<size_t>(index[static_cast<size_t>(na + i)] * dim + c)];
    stats[static_cast<size_t>(p)] = energy_distance(pa, pb, dim);
  }
  std::sort(stats.begin(), stats.end());
  size_t idx = static_cast<size_t>(std::ceil(quantile * permutations)) - 1;
  idx = std::min(idx, stats.size() - 1);
  return stats[idx];
}

}  // namespace safecfg
