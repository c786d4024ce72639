#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "safecfg/metrics.hpp"

using namespace safecfg;

namespace {

GeneratorSpec asymmetric_spec() {
  GeneratorSpec spec;
  spec.dim = 2;
  spec.concept_ids = {"c", "f"};
  spec.concept_labels = {SafetyLabel::Clean, SafetyLabel::Harmful};
  spec.concept_weights = {0.7, 0.3};
  spec.mixtures = {
      ConceptMixture{{MixtureComponent{1.0, {1.0, 0.0}, {1.0, 0.0, 0.0, 1.0}}}},
      ConceptMixture{{MixtureComponent{1.0, {-1.0, 0.0}, {1.0, 0.0, 0.0, 1.0}}}},
  };
  return spec;
}

}  // namespace

TEST_CASE("harmful rate at the clean mode is zero") {
  MixtureOracle oracle(asymmetric_spec());
  std::vector<double> samples;
  for (int i = 0; i < 100; ++i) {
    samples.push_back(1.0);
    samples.push_back(0.0);
  }
  CHECK(harmful_rate(samples, 2, oracle) == 0.0);
}

TEST_CASE("symmetric split across symmetric modes is one half") {
  GeneratorSpec spec = asymmetric_spec();
  spec.concept_weights = {0.5, 0.5};
  MixtureOracle oracle(spec);
  std::vector<double> samples;
  for (int i = 0; i < 50; ++i) {
    samples.push_back(1.0);
    samples.push_back(0.3 * i);
    samples.push_back(-1.0);
    samples.push_back(0.3 * i);
  }
  CHECK(harmful_rate(samples, 2, oracle) == doctest::Approx(0.5));
}

TEST_CASE("empty sample set rejected") {
  MixtureOracle oracle(asymmetric_spec());
  std::vector<double> samples;
  CHECK_THROWS_AS(harmful_rate(samples, 2, oracle), std::runtime_error);
}

TEST_CASE("rate on mixture draws matches the numerically integrated expectation") {
  GeneratorSpec spec = asymmetric_spec();
  MixtureOracle oracle(spec);
  int64_t n = 20000;
  Dataset ds = generate_dataset(spec, n, 31);
  double rate = harmful_rate(ds.x_flat(), 2, oracle);

  // quadrature over a grid wide enough to hold all visible mass
  double expected = 0.0;
  int cells = 400;
  double lo = -8.0, hi = 8.0, h = (hi - lo) / cells;
  for (int i = 0; i < cells; ++i) {
    for (int j = 0; j < cells; ++j) {
      double x[2] = {lo + (i + 0.5) * h, lo + (j + 0.5) * h};
      if (oracle.posterior_harmful(x) > 0.5) {
        expected += std::exp(oracle.log_density(x, kPhiConditioning, 1.0)) * h * h;
      }
    }
  }
  CHECK(std::fabs(rate - expected) <= 2.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("energy distance basics") {
  Rng rng(3);
  std::vector<double> a, b;
  for (int i = 0; i < 500; ++i) {
    a.push_back(rng.normal());
    a.push_back(rng.normal());
  }
  b = a;
  CHECK(energy_distance(a, b, 2) == 0.0);

  std::vector<double> c;
  for (int i = 0; i < 400; ++i) {
    c.push_back(rng.normal() + 3.0);
    c.push_back(rng.normal());
  }
  double d_ab = energy_distance(a, c, 2);
  double d_ba = energy_distance(c, a, 2);
  CHECK(d_ab == doctest::Approx(d_ba).epsilon(1e-12));
  CHECK(d_ab > 0.5);

  CHECK_THROWS_AS(energy_distance(a, std::vector<double>{1.0}, 2), std::runtime_error);
  CHECK_THROWS_AS(energy_distance(std::vector<double>{}, a, 2), std::runtime_error);
}

TEST_CASE("same distribution stays below the permutation null quantile") {
  Rng rng(5);
  std::vector<double> a, b;
  for (int i = 0; i < 800; ++i) {
    a.push_back(rng.normal());
    a.push_back(rng.normal());
    b.push_back(rng.normal());
    b.push_back(rng.normal());
  }
  double stat = energy_distance(a, b, 2);
  double null95 = energy_distance_permutation_quantile(a, b, 2, 100, 0.95, 17);
  CHECK(stat < null95);
}

TEST_CASE("unit mean shift exceeds the permutation null quantile") {
  Rng rng(6);
  std::vector<double> a, b;
  for (int i = 0; i < 800; ++i) {
    a.push_back(rng.normal());
    a.push_back(rng.normal());
    b.push_back(rng.normal() + 1.0);
    b.push_back(rng.normal());
  }
  double stat = energy_distance(a, b, 2);
  double null95 = energy_distance_permutation_quantile(a, b, 2, 100, 0.95, 18);
  CHECK(stat > null95);
}
