#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "safecfg/oracle.hpp"
#include "safecfg/schedule.hpp"

using namespace safecfg;

namespace {

GeneratorSpec two_concept_spec(double clean_weight = 0.65) {
  GeneratorSpec spec;
  spec.dim = 2;
  spec.concept_ids = {"c", "f"};
  spec.concept_labels = {SafetyLabel::Clean, SafetyLabel::Harmful};
  spec.concept_weights = {clean_weight, 1.0 - clean_weight};
  spec.mixtures = {
      ConceptMixture{{MixtureComponent{1.0, {2.5, 0.0}, {0.25, 0.0, 0.0, 0.25}}}},
      ConceptMixture{{MixtureComponent{1.0, {-2.5, 0.0}, {0.25, 0.0, 0.0, 0.25}}}},
  };
  spec.validate();
  return spec;
}

GeneratorSpec single_spec() {
  GeneratorSpec spec;
  spec.dim = 2;
  spec.concept_ids = {"c"};
  spec.concept_labels = {SafetyLabel::Clean};
  spec.concept_weights = {1.0};
  spec.mixtures = {ConceptMixture{{MixtureComponent{1.0, {2.0, 0.0}, {1.0, 0.0, 0.0, 1.0}}}}};
  return spec;
}

}  // namespace

TEST_CASE("analytic eps vanishes at the diffused mode point") {
  MixtureOracle oracle(single_spec());
  NoiseSchedule s = NoiseSchedule::linear(1, 0.75, 0.75, false);  // alpha_bar 0.25
  double x[2] = {std::sqrt(0.25) * 2.0, 0.0};
  double eps[2];
  oracle.analytic_eps(x, 0, 1, s, eps);
  CHECK(std::fabs(eps[0]) < 1e-12);
  CHECK(std::fabs(eps[1]) < 1e-12);
}

TEST_CASE("analytic eps closed form for a unit gaussian") {
  MixtureOracle oracle(single_spec());
  NoiseSchedule s = NoiseSchedule::linear(1, 0.75, 0.75, false);
  double x[2] = {2.0, 0.0};
  double eps[2];
  oracle.analytic_eps(x, 0, 1, s, eps);
  // diffused: N([1,0], 0.25*I + 0.75*I); eps = sqrt(0.75) * (x - [1,0])
  CHECK(eps[0] == doctest::Approx(std::sqrt(0.75)).epsilon(1e-12));
  CHECK(std::fabs((eps[1]) - (0.0)) <= 1e-12);
}

TEST_CASE("pure-noise limit returns x") {
  MixtureOracle oracle(two_concept_spec());
  NoiseSchedule s = NoiseSchedule::linear(1, 0.9999999, 0.9999999, false);
  double x[2] = {0.7, -1.3};
  double eps[2];
  oracle.analytic_eps(x, kPhiConditioning, 1, s, eps);
  CHECK(eps[0] == doctest::Approx(x[0]).epsilon(1e-3));
  CHECK(eps[1] == doctest::Approx(x[1]).epsilon(1e-3));
}

TEST_CASE("analytic eps equals -sigma times the fd gradient of log density") {
  MixtureOracle oracle(two_concept_spec());
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  Rng rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    int t = static_cast<int>(rng.uniform_int(1, 200));
    double x[2] = {rng.uniform(-4.0, 4.0), rng.uniform(-2.0, 2.0)};
    int cond = trial % 3 == 0 ? kPhiConditioning : static_cast<int>(rng.uniform_int(0, 1));
    double eps[2];
    oracle.analytic_eps(x, cond, t, sched, eps);
    double ab = sched.alpha_bar(t), sig = sched.sigma(t);
    for (int i = 0; i < 2; ++i) {
      double h = 1e-5;
      double xp[2] = {x[0], x[1]}, xm[2] = {x[0], x[1]};
      xp[i] += h;
      xm[i] -= h;
      double g = (oracle.log_density(xp, cond, ab) - oracle.log_density(xm, cond, ab)) / (2 * h);
      worst = std::max(worst, std::fabs(eps[i] - (-sig * g)));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("ideal ahfc targets") {
  MixtureOracle oracle(two_concept_spec());
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    double x[2] = {rng.uniform(-4.0, 4.0), rng.uniform(-2.0, 2.0)};
    int t = static_cast<int>(rng.uniform_int(1, 200));
    double eps_phi[2], eps_c[2], clean_t[2], harm_t[2];
    oracle.analytic_eps(x, kPhiConditioning, t, sched, eps_phi);
    oracle.analytic_eps(x, 1, t, sched, eps_c);
    oracle.ideal_ahfc_eps(x, 0, t, sched, SafetyLabel::Clean, clean_t);
    oracle.ideal_ahfc_eps(x, 1, t, sched, SafetyLabel::Harmful, harm_t);
    for (int i = 0; i < 2; ++i) {
      CHECK(clean_t[i] == eps_phi[i]);
      CHECK(harm_t[i] == doctest::Approx(2.0 * eps_c[i] - eps_phi[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("degenerate single concept: harmful ideal collapses to the conditional") {
  MixtureOracle oracle(single_spec());
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  double x[2] = {1.0, 0.5};
  double eps_c[2], harm_t[2];
  oracle.analytic_eps(x, 0, 37, sched, eps_c);
  oracle.ideal_ahfc_eps(x, 0, 37, sched, SafetyLabel::Harmful, harm_t);
  // conditional equals marginal, so 2 eps_c - eps_phi = eps_c
  CHECK(harm_t[0] == doctest::Approx(eps_c[0]).epsilon(1e-12));
  CHECK(harm_t[1] == doctest::Approx(eps_c[1]).epsilon(1e-12));
}

TEST_CASE("score identity check") {
  MixtureOracle oracle(two_concept_spec());
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  std::vector<std::pair<std::vector<double>, int>> grid;
  std::vector<int> ts{20, 60, 100, 140, 180};
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      grid.push_back({{-4.0 + 2.0 * i, -2.0 + 1.0 * j}, ts[static_cast<size_t>((i + j) % 5)]});

  SUBCASE("eta zero") {
    CHECK(score_identity_check(oracle, sched, 0.0, 1, SafetyLabel::Harmful, grid) <= 1e-6);
  }
  SUBCASE("clean branch reduces to the cfg identity") {
    CHECK(score_identity_check(oracle, sched, 1.0, 0, SafetyLabel::Clean, grid) <= 1e-4);
  }
  SUBCASE("harmful branch on the 5x5 grid") {
    CHECK(score_identity_check(oracle, sched, 1.0, 1, SafetyLabel::Harmful, grid) <= 1e-4);
  }
}

TEST_CASE("verify_tilt rejects tiny sample counts") {
  MixtureOracle oracle(two_concept_spec());
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  CHECK_THROWS_AS(verify_tilt(oracle, sched, 1.0, 999, 1, TiltTolerances{}), std::runtime_error);
}

TEST_CASE("verify_tilt at eta zero is an exact no-op") {
  MixtureOracle oracle(two_concept_spec());
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  TiltVerdict v = verify_tilt(oracle, sched, 0.0, 2000, 3, TiltTolerances{});
  CHECK(v.eta_zero_noop);
  CHECK(v.clean_tv_cfg_vs_safecfg == 0.0);
  CHECK(v.harmful_mass_cfg == v.harmful_mass_safecfg);
}

TEST_CASE("single-concept spec: tilt has no effect") {
  MixtureOracle oracle(single_spec());
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  TiltVerdict v = verify_tilt(oracle, sched, 1.0, 2000, 5, TiltTolerances{});
  CHECK(v.clean_tv_cfg_vs_safecfg <= 0.02);
  CHECK(v.harmful_mass_cfg == v.harmful_mass_safecfg);
}

TEST_CASE("two-gaussian tilt at eta one") {
  MixtureOracle oracle(two_concept_spec());
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  TiltVerdict v = verify_tilt(oracle, sched, 1.0, 2000, 7, TiltTolerances{});
  CHECK(v.pass_mass);
  CHECK(v.harmful_mass_safecfg <= 0.5 * v.harmful_mass_cfg);
  CHECK(v.pass_clean_tv);
  CHECK(v.tilt_normalizer_ok);
}

TEST_CASE("marginal moments pool concepts by weight") {
  MixtureOracle oracle(two_concept_spec(0.5));
  std::vector<double> mean, sd;
  oracle.marginal_moments(mean, sd);
  CHECK(std::fabs((mean[0]) - (0.0)) <= 1e-12);
  CHECK(std::fabs((mean[1]) - (0.0)) <= 1e-12);
  CHECK(sd[0] == doctest::Approx(std::sqrt(0.25 + 6.25)).epsilon(1e-12));
}

TEST_CASE("posterior is a proper probability and label weights add up") {
  MixtureOracle oracle(two_concept_spec());
  double left[2] = {-2.5, 0.0}, right[2] = {2.5, 0.0};
  CHECK(oracle.posterior_harmful(left) > 0.99);
  CHECK(oracle.posterior_harmful(right) < 0.01);
  CHECK(oracle.label_weight(SafetyLabel::Clean) == doctest::Approx(0.65));
  CHECK(oracle.label_weight(SafetyLabel::Harmful) == doctest::Approx(0.35));
}
