#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "safecfg/concept_space.hpp"
#include "safecfg/metrics.hpp"
#include "safecfg/oracle.hpp"
#include "safecfg/sampler.hpp"
#include "safecfg/schedule.hpp"
#include "safecfg/score_net.hpp"

using namespace safecfg;

TEST_CASE("single-step schedule arithmetic") {
  NoiseSchedule s = NoiseSchedule::linear(1, 0.5, 0.5, /*enforce_bounds=*/false);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("default schedule satisfies its bounds") {
  NoiseSchedule s = make_schedule(DefaultSchedule::kT, DefaultSchedule::kBetaStart,
                                  DefaultSchedule::kBetaEnd);
  CHECK(s.alpha_bar(1) >= 0.99);
  CHECK(s.alpha_bar(s.t_count()) <= 0.01);
  for (int t = 1; t <= s.t_count(); ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
}

TEST_CASE("schedule that ends too hot is rejected at construction") {
  // T=200 with the SD-style 1e-4..0.02 ramp leaves alpha_bar(T) near 0.13
  CHECK_THROWS_WITH_AS(make_schedule(200, 1e-4, 0.02), doctest::Contains("above 0.01"),
                       std::runtime_error);
}

TEST_CASE("schedule endpoint validation") {
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.0, 0.5), std::runtime_error);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.5, 0.1), std::runtime_error);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.5, 1.0), std::runtime_error);
}

TEST_CASE("forward_sample arithmetic") {
  NoiseSchedule s = NoiseSchedule::linear(1, 0.75, 0.75, false);  // alpha_bar = 0.25
  double x0[2] = {2.0, 0.0};
  double eps0[2] = {0.0, 0.0};
  double eps[2] = {0.0, 4.0};
  double out[2];
  forward_sample(s, x0, eps0, 2, 1, out);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-15));
  forward_sample(s, x0, eps, 2, 1, out);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(std::sqrt(12.0)).epsilon(1e-15));
}

TEST_CASE("forward_sample approaches pure noise as alpha_bar vanishes") {
  NoiseSchedule s = NoiseSchedule::linear(1, 0.9999995, 0.9999995, false);
  double x0[1] = {3.0};
  double eps[1] = {-1.25};
  double out[1];
  forward_sample(s, x0, eps, 1, 1, out);
  CHECK(out[0] == doctest::Approx(eps[0]).epsilon(1e-2));
}

TEST_CASE("forward_sample rejects out-of-range t") {
  NoiseSchedule s = make_schedule(200, 1e-4, 0.05);
  double x0[1] = {0.0}, eps[1] = {0.0}, out[1];
  CHECK_THROWS_AS(forward_sample(s, x0, eps, 1, 0, out), std::runtime_error);
  CHECK_THROWS_AS(forward_sample(s, x0, eps, 1, 201, out), std::runtime_error);
}

TEST_CASE("ddpm step against hand evaluation") {
  // alpha_2 = 0.96, alpha_bar_2 = 0.25
  double beta1 = 1.0 - 0.25 / 0.96;
  NoiseSchedule s = NoiseSchedule::from_betas({beta1, 0.04}, false);
  CHECK(s.alpha(2) == doctest::Approx(0.96).epsilon(1e-12));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.25).epsilon(1e-12));
  double x[2] = {1.0, 0.0}, eps[2] = {1.0, 0.0}, noise[2] = {0.0, 0.0}, out[2];
  denoise_step_ddpm(s, x, eps, noise, 2, 2, out);
  double expect = (1.0 / std::sqrt(0.96)) * (1.0 - 0.04 / std::sqrt(0.75));
  CHECK(out[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(out[0] == doctest::Approx(0.9735).epsilon(1e-4));
  CHECK(out[1] == 0.0);
}

TEST_CASE("ddpm step with tiny beta and zero eps is near identity") {
  NoiseSchedule s = NoiseSchedule::from_betas({1e-9, 1e-9}, false);
  double x[1] = {0.8}, eps[1] = {0.0}, noise[1] = {0.0}, out[1];
  denoise_step_ddpm(s, x, eps, noise, 1, 2, out);
  CHECK(out[0] == doctest::Approx(0.8).epsilon(1e-8));
}

TEST_CASE("ddpm step determinism and t=0 rejection") {
  NoiseSchedule s = make_schedule(200, 1e-4, 0.05);
  double x[2] = {0.3, -0.7}, eps[2] = {0.1, 0.2}, noise[2] = {0.5, -0.5}, a[2], b[2];
  denoise_step_ddpm(s, x, eps, noise, 2, 57, a);
  denoise_step_ddpm(s, x, eps, noise, 2, 57, b);
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);
  CHECK_THROWS_AS(denoise_step_ddpm(s, x, eps, noise, 2, 0, a), std::runtime_error);
}

TEST_CASE("ddim step against hand evaluation") {
  // alpha_bar_1 = 0.64, alpha_bar_2 = 0.25
  NoiseSchedule s = NoiseSchedule::from_betas({0.36, 1.0 - 0.25 / 0.64}, false);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.64).epsilon(1e-12));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.25).epsilon(1e-12));
  double x[2] = {1.0, std::sqrt(12.0)}, eps[2] = {0.0, 4.0}, out[2];
  denoise_step_ddim(s, x, eps, 2, 2, 1, out);
  CHECK(out[0] == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(2.4).epsilon(1e-12));

  // t_prev = 0 has alpha_bar = 1: returns the x0 estimate
  double out0[2];
  denoise_step_ddim(s, x, eps, 2, 2, 0, out0);
  CHECK(out0[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(std::fabs((out0[1]) - (0.0)) <= 1e-12);

  CHECK_THROWS_AS(denoise_step_ddim(s, x, eps, 2, 1, 1, out), std::runtime_error);
}

TEST_CASE("exact-eps ddim inversion reproduces the forward trajectory") {
  NoiseSchedule s = make_schedule(200, 1e-4, 0.05);
  Rng rng(17);
  double x0[2] = {1.3, -0.4};
  double eps[2] = {rng.normal(), rng.normal()};
  for (int t = 200; t >= 2; t -= 7) {
    int t_prev = t - 7 > 0 ? t - 7 : 0;
    double xt[2], expect[2], got[2];
    forward_sample(s, x0, eps, 2, t, xt);
    if (t_prev == 0) {
      expect[0] = x0[0];
      expect[1] = x0[1];
    } else {
      forward_sample(s, x0, eps, 2, t_prev, expect);
    }
    denoise_step_ddim(s, xt, eps, 2, t, t_prev, got);
    CHECK(std::fabs(got[0] - expect[0]) <= 1e-9);
    CHECK(std::fabs(got[1] - expect[1]) <= 1e-9);
  }
}

TEST_CASE("ddim timestep subsequence is strictly increasing") {
  std::vector<int> ts = ddim_timesteps(200, 50);
  CHECK(ts.front() == 0);
  CHECK(ts.back() == 200);
  for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] > ts[i - 1]);
}

TEST_CASE("sampling the analytic single-gaussian field recovers its mean") {
  GeneratorSpec spec;
  spec.dim = 2;
  spec.concept_ids = {"c"};
  spec.concept_labels = {SafetyLabel::Clean};
  spec.concept_weights = {1.0};
  spec.mixtures = {ConceptMixture{{MixtureComponent{1.0, {2.0, 0.0}, {1.0, 0.0, 0.0, 1.0}}}}};
  MixtureOracle oracle(spec);
  NoiseSchedule sched = make_schedule(DefaultSchedule::kT, DefaultSchedule::kBetaStart,
                                      DefaultSchedule::kBetaEnd);

  EpsField field = [&](const double* x, int64_t n, int t, double* out) {
    for (int64_t i = 0; i < n; ++i) oracle.analytic_eps(x + 2 * i, 0, t, sched, out + 2 * i);
  };
  SamplerConfig cfg;
  cfg.mode = SamplerMode::Ddim;
  cfg.steps = 50;
  cfg.seed = 4;
  std::vector<double> samples = sample_batch(field, sched, 4000, 2, cfg);
  double mean[2] = {0.0, 0.0};
  for (int64_t i = 0; i < 4000; ++i) {
    mean[0] += samples[static_cast<size_t>(2 * i)];
    mean[1] += samples[static_cast<size_t>(2 * i + 1)];
  }
  mean[0] /= 4000.0;
  mean[1] /= 4000.0;
  CHECK(std::fabs(mean[0] - 2.0) < 0.1);
  CHECK(std::fabs(mean[1]) < 0.1);
}

TEST_CASE("sampler is invariant to batch partitioning") {
  GeneratorSpec spec;
  spec.dim = 1;
  spec.concept_ids = {"c"};
  spec.concept_labels = {SafetyLabel::Clean};
  spec.concept_weights = {1.0};
  spec.mixtures = {ConceptMixture{{MixtureComponent{1.0, {0.5}, {1.0}}}}};
  MixtureOracle oracle(spec);
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  EpsField field = [&](const double* x, int64_t n, int t, double* out) {
    for (int64_t i = 0; i < n; ++i) oracle.analytic_eps(x + i, 0, t, sched, out + i);
  };
  SamplerConfig cfg;
  cfg.mode = SamplerMode::Ddpm;
  cfg.steps = 200;
  cfg.seed = 9;
  std::vector<double> all = sample_batch(field, sched, 16, 1, cfg);
  std::vector<double> head = sample_batch(field, sched, 8, 1, cfg);
  for (int i = 0; i < 8; ++i) CHECK(all[static_cast<size_t>(i)] == head[static_cast<size_t>(i)]);
}

TEST_CASE("train_denoiser determinism and zero-epoch contract") {
  GeneratorSpec spec;
  spec.dim = 1;
  spec.concept_ids = {"c"};
  spec.concept_labels = {SafetyLabel::Clean};
  spec.concept_weights = {1.0};
  spec.mixtures = {ConceptMixture{{MixtureComponent{1.0, {1.0}, {0.25}}}}};
  Dataset ds = generate_dataset(spec, 128, 3);

  VocabSpec vs;
  vs.clean_concepts = {"c"};
  vs.harmful_concepts = {"f"};
  vs.token_len = 4;
  vs.embed_dim = 8;
  vs.tokens_per_class = 8;
  vs.seed = 2;
  BuiltVocab built = build_vocab(vs);
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);

  ScoreNetConfig nc;
  nc.x_dim = 1;
  nc.time_features = 4;
  nc.cond_dim = 8;
  nc.hidden = {16};
  Rng init(5);
  ScoreNetwork net(nc, init);
  uint64_t before = net.checksum();

  DenoiserTrainConfig tc;
  tc.epochs = 0;
  LossCurve c0 = train_denoiser(net, ds, built.vocab, built.table, sched, tc);
  CHECK(net.checksum() == before);
  CHECK(c0.epoch_loss.empty());

  tc.epochs = 3;
  tc.batch = 32;
  tc.seed = 77;
  ScoreNetwork n1 = net.clone();
  ScoreNetwork n2 = net.clone();
  LossCurve c1 = train_denoiser(n1, ds, built.vocab, built.table, sched, tc);
  LossCurve c2 = train_denoiser(n2, ds, built.vocab, built.table, sched, tc);
  CHECK(n1.checksum() == n2.checksum());
  CHECK(c1.epoch_loss == c2.epoch_loss);
  CHECK(c1.epoch_loss.size() == 3);
}

TEST_CASE("loss curve under a 10-epoch moving average does not increase") {
  GeneratorSpec spec;
  spec.dim = 1;
  spec.concept_ids = {"c"};
  spec.concept_labels = {SafetyLabel::Clean};
  spec.concept_weights = {1.0};
  spec.mixtures = {ConceptMixture{{MixtureComponent{1.0, {1.0}, {0.25}}}}};
  Dataset ds = generate_dataset(spec, 512, 3);
  VocabSpec vs;
  vs.clean_concepts = {"c"};
  vs.harmful_concepts = {"f"};
  vs.token_len = 4;
  vs.embed_dim = 8;
  vs.tokens_per_class = 8;
  vs.seed = 2;
  BuiltVocab built = build_vocab(vs);
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  ScoreNetConfig nc;
  nc.x_dim = 1;
  nc.time_features = 4;
  nc.cond_dim = 8;
  nc.hidden = {24};
  Rng init(5);
  ScoreNetwork net(nc, init);
  DenoiserTrainConfig tc;
  tc.epochs = 30;
  tc.batch = 64;
  tc.seed = 8;
  LossCurve curve = train_denoiser(net, ds, built.vocab, built.table, sched, tc);
  // 10-epoch moving average, 0.1% jitter allowance at the plateau
  std::vector<double> ma;
  for (size_t i = 0; i + 10 <= curve.epoch_loss.size(); ++i) {
    double acc = 0.0;
    for (size_t j = i; j < i + 10; ++j) acc += curve.epoch_loss[j];
    ma.push_back(acc / 10.0);
  }
  for (size_t i = 1; i < ma.size(); ++i) CHECK(ma[i] <= ma[i - 1] * 1.001);
}

TEST_CASE("analytic-field sampling matches direct mixture draws in energy distance") {
  GeneratorSpec spec;
  spec.dim = 2;
  spec.concept_ids = {"c", "f"};
  spec.concept_labels = {SafetyLabel::Clean, SafetyLabel::Harmful};
  spec.concept_weights = {0.65, 0.35};
  spec.mixtures = {ConceptMixture{{MixtureComponent{1.0, {2.5, 0.0}, {0.25, 0.0, 0.0, 0.25}}}},
                   ConceptMixture{{MixtureComponent{1.0, {-2.5, 0.0}, {0.25, 0.0, 0.0, 0.25}}}}};
  MixtureOracle oracle(spec);
  NoiseSchedule sched = make_schedule(DefaultSchedule::kT, DefaultSchedule::kBetaStart,
                                      DefaultSchedule::kBetaEnd);
  EpsField field = [&](const double* x, int64_t n, int t, double* out) {
    for (int64_t i = 0; i < n; ++i)
      oracle.analytic_eps(x + 2 * i, kPhiConditioning, t, sched, out + 2 * i);
  };
  Dataset direct = generate_dataset(spec, 10000, 999);
  for (SamplerMode mode : {SamplerMode::Ddpm, SamplerMode::Ddim}) {
    SamplerConfig cfg;
    cfg.mode = mode;
    cfg.steps = mode == SamplerMode::Ddim ? 50 : 200;
    cfg.seed = 11;
    std::vector<double> s = sample_batch(field, sched, 10000, 2, cfg);
    CHECK(energy_distance(s, direct.x_flat(), 2) <= 0.05);
  }
}
