#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "safecfg/schedule.hpp"

namespace safecfg {

enum class SamplerMode { Ddpm, Ddim };

const char* sampler_mode_name(SamplerMode m);
SamplerMode sampler_mode_from_name(const std::string& s);

struct SamplerConfig {
  SamplerMode mode = SamplerMode::Ddim;
  int steps = 50;         // inference step count, <= T
  double ddim_eta = 0.0;  // 0 = deterministic
  uint64_t seed = 0;

  void validate(int t_count) const;
};

// One ancestral DDPM update. mean = (x_t - (1-a_t)/sqrt(1-ab_t) * eps_hat) /
// sqrt(a_t); variance beta_t. At t == 1 no noise is added.
void denoise_step_ddpm(const NoiseSchedule& sched, const double* x_t, const double* eps_hat,
                       const double* noise, int k, int t, double* x_prev);

// Deterministic DDIM update from t to t_prev < t: predict x0 then re-noise
// to the earlier level with the same eps_hat.
void denoise_step_ddim(const NoiseSchedule& sched, const double* x_t, const double* eps_hat,
                       int k, int t, int t_prev, double* x_prev);

// Batched guided epsilon: fills eps_out (n * k) for the whole batch at
// timestep t.
using EpsField = std::function<void(const double* x, int64_t n, int t, double* eps_out)>;

// Draws n samples of dimension k. Initial noise and per-step DDPM noise come
// from per-sample streams forked from config.seed, so results do not depend
// on how a batch is partitioned.
std::vector<double> sample_batch(const EpsField& eps_field, const NoiseSchedule& sched, int64_t n,
                                 int k, const SamplerConfig& config);

// Strictly increasing DDIM step subsequence 0 = t_0 < ... < t_steps = T.
std::vector<int> ddim_timesteps(int t_count, int steps);

}  // namespace safecfg
