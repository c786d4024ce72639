#pragma once

#include <cstdint>
#include <vector>

#include "safecfg/tensor.hpp"

namespace safecfg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first/second moment accumulators with bias correction.
// Moments are allocated to match the parameter shapes at construction and
// the update is a pure function of (params, grads, state).
class AdamState {
 public:
  AdamState(const std::vector<Tensor>& params, AdamConfig cfg);

  // In-place Adam step. Throws on non-finite gradients with a diagnostic
  // naming the parameter index.
  void step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads);

  uint64_t step_count() const { return step_count_; }
  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  uint64_t step_count_ = 0;
};

}  // namespace safecfg
