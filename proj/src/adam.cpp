#include "safecfg/adam.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace safecfg {

AdamState::AdamState(const std::vector<Tensor>& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor& p : params) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void AdamState::step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::runtime_error("adam: parameter/gradient count mismatch");
  }
  if (step_count_ == std::numeric_limits<int64_t>::max()) {
    throw std::runtime_error("adam: step counter overflow");
  }
  step_count_ += 1;
  double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != m_[p].size()) {
      throw std::runtime_error("adam: gradient shape mismatch at parameter " + std::to_string(p));
    }
    double* w = params[p].data();
    const double* g = grads[p].data();
    double* m = m_[p].data();
    double* v = v_[p].data();
    for (size_t i = 0; i < m_[p].size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw std::runtime_error("adam: non-finite gradient at parameter " + std::to_string(p) +
                                 " index " + std::to_string(i));
      }
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = m[i] / c1;
      double vhat = v[i] / c2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace safecfg
