#include "safecfg/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace safecfg {

NoiseSchedule::NoiseSchedule(std::vector<double> beta, bool enforce_bounds)
    : beta_(std::move(beta)) {
  if (beta_.empty()) throw std::runtime_error("schedule: empty");
  alpha_.resize(beta_.size());
  alpha_bar_.resize(beta_.size());
  double prod = 1.0;
  for (size_t i = 0; i < beta_.size(); ++i) {
    double b = beta_[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw std::runtime_error("schedule: beta out of (0,1) at t=" + std::to_string(i + 1));
    }
    alpha_[i] = 1.0 - b;
    prod *= alpha_[i];
    alpha_bar_[i] = prod;
    if (i > 0 && !(alpha_bar_[i] < alpha_bar_[i - 1])) {
      throw std::runtime_error("schedule: alpha_bar not strictly decreasing at t=" + std::to_string(i + 1));
    }
  }
  if (enforce_bounds && alpha_bar_.front() < 0.99) {
    throw std::runtime_error("schedule: alpha_bar(1) = " + std::to_string(alpha_bar_.front()) +
                             " below 0.99");
  }
  if (enforce_bounds && alpha_bar_.back() > 0.01) {
    throw std::runtime_error("schedule: alpha_bar(T) = " + std::to_string(alpha_bar_.back()) +
                             " above 0.01");
  }
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, bool enforce_bounds) {
  return NoiseSchedule(std::move(betas), enforce_bounds);
}

NoiseSchedule NoiseSchedule::linear(int t_count, double beta_start, double beta_end,
                                    bool enforce_bounds) {
  if (t_count < 1) throw std::runtime_error("schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::runtime_error("schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> beta(static_cast<size_t>(t_count));
  if (t_count == 1) {
    beta[0] = beta_start;
  } else {
    double step = (beta_end - beta_start) / static_cast<double>(t_count - 1);
    for (int t = 0; t < t_count; ++t) beta[static_cast<size_t>(t)] = beta_start + step * t;
  }
  return NoiseSchedule(std::move(beta), enforce_bounds);
}

size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > t_count()) {
    throw std::runtime_error("schedule: t=" + std::to_string(t) + " outside [1," +
                             std::to_string(t_count()) + "]");
  }
  return static_cast<size_t>(t - 1);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bar_[index(t)];
}

double NoiseSchedule::sigma(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

void forward_sample(const NoiseSchedule& sched, const double* x0, const double* eps, int k, int t,
                    double* x_t) {
  if (t < 1 || t > sched.t_count()) {
    throw std::runtime_error("forward_sample: t=" + std::to_string(t) + " outside [1," +
                             std::to_string(sched.t_count()) + "]");
  }
  double a = std::sqrt(sched.alpha_bar(t));
  double s = sched.sigma(t);
  for (int i = 0; i < k; ++i) x_t[i] = a * x0[i] + s * eps[i];
}

}  // namespace safecfg
