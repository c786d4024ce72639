#pragma once

#include <vector>

namespace safecfg {

// Diffusion timetable: beta_t, alpha_t = 1 - beta_t, alpha_bar_t (running
// product) and sigma_t = sqrt(1 - alpha_bar_t), tabulated for t = 1..T with
// alpha_bar(0) == 1 by convention. Construction enforces: 0 < beta < 1,
// alpha_bar strictly decreasing, and with enforce_bounds (every production
// path) alpha_bar(1) >= 0.99 and alpha_bar(T) <= 0.01.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int t_count, double beta_start, double beta_end,
                              bool enforce_bounds = true);
  static NoiseSchedule from_betas(std::vector<double> betas, bool enforce_bounds = true);

  int t_count() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  double alpha_bar(int t) const;  // t in 0..T
  double sigma(int t) const;      // sqrt(1 - alpha_bar(t))

 private:
  NoiseSchedule(std::vector<double> beta, bool enforce_bounds);
  size_t index(int t) const;
  std::vector<double> beta_, alpha_, alpha_bar_;
};

inline NoiseSchedule make_schedule(int t_count, double beta_start, double beta_end) {
  return NoiseSchedule::linear(t_count, beta_start, beta_end);
}

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps, elementwise.
void forward_sample(const NoiseSchedule& sched, const double* x0, const double* eps, int k, int t,
                    double* x_t);

struct DefaultSchedule {
  static constexpr int kT = 200;
  static constexpr double kBetaStart = 1e-4;
  static constexpr double kBetaEnd = 0.08;
};

}  // namespace safecfg
