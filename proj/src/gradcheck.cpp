#include "safecfg/gradcheck.hpp"

#include <cmath>
#include <sstream>

namespace safecfg {

GradCheckReport finite_diff_check(const GraphBuilder& builder, std::vector<Tensor> params,
                                  double tol, double step) {
  GradCheckReport report;

  for (Tensor& p : params) p.set_requires_grad(true);
  Tape tape;
  Tensor loss = builder(&tape, params);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(tape.grad(p));

  for (size_t p = 0; p < params.size(); ++p) {
    double* w = params[p].data();
    for (int64_t i = 0; i < params[p].numel(); ++i) {
      double saved = w[i];
      w[i] = saved + step;
      double up = builder(nullptr, params).value();
      w[i] = saved - step;
      double down = builder(nullptr, params).value();
      w[i] = saved;
      double numeric = (up - down) / (2.0 * step);
      double a = analytic[p][static_cast<size_t>(i)];
      double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
      double rel = std::fabs(a - numeric) / denom;
      report.entries_checked += 1;
      if (rel > report.max_rel_err) report.max_rel_err = rel;
      if (rel > tol) {
        std::ostringstream os;
        os << "param " << p << " entry " << i << ": analytic " << a << " numeric " << numeric
           << " rel_err " << rel;
        report.failures.push_back(os.str());
      }
    }
  }
  return report;
}

}  // namespace safecfg
