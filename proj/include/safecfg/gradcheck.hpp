#pragma once

#include <functional>
#include <string>
#include <vector>

#include "safecfg/tensor.hpp"

namespace safecfg {

// Builds a scalar loss from the given parameters. Must be deterministic:
// called once with a tape for the analytic pass and repeatedly without one
// for the central-difference probes.
using GraphBuilder = std::function<Tensor(Tape*, const std::vector<Tensor>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t entries_checked = 0;
  std::vector<std::string> failures;  // one line per offending entry
  bool passed(double tol) const { return max_rel_err <= tol; }
};

// Central finite differences against the tape gradient, entry by entry.
// Relative error uses max(1, |analytic|, |numeric|) as the denominator so
// near-zero gradients are compared absolutely.
GradCheckReport finite_diff_check(const GraphBuilder& builder, std::vector<Tensor> params,
                                  double tol, double step = 1e-5);

}  // namespace safecfg
