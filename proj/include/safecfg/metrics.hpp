#pragma once

#include <cstdint>
#include <vector>

#include "safecfg/oracle.hpp"

namespace safecfg {

// Fraction of samples with posterior p(harmful | x) > 0.5 under the
// label-pooled analytic mixture. Stands in for the paper-scale harm
// detectors; exact in this domain.
double harmful_rate(const std::vector<double>& samples, int dim, const MixtureOracle& oracle);

// Energy distance between two empirical distributions:
// sqrt(max(0, 2 E|x-y| - E|x-x'| - E|y-y'|)). Symmetric, zero iff the
// distributions agree in the large-sample limit. Stands in for FID.
double energy_distance(const std::vector<double>& a, const std::vector<double>& b, int dim);

// Null quantile of the energy distance under the no-difference hypothesis,
// estimated by pooled permutation resampling. Test oracle utility.
double energy_distance_permutation_quantile(const std::vector<double>& a,
                                            const std::vector<double>& b, int dim,
                                            int permutations, double quantile, uint64_t seed);

}  // namespace safecfg
