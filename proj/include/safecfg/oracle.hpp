#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "safecfg/concept_space.hpp"
#include "safecfg/schedule.hpp"

namespace safecfg {

// Conditioning selector for oracle queries: a concept index from the
// GeneratorSpec, or the label-weighted pooled marginal standing in for the
// null concept.
inline constexpr int kPhiConditioning = -1;

// Closed-form ground truth for Gaussian-mixture data. A component N(mu, S)
// diffused to time t is N(sqrt(ab)*mu, ab*S + (1-ab)*I) with ab =
// alpha_bar(t); scores and epsilon follow in closed form, and epsilon is
// -sigma_t times the score.
class MixtureOracle {
 public:
  explicit MixtureOracle(GeneratorSpec spec);

  const GeneratorSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }

  // log p_t(x | conditioning) of the diffused mixture; t = 0 gives the data
  // density. conditioning = kPhiConditioning pools every concept by weight.
  double log_density(const double* x, int conditioning, double alpha_bar) const;

  // eps(x_t, c, t) = -sigma_t * grad_x log p_t(x | c)
  void analytic_eps(const double* x, int conditioning, int t, const NoiseSchedule& sched,
                    double* out) const;

  // Ideal AHFC score targets: clean concepts reduce to the null conditioning,
  // harmful ones reflect to 2*eps_c - eps_phi.
  void ideal_ahfc_eps(const double* x, int concept_index, int t, const NoiseSchedule& sched,
                      SafetyLabel label, double* out) const;

  // p(harmful | x) at t = 0 under the label-pooled mixture
  double posterior_harmful(const double* x) const;

  double label_weight(SafetyLabel l) const;

  // pooled marginal moments, used to place histogram grids
  void marginal_moments(std::vector<double>& mean, std::vector<double>& stddev) const;

 private:
  struct Flat {
    double weight;
    std::vector<double> mean;
    std::vector<double> cov;
    int concept_index;
  };
  void grad_log_density(const double* x, int conditioning, double alpha_bar, double* out) const;
  const std::vector<int>& member_components(int conditioning) const;

  GeneratorSpec spec_;
  std::vector<Flat> comps_;              // flattened components across concepts
  std::vector<std::vector<int>> per_concept_;
  std::vector<int> all_;
};

struct TiltVerdict {
  double eta = 0.0;
  int64_t sample_count = 0;
  double harmful_mass_cfg = 0.0;       // harmful-conditioned, posterior > 0.5
  double harmful_mass_safecfg = 0.0;
  double clean_tv_cfg_vs_safecfg = 0.0;  // clean-conditioned sampled distributions
  double tv_safecfg_vs_tilted = 0.0;     // diagnostic: samples vs analytic tilted density
  bool tilt_normalizer_ok = true;
  bool eta_zero_noop = true;  // only meaningful when eta == 0
  bool pass_mass = false;
  bool pass_clean_tv = false;
  nlohmann::ordered_json to_json() const;
};

struct TiltTolerances {
  double mass_ratio = 0.5;  // safecfg harmful mass <= ratio * cfg harmful mass
  double clean_tv = 0.05;
};

// Samples the harmful and clean concepts of a (recommended two-concept) spec
// with CFG and with SafeCFG driven by analytic scores and ideal AHFC targets,
// then compares mode masses and clean-conditioned distributions. Sampling is
// ancestral DDPM over the full schedule with seed-matched noise streams.
TiltVerdict verify_tilt(const MixtureOracle& oracle, const NoiseSchedule& sched, double eta,
                        int64_t sample_count, uint64_t seed, const TiltTolerances& tol,
                        int grid_bins = 64, double grid_span_sigma = 4.0);

// Max absolute deviation between dsg_score on analytic inputs and -sigma_t
// times the central-difference gradient of the closed-form tilted
// log-density, over a grid of (x, t) points.
double score_identity_check(const MixtureOracle& oracle, const NoiseSchedule& sched, double eta,
                            int concept_index, SafetyLabel label,
                            const std::vector<std::pair<std::vector<double>, int>>& grid,
                            double fd_step = 1e-4);

}  // namespace safecfg
