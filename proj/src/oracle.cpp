#include "safecfg/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "safecfg/guidance.hpp"
#include "safecfg/sampler.hpp"

namespace safecfg {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log N(x; mu, ab*S + (1-ab)*I) and optionally its gradient, k small
struct DiffusedGaussian {
  std::vector<double> mean;
  std::vector<double> prec;  // inverse covariance
  double log_norm;           // -0.5*(k*log(2pi) + logdet)
};

DiffusedGaussian diffuse(const std::vector<double>& mu, const std::vector<double>& cov, int k,
                         double ab) {
  DiffusedGaussian g;
  double s = std::sqrt(ab);
  g.mean.resize(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) g.mean[static_cast<size_t>(i)] = s * mu[static_cast<size_t>(i)];
  std::vector<double> sig(static_cast<size_t>(k) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      sig[static_cast<size_t>(i * k + j)] = ab * cov[static_cast<size_t>(i * k + j)] + (i == j ? 1.0 - ab : 0.0);
  std::vector<double> l = cholesky_lower(sig, k, "oracle: diffused covariance");
  double logdet = 0.0;
  for (int i = 0; i < k; ++i) logdet += 2.0 * std::log(l[static_cast<size_t>(i * k + i)]);
  // invert via L: prec = L^-T L^-1
  std::vector<double> linv(static_cast<size_t>(k) * k, 0.0);
  for (int c = 0; c < k; ++c) {
    linv[static_cast<size_t>(c * k + c)] = 1.0 / l[static_cast<size_t>(c * k + c)];
    for (int i = c + 1; i < k; ++i) {
      double acc = 0.0;
      for (int m = c; m < i; ++m) acc -= l[static_cast<size_t>(i * k + m)] * linv[static_cast<size_t>(m * k + c)];
      linv[static_cast<size_t>(i * k + c)] = acc / l[static_cast<size_t>(i * k + i)];
    }
  }
  g.prec.assign(static_cast<size_t>(k) * k, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      double acc = 0.0;
      for (int m = std::max(i, j); m < k; ++m)
        acc += linv[static_cast<size_t>(m * k + i)] * linv[static_cast<size_t>(m * k + j)];
      g.prec[static_cast<size_t>(i * k + j)] = acc;
    }
  g.log_norm = -0.5 * (k * kLog2Pi + logdet);
  return g;
}

double log_gauss(const DiffusedGaussian& g, const double* x, int k, double* quad_dir /*may be null*/) {
  // quad_dir receives prec * (x - mean) when requested
  double q = 0.0;
  std::vector<double> d(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) d[static_cast<size_t>(i)] = x[i] - g.mean[static_cast<size_t>(i)];
  for (int i = 0; i < k; ++i) {
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += g.prec[static_cast<size_t>(i * k + j)] * d[static_cast<size_t>(j)];
    if (quad_dir) quad_dir[i] = acc;
    q += acc * d[static_cast<size_t>(i)];
  }
  return g.log_norm - 0.5 * q;
}

}  // namespace

MixtureOracle::MixtureOracle(GeneratorSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  per_concept_.resize(static_cast<size_t>(spec_.concept_count()));
  for (int c = 0; c < spec_.concept_count(); ++c) {
    for (const MixtureComponent& comp : spec_.mixtures[static_cast<size_t>(c)].components) {
      Flat f;
      f.weight = comp.weight;  // within-concept weight
      f.mean = comp.mean;
      f.cov = comp.cov;
      f.concept_index = c;
      per_concept_[static_cast<size_t>(c)].push_back(static_cast<int>(comps_.size()));
      all_.push_back(static_cast<int>(comps_.size()));
      comps_.push_back(std::move(f));
    }
  }
}

const std::vector<int>& MixtureOracle::member_components(int conditioning) const {
  if (conditioning == kPhiConditioning) return all_;
  if (conditioning < 0 || conditioning >= spec_.concept_count()) {
    throw std::runtime_error("oracle: conditioning index out of range");
  }
  return per_concept_[static_cast<size_t>(conditioning)];
}

double MixtureOracle::log_density(const double* x, int conditioning, double alpha_bar) const {
  const std::vector<int>& members = member_components(conditioning);
  int k = spec_.dim;
  double best = -1e300;
  std::vector<double> logs(members.size());
  for (size_t m = 0; m < members.size(); ++m) {
    const Flat& f = comps_[static_cast<size_t>(members[m])];
    double w = conditioning == kPhiConditioning
                   ? spec_.concept_weights[static_cast<size_t>(f.concept_index)] * f.weight
                   : f.weight;
    DiffusedGaussian g = diffuse(f.mean, f.cov, k, alpha_bar);
    logs[m] = std::log(w) + log_gauss(g, x, k, nullptr);
    best = std::max(best, logs[m]);
  }
  double acc = 0.0;
  for (double lg : logs) acc += std::exp(lg - best);
  return best + std::log(acc);
}

void MixtureOracle::grad_log_density(const double* x, int conditioning, double alpha_bar,
                                     double* out) const {
  const std::vector<int>& members = member_components(conditioning);
  int k = spec_.dim;
  std::vector<double> logs(members.size());
  std::vector<std::vector<double>> dirs(members.size(), std::vector<double>(static_cast<size_t>(k)));
  double best = -1e300;
  for (size_t m = 0; m < members.size(); ++m) {
    const Flat& f = comps_[static_cast<size_t>(members[m])];
    double w = conditioning == kPhiConditioning
                   ? spec_.concept_weights[static_cast<size_t>(f.concept_index)] * f.weight
                   : f.weight;
    DiffusedGaussian g = diffuse(f.mean, f.cov, k, alpha_bar);
    logs[m] = std::log(w) + log_gauss(g, x, k, dirs[m].data());
    best = std::max(best, logs[m]);
  }
  double z = 0.0;
  for (double lg : logs) z += std::exp(lg - best);
  std::fill(out, out + k, 0.0);
  for (size_t m = 0; m < members.size(); ++m) {
    double gamma = std::exp(logs[m] - best) / z;
    for (int i = 0; i < k; ++i) out[i] -= gamma * dirs[m][static_cast<size_t>(i)];
  }
}

void MixtureOracle::analytic_eps(const double* x, int conditioning, int t,
                                 const NoiseSchedule& sched, double* out) const {
  int k = spec_.dim;
  grad_log_density(x, conditioning, sched.alpha_bar(t), out);
  double s = sched.sigma(t);
  for (int i = 0; i < k; ++i) out[i] *= -s;
}

void MixtureOracle::ideal_ahfc_eps(const double* x, int concept_index, int t,
                                   const NoiseSchedule& sched, SafetyLabel label,
                                   double* out) const {
  int k = spec_.dim;
  if (label == SafetyLabel::Clean) {
    analytic_eps(x, kPhiConditioning, t, sched, out);
    return;
  }
  std::vector<double> eps_c(static_cast<size_t>(k)), eps_phi(static_cast<size_t>(k));
  analytic_eps(x, concept_index, t, sched, eps_c.data());
  analytic_eps(x, kPhiConditioning, t, sched, eps_phi.data());
  for (int i = 0; i < k; ++i) out[i] = 2.0 * eps_c[static_cast<size_t>(i)] - eps_phi[static_cast<size_t>(i)];
}

double MixtureOracle::label_weight(SafetyLabel l) const {
  double w = 0.0;
  for (int c = 0; c < spec_.concept_count(); ++c) {
    if (spec_.concept_labels[static_cast<size_t>(c)] == l) w += spec_.concept_weights[static_cast<size_t>(c)];
  }
  return w;
}

double MixtureOracle::posterior_harmful(const double* x) const {
  int k = spec_.dim;
  double best = -1e300;
  std::vector<double> logs(comps_.size());
  for (size_t m = 0; m < comps_.size(); ++m) {
    const Flat& f = comps_[m];
    double w = spec_.concept_weights[static_cast<size_t>(f.concept_index)] * f.weight;
    if (w == 0.0) {
      logs[m] = -1e300;
      continue;
    }
    DiffusedGaussian g = diffuse(f.mean, f.cov, k, 1.0);
    logs[m] = std::log(w) + log_gauss(g, x, k, nullptr);
    best = std::max(best, logs[m]);
  }
  double z = 0.0, zh = 0.0;
  for (size_t m = 0; m < comps_.size(); ++m) {
    double p = std::exp(logs[m] - best);
    z += p;
    if (spec_.concept_labels[static_cast<size_t>(comps_[m].concept_index)] == SafetyLabel::Harmful) zh += p;
  }
  return zh / z;
}

void MixtureOracle::marginal_moments(std::vector<double>& mean, std::vector<double>& stddev) const {
  int k = spec_.dim;
  mean.assign(static_cast<size_t>(k), 0.0);
  std::vector<double> second(static_cast<size_t>(k), 0.0);
  for (const Flat& f : comps_) {
    double w = spec_.concept_weights[static_cast<size_t>(f.concept_index)] * f.weight;
    for (int i = 0; i < k; ++i) {
      mean[static_cast<size_t>(i)] += w * f.mean[static_cast<size_t>(i)];
      second[static_cast<size_t>(i)] +=
          w * (f.cov[static_cast<size_t>(i * k + i)] + f.mean[static_cast<size_t>(i)] * f.mean[static_cast<size_t>(i)]);
    }
  }
  stddev.assign(static_cast<size_t>(k), 0.0);
  for (int i = 0; i < k; ++i) {
    stddev[static_cast<size_t>(i)] = std::sqrt(std::max(0.0, second[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)] * mean[static_cast<size_t>(i)]));
  }
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json TiltVerdict::to_json() const {
  return nlohmann::ordered_json{{"eta", eta},
                                {"sample_count", sample_count},
                                {"harmful_mass_cfg", harmful_mass_cfg},
                                {"harmful_mass_safecfg", harmful_mass_safecfg},
                                {"clean_tv_cfg_vs_safecfg", clean_tv_cfg_vs_safecfg},
                                {"tv_safecfg_vs_tilted", tv_safecfg_vs_tilted},
                                {"tilt_normalizer_ok", tilt_normalizer_ok},
                                {"eta_zero_noop", eta_zero_noop},
                                {"pass_mass", pass_mass},
                                {"pass_clean_tv", pass_clean_tv}};
}

namespace {

struct Grid {
  double x0, y0, dx, dy;
  int bins;
  int cell(double x, double y) const {
    int ix = static_cast<int>(std::floor((x - x0) / dx));
    int iy = static_cast<int>(std::floor((y - y0) / dy));
    if (ix < 0 || ix >= bins || iy < 0 || iy >= bins) return bins * bins;  // overflow bucket
    return ix * bins + iy;
  }
};

std::vector<double> histogram(const Grid& grid, const std::vector<double>& samples, int64_t n) {
  std::vector<double> h(static_cast<size_t>(grid.bins) * grid.bins + 1, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    h[static_cast<size_t>(grid.cell(samples[static_cast<size_t>(2 * i)], samples[static_cast<size_t>(2 * i + 1)]))] += 1.0;
  }
  for (double& v : h) v /= static_cast<double>(n);
  return h;
}

double tv_between(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i] - b[i]);
  return 0.5 * acc;
}

}  // namespace

TiltVerdict verify_tilt(const MixtureOracle& oracle, const NoiseSchedule& sched, double eta,
                        int64_t sample_count, uint64_t seed, const TiltTolerances& tol,
                        int grid_bins, double grid_span_sigma) {
  if (sample_count < 1000) throw std::runtime_error("verify_tilt: sample count < 1000");
  if (oracle.dim() != 2) throw std::runtime_error("verify_tilt: requires 2-d specs");
  if (eta < 0.0) throw std::runtime_error("verify_tilt: eta must be >= 0");
  const GeneratorSpec& spec = oracle.spec();

  int harm_concept = -2, clean_concept = -2;
  for (int c = 0; c < spec.concept_count(); ++c) {
    if (spec.concept_labels[static_cast<size_t>(c)] == SafetyLabel::Harmful && harm_concept == -2)
      harm_concept = c;
    if (spec.concept_labels[static_cast<size_t>(c)] == SafetyLabel::Clean && clean_concept == -2)
      clean_concept = c;
  }
  // degenerate single-label specs fall back to whichever concept exists
  if (harm_concept == -2) harm_concept = 0;
  if (clean_concept == -2) clean_concept = 0;
  SafetyLabel harm_label = spec.concept_labels[static_cast<size_t>(harm_concept)];
  SafetyLabel clean_label = spec.concept_labels[static_cast<size_t>(clean_concept)];

  int k = 2;
  auto make_field = [&](int concept_index, SafetyLabel label, bool safe) {
    return EpsField([&oracle, &sched, concept_index, label, safe, eta, k](
                        const double* x, int64_t n, int t, double* out) {
      std::vector<double> eps_c(static_cast<size_t>(k)), eps_other(static_cast<size_t>(k));
      for (int64_t i = 0; i < n; ++i) {
        const double* xi = x + i * k;
        double* oi = out + i * k;
        oracle.analytic_eps(xi, concept_index, t, sched, eps_c.data());
        if (safe) {
          oracle.ideal_ahfc_eps(xi, concept_index, t, sched, label, eps_other.data());
          dsg_score({eps_c.data(), static_cast<size_t>(k)}, {eps_other.data(), static_cast<size_t>(k)},
                    eta, {oi, static_cast<size_t>(k)});
        } else {
          oracle.analytic_eps(xi, kPhiConditioning, t, sched, eps_other.data());
          cfg_score({eps_c.data(), static_cast<size_t>(k)}, {eps_other.data(), static_cast<size_t>(k)},
                    eta, {oi, static_cast<size_t>(k)});
        }
      }
    });
  };

  SamplerConfig scfg;
  scfg.mode = SamplerMode::Ddpm;
  scfg.steps = sched.t_count();
  scfg.seed = seed;

  std::vector<double> harm_cfg = sample_batch(make_field(harm_concept, harm_label, false), sched,
                                              sample_count, k, scfg);
  std::vector<double> harm_safe = sample_batch(make_field(harm_concept, harm_label, true), sched,
                                               sample_count, k, scfg);
  std::vector<double> clean_cfg = sample_batch(make_field(clean_concept, clean_label, false), sched,
                                               sample_count, k, scfg);
  std::vector<double> clean_safe = sample_batch(make_field(clean_concept, clean_label, true), sched,
                                                sample_count, k, scfg);

  TiltVerdict verdict;
  verdict.eta = eta;
  verdict.sample_count = sample_count;

  auto mass = [&](const std::vector<double>& s) {
    int64_t hit = 0;
    for (int64_t i = 0; i < sample_count; ++i) {
      if (oracle.posterior_harmful(s.data() + i * k) > 0.5) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(sample_count);
  };
  verdict.harmful_mass_cfg = mass(harm_cfg);
  verdict.harmful_mass_safecfg = mass(harm_safe);

  std::vector<double> mean, sd;
  oracle.marginal_moments(mean, sd);
  Grid grid;
  grid.bins = grid_bins;
  grid.x0 = mean[0] - grid_span_sigma * sd[0];
  grid.y0 = mean[1] - grid_span_sigma * sd[1];
  grid.dx = 2.0 * grid_span_sigma * sd[0] / grid_bins;
  grid.dy = 2.0 * grid_span_sigma * sd[1] / grid_bins;

  verdict.clean_tv_cfg_vs_safecfg = tv_between(histogram(grid, clean_cfg, sample_count),
                                               histogram(grid, clean_safe, sample_count));

  // diagnostic: harmful-conditioned SafeCFG samples vs the analytically
  // tilted data density p(x|c)^(1-eta) * p(x)^eta (ideal harmful targets)
  {
    std::vector<double> tilted(static_cast<size_t>(grid_bins) * grid_bins + 1, 0.0);
    double total = 0.0;
    for (int ix = 0; ix < grid_bins; ++ix) {
      for (int iy = 0; iy < grid_bins; ++iy) {
        double cx = grid.x0 + (ix + 0.5) * grid.dx;
        double cy = grid.y0 + (iy + 0.5) * grid.dy;
        double pt[2] = {cx, cy};
        double lp_c = oracle.log_density(pt, harm_concept, 1.0);
        double lp_m = oracle.log_density(pt, kPhiConditioning, 1.0);
        double lp = harm_label == SafetyLabel::Harmful ? (1.0 - eta) * lp_c + eta * lp_m
                                                       : (1.0 + eta) * lp_c - eta * lp_m;
        double v = std::exp(lp);
        tilted[static_cast<size_t>(ix * grid_bins + iy)] = v;
        total += v;
      }
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
      verdict.tilt_normalizer_ok = false;
    } else {
      for (double& v : tilted) v /= total;
      // edge cells holding visible mass indicate the tilted density leaks
      // outside the grid (normalizer diverging for heavy overlaps)
      double edge = 0.0;
      for (int ix = 0; ix < grid_bins; ++ix) {
        for (int iy = 0; iy < grid_bins; ++iy) {
          if (ix == 0 || iy == 0 || ix == grid_bins - 1 || iy == grid_bins - 1) {
            edge += tilted[static_cast<size_t>(ix * grid_bins + iy)];
          }
        }
      }
      verdict.tilt_normalizer_ok = edge < 0.01;
      verdict.tv_safecfg_vs_tilted = tv_between(histogram(grid, harm_safe, sample_count), tilted);
    }
  }

  if (eta == 0.0) {
    verdict.eta_zero_noop = harm_cfg == harm_safe && clean_cfg == clean_safe;
  }
  verdict.pass_mass = verdict.harmful_mass_safecfg <= tol.mass_ratio * verdict.harmful_mass_cfg;
  verdict.pass_clean_tv = verdict.clean_tv_cfg_vs_safecfg <= tol.clean_tv;
  return verdict;
}

double score_identity_check(const MixtureOracle& oracle, const NoiseSchedule& sched, double eta,
                            int concept_index, SafetyLabel label,
                            const std::vector<std::pair<std::vector<double>, int>>& grid,
                            double fd_step) {
  int k = oracle.dim();
  std::vector<double> eps_c(static_cast<size_t>(k)), eps_a(static_cast<size_t>(k)),
      dsg(static_cast<size_t>(k));
  std::vector<double> probe;
  double worst = 0.0;
  for (const auto& [x, t] : grid) {
    if (static_cast<int>(x.size()) != k) throw std::runtime_error("score_identity_check: bad grid point");
    double ab = sched.alpha_bar(t);
    double sig = sched.sigma(t);
    oracle.analytic_eps(x.data(), concept_index, t, sched, eps_c.data());
    oracle.ideal_ahfc_eps(x.data(), concept_index, t, sched, label, eps_a.data());
    dsg_score({eps_c.data(), static_cast<size_t>(k)}, {eps_a.data(), static_cast<size_t>(k)}, eta,
              {dsg.data(), static_cast<size_t>(k)});

    auto tilted_log = [&](const double* pt) {
      double lp_c = oracle.log_density(pt, concept_index, ab);
      double lp_m = oracle.log_density(pt, kPhiConditioning, ab);
      // log p_ahfc = log p_phi (clean) or 2*log p_c - log p_phi (harmful)
      double lp_a = label == SafetyLabel::Clean ? lp_m : 2.0 * lp_c - lp_m;
      return (1.0 + eta) * lp_c - eta * lp_a;
    };
    probe = x;
    for (int i = 0; i < k; ++i) {
      double saved = probe[static_cast<size_t>(i)];
      probe[static_cast<size_t>(i)] = saved + fd_step;
      double up = tilted_log(probe.data());
      probe[static_cast<size_t>(i)] = saved - fd_step;
      double down = tilted_log(probe.data());
      probe[static_cast<size_t>(i)] = saved;
      double grad = (up - down) / (2.0 * fd_step);
      worst = std::max(worst, std::fabs(dsg[static_cast<size_t>(i)] - (-sig * grad)));
    }
  }
  return worst;
}

}  // namespace safecfg
