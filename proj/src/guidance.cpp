#include "safecfg/guidance.hpp"

#include <cmath>
#include <stdexcept>

namespace safecfg {

namespace {
void check_shapes(std::span<const double> a, std::span<const double> b, std::span<double> out,
                  const char* what) {
  if (a.size() != b.size() || a.size() != out.size()) {
    throw std::runtime_error(std::string(what) + ": size mismatch (" + std::to_string(a.size()) +
                             ", " + std::to_string(b.size()) + ", " + std::to_string(out.size()) +
                             ")");
  }
}
}  // namespace

const char* guidance_mode_name(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::None: return "none";
    case GuidanceMode::Cfg: return "cfg";
    case GuidanceMode::Negative: return "negative";
    case GuidanceMode::SafeCfg: return "safecfg";
  }
  return "?";
}

GuidanceMode guidance_mode_from_name(const std::string& s) {
  if (s == "none") return GuidanceMode::None;
  if (s == "cfg") return GuidanceMode::Cfg;
  if (s == "negative") return GuidanceMode::Negative;
  if (s == "safecfg") return GuidanceMode::SafeCfg;
  throw std::runtime_error("unknown guidance mode: " + s);
}

void GuidanceSpec::validate() const {
  if (!std::isfinite(eta) || eta < 0.0) {
    throw std::runtime_error("guidance spec: eta must be finite and >= 0");
  }
}

void cfg_score(std::span<const double> eps_c, std::span<const double> eps_phi, double eta,
               std::span<double> out) {
  check_shapes(eps_c, eps_phi, out, "cfg_score");
  for (size_t i = 0; i < out.size(); ++i) out[i] = eps_c[i] + eta * (eps_c[i] - eps_phi[i]);
}

void negative_score(std::span<const double> eps_c, std::span<const double> eps_phi, double eta,
                    std::span<double> out) {
  check_shapes(eps_c, eps_phi, out, "negative_score");
  for (size_t i = 0; i < out.size(); ++i) out[i] = eps_c[i] - eta * (eps_c[i] - eps_phi[i]);
}

void dsg_score(std::span<const double> eps_c, std::span<const double> eps_ahfc, double eta,
               std::span<double> out) {
  check_shapes(eps_c, eps_ahfc, out, "dsg_score");
  for (size_t i = 0; i < out.size(); ++i) out[i] = eps_c[i] + eta * (eps_c[i] - eps_ahfc[i]);
}

double effective_beta(std::span<const double> eps_c, std::span<const double> eps_ahfc,
                      std::span<const double> eps_phi) {
  if (eps_c.size() != eps_ahfc.size() || eps_c.size() != eps_phi.size()) {
    throw std::runtime_error("effective_beta: size mismatch");
  }
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < eps_c.size(); ++i) {
    double d_guid = eps_c[i] - eps_phi[i];
    double d_ahfc = eps_c[i] - eps_ahfc[i];
    num += d_ahfc * d_guid;
    den += d_guid * d_guid;
  }
  if (den == 0.0) return 0.0;
  return -num / den;
}

}  // namespace safecfg
