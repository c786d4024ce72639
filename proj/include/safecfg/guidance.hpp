#pragma once

#include <span>
#include <string>

namespace safecfg {

enum class GuidanceMode { None, Cfg, Negative, SafeCfg };

const char* guidance_mode_name(GuidanceMode m);
GuidanceMode guidance_mode_from_name(const std::string& s);

struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::None;
  double eta = 0.0;  // ignored for mode None

  void validate() const;  // eta finite and >= 0
};

// eps_tilde = eps_c + eta * (eps_c - eps_phi)
void cfg_score(std::span<const double> eps_c, std::span<const double> eps_phi, double eta,
               std::span<double> out);

// eps_tilde = eps_c - eta * (eps_c - eps_phi)
void negative_score(std::span<const double> eps_c, std::span<const double> eps_phi, double eta,
                    std::span<double> out);

// eps_tilde = eps_c + eta * (eps_c - eps_ahfc)
void dsg_score(std::span<const double> eps_c, std::span<const double> eps_ahfc, double eta,
               std::span<double> out);

// Effective negative-guidance ratio implied by an AHFC score, projected on
// the guidance direction: -(eps_c - eps_ahfc) . (eps_c - eps_phi) / |eps_c -
// eps_phi|^2. Diagnostic only.
double effective_beta(std::span<const double> eps_c, std::span<const double> eps_ahfc,
                      std::span<const double> eps_phi);

}  // namespace safecfg
