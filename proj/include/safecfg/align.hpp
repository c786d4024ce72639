#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "safecfg/ahfc.hpp"
#include "safecfg/guidance.hpp"
#include "safecfg/metrics.hpp"
#include "safecfg/sampler.hpp"
#include "safecfg/score_net.hpp"

namespace safecfg {

// Guidance dispatch over networks: evaluates the score network at the
// conditionings the mode requires, one evaluation per distinct conditioning.
struct ConditioningSet {
  std::vector<double> pooled_c;
  std::vector<double> pooled_phi;
  std::vector<double> pooled_ahfc;  // empty unless an AHFC network was given
};

ConditioningSet make_conditioning(const ConceptVocab& vocab, const EmbeddingTable& table,
                                  int concept_index, const AhfcNetwork* ahfc);

void guided_epsilon(const ScoreNetwork& net, const GuidanceSpec& spec,
                    const ConditioningSet& cond, const double* x, int64_t n, int t, int t_count,
                    double* out);

EpsField make_guided_field(const ScoreNetwork& net, const GuidanceSpec& spec,
                           ConditioningSet cond, int t_count);

// ---------------------------------------------------------------------------

struct AlignConfig {
  double eta = 3.0;          // safe-guidance degree
  double quantile = 0.95;    // threshold selection rule
  double dis_th = 0.0;       // selected before training; must be > 0
  int steps = 2000;
  int batch = 8;
  double lr = 5e-4;
  double exp_clamp_log = 4.0;  // exp(dis^2/th^2) clamped at e^4, raw value logged
  uint64_t seed = 1;

  void validate() const;
};

struct TeacherStudentPair {
  ScoreNetwork teacher;  // frozen throughout
  ScoreNetwork student;  // trainable, initialized as an exact copy
  uint64_t teacher_checksum = 0;

  static TeacherStudentPair make(const ScoreNetwork& trained);
};

// dis_th = q-quantile of dis(c) over an unlabeled concept sample (vocab
// indices, repeats allowed so the sample can mirror traffic frequencies).
double select_threshold(const AhfcNetwork& ahfc, const ConceptVocab& vocab,
                        const EmbeddingTable& table, const std::vector<int>& concept_sample,
                        double quantile, HedPooling pooling = HedPooling::Frobenius);

// Per-concept quantities the alignment loop needs; none of them involve a
// safety label.
struct AlignConceptState {
  double dis = 0.0;
  std::vector<double> pooled_c;
  std::vector<double> pooled_ahfc;
};

AlignConceptState make_align_state(const AhfcNetwork& ahfc, const ConceptVocab& vocab,
                                   const EmbeddingTable& table, int vocab_index,
                                   HedPooling pooling = HedPooling::Frobenius);

// Eq.-of-motion for one (x_t, c, t): below threshold the target is the
// teacher's conditional score; above it the null score plus
// eta * exp(dis^2/th^2) * (eps_c - eps_ahfc), exponent clamped.
// raw_exponent_out, when given, receives the unclamped dis^2/th^2.
void compute_target(const ScoreNetwork& teacher, const AlignConceptState& state,
                    const std::vector<double>& pooled_phi, const double* x_t, int t, int t_count,
                    const AlignConfig& cfg, double* out, double* raw_exponent_out = nullptr);

struct AlignResult {
  LossCurve losses;     // per-step
  double dis_th = 0.0;
  double max_raw_exponent = 0.0;
  int64_t clamped_targets = 0;
};

// Unsupervised distillation: batches of (x0, concept) drawn from the
// dataset, targets built from teacher + AHFC + threshold only. Safety
// labels are never read (the dataset's instrumented accessor stays cold).
AlignResult align_train(TeacherStudentPair& pair, const AhfcNetwork& ahfc, const Dataset& ds,
                        const ConceptVocab& vocab, const EmbeddingTable& table,
                        const NoiseSchedule& sched, const AlignConfig& cfg);

// ---------------------------------------------------------------------------
// Shared sampling-based evaluation (also used by the harness sweep)

struct ModelEvalConfig {
  std::vector<int> harmful_concepts;  // vocab indices
  std::vector<int> clean_concepts;
  int64_t samples_per_concept = 512;
  GuidanceSpec guidance;  // applied identically to every concept
  SamplerConfig sampler;
  const std::vector<double>* clean_reference = nullptr;
};

struct ModelEvalResult {
  double harmful_rate = 0.0;
  double quality_distance = 0.0;
};

ModelEvalResult evaluate_model(const ScoreNetwork& net, const AhfcNetwork* ahfc,
                               const ConceptVocab& vocab, const EmbeddingTable& table,
                               const MixtureOracle& oracle, const NoiseSchedule& sched,
                               const ModelEvalConfig& cfg);

struct AblationCell {
  double eta = 0.0;
  int steps = 0;
  double harmful_rate = 0.0;
  double quality_distance = 0.0;
  double hed_auc = 0.0;
};

struct AblationTable {
  std::vector<AblationCell> cells;
  bool harmful_rate_monotone_in_eta = false;
  bool harmful_rate_monotone_in_steps = false;
  std::string to_csv() const;  // columns: eta,steps,harmful_rate,quality_distance,hed_auc
  nlohmann::ordered_json to_json() const;
};

// Fresh student per cell from the same teacher, trained with the cell's
// (eta, steps), evaluated by CFG sampling at the eval guidance scale.
AblationTable ablation_sweep(const ScoreNetwork& teacher, const AhfcNetwork& ahfc,
                             const Dataset& ds, const ConceptVocab& vocab,
                             const EmbeddingTable& table, const MixtureOracle& oracle,
                             const NoiseSchedule& sched, const AlignConfig& base,
                             const std::vector<double>& etas, const std::vector<int>& step_counts,
                             const ModelEvalConfig& eval_cfg, double hed_auc);

}  // namespace safecfg
