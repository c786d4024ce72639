#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "safecfg/concept_space.hpp"
#include "safecfg/schedule.hpp"
#include "safecfg/score_net.hpp"
#include "safecfg/tensor.hpp"

namespace safecfg {

struct AhfcConfig {
  int layers = 2;
  int heads = 4;
  int width = 32;    // token embedding width d
  int seq_len = 8;   // S
  int ff_mult = 4;
  double dropout = 0.3;

  int head_dim() const { return width / heads; }
  nlohmann::ordered_json to_json() const;
  static AhfcConfig from_json(const nlohmann::json& j);
  bool operator==(const AhfcConfig&) const = default;
};

// Token-matrix-to-token-matrix transformer: pre-norm residual blocks of
// bidirectional multi-head self-attention (softmax(Q K^T / sqrt(d_head)) V,
// no causal mask) followed by a gelu feed-forward, RMSNorm throughout.
class AhfcNetwork {
 public:
  AhfcNetwork(AhfcConfig cfg, Rng& init_rng);

  const AhfcConfig& config() const { return cfg_; }

  // [S, d] -> [S, d]. Dropout masks are drawn from `dropout_rng` only when
  // train is true; evaluation is deterministic.
  Tensor forward(Tape* tape, const Tensor& tokens, bool train = false,
                 Rng* dropout_rng = nullptr) const;

  // mean over output rows as a [1, d] tensor (tape-recorded)
  Tensor pooled_forward(Tape* tape, const Tensor& tokens, bool train = false,
                        Rng* dropout_rng = nullptr) const;
  std::vector<double> pooled_eval(const Tensor& tokens) const;

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  void set_trainable(bool trainable);
  uint64_t checksum() const;
  AhfcNetwork clone() const;

  void save_checkpoint(const std::string& path) const;
  static AhfcNetwork load_checkpoint(const std::string& path, const AhfcConfig* expected = nullptr);

 private:
  struct Layer {
    Tensor norm1_gain;
    std::vector<Tensor> wq, wk, wv;  // per head, [d, d/H]
    Tensor wo;                       // [d, d]
    Tensor norm2_gain;
    Tensor w1, b1, w2, b2;           // feed-forward
  };
  AhfcConfig cfg_;
  std::vector<Layer> layers_;
  std::vector<Tensor> params_;  // flat view over all layer tensors
  Tensor pool_row_;             // [1, S] of 1/S
};

enum class HedPooling { Frobenius, MeanPooled };

// Distance between two token matrices: Frobenius over the full S x d
// matrix, or the norm of the row-mean difference.
double matrix_distance(const Tensor& a, const Tensor& b, HedPooling pooling);

// dis(c) = || AHFC(embed(c)) - Embeddings(phi) ||, dropout disabled. The
// Frobenius form runs over the full S x d matrix; the mean-pooled form over
// row means, kept as a sensitivity switch.
double hed(const AhfcNetwork& net, const Tensor& concept_embedding, const Tensor& phi_embedding,
           HedPooling pooling = HedPooling::Frobenius);

struct HedEntry {
  std::string concept_id;
  SafetyLabel label = SafetyLabel::Clean;
  double dis = 0.0;
};

struct HedReport {
  std::vector<HedEntry> entries;
  double clean_mean = 0.0;
  double harmful_mean = 0.0;
  double auc = 0.0;       // Mann-Whitney; NaN when degenerate
  bool degenerate = false;
  std::vector<double> bin_edges;
  std::vector<int64_t> clean_counts;
  std::vector<int64_t> harmful_counts;

  nlohmann::ordered_json to_json() const;
  std::string to_csv() const;  // histogram rows: lo,hi,clean,harmful
};

HedReport make_hed_report(std::vector<HedEntry> entries, int bins = 24);
HedReport hed_report(const AhfcNetwork& net, const ConceptVocab& vocab,
                     const EmbeddingTable& table, const std::vector<int>& concept_indices,
                     HedPooling pooling = HedPooling::Frobenius, int bins = 24);

struct AhfcTrainConfig {
  int epochs = 4;
  int batch = 4;
  double lr = 1e-3;
  bool cosine_lr = true;
  uint64_t seed = 1;
};

struct AhfcBatchMember {
  const double* x0;
  int vocab_index;
  SafetyLabel label;
};

// Score-space training loss: clean members pull the AHFC-conditioned score
// onto the null score, harmful members onto the reflected 2*eps_c - eps_phi
// target, squared L2 summed over the batch. The score network is frozen;
// only AHFC parameters receive gradients. Each member shares one x_t =
// forward_sample(x0, t, eps) across its score evaluations.
Tensor ahfc_loss(Tape* tape, const AhfcNetwork& ahfc, const ScoreNetwork& frozen_score,
                 const ConceptVocab& vocab, const EmbeddingTable& table,
                 const NoiseSchedule& sched, const std::vector<AhfcBatchMember>& batch,
                 Rng& rng, bool train_mode = true);

LossCurve train_ahfc(AhfcNetwork& ahfc, const ScoreNetwork& frozen_score, const Dataset& ds,
                     const ConceptVocab& vocab, const EmbeddingTable& table,
                     const NoiseSchedule& sched, const AhfcTrainConfig& cfg);

struct AhfcResiduals {
  double median_clean_ratio = 0.0;
  double median_harmful_ratio = 0.0;
  int64_t clean_count = 0;
  int64_t harmful_count = 0;
};

// Residual ratios against the two training targets on held-out noised
// samples, normalized by the guidance magnitude |eps_c - eps_phi|.
AhfcResiduals eval_ahfc_residuals(const AhfcNetwork& ahfc, const ScoreNetwork& score,
                                  const Dataset& heldout, const ConceptVocab& vocab,
                                  const EmbeddingTable& table, const NoiseSchedule& sched,
                                  int64_t max_samples, uint64_t seed);

}  // namespace safecfg
