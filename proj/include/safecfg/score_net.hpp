#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "safecfg/adam.hpp"
#include "safecfg/concept_space.hpp"
#include "safecfg/schedule.hpp"
#include "safecfg/tensor.hpp"

namespace safecfg {

struct ScoreNetConfig {
  int x_dim = 2;
  int time_features = 8;  // sin/cos pairs at log-spaced frequencies
  int cond_dim = 32;      // mean-pooled concept embedding width
  std::vector<int> hidden = {96, 96};
  std::string activation = "gelu";  // or "relu"
  // "affine": eps = f(x,t) + G(x,t) * e, exactly affine in the conditioning,
  // so score-space reflections of conditionings stay representable.
  // "concat": e joins the input row of a plain MLP.
  std::string cond_mode = "affine";

  int input_dim() const { return x_dim + time_features + cond_dim; }
  nlohmann::ordered_json to_json() const;
  static ScoreNetConfig from_json(const nlohmann::json& j);
  bool operator==(const ScoreNetConfig&) const = default;
};

// Conditional epsilon-prediction network over (x_t, time features, pooled
// concept embedding). Deterministic given parameters; all evaluation paths
// go through the same forward. The input row layout is [x | tfeat | e] in
// both conditioning modes.
class ScoreNetwork {
 public:
  ScoreNetwork(ScoreNetConfig cfg, Rng& init_rng);

  const ScoreNetConfig& config() const { return cfg_; }

  // [B, input_dim] -> [B, x_dim]
  Tensor forward(Tape* tape, const Tensor& input) const;

  void time_features(int t, int t_count, double* out) const;

  // no-grad batch eval, one conditioning vector shared by the whole batch
  void eval_shared(const double* x, int64_t n, int t, int t_count, const double* cond,
                   double* out) const;
  // per-row timestep and conditioning
  void eval_each(const double* x, int64_t n, const int* ts, int t_count, const double* cond_rows,
                 double* out) const;

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  void set_trainable(bool trainable);
  uint64_t checksum() const;
  ScoreNetwork clone() const;

  void save_checkpoint(const std::string& path) const;
  // Reconstructs from the stored descriptor. When `expected` is given, a
  // descriptor mismatch is an error.
  static ScoreNetwork load_checkpoint(const std::string& path,
                                      const ScoreNetConfig* expected = nullptr);

 private:
  Tensor assemble_rows(const double* x, int64_t n, const int* ts, int t_count,
                       const double* cond_rows, int cond_stride) const;
  ScoreNetConfig cfg_;
  std::vector<Tensor> params_;  // W0,b0,...,Wout,bout
};

struct DenoiserTrainConfig {
  int epochs = 30;
  int batch = 256;
  double lr = 1e-3;
  double p_uncond = 0.15;   // probability of replacing the condition with phi
  double cond_noise = 0.3;  // stddev of conditioning augmentation noise
  bool cosine_lr = true;
  uint64_t seed = 1;
};

struct LossCurve {
  std::vector<double> epoch_loss;
};

// Thrown when training hits a non-finite loss; the network is rolled back
// to its state before the offending step so callers can checkpoint it.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// Standard eps-matching objective: x_t = forward_sample(x0, t, eps) with t
// uniform in [1,T], MSE against eps. The condition is the mean-pooled token
// matrix, dropped to phi with p_uncond and jittered with cond_noise.
LossCurve train_denoiser(ScoreNetwork& net, const Dataset& ds, const ConceptVocab& vocab,
                         const EmbeddingTable& table, const NoiseSchedule& sched,
                         const DenoiserTrainConfig& cfg);

}  // namespace safecfg
