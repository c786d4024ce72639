#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "safecfg/align.hpp"

namespace safecfg {

// Full description of a run: data geometry, schedule, network sizes, train
// recipes, sweep grids, seeds. Everything downstream is a deterministic
// function of this struct.
struct ExperimentConfig {
  uint64_t seed = 7;
  std::string out_dir = "runs/default";

  struct Data {
    int dim = 2;
    int64_t n_train = 6000;
    int64_t n_heldout = 2048;
    int clean_concepts = 16;
    int harmful_concepts = 10;
    int heldout_clean = 6;  // extra concepts kept out of every dataset
    int heldout_harmful = 6;
    double clean_weight = 0.65;
    std::vector<double> clean_mean{3.0, 0.0};
    std::vector<double> harmful_mean{-3.0, 0.0};
    double mean_jitter = 0.0;
    double component_std = 0.5;
    int token_len = 8;
    int embed_dim = 32;
    int tokens_per_class = 64;
    double clean_offset = -0.6;
    double harmful_offset = 1.6;
    double token_std = 0.35;
    double phi_token_std = 0.35;
  } data;

  struct Sched {
    int t_count = 200;
    double beta_start = 1e-4;
    double beta_end = 0.08;
  } schedule;

  struct Dm {
    std::vector<int> hidden{96, 96};
    std::string activation = "gelu";
    std::string cond_mode = "affine";
    int time_features = 8;
    int epochs = 150;
    int batch = 256;
    double lr = 1e-3;
    double p_uncond = 0.15;
    double cond_noise = 0.1;
    bool cosine_lr = true;
  } dm;

  struct Ahfc {
    int layers = 2;
    int heads = 4;
    int ff_mult = 4;
    double dropout = 0.3;
    int epochs = 6;
    int batch = 4;
    double lr = 3e-3;
    bool cosine_lr = true;
  } ahfc;

  struct Sampling {
    std::string mode = "ddpm";  // metric-grade default; ddim is the fast path
    int steps = 200;
  } sampling;

  struct Sweep {
    std::vector<double> etas{0.0, 1.5, 3.0, 4.5, 6.0, 7.5, 9.0};
    int64_t samples_per_concept = 256;
  } sweep;

  struct Align {
    bool enabled = true;
    double eta = 3.0;
    int steps = 1500;
    int batch = 8;
    double lr = 5e-4;
    double quantile = 0.95;
    int64_t dataset_n = 4000;
    double clean_frac = 0.96;  // unlabeled alignment stream composition
    int calib_size = 400;
    double eval_eta = 7.5;
    int64_t eval_samples_per_concept = 256;
    std::vector<double> ablation_etas{1.0, 3.0, 5.0};
    std::vector<int> ablation_steps{500, 1500};
  } align;

  struct OracleCheck {
    int64_t tilt_samples = 10000;
    double tilt_eta = 1.0;
    int grid_bins = 64;
    double grid_span_sigma = 4.0;
    double identity_eta = 1.0;
    double identity_fd_step = 1e-4;
  } oracle;

  nlohmann::ordered_json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  uint64_t hash() const;
  std::string run_id() const;
  void validate() const;
};

struct MetricsRecord {
  std::string run_id;
  std::string stage;
  std::optional<double> harmful_rate;
  std::optional<double> quality_distance;
  nlohmann::ordered_json hed_stats;  // null when absent
  double wall_time_seconds = 0.0;    // kept out of deterministic artifacts

  nlohmann::ordered_json to_json() const;  // excludes wall time
};

struct SweepRow {
  double eta = 0.0;
  std::string mode;
  double harmful_rate = 0.0;
  double quality_distance = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  bool eta_zero_identical = false;  // CFG and SafeCFG batches bitwise equal at eta 0
  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
};

// Stage artifacts live under cfg.out_dir with fixed names.
struct StagePaths {
  std::string config_json, vocab, train_data, heldout_data, align_data;
  std::string dm_ckpt, dm_loss, ahfc_ckpt, ahfc_loss;
  std::string hed_csv, hed_json, sweep_csv, sweep_json;
  std::string student_ckpt, align_json, ablation_csv, ablation_json;
  std::string tilt_json, identity_json;
  std::string metrics_jsonl, report_json, timings_json;
  static StagePaths in(const std::string& out_dir);
};

class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg);

  // Stages in order; each writes its artifacts plus a stage marker so a
  // resumed run can skip completed work when the config hash matches.
  void run_gen_data();
  void run_train_dm();
  void run_train_ahfc();
  void run_hed_report();
  void run_sweep();
  void run_align();
  void run_ablate();
  void run_verify_oracle();
  void run_report();

  // Full run; with resume, stages whose markers match the config hash are
  // skipped. Returns true when every embedded check passed.
  bool run_all(bool resume);

  const ExperimentConfig& config() const { return cfg_; }
  const StagePaths& paths() const { return paths_; }

  // derived inputs, loaded lazily from artifacts
  GeneratorSpec train_spec() const;
  GeneratorSpec align_spec() const;

 private:
  bool stage_done(const std::string& stage) const;
  void mark_stage_done(const std::string& stage);
  void write_stage_metrics(const std::string& stage, const std::vector<MetricsRecord>& records);
  void record_timing(const std::string& stage, double seconds);
  template <typename Fn>
  void run_stage(const std::string& name, bool resume, Fn&& fn);

  ExperimentConfig cfg_;
  StagePaths paths_;
};

// helpers shared with the CLI
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);
bool file_exists(const std::string& path);

// RMSE of the trained denoiser against the analytic epsilon over held-out
// noised samples with uniform timesteps.
double denoiser_rmse(const ScoreNetwork& net, const Dataset& heldout, const ConceptVocab& vocab,
                     const EmbeddingTable& table, const MixtureOracle& oracle,
                     const NoiseSchedule& sched, int64_t max_samples, uint64_t seed);

}  // namespace safecfg
