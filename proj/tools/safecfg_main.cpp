#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "safecfg/align.hpp"
#include "safecfg/experiment.hpp"
#include "safecfg/oracle.hpp"

using namespace safecfg;

namespace {

ExperimentConfig load_config(const std::string& config_path, uint64_t seed_override,
                             bool seed_given, const std::string& out_override) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = ExperimentConfig::load(config_path);
  if (seed_given) cfg.seed = seed_override;
  if (!out_override.empty()) cfg.out_dir = out_override;
  return cfg;
}

int run_sample_command(const ExperimentConfig& cfg, const std::string& concept_id,
                       const std::string& mode_name, double eta, int64_t count,
                       const std::string& out_path) {
  Pipeline pipe(cfg);
  const StagePaths& paths = pipe.paths();
  BuiltVocab built = load_vocab(paths.vocab);
  NoiseSchedule sched = make_schedule(cfg.schedule.t_count, cfg.schedule.beta_start,
                                      cfg.schedule.beta_end);
  ScoreNetwork net = ScoreNetwork::load_checkpoint(paths.dm_ckpt);
  GuidanceSpec gspec{guidance_mode_from_name(mode_name), eta};

  AhfcNetwork* ahfc_ptr = nullptr;
  AhfcNetwork ahfc = gspec.mode == GuidanceMode::SafeCfg
                         ? AhfcNetwork::load_checkpoint(paths.ahfc_ckpt)
                         : AhfcNetwork(AhfcConfig{}, *[] {
                             static Rng r(0);
                             return &r;
                           }());
  if (gspec.mode == GuidanceMode::SafeCfg) ahfc_ptr = &ahfc;

  int ci = built.vocab.index_of(concept_id);
  ConditioningSet cond = make_conditioning(built.vocab, built.table, ci, ahfc_ptr);
  SamplerConfig sc;
  sc.mode = sampler_mode_from_name(cfg.sampling.mode);
  sc.steps = cfg.sampling.steps;
  sc.seed = cfg.seed;
  std::vector<double> samples = sample_batch(make_guided_field(net, gspec, std::move(cond),
                                                               sched.t_count()),
                                             sched, count, cfg.data.dim, sc);
  std::ostringstream os;
  for (int j = 0; j < cfg.data.dim; ++j) os << (j ? "," : "") << "x" << j;
  os << "\n";
  for (int64_t i = 0; i < count; ++i) {
    for (int j = 0; j < cfg.data.dim; ++j) os << (j ? "," : "") << samples[i * cfg.data.dim + j];
    os << "\n";
  }
  write_text_file(out_path.empty() ? cfg.out_dir + "/samples.csv" : out_path, os.str());
  std::cout << "wrote " << count << " samples for " << concept_id << " (" << mode_name
            << ", eta=" << eta << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SafeCFG toy diffusion harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  uint64_t seed = 0;
  bool resume = false;
  app.add_option("--config", config_path, "experiment config JSON");
  app.add_option("--seed", seed, "seed override");
  bool seed_given = false;
  app.callback([&] { seed_given = app.count("--seed") > 0; });
  app.add_option("--out", out_dir, "output directory override");
  app.add_flag("--resume", resume, "skip stages already completed for this config");

  auto* gen = app.add_subcommand("gen-data", "build vocab, datasets");
  auto* train_dm = app.add_subcommand("train-dm", "train the denoiser");
  auto* train_ahfc = app.add_subcommand("train-ahfc", "train the harmful-feature control net");
  auto* hed = app.add_subcommand("hed-report", "held-out HED histogram and AUC");
  auto* sweep = app.add_subcommand("sweep", "guidance-scale sweep, CFG vs SafeCFG");
  auto* align = app.add_subcommand("align", "unsupervised teacher-student alignment");
  auto* ablate = app.add_subcommand("ablate", "alignment eta/steps ablation");
  auto* verify = app.add_subcommand("verify-oracle", "analytic tilt and score-identity checks");
  auto* report = app.add_subcommand("report", "aggregate metrics and checks");
  auto* pipeline = app.add_subcommand("pipeline", "run every stage in order");

  auto* sample = app.add_subcommand("sample", "draw samples for one concept");
  std::string concept_id = "clean00", mode_name = "cfg", sample_out;
  double eta = 7.5;
  int64_t count = 256;
  sample->add_option("--concept", concept_id, "concept id");
  sample->add_option("--mode", mode_name, "none|cfg|negative|safecfg");
  sample->add_option("--eta", eta, "guidance scale");
  sample->add_option("--count", count, "sample count");
  sample->add_option("--samples-out", sample_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load_config(config_path, seed, seed_given, out_dir);
    Pipeline pipe(cfg);
    if (gen->parsed()) {
      pipe.run_gen_data();
    } else if (train_dm->parsed()) {
      pipe.run_train_dm();
    } else if (train_ahfc->parsed()) {
      pipe.run_train_ahfc();
    } else if (hed->parsed()) {
      pipe.run_hed_report();
    } else if (sweep->parsed()) {
      pipe.run_sweep();
    } else if (align->parsed()) {
      pipe.run_align();
    } else if (ablate->parsed()) {
      pipe.run_ablate();
    } else if (verify->parsed()) {
      pipe.run_verify_oracle();
      auto tj = nlohmann::json::parse(read_text_file(pipe.paths().tilt_json));
      auto ij = nlohmann::json::parse(read_text_file(pipe.paths().identity_json));
      bool ok = tj.at("pass_mass").get<bool>() && tj.at("pass_clean_tv").get<bool>() &&
                tj.at("eta_zero_noop").get<bool>() && ij.at("pass").get<bool>();
      std::cout << (ok ? "oracle checks passed\n" : "oracle checks FAILED\n");
      return ok ? 0 : 1;
    } else if (report->parsed()) {
      pipe.run_report();
      auto rj = nlohmann::json::parse(read_text_file(pipe.paths().report_json));
      bool ok = rj.at("all_checks_passed").get<bool>();
      std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
      return ok ? 0 : 1;
    } else if (pipeline->parsed()) {
      bool ok = pipe.run_all(resume);
      std::cout << (ok ? "pipeline complete, all checks passed\n"
                       : "pipeline complete, some checks FAILED\n");
      return ok ? 0 : 1;
    } else if (sample->parsed()) {
      return run_sample_command(cfg, concept_id, mode_name, eta, count, sample_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
