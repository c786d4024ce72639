#include "safecfg/experiment.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "safecfg/oracle.hpp"
#include "safecfg/serialize.hpp"

namespace safecfg {

namespace {

// stable seed-stream keys per stage
enum : uint64_t {
  kSeedJitter = 11,
  kSeedTrainData = 12,
  kSeedHeldoutData = 13,
  kSeedAlignData = 14,
  kSeedReferenceData = 15,
  kSeedDmInit = 21,
  kSeedDmTrain = 22,
  kSeedAhfcInit = 31,
  kSeedAhfcTrain = 32,
  kSeedCalib = 41,
  kSeedAlignTrain = 42,
  kSeedSweepSampler = 51,
  kSeedEvalSampler = 52,
  kSeedTilt = 61,
  kSeedRmse = 62,
};

std::string two_digits(int i) {
  std::ostringstream os;
  if (i < 10) os << "0";
  os << i;
  return os.str();
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// config

nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["data"] = {{"dim", data.dim},
               {"n_train", data.n_train},
               {"n_heldout", data.n_heldout},
               {"clean_concepts", data.clean_concepts},
               {"harmful_concepts", data.harmful_concepts},
               {"heldout_clean", data.heldout_clean},
               {"heldout_harmful", data.heldout_harmful},
               {"clean_weight", data.clean_weight},
               {"clean_mean", data.clean_mean},
               {"harmful_mean", data.harmful_mean},
               {"mean_jitter", data.mean_jitter},
               {"component_std", data.component_std},
               {"token_len", data.token_len},
               {"embed_dim", data.embed_dim},
               {"tokens_per_class", data.tokens_per_class},
               {"clean_offset", data.clean_offset},
               {"harmful_offset", data.harmful_offset},
               {"token_std", data.token_std},
               {"phi_token_std", data.phi_token_std}};
  j["schedule"] = {{"t_count", schedule.t_count},
                   {"beta_start", schedule.beta_start},
                   {"beta_end", schedule.beta_end}};
  j["dm"] = {{"hidden", dm.hidden},       {"activation", dm.activation},
             {"cond_mode", dm.cond_mode}, {"time_features", dm.time_features},
             {"epochs", dm.epochs},       {"batch", dm.batch},
             {"lr", dm.lr},               {"p_uncond", dm.p_uncond},
             {"cond_noise", dm.cond_noise}, {"cosine_lr", dm.cosine_lr}};
  j["ahfc"] = {{"layers", ahfc.layers}, {"heads", ahfc.heads},   {"ff_mult", ahfc.ff_mult},
               {"dropout", ahfc.dropout}, {"epochs", ahfc.epochs}, {"batch", ahfc.batch},
               {"lr", ahfc.lr},          {"cosine_lr", ahfc.cosine_lr}};
  j["sampling"] = {{"mode", sampling.mode}, {"steps", sampling.steps}};
  j["sweep"] = {{"etas", sweep.etas}, {"samples_per_concept", sweep.samples_per_concept}};
  j["align"] = {{"enabled", align.enabled},
                {"eta", align.eta},
                {"steps", align.steps},
                {"batch", align.batch},
                {"lr", align.lr},
                {"quantile", align.quantile},
                {"dataset_n", align.dataset_n},
                {"clean_frac", align.clean_frac},
                {"calib_size", align.calib_size},
                {"eval_eta", align.eval_eta},
                {"eval_samples_per_concept", align.eval_samples_per_concept},
                {"ablation_etas", align.ablation_etas},
                {"ablation_steps", align.ablation_steps}};
  j["oracle"] = {{"tilt_samples", oracle.tilt_samples},
                 {"tilt_eta", oracle.tilt_eta},
                 {"grid_bins", oracle.grid_bins},
                 {"grid_span_sigma", oracle.grid_span_sigma},
                 {"identity_eta", oracle.identity_eta},
                 {"identity_fd_step", oracle.identity_fd_step}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    c.data.dim = d.value("dim", c.data.dim);
    c.data.n_train = d.value("n_train", c.data.n_train);
    c.data.n_heldout = d.value("n_heldout", c.data.n_heldout);
    c.data.clean_concepts = d.value("clean_concepts", c.data.clean_concepts);
    c.data.harmful_concepts = d.value("harmful_concepts", c.data.harmful_concepts);
    c.data.heldout_clean = d.value("heldout_clean", c.data.heldout_clean);
    c.data.heldout_harmful = d.value("heldout_harmful", c.data.heldout_harmful);
    c.data.clean_weight = d.value("clean_weight", c.data.clean_weight);
    c.data.clean_mean = d.value("clean_mean", c.data.clean_mean);
    c.data.harmful_mean = d.value("harmful_mean", c.data.harmful_mean);
    c.data.mean_jitter = d.value("mean_jitter", c.data.mean_jitter);
    c.data.component_std = d.value("component_std", c.data.component_std);
    c.data.token_len = d.value("token_len", c.data.token_len);
    c.data.embed_dim = d.value("embed_dim", c.data.embed_dim);
    c.data.tokens_per_class = d.value("tokens_per_class", c.data.tokens_per_class);
    c.data.clean_offset = d.value("clean_offset", c.data.clean_offset);
    c.data.harmful_offset = d.value("harmful_offset", c.data.harmful_offset);
    c.data.token_std = d.value("token_std", c.data.token_std);
    c.data.phi_token_std = d.value("phi_token_std", c.data.phi_token_std);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    c.schedule.t_count = s.value("t_count", c.schedule.t_count);
    c.schedule.beta_start = s.value("beta_start", c.schedule.beta_start);
    c.schedule.beta_end = s.value("beta_end", c.schedule.beta_end);
  }
  if (j.contains("dm")) {
    const auto& d = j.at("dm");
    c.dm.hidden = d.value("hidden", c.dm.hidden);
    c.dm.activation = d.value("activation", c.dm.activation);
    c.dm.cond_mode = d.value("cond_mode", c.dm.cond_mode);
    c.dm.time_features = d.value("time_features", c.dm.time_features);
    c.dm.epochs = d.value("epochs", c.dm.epochs);
    c.dm.batch = d.value("batch", c.dm.batch);
    c.dm.lr = d.value("lr", c.dm.lr);
    c.dm.p_uncond = d.value("p_uncond", c.dm.p_uncond);
    c.dm.cond_noise = d.value("cond_noise", c.dm.cond_noise);
    c.dm.cosine_lr = d.value("cosine_lr", c.dm.cosine_lr);
  }
  if (j.contains("ahfc")) {
    const auto& a = j.at("ahfc");
    c.ahfc.layers = a.value("layers", c.ahfc.layers);
    c.ahfc.heads = a.value("heads", c.ahfc.heads);
    c.ahfc.ff_mult = a.value("ff_mult", c.ahfc.ff_mult);
    c.ahfc.dropout = a.value("dropout", c.ahfc.dropout);
    c.ahfc.epochs = a.value("epochs", c.ahfc.epochs);
    c.ahfc.batch = a.value("batch", c.ahfc.batch);
    c.ahfc.lr = a.value("lr", c.ahfc.lr);
    c.ahfc.cosine_lr = a.value("cosine_lr", c.ahfc.cosine_lr);
  }
  if (j.contains("sampling")) {
    const auto& s = j.at("sampling");
    c.sampling.mode = s.value("mode", c.sampling.mode);
    c.sampling.steps = s.value("steps", c.sampling.steps);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    c.sweep.etas = s.value("etas", c.sweep.etas);
    c.sweep.samples_per_concept = s.value("samples_per_concept", c.sweep.samples_per_concept);
  }
  if (j.contains("align")) {
    const auto& a = j.at("align");
    c.align.enabled = a.value("enabled", c.align.enabled);
    c.align.eta = a.value("eta", c.align.eta);
    c.align.steps = a.value("steps", c.align.steps);
    c.align.batch = a.value("batch", c.align.batch);
    c.align.lr = a.value("lr", c.align.lr);
    c.align.quantile = a.value("quantile", c.align.quantile);
    c.align.dataset_n = a.value("dataset_n", c.align.dataset_n);
    c.align.clean_frac = a.value("clean_frac", c.align.clean_frac);
    c.align.calib_size = a.value("calib_size", c.align.calib_size);
    c.align.eval_eta = a.value("eval_eta", c.align.eval_eta);
    c.align.eval_samples_per_concept =
        a.value("eval_samples_per_concept", c.align.eval_samples_per_concept);
    c.align.ablation_etas = a.value("ablation_etas", c.align.ablation_etas);
    c.align.ablation_steps = a.value("ablation_steps", c.align.ablation_steps);
  }
  if (j.contains("oracle")) {
    const auto& o = j.at("oracle");
    c.oracle.tilt_samples = o.value("tilt_samples", c.oracle.tilt_samples);
    c.oracle.tilt_eta = o.value("tilt_eta", c.oracle.tilt_eta);
    c.oracle.grid_bins = o.value("grid_bins", c.oracle.grid_bins);
    c.oracle.grid_span_sigma = o.value("grid_span_sigma", c.oracle.grid_span_sigma);
    c.oracle.identity_eta = o.value("identity_eta", c.oracle.identity_eta);
    c.oracle.identity_fd_step = o.value("identity_fd_step", c.oracle.identity_fd_step);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_json(nlohmann::json::parse(read_text_file(path)));
}

uint64_t ExperimentConfig::hash() const {
  // identifies config + seed; where the artifacts land is not part of it
  nlohmann::ordered_json j = to_json();
  j.erase("out_dir");
  std::string dump = j.dump();
  return fnv1a64(dump.data(), dump.size());
}

std::string ExperimentConfig::run_id() const { return hex64(hash()); }

void ExperimentConfig::validate() const {
  if (data.dim < 1) throw std::runtime_error("config: dim must be >= 1");
  if (static_cast<int>(data.clean_mean.size()) != data.dim ||
      static_cast<int>(data.harmful_mean.size()) != data.dim) {
    throw std::runtime_error("config: class means must have length dim");
  }
  if (data.clean_concepts < 2 || data.harmful_concepts < 1) {
    throw std::runtime_error("config: need >= 2 clean and >= 1 harmful training concepts");
  }
  if (data.clean_weight <= 0.0 || data.clean_weight >= 1.0) {
    throw std::runtime_error("config: clean_weight must be in (0,1)");
  }
  if (align.clean_frac <= 0.0 || align.clean_frac >= 1.0) {
    throw std::runtime_error("config: align.clean_frac must be in (0,1)");
  }
  if (sampling.mode != "ddim" && sampling.mode != "ddpm") {
    throw std::runtime_error("config: sampling.mode must be ddim or ddpm");
  }
}

// ---------------------------------------------------------------------------
// small file helpers

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

// ---------------------------------------------------------------------------
// records and tables

nlohmann::ordered_json MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["stage"] = stage;
  j["harmful_rate"] = harmful_rate ? nlohmann::ordered_json(*harmful_rate)
                                   : nlohmann::ordered_json(nullptr);
  j["quality_distance"] = quality_distance ? nlohmann::ordered_json(*quality_distance)
                                           : nlohmann::ordered_json(nullptr);
  j["hed"] = hed_stats.is_null() ? nlohmann::ordered_json(nullptr) : hed_stats;
  return j;
}

std::string SweepTable::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "eta,mode,harmful_rate,quality_distance\n";
  for (const SweepRow& r : rows) {
    os << r.eta << "," << r.mode << "," << r.harmful_rate << "," << r.quality_distance << "\n";
  }
  return os.str();
}

nlohmann::ordered_json SweepTable::to_json() const {
  nlohmann::ordered_json rows_j = nlohmann::ordered_json::array();
  for (const SweepRow& r : rows) {
    rows_j.push_back({{"eta", r.eta},
                      {"mode", r.mode},
                      {"harmful_rate", r.harmful_rate},
                      {"quality_distance", r.quality_distance}});
  }
  return nlohmann::ordered_json{{"rows", rows_j}, {"eta_zero_identical", eta_zero_identical}};
}

StagePaths StagePaths::in(const std::string& out_dir) {
  auto p = [&](const std::string& name) { return out_dir + "/" + name; };
  StagePaths s;
  s.config_json = p("config.json");
  s.vocab = p("vocab.bin");
  s.train_data = p("train.bin");
  s.heldout_data = p("heldout.bin");
  s.align_data = p("align.bin");
  s.dm_ckpt = p("dm.ckpt");
  s.dm_loss = p("dm_loss.csv");
  s.ahfc_ckpt = p("ahfc.ckpt");
  s.ahfc_loss = p("ahfc_loss.csv");
  s.hed_csv = p("hed_hist.csv");
  s.hed_json = p("hed_report.json");
  s.sweep_csv = p("sweep.csv");
  s.sweep_json = p("sweep.json");
  s.student_ckpt = p("student.ckpt");
  s.align_json = p("align.json");
  s.ablation_csv = p("ablation.csv");
  s.ablation_json = p("ablation.json");
  s.tilt_json = p("tilt_verdict.json");
  s.identity_json = p("identity.json");
  s.metrics_jsonl = p("metrics.jsonl");
  s.report_json = p("report.json");
  s.timings_json = p("timings.json");
  return s;
}

// ---------------------------------------------------------------------------
// pipeline

Pipeline::Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)), paths_(StagePaths::in(cfg_.out_dir)) {
  cfg_.validate();
  std::filesystem::create_directories(cfg_.out_dir);
  write_text_file(paths_.config_json, cfg_.to_json().dump(2) + "\n");
}

namespace {

struct ConceptNames {
  std::vector<std::string> train_clean, train_harm, heldout_clean, heldout_harm;
};

ConceptNames concept_names(const ExperimentConfig& cfg) {
  ConceptNames n;
  for (int i = 0; i < cfg.data.clean_concepts; ++i) n.train_clean.push_back("clean" + two_digits(i));
  for (int i = 0; i < cfg.data.harmful_concepts; ++i) n.train_harm.push_back("harm" + two_digits(i));
  for (int i = 0; i < cfg.data.heldout_clean; ++i) n.heldout_clean.push_back("clean_ho" + two_digits(i));
  for (int i = 0; i < cfg.data.heldout_harmful; ++i) n.heldout_harm.push_back("harm_ho" + two_digits(i));
  return n;
}

VocabSpec make_vocab_spec(const ExperimentConfig& cfg) {
  ConceptNames names = concept_names(cfg);
  VocabSpec vs;
  vs.clean_concepts = names.train_clean;
  vs.clean_concepts.insert(vs.clean_concepts.end(), names.heldout_clean.begin(),
                           names.heldout_clean.end());
  vs.harmful_concepts = names.train_harm;
  vs.harmful_concepts.insert(vs.harmful_concepts.end(), names.heldout_harm.begin(),
                             names.heldout_harm.end());
  vs.token_len = cfg.data.token_len;
  vs.embed_dim = cfg.data.embed_dim;
  vs.tokens_per_class = cfg.data.tokens_per_class;
  vs.clean_offset = cfg.data.clean_offset;
  vs.harmful_offset = cfg.data.harmful_offset;
  vs.token_std = cfg.data.token_std;
  vs.phi_token_std = cfg.data.phi_token_std;
  vs.seed = splitmix64(cfg.seed);
  return vs;
}

std::vector<double> identity_cov(int k, double var) {
  std::vector<double> cov(static_cast<size_t>(k) * k, 0.0);
  for (int i = 0; i < k; ++i) cov[static_cast<size_t>(i * k + i)] = var;
  return cov;
}

GeneratorSpec make_spec_with_weights(const ExperimentConfig& cfg, const BuiltVocab& built,
                                     double clean_weight) {
  ConceptNames names = concept_names(cfg);
  GeneratorSpec spec;
  spec.dim = cfg.data.dim;
  // Per-concept means are tied affinely to the pooled embedding's class
  // axis, anchored so the class centroids land on the configured means.
  // Every conditional score field is then a mean-shift of the same Gaussian
  // family, linear in the conditioning vector.
  double slope = (cfg.data.clean_mean[0] - cfg.data.harmful_mean[0]) /
                 (cfg.data.clean_offset - cfg.data.harmful_offset);
  double intercept = cfg.data.clean_mean[0] - slope * cfg.data.clean_offset;
  Rng jitter_rng = Rng(cfg.seed).fork(kSeedJitter);
  auto add_concept = [&](const std::string& id, SafetyLabel label, double weight,
                         const std::vector<double>& class_mean) {
    const ConceptInfo& info = built.vocab.concept_at(built.vocab.index_of(id));
    std::vector<double> pooled = built.table.mean_pooled(info.tokens);
    MixtureComponent comp;
    comp.weight = 1.0;
    comp.mean = class_mean;
    comp.mean[0] = intercept + slope * pooled[0];
    for (double& m : comp.mean) m += cfg.data.mean_jitter * jitter_rng.normal();
    comp.cov = identity_cov(cfg.data.dim, cfg.data.component_std * cfg.data.component_std);
    spec.concept_ids.push_back(id);
    spec.concept_labels.push_back(label);
    spec.concept_weights.push_back(weight);
    spec.mixtures.push_back(ConceptMixture{{comp}});
  };
  double wc = clean_weight / names.train_clean.size();
  double wf = (1.0 - clean_weight) / names.train_harm.size();
  for (const auto& id : names.train_clean) add_concept(id, SafetyLabel::Clean, wc, cfg.data.clean_mean);
  for (const auto& id : names.train_harm)
    add_concept(id, SafetyLabel::Harmful, wf, cfg.data.harmful_mean);
  spec.validate();
  return spec;
}

GeneratorSpec clean_only_spec(const GeneratorSpec& base) {
  GeneratorSpec spec;
  spec.dim = base.dim;
  double total = 0.0;
  for (int c = 0; c < base.concept_count(); ++c) {
    if (base.concept_labels[static_cast<size_t>(c)] == SafetyLabel::Clean)
      total += base.concept_weights[static_cast<size_t>(c)];
  }
  for (int c = 0; c < base.concept_count(); ++c) {
    if (base.concept_labels[static_cast<size_t>(c)] != SafetyLabel::Clean) continue;
    spec.concept_ids.push_back(base.concept_ids[static_cast<size_t>(c)]);
    spec.concept_labels.push_back(SafetyLabel::Clean);
    spec.concept_weights.push_back(base.concept_weights[static_cast<size_t>(c)] / total);
    spec.mixtures.push_back(base.mixtures[static_cast<size_t>(c)]);
  }
  return spec;
}

GeneratorSpec tilt_spec(const ExperimentConfig& cfg) {
  GeneratorSpec spec;
  spec.dim = cfg.data.dim;
  double var = cfg.data.component_std * cfg.data.component_std;
  spec.concept_ids = {"tilt_clean", "tilt_harm"};
  spec.concept_labels = {SafetyLabel::Clean, SafetyLabel::Harmful};
  spec.concept_weights = {cfg.data.clean_weight, 1.0 - cfg.data.clean_weight};
  spec.mixtures.push_back(
      ConceptMixture{{MixtureComponent{1.0, cfg.data.clean_mean, identity_cov(spec.dim, var)}}});
  spec.mixtures.push_back(
      ConceptMixture{{MixtureComponent{1.0, cfg.data.harmful_mean, identity_cov(spec.dim, var)}}});
  spec.validate();
  return spec;
}

ScoreNetConfig score_net_config(const ExperimentConfig& cfg) {
  ScoreNetConfig sc;
  sc.x_dim = cfg.data.dim;
  sc.time_features = cfg.dm.time_features;
  sc.cond_dim = cfg.data.embed_dim;
  sc.hidden = cfg.dm.hidden;
  sc.activation = cfg.dm.activation;
  sc.cond_mode = cfg.dm.cond_mode;
  return sc;
}

AhfcConfig ahfc_config(const ExperimentConfig& cfg) {
  AhfcConfig ac;
  ac.layers = cfg.ahfc.layers;
  ac.heads = cfg.ahfc.heads;
  ac.width = cfg.data.embed_dim;
  ac.seq_len = cfg.data.token_len;
  ac.ff_mult = cfg.ahfc.ff_mult;
  ac.dropout = cfg.ahfc.dropout;
  return ac;
}

SamplerConfig sampler_config(const ExperimentConfig& cfg, uint64_t seed) {
  SamplerConfig sc;
  sc.mode = sampler_mode_from_name(cfg.sampling.mode);
  sc.steps = cfg.sampling.steps;
  sc.seed = seed;
  return sc;
}

std::string loss_csv(const LossCurve& curve) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,loss\n";
  for (size_t i = 0; i < curve.epoch_loss.size(); ++i) os << i << "," << curve.epoch_loss[i] << "\n";
  return os.str();
}

std::vector<int> vocab_indices(const ConceptVocab& vocab, const std::vector<std::string>& names) {
  std::vector<int> out;
  for (const auto& n : names) out.push_back(vocab.index_of(n));
  return out;
}

}  // namespace

GeneratorSpec Pipeline::train_spec() const {
  BuiltVocab built = build_vocab(make_vocab_spec(cfg_));
  return make_spec_with_weights(cfg_, built, cfg_.data.clean_weight);
}
GeneratorSpec Pipeline::align_spec() const {
  BuiltVocab built = build_vocab(make_vocab_spec(cfg_));
  return make_spec_with_weights(cfg_, built, cfg_.align.clean_frac);
}

bool Pipeline::stage_done(const std::string& stage) const {
  std::string marker = cfg_.out_dir + "/" + stage + ".done";
  if (!file_exists(marker)) return false;
  return read_text_file(marker) == cfg_.run_id();
}

void Pipeline::mark_stage_done(const std::string& stage) {
  write_text_file(cfg_.out_dir + "/" + stage + ".done", cfg_.run_id());
}

void Pipeline::write_stage_metrics(const std::string& stage,
                                   const std::vector<MetricsRecord>& records) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const MetricsRecord& r : records) arr.push_back(r.to_json());
  write_text_file(cfg_.out_dir + "/stage_" + stage + ".metrics.json", arr.dump(2) + "\n");
}

void Pipeline::record_timing(const std::string& stage, double seconds) {
  nlohmann::ordered_json j;
  if (file_exists(paths_.timings_json)) {
    j = nlohmann::ordered_json::parse(read_text_file(paths_.timings_json));
  }
  j[stage] = seconds;
  write_text_file(paths_.timings_json, j.dump(2) + "\n");
}

template <typename Fn>
void Pipeline::run_stage(const std::string& name, bool resume, Fn&& fn) {
  if (resume && stage_done(name)) return;
  double t0 = now_seconds();
  fn();
  record_timing(name, now_seconds() - t0);
  mark_stage_done(name);
}

void Pipeline::run_gen_data() {
  BuiltVocab built = build_vocab(make_vocab_spec(cfg_));
  save_vocab(paths_.vocab, built);

  Rng root(cfg_.seed);
  GeneratorSpec tspec = train_spec();
  save_dataset(paths_.train_data, generate_dataset(tspec, cfg_.data.n_train, root.fork(kSeedTrainData).seed()));
  save_dataset(paths_.heldout_data,
               generate_dataset(tspec, cfg_.data.n_heldout, root.fork(kSeedHeldoutData).seed()));
  save_dataset(paths_.align_data,
               generate_dataset(align_spec(), cfg_.align.dataset_n, root.fork(kSeedAlignData).seed()));

  MetricsRecord rec;
  rec.run_id = cfg_.run_id();
  rec.stage = "gen-data";
  write_stage_metrics("gen-data", {rec});
}

void Pipeline::run_train_dm() {
  BuiltVocab built = load_vocab(paths_.vocab);
  Dataset train = load_dataset(paths_.train_data);
  Dataset heldout = load_dataset(paths_.heldout_data);
  NoiseSchedule sched = make_schedule(cfg_.schedule.t_count, cfg_.schedule.beta_start,
                                      cfg_.schedule.beta_end);

  Rng init_rng = Rng(cfg_.seed).fork(kSeedDmInit);
  ScoreNetwork net(score_net_config(cfg_), init_rng);
  DenoiserTrainConfig tc;
  tc.epochs = cfg_.dm.epochs;
  tc.batch = cfg_.dm.batch;
  tc.lr = cfg_.dm.lr;
  tc.p_uncond = cfg_.dm.p_uncond;
  tc.cond_noise = cfg_.dm.cond_noise;
  tc.cosine_lr = cfg_.dm.cosine_lr;
  tc.seed = Rng(cfg_.seed).fork(kSeedDmTrain).seed();
  LossCurve curve = train_denoiser(net, train, built.vocab, built.table, sched, tc);
  net.save_checkpoint(paths_.dm_ckpt);
  write_text_file(paths_.dm_loss, loss_csv(curve));

  MixtureOracle oracle(train.spec());
  double rmse = denoiser_rmse(net, heldout, built.vocab, built.table, oracle, sched, 2048,
                              Rng(cfg_.seed).fork(kSeedRmse).seed());
  MetricsRecord rec;
  rec.run_id = cfg_.run_id();
  rec.stage = "train-dm";
  rec.quality_distance = rmse;  // RMSE against the analytic score
  write_stage_metrics("train-dm", {rec});
}

void Pipeline::run_train_ahfc() {
  BuiltVocab built = load_vocab(paths_.vocab);
  Dataset train = load_dataset(paths_.train_data);
  NoiseSchedule sched = make_schedule(cfg_.schedule.t_count, cfg_.schedule.beta_start,
                                      cfg_.schedule.beta_end);
  ScoreNetwork net = ScoreNetwork::load_checkpoint(paths_.dm_ckpt);

  Rng init_rng = Rng(cfg_.seed).fork(kSeedAhfcInit);
  AhfcNetwork ahfc(ahfc_config(cfg_), init_rng);
  AhfcTrainConfig tc;
  tc.epochs = cfg_.ahfc.epochs;
  tc.batch = cfg_.ahfc.batch;
  tc.lr = cfg_.ahfc.lr;
  tc.cosine_lr = cfg_.ahfc.cosine_lr;
  tc.seed = Rng(cfg_.seed).fork(kSeedAhfcTrain).seed();
  LossCurve curve = train_ahfc(ahfc, net, train, built.vocab, built.table, sched, tc);
  ahfc.save_checkpoint(paths_.ahfc_ckpt);
  write_text_file(paths_.ahfc_loss, loss_csv(curve));

  MetricsRecord rec;
  rec.run_id = cfg_.run_id();
  rec.stage = "train-ahfc";
  write_stage_metrics("train-ahfc", {rec});
}

void Pipeline::run_hed_report() {
  BuiltVocab built = load_vocab(paths_.vocab);
  AhfcNetwork ahfc = AhfcNetwork::load_checkpoint(paths_.ahfc_ckpt);
  ConceptNames names = concept_names(cfg_);
  std::vector<int> heldout = vocab_indices(built.vocab, names.heldout_clean);
  std::vector<int> harm = vocab_indices(built.vocab, names.heldout_harm);
  heldout.insert(heldout.end(), harm.begin(), harm.end());

  HedReport report = hed_report(ahfc, built.vocab, built.table, heldout);
  write_text_file(paths_.hed_csv, report.to_csv());
  write_text_file(paths_.hed_json, report.to_json().dump(2) + "\n");

  MetricsRecord rec;
  rec.run_id = cfg_.run_id();
  rec.stage = "hed-report";
  rec.hed_stats = report.to_json();
  rec.hed_stats.erase("entries");
  write_stage_metrics("hed-report", {rec});
}

void Pipeline::run_sweep() {
  BuiltVocab built = load_vocab(paths_.vocab);
  Dataset train = load_dataset(paths_.train_data);
  NoiseSchedule sched = make_schedule(cfg_.schedule.t_count, cfg_.schedule.beta_start,
                                      cfg_.schedule.beta_end);
  ScoreNetwork net = ScoreNetwork::load_checkpoint(paths_.dm_ckpt);
  AhfcNetwork ahfc = AhfcNetwork::load_checkpoint(paths_.ahfc_ckpt);
  MixtureOracle oracle(train.spec());
  ConceptNames names = concept_names(cfg_);
  std::vector<int> harm_ids = vocab_indices(built.vocab, names.train_harm);
  std::vector<int> clean_ids = vocab_indices(built.vocab, names.train_clean);

  // reference clean samples drawn directly from the clean mixture
  GeneratorSpec ref_spec = clean_only_spec(train.spec());
  Dataset reference = generate_dataset(ref_spec, cfg_.sweep.samples_per_concept * clean_ids.size(),
                                       Rng(cfg_.seed).fork(kSeedReferenceData).seed());

  int k = cfg_.data.dim;
  uint64_t sampler_seed = Rng(cfg_.seed).fork(kSeedSweepSampler).seed();

  auto sample_pool = [&](GuidanceMode mode, double eta, const std::vector<int>& concepts) {
    std::vector<double> pool;
    for (int ci : concepts) {
      ConditioningSet cond = make_conditioning(built.vocab, built.table, ci,
                                               mode == GuidanceMode::SafeCfg ? &ahfc : nullptr);
      GuidanceSpec gspec{mode, eta};
      SamplerConfig sc = sampler_config(cfg_, splitmix64(sampler_seed ^ static_cast<uint64_t>(ci)));
      std::vector<double> s = sample_batch(make_guided_field(net, gspec, std::move(cond),
                                                             sched.t_count()),
                                           sched, cfg_.sweep.samples_per_concept, k, sc);
      pool.insert(pool.end(), s.begin(), s.end());
    }
    return pool;
  };

  SweepTable table;
  table.eta_zero_identical = true;
  std::vector<MetricsRecord> records;
  for (double eta : cfg_.sweep.etas) {
    for (GuidanceMode mode : {GuidanceMode::Cfg, GuidanceMode::SafeCfg}) {
      std::vector<double> harm_pool = sample_pool(mode, eta, harm_ids);
      std::vector<double> clean_pool = sample_pool(mode, eta, clean_ids);
      SweepRow row;
      row.eta = eta;
      row.mode = guidance_mode_name(mode);
      row.harmful_rate = harmful_rate(harm_pool, k, oracle);
      row.quality_distance = energy_distance(clean_pool, reference.x_flat(), k);
      table.rows.push_back(row);
      if (eta == 0.0 && mode == GuidanceMode::SafeCfg) {
        std::vector<double> harm_cfg = sample_pool(GuidanceMode::Cfg, 0.0, harm_ids);
        std::vector<double> clean_cfg = sample_pool(GuidanceMode::Cfg, 0.0, clean_ids);
        table.eta_zero_identical = harm_pool == harm_cfg && clean_pool == clean_cfg;
      }
      MetricsRecord rec;
      rec.run_id = cfg_.run_id();
      rec.stage = "sweep/" + row.mode + "/eta=" + std::to_string(eta);
      rec.harmful_rate = row.harmful_rate;
      rec.quality_distance = row.quality_distance;
      records.push_back(rec);
    }
  }
  write_text_file(paths_.sweep_csv, table.to_csv());
  write_text_file(paths_.sweep_json, table.to_json().dump(2) + "\n");
  write_stage_metrics("sweep", records);
}

void Pipeline::run_align() {
  if (!cfg_.align.enabled) {
    write_stage_metrics("align", {});
    return;
  }
  BuiltVocab built = load_vocab(paths_.vocab);
  Dataset align_ds = load_dataset(paths_.align_data);
  Dataset train = load_dataset(paths_.train_data);
  NoiseSchedule sched = make_schedule(cfg_.schedule.t_count, cfg_.schedule.beta_start,
                                      cfg_.schedule.beta_end);
  ScoreNetwork teacher_net = ScoreNetwork::load_checkpoint(paths_.dm_ckpt);
  AhfcNetwork ahfc = AhfcNetwork::load_checkpoint(paths_.ahfc_ckpt);
  MixtureOracle oracle(train.spec());

  uint64_t labels_before = align_ds.label_reads();

  // threshold from unlabeled calibration traffic
  Rng calib_rng = Rng(cfg_.seed).fork(kSeedCalib);
  std::vector<int> calib;
  for (int i = 0; i < cfg_.align.calib_size; ++i) {
    int64_t row = calib_rng.uniform_int(0, align_ds.size() - 1);
    calib.push_back(built.vocab.index_of(align_ds.concept_id(row)));
  }
  double dis_th = select_threshold(ahfc, built.vocab, built.table, calib, cfg_.align.quantile);

  TeacherStudentPair pair = TeacherStudentPair::make(teacher_net);
  AlignConfig acfg;
  acfg.eta = cfg_.align.eta;
  acfg.quantile = cfg_.align.quantile;
  acfg.dis_th = dis_th;
  acfg.steps = cfg_.align.steps;
  acfg.batch = cfg_.align.batch;
  acfg.lr = cfg_.align.lr;
  acfg.seed = Rng(cfg_.seed).fork(kSeedAlignTrain).seed();
  AlignResult res = align_train(pair, ahfc, align_ds, built.vocab, built.table, sched, acfg);

  uint64_t labels_after = align_ds.label_reads();
  bool teacher_unchanged = pair.teacher.checksum() == pair.teacher_checksum;
  pair.student.save_checkpoint(paths_.student_ckpt);

  // teacher/student safety metrics at the evaluation guidance scale
  ConceptNames names = concept_names(cfg_);
  GeneratorSpec ref_spec = clean_only_spec(train.spec());
  std::vector<int> clean_ids = vocab_indices(built.vocab, names.train_clean);
  Dataset reference =
      generate_dataset(ref_spec, cfg_.align.eval_samples_per_concept * clean_ids.size(),
                       Rng(cfg_.seed).fork(kSeedReferenceData).seed());
  ModelEvalConfig ec;
  ec.harmful_concepts = vocab_indices(built.vocab, names.train_harm);
  ec.clean_concepts = clean_ids;
  ec.samples_per_concept = cfg_.align.eval_samples_per_concept;
  ec.guidance = GuidanceSpec{GuidanceMode::Cfg, cfg_.align.eval_eta};
  ec.sampler = sampler_config(cfg_, Rng(cfg_.seed).fork(kSeedEvalSampler).seed());
  ec.clean_reference = &reference.x_flat();
  ModelEvalResult teacher_m = evaluate_model(pair.teacher, nullptr, built.vocab, built.table,
                                             oracle, sched, ec);
  ModelEvalResult student_m = evaluate_model(pair.student, nullptr, built.vocab, built.table,
                                             oracle, sched, ec);

  nlohmann::ordered_json aj{{"dis_th", dis_th},
                            {"steps", cfg_.align.steps},
                            {"eta", cfg_.align.eta},
                            {"final_loss", res.losses.epoch_loss.empty() ? 0.0
                                                                         : res.losses.epoch_loss.back()},
                            {"max_raw_exponent", res.max_raw_exponent},
                            {"clamped_targets", res.clamped_targets},
                            {"labels_read_during_alignment", labels_after - labels_before},
                            {"teacher_unchanged", teacher_unchanged},
                            {"teacher_harmful_rate", teacher_m.harmful_rate},
                            {"student_harmful_rate", student_m.harmful_rate},
                            {"teacher_quality_distance", teacher_m.quality_distance},
                            {"student_quality_distance", student_m.quality_distance}};
  write_text_file(paths_.align_json, aj.dump(2) + "\n");

  std::vector<MetricsRecord> records;
  for (const char* who : {"teacher", "student"}) {
    const ModelEvalResult& m = std::strcmp(who, "teacher") == 0 ? teacher_m : student_m;
    MetricsRecord rec;
    rec.run_id = cfg_.run_id();
    rec.stage = std::string("align/") + who;
    rec.harmful_rate = m.harmful_rate;
    rec.quality_distance = m.quality_distance;
    records.push_back(rec);
  }
  write_stage_metrics("align", records);
}

void Pipeline::run_ablate() {
  if (!cfg_.align.enabled) {
    write_stage_metrics("ablate", {});
    return;
  }
  BuiltVocab built = load_vocab(paths_.vocab);
  Dataset align_ds = load_dataset(paths_.align_data);
  Dataset train = load_dataset(paths_.train_data);
  NoiseSchedule sched = make_schedule(cfg_.schedule.t_count, cfg_.schedule.beta_start,
                                      cfg_.schedule.beta_end);
  ScoreNetwork teacher_net = ScoreNetwork::load_checkpoint(paths_.dm_ckpt);
  AhfcNetwork ahfc = AhfcNetwork::load_checkpoint(paths_.ahfc_ckpt);
  MixtureOracle oracle(train.spec());

  double hed_auc = 0.0;
  if (file_exists(paths_.hed_json)) {
    auto j = nlohmann::json::parse(read_text_file(paths_.hed_json));
    if (!j.at("auc").is_null()) hed_auc = j.at("auc").get<double>();
  }

  nlohmann::json align_j = nlohmann::json::parse(read_text_file(paths_.align_json));
  AlignConfig base;
  base.dis_th = align_j.at("dis_th").get<double>();
  base.batch = cfg_.align.batch;
  base.lr = cfg_.align.lr;
  base.quantile = cfg_.align.quantile;
  base.seed = Rng(cfg_.seed).fork(kSeedAlignTrain).seed();
  base.eta = cfg_.align.eta;
  base.steps = cfg_.align.steps;

  ConceptNames names = concept_names(cfg_);
  GeneratorSpec ref_spec = clean_only_spec(train.spec());
  std::vector<int> clean_ids = vocab_indices(built.vocab, names.train_clean);
  Dataset reference =
      generate_dataset(ref_spec, cfg_.align.eval_samples_per_concept * clean_ids.size(),
                       Rng(cfg_.seed).fork(kSeedReferenceData).seed());
  ModelEvalConfig ec;
  ec.harmful_concepts = vocab_indices(built.vocab, names.train_harm);
  ec.clean_concepts = clean_ids;
  ec.samples_per_concept = cfg_.align.eval_samples_per_concept;
  ec.guidance = GuidanceSpec{GuidanceMode::Cfg, cfg_.align.eval_eta};
  ec.sampler = sampler_config(cfg_, Rng(cfg_.seed).fork(kSeedEvalSampler).seed());
  ec.clean_reference = &reference.x_flat();

  AblationTable table = ablation_sweep(teacher_net, ahfc, align_ds, built.vocab, built.table,
                                       oracle, sched, base, cfg_.align.ablation_etas,
                                       cfg_.align.ablation_steps, ec, hed_auc);
  write_text_file(paths_.ablation_csv, table.to_csv());
  write_text_file(paths_.ablation_json, table.to_json().dump(2) + "\n");

  std::vector<MetricsRecord> records;
  for (const AblationCell& c : table.cells) {
    MetricsRecord rec;
    rec.run_id = cfg_.run_id();
    rec.stage = "ablate/eta=" + std::to_string(c.eta) + "/steps=" + std::to_string(c.steps);
    rec.harmful_rate = c.harmful_rate;
    rec.quality_distance = c.quality_distance;
    records.push_back(rec);
  }
  write_stage_metrics("ablate", records);
}

void Pipeline::run_verify_oracle() {
  NoiseSchedule sched = make_schedule(cfg_.schedule.t_count, cfg_.schedule.beta_start,
                                      cfg_.schedule.beta_end);
  MixtureOracle oracle(tilt_spec(cfg_));

  TiltTolerances tol;
  uint64_t tilt_seed = Rng(cfg_.seed).fork(kSeedTilt).seed();
  TiltVerdict verdict = verify_tilt(oracle, sched, cfg_.oracle.tilt_eta, cfg_.oracle.tilt_samples,
                                    tilt_seed, tol, cfg_.oracle.grid_bins,
                                    cfg_.oracle.grid_span_sigma);
  TiltVerdict noop = verify_tilt(oracle, sched, 0.0, cfg_.oracle.tilt_samples, tilt_seed, tol,
                                 cfg_.oracle.grid_bins, cfg_.oracle.grid_span_sigma);

  // identity grid: 5x5 points spanning the data box, cycled over timesteps
  std::vector<std::pair<std::vector<double>, int>> grid;
  std::vector<int> ts{20, 60, 100, 140, 180};
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      double x = -4.0 + 8.0 * i / 4.0;
      double y = -2.0 + 4.0 * j / 4.0;
      grid.push_back({{x, y}, ts[static_cast<size_t>((i * 5 + j) % ts.size())]});
    }
  }
  double dev_harm = score_identity_check(oracle, sched, cfg_.oracle.identity_eta, 1,
                                         SafetyLabel::Harmful, grid, cfg_.oracle.identity_fd_step);
  double dev_clean = score_identity_check(oracle, sched, cfg_.oracle.identity_eta, 0,
                                          SafetyLabel::Clean, grid, cfg_.oracle.identity_fd_step);
  double dev_zero = score_identity_check(oracle, sched, 0.0, 1, SafetyLabel::Harmful, grid,
                                         cfg_.oracle.identity_fd_step);

  nlohmann::ordered_json tj = verdict.to_json();
  tj["eta_zero_noop"] = noop.eta_zero_noop;
  write_text_file(paths_.tilt_json, tj.dump(2) + "\n");
  nlohmann::ordered_json ij{{"max_deviation_harmful", dev_harm},
                            {"max_deviation_clean", dev_clean},
                            {"max_deviation_eta_zero", dev_zero},
                            {"fd_step", cfg_.oracle.identity_fd_step},
                            {"pass", dev_harm <= 1e-4 && dev_clean <= 1e-4 && dev_zero <= 1e-4}};
  write_text_file(paths_.identity_json, ij.dump(2) + "\n");

  MetricsRecord rec;
  rec.run_id = cfg_.run_id();
  rec.stage = "verify-oracle";
  rec.hed_stats = nullptr;
  write_stage_metrics("verify-oracle", {rec});
}

void Pipeline::run_report() {
  // metrics.jsonl: concatenation of per-stage records in pipeline order
  std::vector<std::string> stages{"gen-data", "train-dm", "train-ahfc", "hed-report",
                                  "sweep",    "align",    "ablate",     "verify-oracle"};
  std::ostringstream lines;
  for (const std::string& s : stages) {
    std::string path = cfg_.out_dir + "/stage_" + s + ".metrics.json";
    if (!file_exists(path)) continue;
    auto arr = nlohmann::ordered_json::parse(read_text_file(path));
    for (const auto& rec : arr) lines << rec.dump() << "\n";
  }
  write_text_file(paths_.metrics_jsonl, lines.str());

  nlohmann::ordered_json report;
  report["run_id"] = cfg_.run_id();
  report["config"] = cfg_.to_json();
  nlohmann::ordered_json checks;

  if (file_exists(paths_.sweep_json)) {
    auto sj = nlohmann::ordered_json::parse(read_text_file(paths_.sweep_json));
    report["sweep"] = sj;
    // trend checks over etas <= 7.5
    std::map<double, double> safecfg_rate, cfg_rate, safecfg_q, cfg_q;
    for (const auto& row : sj.at("rows")) {
      double eta = row.at("eta").get<double>();
      if (eta > 7.5) continue;
      if (row.at("mode") == "safecfg") {
        safecfg_rate[eta] = row.at("harmful_rate").get<double>();
        safecfg_q[eta] = row.at("quality_distance").get<double>();
      } else {
        cfg_rate[eta] = row.at("harmful_rate").get<double>();
        cfg_q[eta] = row.at("quality_distance").get<double>();
      }
    }
    int inversions = 0;
    double worst_inversion = 0.0;
    double prev = 2.0;
    for (const auto& [eta, r] : safecfg_rate) {
      if (r > prev) {
        ++inversions;
        worst_inversion = std::max(worst_inversion, r - prev);
      }
      prev = r;
    }
    bool cfg_nondecreasing = true;
    prev = -1.0;
    for (const auto& [eta, r] : cfg_rate) {
      if (r < prev) cfg_nondecreasing = false;
      prev = r;
    }
    bool quality_close = true;
    for (const auto& [eta, q] : safecfg_q) {
      double ref = cfg_q.at(eta);
      if (std::fabs(q - ref) > 0.2 * std::max(ref, 1e-12)) quality_close = false;
    }
    checks["sweep_safecfg_nonincreasing"] = inversions <= 1 && worst_inversion <= 0.02;
    checks["sweep_cfg_nondecreasing"] = cfg_nondecreasing;
    checks["sweep_eta_zero_identical"] = sj.at("eta_zero_identical").get<bool>();
    checks["sweep_quality_within_20pct"] = quality_close;
  }

  if (file_exists(paths_.hed_json)) {
    auto hj = nlohmann::ordered_json::parse(read_text_file(paths_.hed_json));
    report["hed"] = hj;
    checks["hed_auc_at_least_0.9"] = !hj.at("auc").is_null() && hj.at("auc").get<double>() >= 0.9;
  }

  if (file_exists(paths_.align_json)) {
    auto aj = nlohmann::ordered_json::parse(read_text_file(paths_.align_json));
    report["align"] = aj;
    double tr = aj.at("teacher_harmful_rate").get<double>();
    double sr = aj.at("student_harmful_rate").get<double>();
    double tq = aj.at("teacher_quality_distance").get<double>();
    double sq = aj.at("student_quality_distance").get<double>();
    checks["align_harmful_rate_halved"] = sr <= 0.5 * tr;
    checks["align_quality_increase_at_most_50pct"] = sq <= 1.5 * tq;
    checks["align_labels_unread"] = aj.at("labels_read_during_alignment").get<uint64_t>() == 0;
    checks["align_teacher_unchanged"] = aj.at("teacher_unchanged").get<bool>();
  }

  if (file_exists(paths_.ablation_json)) {
    auto bj = nlohmann::ordered_json::parse(read_text_file(paths_.ablation_json));
    report["ablation"] = bj;
    checks["ablation_monotone_eta"] = bj.at("harmful_rate_monotone_in_eta").get<bool>();
    checks["ablation_monotone_steps"] = bj.at("harmful_rate_monotone_in_steps").get<bool>();
  }

  if (file_exists(paths_.tilt_json)) {
    auto tj = nlohmann::ordered_json::parse(read_text_file(paths_.tilt_json));
    report["tilt"] = tj;
    checks["tilt_mass_halved"] = tj.at("pass_mass").get<bool>();
    checks["tilt_clean_tv"] = tj.at("pass_clean_tv").get<bool>();
    checks["tilt_eta_zero_noop"] = tj.at("eta_zero_noop").get<bool>();
  }
  if (file_exists(paths_.identity_json)) {
    auto ij = nlohmann::ordered_json::parse(read_text_file(paths_.identity_json));
    report["identity"] = ij;
    checks["identity_max_deviation"] = ij.at("pass").get<bool>();
  }

  bool all_ok = true;
  for (const auto& [key, val] : checks.items()) {
    if (val.is_boolean() && !val.get<bool>()) all_ok = false;
  }
  report["checks"] = checks;
  report["all_checks_passed"] = all_ok;
  write_text_file(paths_.report_json, report.dump(2) + "\n");
}

bool Pipeline::run_all(bool resume) {
  run_stage("gen-data", resume, [&] { run_gen_data(); });
  run_stage("train-dm", resume, [&] { run_train_dm(); });
  run_stage("train-ahfc", resume, [&] { run_train_ahfc(); });
  run_stage("hed-report", resume, [&] { run_hed_report(); });
  run_stage("sweep", resume, [&] { run_sweep(); });
  run_stage("align", resume, [&] { run_align(); });
  run_stage("ablate", resume, [&] { run_ablate(); });
  run_stage("verify-oracle", resume, [&] { run_verify_oracle(); });
  run_report();
  auto report = nlohmann::json::parse(read_text_file(paths_.report_json));
  return report.at("all_checks_passed").get<bool>();
}

double denoiser_rmse(const ScoreNetwork& net, const Dataset& heldout, const ConceptVocab& vocab,
                     const EmbeddingTable& table, const MixtureOracle& oracle,
                     const NoiseSchedule& sched, int64_t max_samples, uint64_t seed) {
  int k = net.config().x_dim;
  int t_count = sched.t_count();
  const GeneratorSpec& spec = heldout.spec();
  std::vector<std::vector<double>> pooled(static_cast<size_t>(spec.concept_count()));
  for (int c = 0; c < spec.concept_count(); ++c) {
    int vi = vocab.index_of(spec.concept_ids[static_cast<size_t>(c)]);
    pooled[static_cast<size_t>(c)] = table.mean_pooled(vocab.concept_at(vi).tokens);
  }
  Rng rng(seed);
  int64_t n = std::min<int64_t>(max_samples, heldout.size());
  std::vector<double> x_t(static_cast<size_t>(k)), eps(static_cast<size_t>(k)),
      pred(static_cast<size_t>(k)), truth(static_cast<size_t>(k));
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    int t = static_cast<int>(rng.uniform_int(1, t_count));
    for (int j = 0; j < k; ++j) eps[static_cast<size_t>(j)] = rng.normal();
    forward_sample(sched, heldout.x(i), eps.data(), k, t, x_t.data());
    int c = heldout.concept_index(i);
    net.eval_shared(x_t.data(), 1, t, t_count, pooled[static_cast<size_t>(c)].data(), pred.data());
    oracle.analytic_eps(x_t.data(), c, t, sched, truth.data());
    for (int j = 0; j < k; ++j) {
      double d = pred[static_cast<size_t>(j)] - truth[static_cast<size_t>(j)];
      acc += d * d;
    }
  }
  return std::sqrt(acc / (static_cast<double>(n) * k));
}

}  // namespace safecfg
