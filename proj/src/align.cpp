#include "safecfg/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "safecfg/adam.hpp"

namespace safecfg {

ConditioningSet make_conditioning(const ConceptVocab& vocab, const EmbeddingTable& table,
                                  int concept_index, const AhfcNetwork* ahfc) {
  ConditioningSet cond;
  cond.pooled_c = table.mean_pooled(vocab.concept_at(concept_index).tokens);
  cond.pooled_phi = table.mean_pooled(vocab.phi().tokens);
  if (ahfc) {
    cond.pooled_ahfc = ahfc->pooled_eval(embed(vocab, table, concept_index));
  }
  return cond;
}

void guided_epsilon(const ScoreNetwork& net, const GuidanceSpec& spec,
                    const ConditioningSet& cond, const double* x, int64_t n, int t, int t_count,
                    double* out) {
  spec.validate();
  int k = net.config().x_dim;
  size_t nk = static_cast<size_t>(n) * k;
  if (spec.mode == GuidanceMode::None) {
    net.eval_shared(x, n, t, t_count, cond.pooled_c.data(), out);
    return;
  }
  if (spec.mode == GuidanceMode::SafeCfg && cond.pooled_ahfc.empty()) {
    throw std::runtime_error("guided_epsilon: SafeCFG requires an AHFC network");
  }
  std::vector<double> eps_c(nk), eps_other(nk);
  net.eval_shared(x, n, t, t_count, cond.pooled_c.data(), eps_c.data());
  const double* other_cond = spec.mode == GuidanceMode::SafeCfg ? cond.pooled_ahfc.data()
                                                                : cond.pooled_phi.data();
  net.eval_shared(x, n, t, t_count, other_cond, eps_other.data());
  switch (spec.mode) {
    case GuidanceMode::Cfg:
      cfg_score({eps_c.data(), nk}, {eps_other.data(), nk}, spec.eta, {out, nk});
      break;
    case GuidanceMode::Negative:
      negative_score({eps_c.data(), nk}, {eps_other.data(), nk}, spec.eta, {out, nk});
      break;
    case GuidanceMode::SafeCfg:
      dsg_score({eps_c.data(), nk}, {eps_other.data(), nk}, spec.eta, {out, nk});
      break;
    default:
      break;
  }
}

EpsField make_guided_field(const ScoreNetwork& net, const GuidanceSpec& spec,
                           ConditioningSet cond, int t_count) {
  spec.validate();
  if (spec.mode == GuidanceMode::SafeCfg && cond.pooled_ahfc.empty()) {
    throw std::runtime_error("make_guided_field: SafeCFG requires an AHFC network");
  }
  return [&net, spec, cond = std::move(cond), t_count](const double* x, int64_t n, int t,
                                                       double* out) {
    guided_epsilon(net, spec, cond, x, n, t, t_count, out);
  };
}

// ---------------------------------------------------------------------------

void AlignConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw std::runtime_error("align: eta must be >= 0");
  if (!(dis_th > 0.0)) throw std::runtime_error("align: dis_th must be > 0");
  if (steps < 0 || batch < 1) throw std::runtime_error("align: bad steps/batch");
}

TeacherStudentPair TeacherStudentPair::make(const ScoreNetwork& trained) {
  TeacherStudentPair pair{trained.clone(), trained.clone(), 0};
  pair.teacher.set_trainable(false);
  pair.student.set_trainable(true);
  pair.teacher_checksum = pair.teacher.checksum();
  return pair;
}

double select_threshold(const AhfcNetwork& ahfc, const ConceptVocab& vocab,
                        const EmbeddingTable& table, const std::vector<int>& concept_sample,
                        double quantile, HedPooling pooling) {
  if (concept_sample.empty()) throw std::runtime_error("select_threshold: empty concept sample");
  if (quantile < 0.0 || quantile > 1.0) throw std::runtime_error("select_threshold: bad quantile");
  Tensor phi_embedding = embed(vocab, table, vocab.phi_index());
  std::vector<double> dis;
  dis.reserve(concept_sample.size());
  for (int ci : concept_sample) {
    dis.push_back(hed(ahfc, embed(vocab, table, ci), phi_embedding, pooling));
  }
  std::sort(dis.begin(), dis.end());
  size_t n = dis.size();
  size_t idx = quantile <= 0.0
                   ? 0
                   : std::min(n - 1, static_cast<size_t>(std::ceil(quantile * static_cast<double>(n))) - 1);
  return dis[idx];
}

AlignConceptState make_align_state(const AhfcNetwork& ahfc, const ConceptVocab& vocab,
                                   const EmbeddingTable& table, int vocab_index,
                                   HedPooling pooling) {
  AlignConceptState st;
  Tensor tokens = embed(vocab, table, vocab_index);
  st.dis = hed(ahfc, tokens, embed(vocab, table, vocab.phi_index()), pooling);
  st.pooled_c = table.mean_pooled(vocab.concept_at(vocab_index).tokens);
  st.pooled_ahfc = ahfc.pooled_eval(tokens);
  return st;
}

void compute_target(const ScoreNetwork& teacher, const AlignConceptState& state,
                    const std::vector<double>& pooled_phi, const double* x_t, int t, int t_count,
                    const AlignConfig& cfg, double* out, double* raw_exponent_out) {
  int k = teacher.config().x_dim;
  if (state.dis <= cfg.dis_th) {
    if (raw_exponent_out) *raw_exponent_out = 0.0;
    teacher.eval_shared(x_t, 1, t, t_count, state.pooled_c.data(), out);
    return;
  }
  double raw = state.dis * state.dis / (cfg.dis_th * cfg.dis_th);
  if (raw_exponent_out) *raw_exponent_out = raw;
  double w = std::exp(std::min(raw, cfg.exp_clamp_log));
  std::vector<double> eps_phi(static_cast<size_t>(k)), eps_c(static_cast<size_t>(k)),
      eps_a(static_cast<size_t>(k));
  teacher.eval_shared(x_t, 1, t, t_count, pooled_phi.data(), eps_phi.data());
  teacher.eval_shared(x_t, 1, t, t_count, state.pooled_c.data(), eps_c.data());
  teacher.eval_shared(x_t, 1, t, t_count, state.pooled_ahfc.data(), eps_a.data());
  for (int j = 0; j < k; ++j) {
    out[j] = eps_phi[static_cast<size_t>(j)] +
             cfg.eta * w * (eps_c[static_cast<size_t>(j)] - eps_a[static_cast<size_t>(j)]);
  }
}

AlignResult align_train(TeacherStudentPair& pair, const AhfcNetwork& ahfc, const Dataset& ds,
                        const ConceptVocab& vocab, const EmbeddingTable& table,
                        const NoiseSchedule& sched, const AlignConfig& cfg) {
  cfg.validate();
  if (ds.size() == 0) throw std::runtime_error("align_train: empty dataset");
  int k = pair.student.config().x_dim;
  int f = pair.student.config().time_features;
  int d = pair.student.config().cond_dim;
  int in_dim = pair.student.config().input_dim();
  int t_count = sched.t_count();

  // per-concept state built once; labels play no part here
  const GeneratorSpec& spec = ds.spec();
  std::vector<AlignConceptState> states(static_cast<size_t>(spec.concept_count()));
  for (int c = 0; c < spec.concept_count(); ++c) {
    int vi = vocab.index_of(spec.concept_ids[static_cast<size_t>(c)]);
    states[static_cast<size_t>(c)] = make_align_state(ahfc, vocab, table, vi);
  }
  std::vector<double> pooled_phi = table.mean_pooled(vocab.phi().tokens);

  pair.teacher.set_trainable(false);
  pair.student.set_trainable(true);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  AdamState adam(pair.student.params(), acfg);
  Rng rng(cfg.seed);

  AlignResult result;
  result.dis_th = cfg.dis_th;

  std::vector<double> x_t(static_cast<size_t>(k)), eps(static_cast<size_t>(k));
  std::vector<double> tf(static_cast<size_t>(f));
  std::vector<std::vector<double>> backup;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> rows(static_cast<size_t>(cfg.batch) * in_dim);
    std::vector<double> targets(static_cast<size_t>(cfg.batch) * k);
    for (int b = 0; b < cfg.batch; ++b) {
      int64_t idx = rng.uniform_int(0, ds.size() - 1);
      int t = static_cast<int>(rng.uniform_int(1, t_count));
      for (int j = 0; j < k; ++j) eps[static_cast<size_t>(j)] = rng.normal();
      forward_sample(sched, ds.x(idx), eps.data(), k, t, x_t.data());
      int c = ds.concept_index(idx);
      const AlignConceptState& st = states[static_cast<size_t>(c)];
      double raw = 0.0;
      compute_target(pair.teacher, st, pooled_phi, x_t.data(), t, t_count, cfg,
                     targets.data() + static_cast<size_t>(b) * k, &raw);
      result.max_raw_exponent = std::max(result.max_raw_exponent, raw);
      if (raw > cfg.exp_clamp_log) ++result.clamped_targets;

      double* r = rows.data() + static_cast<size_t>(b) * in_dim;
      std::memcpy(r, x_t.data(), sizeof(double) * static_cast<size_t>(k));
      pair.student.time_features(t, t_count, tf.data());
      std::memcpy(r + k, tf.data(), sizeof(double) * static_cast<size_t>(f));
      std::memcpy(r + k + f, st.pooled_c.data(), sizeof(double) * static_cast<size_t>(d));
    }

    backup.clear();
    for (const Tensor& p : pair.student.params()) backup.push_back(p.values());

    Tape tape;
    Tensor input({cfg.batch, in_dim}, std::move(rows));
    Tensor target({cfg.batch, k}, std::move(targets));
    Tensor pred = pair.student.forward(&tape, input);
    Tensor loss = scale(&tape, squared_l2(&tape, sub(&tape, pred, target)),
                        1.0 / static_cast<double>(cfg.batch));
    double loss_v = loss.value();
    if (!std::isfinite(loss_v)) {
      for (size_t p = 0; p < pair.student.params().size(); ++p)
        pair.student.params()[p].values() = backup[p];
      throw DivergenceError("align_train: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss);
    std::vector<std::vector<double>> grads;
    grads.reserve(pair.student.params().size());
    for (const Tensor& p : pair.student.params()) grads.push_back(tape.grad(p));
    adam.step(pair.student.params(), grads);
    result.losses.epoch_loss.push_back(loss_v);
  }
  return result;
}

// ---------------------------------------------------------------------------

ModelEvalResult evaluate_model(const ScoreNetwork& net, const AhfcNetwork* ahfc,
                               const ConceptVocab& vocab, const EmbeddingTable& table,
                               const MixtureOracle& oracle, const NoiseSchedule& sched,
                               const ModelEvalConfig& cfg) {
  int k = net.config().x_dim;
  ModelEvalResult result;

  auto sample_concepts = [&](const std::vector<int>& concepts) {
    std::vector<double> pool;
    for (int ci : concepts) {
      ConditioningSet cond = make_conditioning(vocab, table, ci, ahfc);
      SamplerConfig sc = cfg.sampler;
      sc.seed = splitmix64(cfg.sampler.seed ^ static_cast<uint64_t>(ci) * 0x9e3779b97f4a7c15ULL);
      std::vector<double> s = sample_batch(make_guided_field(net, cfg.guidance, std::move(cond),
                                                             sched.t_count()),
                                           sched, cfg.samples_per_concept, k, sc);
      pool.insert(pool.end(), s.begin(), s.end());
    }
    return pool;
  };

  if (!cfg.harmful_concepts.empty()) {
    std::vector<double> harm = sample_concepts(cfg.harmful_concepts);
    result.harmful_rate = harmful_rate(harm, k, oracle);
  }
  if (!cfg.clean_concepts.empty() && cfg.clean_reference) {
    std::vector<double> clean = sample_concepts(cfg.clean_concepts);
    result.quality_distance = energy_distance(clean, *cfg.clean_reference, k);
  }
  return result;
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "eta,steps,harmful_rate,quality_distance,hed_auc\n";
  for (const AblationCell& c : cells) {
    os << c.eta << "," << c.steps << "," << c.harmful_rate << "," << c.quality_distance << ","
       << c.hed_auc << "\n";
  }
  return os.str();
}

nlohmann::ordered_json AblationTable::to_json() const {
  nlohmann::ordered_json cells_j = nlohmann::ordered_json::array();
  for (const AblationCell& c : cells) {
    cells_j.push_back({{"eta", c.eta},
                       {"steps", c.steps},
                       {"harmful_rate", c.harmful_rate},
                       {"quality_distance", c.quality_distance},
                       {"hed_auc", c.hed_auc}});
  }
  return nlohmann::ordered_json{{"cells", cells_j},
                                {"harmful_rate_monotone_in_eta", harmful_rate_monotone_in_eta},
                                {"harmful_rate_monotone_in_steps", harmful_rate_monotone_in_steps}};
}

AblationTable ablation_sweep(const ScoreNetwork& teacher, const AhfcNetwork& ahfc,
                             const Dataset& ds, const ConceptVocab& vocab,
                             const EmbeddingTable& table, const MixtureOracle& oracle,
                             const NoiseSchedule& sched, const AlignConfig& base,
                             const std::vector<double>& etas, const std::vector<int>& step_counts,
                             const ModelEvalConfig& eval_cfg, double hed_auc) {
  if (etas.size() < 2 || step_counts.size() < 2) {
    throw std::runtime_error("ablation_sweep: need at least 2 eta values and 2 step counts");
  }
  AblationTable table_out;
  for (double eta : etas) {
    for (int steps : step_counts) {
      TeacherStudentPair pair = TeacherStudentPair::make(teacher);
      AlignConfig cfg = base;
      cfg.eta = eta;
      cfg.steps = steps;
      align_train(pair, ahfc, ds, vocab, table, sched, cfg);
      ModelEvalResult r = evaluate_model(pair.student, nullptr, vocab, table, oracle, sched,
                                         eval_cfg);
      AblationCell cell;
      cell.eta = eta;
      cell.steps = steps;
      cell.harmful_rate = r.harmful_rate;
      cell.quality_distance = r.quality_distance;
      cell.hed_auc = hed_auc;
      table_out.cells.push_back(cell);
    }
  }

  auto find_cell = [&](double eta, int steps) -> const AblationCell& {
    for (const AblationCell& c : table_out.cells) {
      if (c.eta == eta && c.steps == steps) return c;
    }
    throw std::runtime_error("ablation_sweep: missing cell");
  };
  std::vector<double> sorted_etas = etas;
  std::sort(sorted_etas.begin(), sorted_etas.end());
  std::vector<int> sorted_steps = step_counts;
  std::sort(sorted_steps.begin(), sorted_steps.end());

  table_out.harmful_rate_monotone_in_eta = true;
  for (int steps : sorted_steps) {
    for (size_t i = 1; i < sorted_etas.size(); ++i) {
      if (find_cell(sorted_etas[i], steps).harmful_rate >
          find_cell(sorted_etas[i - 1], steps).harmful_rate) {
        table_out.harmful_rate_monotone_in_eta = false;
      }
    }
  }
  table_out.harmful_rate_monotone_in_steps = true;
  for (double eta : sorted_etas) {
    for (size_t i = 1; i < sorted_steps.size(); ++i) {
      if (find_cell(eta, sorted_steps[i]).harmful_rate >
          find_cell(eta, sorted_steps[i - 1]).harmful_rate) {
        table_out.harmful_rate_monotone_in_steps = false;
      }
    }
  }
  return table_out;
}

}  // namespace safecfg
