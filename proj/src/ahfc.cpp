#include "safecfg/ahfc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "safecfg/adam.hpp"
#include "safecfg/serialize.hpp"

namespace safecfg {

nlohmann::ordered_json AhfcConfig::to_json() const {
  return nlohmann::ordered_json{{"type", "ahfc"},       {"layers", layers},
                                {"heads", heads},       {"width", width},
                                {"seq_len", seq_len},   {"ff_mult", ff_mult},
                                {"dropout", dropout}};
}

AhfcConfig AhfcConfig::from_json(const nlohmann::json& j) {
  if (j.at("type").get<std::string>() != "ahfc") {
    throw std::runtime_error("checkpoint: descriptor is not an ahfc network");
  }
  AhfcConfig cfg;
  j.at("layers").get_to(cfg.layers);
  j.at("heads").get_to(cfg.heads);
  j.at("width").get_to(cfg.width);
  j.at("seq_len").get_to(cfg.seq_len);
  j.at("ff_mult").get_to(cfg.ff_mult);
  j.at("dropout").get_to(cfg.dropout);
  return cfg;
}

AhfcNetwork::AhfcNetwork(AhfcConfig cfg, Rng& init_rng) : cfg_(cfg) {
  if (cfg_.width % cfg_.heads != 0) throw std::runtime_error("ahfc: width must divide by heads");
  if (cfg_.dropout < 0.0 || cfg_.dropout >= 1.0) throw std::runtime_error("ahfc: dropout in [0,1)");
  int d = cfg_.width, dh = cfg_.head_dim(), ff = cfg_.ff_mult * d;
  double attn_std = std::sqrt(2.0 / (d + dh));
  double ff1_std = std::sqrt(2.0 / (d + ff));
  double ff2_std = std::sqrt(2.0 / (ff + d));
  double proj_std = std::sqrt(2.0 / (d + d));
  for (int l = 0; l < cfg_.layers; ++l) {
    Layer layer;
    layer.norm1_gain = Tensor::full({d}, 1.0, true);
    for (int h = 0; h < cfg_.heads; ++h) {
      layer.wq.push_back(Tensor::randn({d, dh}, init_rng, attn_std, true));
      layer.wk.push_back(Tensor::randn({d, dh}, init_rng, attn_std, true));
      layer.wv.push_back(Tensor::randn({d, dh}, init_rng, attn_std, true));
    }
    layer.wo = Tensor::randn({d, d}, init_rng, proj_std, true);
    layer.norm2_gain = Tensor::full({d}, 1.0, true);
    layer.w1 = Tensor::randn({d, ff}, init_rng, ff1_std, true);
    layer.b1 = Tensor::zeros({ff}, true);
    layer.w2 = Tensor::randn({ff, d}, init_rng, ff2_std, true);
    layer.b2 = Tensor::zeros({d}, true);
    layers_.push_back(std::move(layer));
  }
  for (Layer& layer : layers_) {
    params_.push_back(layer.norm1_gain);
    for (int h = 0; h < cfg_.heads; ++h) {
      params_.push_back(layer.wq[static_cast<size_t>(h)]);
      params_.push_back(layer.wk[static_cast<size_t>(h)]);
      params_.push_back(layer.wv[static_cast<size_t>(h)]);
    }
    params_.push_back(layer.wo);
    params_.push_back(layer.norm2_gain);
    params_.push_back(layer.w1);
    params_.push_back(layer.b1);
    params_.push_back(layer.w2);
    params_.push_back(layer.b2);
  }
  pool_row_ = Tensor::full({1, cfg_.seq_len}, 1.0 / cfg_.seq_len);
}

Tensor AhfcNetwork::forward(Tape* tape, const Tensor& tokens, bool train, Rng* dropout_rng) const {
  if (tokens.rank() != 2 || tokens.rows() != cfg_.seq_len || tokens.cols() != cfg_.width) {
    throw std::runtime_error("ahfc: tokens must be [" + std::to_string(cfg_.seq_len) + "," +
                             std::to_string(cfg_.width) + "], got " + tokens.shape_str());
  }
  if (train && cfg_.dropout > 0.0 && !dropout_rng) {
    throw std::runtime_error("ahfc: train-mode forward needs a dropout rng");
  }
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));
  Tensor x = tokens;
  for (const Layer& layer : layers_) {
    Tensor h = rmsnorm(tape, x, layer.norm1_gain);
    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(cfg_.heads));
    for (int hd = 0; hd < cfg_.heads; ++hd) {
      Tensor q = matmul(tape, h, layer.wq[static_cast<size_t>(hd)]);
      Tensor k = matmul(tape, h, layer.wk[static_cast<size_t>(hd)]);
      Tensor v = matmul(tape, h, layer.wv[static_cast<size_t>(hd)]);
      Tensor attn = softmax_last(tape, scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_dh));
      head_outs.push_back(matmul(tape, attn, v));
    }
    Tensor o = matmul(tape, concat_last(tape, head_outs), layer.wo);
    if (train && cfg_.dropout > 0.0) o = dropout(tape, o, cfg_.dropout, *dropout_rng);
    x = add(tape, x, o);

    Tensor h2 = rmsnorm(tape, x, layer.norm2_gain);
    Tensor f = gelu(tape, add(tape, matmul(tape, h2, layer.w1), layer.b1));
    f = add(tape, matmul(tape, f, layer.w2), layer.b2);
    if (train && cfg_.dropout > 0.0) f = dropout(tape, f, cfg_.dropout, *dropout_rng);
    x = add(tape, x, f);
  }
  return x;
}

Tensor AhfcNetwork::pooled_forward(Tape* tape, const Tensor& tokens, bool train,
                                   Rng* dropout_rng) const {
  return matmul(tape, pool_row_, forward(tape, tokens, train, dropout_rng));
}

std::vector<double> AhfcNetwork::pooled_eval(const Tensor& tokens) const {
  Tensor pooled = pooled_forward(nullptr, tokens, false, nullptr);
  return pooled.values();
}

void AhfcNetwork::set_trainable(bool trainable) {
  // params_ entries share values with the layer tensors but not the
  // requires-grad flag, and forward() reads the layer tensors
  for (Tensor& p : params_) p.set_requires_grad(trainable);
  for (Layer& layer : layers_) {
    layer.norm1_gain.set_requires_grad(trainable);
    for (Tensor& t : layer.wq) t.set_requires_grad(trainable);
    for (Tensor& t : layer.wk) t.set_requires_grad(trainable);
    for (Tensor& t : layer.wv) t.set_requires_grad(trainable);
    layer.wo.set_requires_grad(trainable);
    layer.norm2_gain.set_requires_grad(trainable);
    layer.w1.set_requires_grad(trainable);
    layer.b1.set_requires_grad(trainable);
    layer.w2.set_requires_grad(trainable);
    layer.b2.set_requires_grad(trainable);
  }
}

uint64_t AhfcNetwork::checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& p : params_) {
    uint64_t c = checksum_values(p.values());
    h = fnv1a64(&c, sizeof(c)) ^ (h * 0x100000001b3ULL);
  }
  return h;
}

AhfcNetwork AhfcNetwork::clone() const {
  Rng dummy(0);
  AhfcNetwork copy(cfg_, dummy);
  for (size_t i = 0; i < params_.size(); ++i) {
    copy.params_[i].values() = params_[i].values();
    copy.params_[i].set_requires_grad(params_[i].requires_grad());
  }
  return copy;
}

void AhfcNetwork::save_checkpoint(const std::string& path) const {
  Envelope env;
  env.magic = kCheckpointMagic;
  env.version = kFormatVersion;
  env.header = {{"descriptor", cfg_.to_json()}};
  for (const Tensor& p : params_) env.double_blocks.push_back(p.values());
  write_envelope(path, env);
}

AhfcNetwork AhfcNetwork::load_checkpoint(const std::string& path, const AhfcConfig* expected) {
  Envelope env = read_envelope(path, kCheckpointMagic, kFormatVersion);
  AhfcConfig cfg = AhfcConfig::from_json(env.header.at("descriptor"));
  if (expected && !(cfg == *expected)) {
    throw std::runtime_error("checkpoint: ahfc descriptor mismatch in " + path);
  }
  Rng dummy(0);
  AhfcNetwork net(cfg, dummy);
  if (env.double_blocks.size() != net.params_.size()) {
    throw std::runtime_error("checkpoint: parameter block count mismatch in " + path);
  }
  for (size_t i = 0; i < net.params_.size(); ++i) {
    if (env.double_blocks[i].size() != static_cast<size_t>(net.params_[i].numel())) {
      throw std::runtime_error("checkpoint: parameter shape mismatch in " + path);
    }
    net.params_[i].values() = std::move(env.double_blocks[i]);
  }
  return net;
}

// ---------------------------------------------------------------------------

double matrix_distance(const Tensor& a, const Tensor& b, HedPooling pooling) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw std::runtime_error("matrix_distance: token matrices must share an [S,d] shape");
  }
  if (pooling == HedPooling::Frobenius) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
      double diff = a.at(i) - b.at(i);
      acc += diff * diff;
    }
    return std::sqrt(acc);
  }
  int s = a.rows(), d = a.cols();
  double acc = 0.0;
  for (int j = 0; j < d; ++j) {
    double m = 0.0;
    for (int i = 0; i < s; ++i) m += a.at(i * d + j) - b.at(i * d + j);
    m /= s;
    acc += m * m;
  }
  return std::sqrt(acc);
}

double hed(const AhfcNetwork& net, const Tensor& concept_embedding, const Tensor& phi_embedding,
           HedPooling pooling) {
  Tensor out = net.forward(nullptr, concept_embedding, false, nullptr);
  return matrix_distance(out, phi_embedding, pooling);
}

HedReport make_hed_report(std::vector<HedEntry> entries, int bins) {
  HedReport report;
  report.entries = std::move(entries);
  std::vector<double> clean, harmful;
  for (const HedEntry& e : report.entries) {
    if (e.dis < 0.0) throw std::runtime_error("hed report: negative distance");
    (e.label == SafetyLabel::Clean ? clean : harmful).push_back(e.dis);
  }
  double lo = 1e300, hi = -1e300;
  for (const HedEntry& e : report.entries) {
    lo = std::min(lo, e.dis);
    hi = std::max(hi, e.dis);
  }
  report.clean_mean = clean.empty() ? 0.0
                                    : std::accumulate(clean.begin(), clean.end(), 0.0) / clean.size();
  report.harmful_mean =
      harmful.empty() ? 0.0 : std::accumulate(harmful.begin(), harmful.end(), 0.0) / harmful.size();

  report.degenerate = clean.empty() || harmful.empty() || !(hi > lo);
  if (report.degenerate) {
    report.auc = std::numeric_limits<double>::quiet_NaN();
  } else {
    double wins = 0.0;
    for (double f : harmful) {
      for (double c : clean) {
        if (f > c) wins += 1.0;
        else if (f == c) wins += 0.5;
      }
    }
    report.auc = wins / (static_cast<double>(clean.size()) * static_cast<double>(harmful.size()));
  }

  if (report.entries.empty()) return report;
  if (!(hi > lo)) hi = lo + 1.0;
  report.bin_edges.resize(static_cast<size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) {
    report.bin_edges[static_cast<size_t>(b)] = lo + (hi - lo) * b / bins;
  }
  report.clean_counts.assign(static_cast<size_t>(bins), 0);
  report.harmful_counts.assign(static_cast<size_t>(bins), 0);
  for (const HedEntry& e : report.entries) {
    int b = static_cast<int>((e.dis - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    (e.label == SafetyLabel::Clean ? report.clean_counts : report.harmful_counts)[static_cast<size_t>(b)] += 1;
  }
  return report;
}

nlohmann::ordered_json HedReport::to_json() const {
  nlohmann::ordered_json je = nlohmann::ordered_json::array();
  for (const HedEntry& e : entries) {
    je.push_back({{"concept", e.concept_id}, {"label", label_name(e.label)}, {"dis", e.dis}});
  }
  nlohmann::ordered_json j{{"clean_mean", clean_mean},
                           {"harmful_mean", harmful_mean},
                           {"degenerate", degenerate},
                           {"entries", je}};
  if (degenerate) {
    j["auc"] = nullptr;
  } else {
    j["auc"] = auc;
  }
  return j;
}

std::string HedReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "bin_lo,bin_hi,clean_count,harmful_count\n";
  for (size_t b = 0; b + 1 < bin_edges.size(); ++b) {
    os << bin_edges[b] << "," << bin_edges[b + 1] << "," << clean_counts[b] << ","
       << harmful_counts[b] << "\n";
  }
  return os.str();
}

HedReport hed_report(const AhfcNetwork& net, const ConceptVocab& vocab,
                     const EmbeddingTable& table, const std::vector<int>& concept_indices,
                     HedPooling pooling, int bins) {
  Tensor phi_embedding = embed(vocab, table, vocab.phi_index());
  std::vector<HedEntry> entries;
  for (int ci : concept_indices) {
    const ConceptInfo& info = vocab.concept_at(ci);
    HedEntry e;
    e.concept_id = info.id;
    e.label = info.label;
    e.dis = hed(net, table.lookup(info.tokens), phi_embedding, pooling);
    entries.push_back(e);
  }
  return make_hed_report(std::move(entries), bins);
}

// ---------------------------------------------------------------------------

Tensor ahfc_loss(Tape* tape, const AhfcNetwork& ahfc, const ScoreNetwork& frozen_score,
                 const ConceptVocab& vocab, const EmbeddingTable& table,
                 const NoiseSchedule& sched, const std::vector<AhfcBatchMember>& batch,
                 Rng& rng, bool train_mode) {
  if (batch.empty()) throw std::runtime_error("ahfc_loss: empty batch");
  int k = frozen_score.config().x_dim;
  int f = frozen_score.config().time_features;
  int d = frozen_score.config().cond_dim;
  int t_count = sched.t_count();

  std::vector<double> pooled_phi = table.mean_pooled(vocab.phi().tokens);
  std::vector<Tensor> pred_rows, target_rows;
  std::vector<double> x_t(static_cast<size_t>(k)), eps(static_cast<size_t>(k));
  std::vector<double> tf(static_cast<size_t>(f));
  std::vector<double> eps_phi(static_cast<size_t>(k)), eps_c(static_cast<size_t>(k));

  for (const AhfcBatchMember& m : batch) {
    int t = static_cast<int>(rng.uniform_int(1, t_count));
    for (int j = 0; j < k; ++j) eps[static_cast<size_t>(j)] = rng.normal();
    forward_sample(sched, m.x0, eps.data(), k, t, x_t.data());

    const ConceptInfo& info = vocab.concept_at(m.vocab_index);
    Tensor tokens = table.lookup(info.tokens);
    Tensor pooled = ahfc.pooled_forward(tape, tokens, train_mode,
                                        train_mode ? &rng : nullptr);  // [1, d]

    frozen_score.time_features(t, t_count, tf.data());
    std::vector<double> prefix(static_cast<size_t>(k + f));
    std::memcpy(prefix.data(), x_t.data(), sizeof(double) * static_cast<size_t>(k));
    std::memcpy(prefix.data() + k, tf.data(), sizeof(double) * static_cast<size_t>(f));
    Tensor prefix_row({1, k + f}, std::move(prefix));
    std::vector<Tensor> parts{prefix_row, pooled};
    Tensor input = concat_last(tape, parts);
    pred_rows.push_back(frozen_score.forward(tape, input));  // [1, k]

    int ti = t;
    frozen_score.eval_shared(x_t.data(), 1, ti, t_count, pooled_phi.data(), eps_phi.data());
    std::vector<double> target(static_cast<size_t>(k));
    if (m.label == SafetyLabel::Clean) {
      target.assign(eps_phi.begin(), eps_phi.end());
    } else {
      std::vector<double> pooled_c = table.mean_pooled(info.tokens);
      frozen_score.eval_shared(x_t.data(), 1, ti, t_count, pooled_c.data(), eps_c.data());
      for (int j = 0; j < k; ++j)
        target[static_cast<size_t>(j)] = 2.0 * eps_c[static_cast<size_t>(j)] - eps_phi[static_cast<size_t>(j)];
    }
    target_rows.push_back(Tensor({1, k}, std::move(target)));
  }

  Tensor preds = stack_rows(tape, pred_rows);
  Tensor targets = stack_rows(tape, target_rows);
  return squared_l2(tape, sub(tape, preds, targets));  // raw sum over the batch
}

LossCurve train_ahfc(AhfcNetwork& ahfc, const ScoreNetwork& frozen_score, const Dataset& ds,
                     const ConceptVocab& vocab, const EmbeddingTable& table,
                     const NoiseSchedule& sched, const AhfcTrainConfig& cfg) {
  if (ds.size() == 0) throw std::runtime_error("train_ahfc: empty dataset");
  bool has_clean = false, has_harmful = false;
  const GeneratorSpec& spec = ds.spec();
  std::vector<int> vocab_index(static_cast<size_t>(spec.concept_count()));
  for (int c = 0; c < spec.concept_count(); ++c) {
    vocab_index[static_cast<size_t>(c)] = vocab.index_of(spec.concept_ids[static_cast<size_t>(c)]);
  }
  for (int64_t i = 0; i < ds.size(); ++i) {
    (ds.label_of(i) == SafetyLabel::Clean ? has_clean : has_harmful) = true;
    if (has_clean && has_harmful) break;
  }
  if (!has_clean || !has_harmful) {
    throw std::runtime_error("train_ahfc: dataset must contain both clean and harmful samples");
  }

  // the diffusion model stays frozen; gradients flow only into AHFC
  const_cast<ScoreNetwork&>(frozen_score).set_trainable(false);
  ahfc.set_trainable(true);

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  AdamState adam(ahfc.params(), acfg);
  Rng rng(cfg.seed);

  int64_t n = ds.size();
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  int64_t total_steps = cfg.epochs * ((n + cfg.batch - 1) / cfg.batch);
  int64_t step_index = 0;

  LossCurve curve;
  std::vector<std::vector<double>> backup;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = rng.uniform_int(0, i);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch) {
      int64_t b = std::min<int64_t>(cfg.batch, n - start);
      std::vector<AhfcBatchMember> batch;
      batch.reserve(static_cast<size_t>(b));
      for (int64_t i = 0; i < b; ++i) {
        int64_t idx = order[static_cast<size_t>(start + i)];
        AhfcBatchMember m;
        m.x0 = ds.x(idx);
        m.vocab_index = vocab_index[static_cast<size_t>(ds.concept_index(idx))];
        m.label = ds.label_of(idx);
        batch.push_back(m);
      }
      backup.clear();
      for (const Tensor& p : ahfc.params()) backup.push_back(p.values());

      Tape tape;
      Tensor loss = ahfc_loss(&tape, ahfc, frozen_score, vocab, table, sched, batch, rng, true);
      double loss_v = loss.value();
      if (!std::isfinite(loss_v)) {
        for (size_t p = 0; p < ahfc.params().size(); ++p) ahfc.params()[p].values() = backup[p];
        throw DivergenceError("train_ahfc: non-finite loss at step " + std::to_string(step_index));
      }
      tape.backward(loss);
      std::vector<std::vector<double>> grads;
      grads.reserve(ahfc.params().size());
      for (const Tensor& p : ahfc.params()) grads.push_back(tape.grad(p));
      if (cfg.cosine_lr) {
        double prog = static_cast<double>(step_index) / std::max<int64_t>(1, total_steps);
        adam.set_lr(cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * prog)));
      }
      adam.step(ahfc.params(), grads);
      ++step_index;
      epoch_loss += loss_v;
      ++batches;
    }
    curve.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  return curve;
}

AhfcResiduals eval_ahfc_residuals(const AhfcNetwork& ahfc, const ScoreNetwork& score,
                                  const Dataset& heldout, const ConceptVocab& vocab,
                                  const EmbeddingTable& table, const NoiseSchedule& sched,
                                  int64_t max_samples, uint64_t seed) {
  int k = score.config().x_dim;
  int t_count = sched.t_count();
  const GeneratorSpec& spec = heldout.spec();

  std::vector<double> pooled_phi = table.mean_pooled(vocab.phi().tokens);
  std::vector<std::vector<double>> pooled_c(static_cast<size_t>(spec.concept_count()));
  std::vector<std::vector<double>> pooled_ahfc(static_cast<size_t>(spec.concept_count()));
  for (int c = 0; c < spec.concept_count(); ++c) {
    int vi = vocab.index_of(spec.concept_ids[static_cast<size_t>(c)]);
    pooled_c[static_cast<size_t>(c)] = table.mean_pooled(vocab.concept_at(vi).tokens);
    pooled_ahfc[static_cast<size_t>(c)] = ahfc.pooled_eval(table.lookup(vocab.concept_at(vi).tokens));
  }

  Rng rng(seed);
  int64_t n = std::min<int64_t>(max_samples, heldout.size());
  std::vector<double> clean_ratios, harmful_ratios;
  std::vector<double> x_t(static_cast<size_t>(k)), eps(static_cast<size_t>(k));
  std::vector<double> e_phi(static_cast<size_t>(k)), e_c(static_cast<size_t>(k)),
      e_a(static_cast<size_t>(k));
  for (int64_t i = 0; i < n; ++i) {
    int t = static_cast<int>(rng.uniform_int(1, t_count));
    for (int j = 0; j < k; ++j) eps[static_cast<size_t>(j)] = rng.normal();
    forward_sample(sched, heldout.x(i), eps.data(), k, t, x_t.data());
    int c = heldout.concept_index(i);
    score.eval_shared(x_t.data(), 1, t, t_count, pooled_phi.data(), e_phi.data());
    score.eval_shared(x_t.data(), 1, t, t_count, pooled_c[static_cast<size_t>(c)].data(), e_c.data());
    score.eval_shared(x_t.data(), 1, t, t_count, pooled_ahfc[static_cast<size_t>(c)].data(), e_a.data());
    double denom = 0.0;
    for (int j = 0; j < k; ++j) {
      double g = e_c[static_cast<size_t>(j)] - e_phi[static_cast<size_t>(j)];
      denom += g * g;
    }
    denom = std::sqrt(denom);
    if (denom < 1e-12) continue;
    double num = 0.0;
    if (heldout.label_of(i) == SafetyLabel::Clean) {
      for (int j = 0; j < k; ++j) {
        double r = e_a[static_cast<size_t>(j)] - e_phi[static_cast<size_t>(j)];
        num += r * r;
      }
      clean_ratios.push_back(std::sqrt(num) / denom);
    } else {
      for (int j = 0; j < k; ++j) {
        double target = 2.0 * e_c[static_cast<size_t>(j)] - e_phi[static_cast<size_t>(j)];
        double r = e_a[static_cast<size_t>(j)] - target;
        num += r * r;
      }
      harmful_ratios.push_back(std::sqrt(num) / denom);
    }
  }

  auto median = [](std::vector<double>& v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  };
  AhfcResiduals res;
  res.clean_count = static_cast<int64_t>(clean_ratios.size());
  res.harmful_count = static_cast<int64_t>(harmful_ratios.size());
  res.median_clean_ratio = median(clean_ratios);
  res.median_harmful_ratio = median(harmful_ratios);
  return res;
}

}  // namespace safecfg
