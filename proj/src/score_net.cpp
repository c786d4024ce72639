#include "safecfg/score_net.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "safecfg/serialize.hpp"

namespace safecfg {

nlohmann::ordered_json ScoreNetConfig::to_json() const {
  return nlohmann::ordered_json{{"type", "score_net"}, {"x_dim", x_dim},
                                {"time_features", time_features}, {"cond_dim", cond_dim},
                                {"hidden", hidden}, {"activation", activation},
                                {"cond_mode", cond_mode}};
}

ScoreNetConfig ScoreNetConfig::from_json(const nlohmann::json& j) {
  if (j.at("type").get<std::string>() != "score_net") {
    throw std::runtime_error("checkpoint: descriptor is not a score_net");
  }
  ScoreNetConfig cfg;
  j.at("x_dim").get_to(cfg.x_dim);
  j.at("time_features").get_to(cfg.time_features);
  j.at("cond_dim").get_to(cfg.cond_dim);
  j.at("hidden").get_to(cfg.hidden);
  j.at("activation").get_to(cfg.activation);
  cfg.cond_mode = j.value("cond_mode", cfg.cond_mode);
  return cfg;
}

ScoreNetwork::ScoreNetwork(ScoreNetConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
  if (cfg_.time_features % 2 != 0 || cfg_.time_features <= 0) {
    throw std::runtime_error("score_net: time_features must be positive and even");
  }
  if (cfg_.activation != "gelu" && cfg_.activation != "relu") {
    throw std::runtime_error("score_net: unknown activation " + cfg_.activation);
  }
  if (cfg_.cond_mode != "affine" && cfg_.cond_mode != "concat") {
    throw std::runtime_error("score_net: unknown cond_mode " + cfg_.cond_mode);
  }
  int in = cfg_.cond_mode == "concat" ? cfg_.input_dim() : cfg_.x_dim + cfg_.time_features;
  for (int h : cfg_.hidden) {
    params_.push_back(Tensor::randn({in, h}, init_rng, std::sqrt(2.0 / in), true));
    params_.push_back(Tensor::zeros({h}, true));
    in = h;
  }
  if (cfg_.cond_mode == "concat") {
    params_.push_back(Tensor::randn({in, cfg_.x_dim}, init_rng, std::sqrt(2.0 / in), true));
    params_.push_back(Tensor::zeros({cfg_.x_dim}, true));
  } else {
    // base head f(x,t) and conditioning-matrix head G(x,t)
    params_.push_back(Tensor::randn({in, cfg_.x_dim}, init_rng, std::sqrt(2.0 / in), true));
    params_.push_back(Tensor::zeros({cfg_.x_dim}, true));
    int gdim = cfg_.x_dim * cfg_.cond_dim;
    params_.push_back(Tensor::randn({in, gdim}, init_rng,
                                    std::sqrt(2.0 / in) / std::sqrt(static_cast<double>(cfg_.cond_dim)),
                                    true));
    params_.push_back(Tensor::zeros({gdim}, true));
  }
}

Tensor ScoreNetwork::forward(Tape* tape, const Tensor& input) const {
  if (input.rank() != 2 || input.cols() != cfg_.input_dim()) {
    throw std::runtime_error("score_net: input must be [B," + std::to_string(cfg_.input_dim()) +
                             "], got " + input.shape_str());
  }
  size_t n_layers = cfg_.hidden.size();
  if (cfg_.cond_mode == "concat") {
    Tensor h = input;
    for (size_t l = 0; l < n_layers; ++l) {
      h = add(tape, matmul(tape, h, params_[2 * l]), params_[2 * l + 1]);
      h = cfg_.activation == "gelu" ? gelu(tape, h) : relu(tape, h);
    }
    return add(tape, matmul(tape, h, params_[2 * n_layers]), params_[2 * n_layers + 1]);
  }
  int split = cfg_.x_dim + cfg_.time_features;
  Tensor h = slice_cols(tape, input, 0, split);
  Tensor e = slice_cols(tape, input, split, cfg_.input_dim());
  for (size_t l = 0; l < n_layers; ++l) {
    h = add(tape, matmul(tape, h, params_[2 * l]), params_[2 * l + 1]);
    h = cfg_.activation == "gelu" ? gelu(tape, h) : relu(tape, h);
  }
  Tensor base = add(tape, matmul(tape, h, params_[2 * n_layers]), params_[2 * n_layers + 1]);
  Tensor gmat = add(tape, matmul(tape, h, params_[2 * n_layers + 2]), params_[2 * n_layers + 3]);
  return add(tape, base, rowwise_bilinear(tape, gmat, e, cfg_.x_dim));
}

void ScoreNetwork::time_features(int t, int t_count, double* out) const {
  double tau = static_cast<double>(t) / static_cast<double>(t_count);
  int pairs = cfg_.time_features / 2;
  double freq = 3.14159265358979323846;
  for (int p = 0; p < pairs; ++p) {
    out[2 * p] = std::sin(freq * tau);
    out[2 * p + 1] = std::cos(freq * tau);
    freq *= 2.0;
  }
}

Tensor ScoreNetwork::assemble_rows(const double* x, int64_t n, const int* ts, int t_count,
                                   const double* cond_rows, int cond_stride) const {
  int in = cfg_.input_dim();
  int k = cfg_.x_dim, f = cfg_.time_features, d = cfg_.cond_dim;
  std::vector<double> rows(static_cast<size_t>(n) * in);
  std::vector<double> tf(static_cast<size_t>(f));
  for (int64_t i = 0; i < n; ++i) {
    double* r = rows.data() + i * in;
    std::memcpy(r, x + i * k, sizeof(double) * static_cast<size_t>(k));
    time_features(ts[i], t_count, tf.data());
    std::memcpy(r + k, tf.data(), sizeof(double) * static_cast<size_t>(f));
    std::memcpy(r + k + f, cond_rows + i * cond_stride, sizeof(double) * static_cast<size_t>(d));
  }
  return Tensor({static_cast<int>(n), in}, std::move(rows));
}

void ScoreNetwork::eval_shared(const double* x, int64_t n, int t, int t_count, const double* cond,
                               double* out) const {
  std::vector<int> ts(static_cast<size_t>(n), t);
  Tensor input = assemble_rows(x, n, ts.data(), t_count, cond, 0);
  Tensor eps = forward(nullptr, input);
  std::memcpy(out, eps.data(), sizeof(double) * static_cast<size_t>(eps.numel()));
}

void ScoreNetwork::eval_each(const double* x, int64_t n, const int* ts, int t_count,
                             const double* cond_rows, double* out) const {
  Tensor input = assemble_rows(x, n, ts, t_count, cond_rows, cfg_.cond_dim);
  Tensor eps = forward(nullptr, input);
  std::memcpy(out, eps.data(), sizeof(double) * static_cast<size_t>(eps.numel()));
}

void ScoreNetwork::set_trainable(bool trainable) {
  for (Tensor& p : params_) p.set_requires_grad(trainable);
}

uint64_t ScoreNetwork::checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& p : params_) {
    uint64_t c = checksum_values(p.values());
    h = fnv1a64(&c, sizeof(c)) ^ (h * 0x100000001b3ULL);
  }
  return h;
}

ScoreNetwork ScoreNetwork::clone() const {
  ScoreNetwork copy = *this;
  copy.params_.clear();
  for (const Tensor& p : params_) copy.params_.push_back(p.deep_copy());
  return copy;
}

void ScoreNetwork::save_checkpoint(const std::string& path) const {
  Envelope env;
  env.magic = kCheckpointMagic;
  env.version = kFormatVersion;
  env.header = {{"descriptor", cfg_.to_json()}};
  for (const Tensor& p : params_) env.double_blocks.push_back(p.values());
  write_envelope(path, env);
}

ScoreNetwork ScoreNetwork::load_checkpoint(const std::string& path,
                                           const ScoreNetConfig* expected) {
  Envelope env = read_envelope(path, kCheckpointMagic, kFormatVersion);
  ScoreNetConfig cfg = ScoreNetConfig::from_json(env.header.at("descriptor"));
  if (expected && !(cfg == *expected)) {
    throw std::runtime_error("checkpoint: score_net descriptor mismatch in " + path);
  }
  Rng dummy(0);
  ScoreNetwork net(cfg, dummy);
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

LossCurve train_denoiser(ScoreNetwork& net, const Dataset& ds, const ConceptVocab& vocab,
                         const EmbeddingTable& table, const NoiseSchedule& sched,
                         const DenoiserTrainConfig& cfg) {
  if (ds.size() == 0) throw std::runtime_error("train_denoiser: empty dataset");
  int k = net.config().x_dim;
  int d = net.config().cond_dim;
  if (ds.dim() != k) throw std::runtime_error("train_denoiser: dataset dim != x_dim");
  if (table.dim() != d) throw std::runtime_error("train_denoiser: embedding dim != cond_dim");

  // pooled embeddings per dataset concept, plus phi
  const GeneratorSpec& spec = ds.spec();
  std::vector<std::vector<double>> pooled(static_cast<size_t>(spec.concept_count()));
  for (int c = 0; c < spec.concept_count(); ++c) {
    int vi = vocab.index_of(spec.concept_ids[static_cast<size_t>(c)]);
    pooled[static_cast<size_t>(c)] = table.mean_pooled(vocab.concept_at(vi).tokens);
  }
  std::vector<double> pooled_phi = table.mean_pooled(vocab.phi().tokens);

  net.set_trainable(true);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  AdamState adam(net.params(), acfg);
  Rng rng(cfg.seed);

  int64_t n = ds.size();
  int t_count = sched.t_count();
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  LossCurve curve;
  int64_t total_steps = cfg.epochs * ((n + cfg.batch - 1) / cfg.batch);
  int64_t step_index = 0;

  std::vector<double> x_t, targets, conds;
  std::vector<int> ts;
  std::vector<std::vector<double>> backup;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = rng.uniform_int(0, i);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch) {
      int64_t b = std::min<int64_t>(cfg.batch, n - start);
      x_t.assign(static_cast<size_t>(b) * k, 0.0);
      targets.assign(static_cast<size_t>(b) * k, 0.0);
      conds.assign(static_cast<size_t>(b) * d, 0.0);
      ts.assign(static_cast<size_t>(b), 1);
      for (int64_t i = 0; i < b; ++i) {
        int64_t idx = order[static_cast<size_t>(start + i)];
        int t = static_cast<int>(rng.uniform_int(1, t_count));
        ts[static_cast<size_t>(i)] = t;
        double* eps = targets.data() + i * k;
        for (int j = 0; j < k; ++j) eps[j] = rng.normal();
        forward_sample(sched, ds.x(idx), eps, k, t, x_t.data() + i * k);
        const std::vector<double>& base =
            rng.uniform() < cfg.p_uncond ? pooled_phi : pooled[static_cast<size_t>(ds.concept_index(idx))];
        double* cond = conds.data() + i * d;
        for (int j = 0; j < d; ++j) cond[j] = base[static_cast<size_t>(j)] + cfg.cond_noise * rng.normal();
      }

      // assemble constant input rows and run the recorded forward
      std::vector<double> rows(static_cast<size_t>(b) * net.config().input_dim());
      std::vector<double> tf(static_cast<size_t>(net.config().time_features));
      int in_dim = net.config().input_dim();
      int f = net.config().time_features;
      for (int64_t i = 0; i < b; ++i) {
        double* r = rows.data() + i * in_dim;
        std::memcpy(r, x_t.data() + i * k, sizeof(double) * static_cast<size_t>(k));
        net.time_features(ts[static_cast<size_t>(i)], t_count, tf.data());
        std::memcpy(r + k, tf.data(), sizeof(double) * static_cast<size_t>(f));
        std::memcpy(r + k + f, conds.data() + i * d, sizeof(double) * static_cast<size_t>(d));
      }
      Tensor input({static_cast<int>(b), in_dim}, std::move(rows));
      Tensor target({static_cast<int>(b), k}, targets);

      backup.clear();
      for (const Tensor& p : net.params()) backup.push_back(p.values());

      Tape tape;
      Tensor pred = net.forward(&tape, input);
      Tensor loss = scale(&tape, squared_l2(&tape, sub(&tape, pred, target)),
                          1.0 / static_cast<double>(b));
      double loss_v = loss.value();
      if (!std::isfinite(loss_v)) {
        for (size_t p = 0; p < net.params().size(); ++p) net.params()[p].values() = backup[p];
        throw DivergenceError("train_denoiser: non-finite loss at step " +
                              std::to_string(step_index) + "; parameters rolled back");
      }
      tape.backward(loss);
      std::vector<std::vector<double>> grads;
      grads.reserve(net.params().size());
      for (const Tensor& p : net.params()) grads.push_back(tape.grad(p));
      if (cfg.cosine_lr) {
        double prog = static_cast<double>(step_index) / std::max<int64_t>(1, total_steps);
        adam.set_lr(cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * prog)));
      }
      adam.step(net.params(), grads);
      ++step_index;
      epoch_loss += loss_v;
      ++batches;
    }
    curve.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  return curve;
}

}  // namespace safecfg
