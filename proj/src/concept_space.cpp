#include "safecfg/concept_space.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "safecfg/serialize.hpp"

namespace safecfg {

const char* label_name(SafetyLabel l) { return l == SafetyLabel::Clean ? "clean" : "harmful"; }

SafetyLabel label_from_name(const std::string& s) {
  if (s == "clean") return SafetyLabel::Clean;
  if (s == "harmful") return SafetyLabel::Harmful;
  throw std::runtime_error("unknown safety label: " + s);
}

void to_json(nlohmann::ordered_json& j, const VocabSpec& s) {
  j = nlohmann::ordered_json{{"clean_concepts", s.clean_concepts},
                             {"harmful_concepts", s.harmful_concepts},
                             {"token_len", s.token_len},
                             {"embed_dim", s.embed_dim},
                             {"tokens_per_class", s.tokens_per_class},
                             {"clean_offset", s.clean_offset},
                             {"harmful_offset", s.harmful_offset},
                             {"token_std", s.token_std},
                             {"phi_token_std", s.phi_token_std},
                             {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, VocabSpec& s) {
  j.at("clean_concepts").get_to(s.clean_concepts);
  j.at("harmful_concepts").get_to(s.harmful_concepts);
  j.at("token_len").get_to(s.token_len);
  j.at("embed_dim").get_to(s.embed_dim);
  j.at("tokens_per_class").get_to(s.tokens_per_class);
  j.at("clean_offset").get_to(s.clean_offset);
  j.at("harmful_offset").get_to(s.harmful_offset);
  j.at("token_std").get_to(s.token_std);
  j.at("phi_token_std").get_to(s.phi_token_std);
  j.at("seed").get_to(s.seed);
}

ConceptVocab::ConceptVocab(std::vector<ConceptInfo> concepts, int phi_index)
    : concepts_(std::move(concepts)), phi_index_(phi_index) {
  if (phi_index_ < 0 || phi_index_ >= size()) throw std::runtime_error("vocab: bad phi index");
  if (concepts_[static_cast<size_t>(phi_index_)].label != SafetyLabel::Clean) {
    throw std::runtime_error("vocab: null concept must be labeled clean");
  }
  std::set<std::string> seen;
  for (const ConceptInfo& c : concepts_) {
    if (!seen.insert(c.id).second) throw std::runtime_error("vocab: duplicate concept id: " + c.id);
  }
}

int ConceptVocab::index_of(const std::string& id) const {
  for (int i = 0; i < size(); ++i) {
    if (concepts_[static_cast<size_t>(i)].id == id) return i;
  }
  throw std::runtime_error("vocab: unknown concept id: " + id);
}

bool ConceptVocab::contains(const std::string& id) const {
  for (const ConceptInfo& c : concepts_)
    if (c.id == id) return true;
  return false;
}

std::vector<int> ConceptVocab::indices_with_label(SafetyLabel l, bool include_phi) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (i == phi_index_ && !include_phi) continue;
    if (concepts_[static_cast<size_t>(i)].label == l) out.push_back(i);
  }
  return out;
}

EmbeddingTable::EmbeddingTable(int token_count, int dim, std::vector<double> rows)
    : token_count_(token_count), dim_(dim), rows_(std::move(rows)) {
  if (static_cast<size_t>(token_count_) * static_cast<size_t>(dim_) != rows_.size()) {
    throw std::runtime_error("embedding table: row data does not match extents");
  }
  for (double v : rows_) {
    if (!std::isfinite(v)) throw std::runtime_error("embedding table: non-finite entry");
  }
}

const double* EmbeddingTable::row(int token) const {
  if (token < 0 || token >= token_count_) {
    throw std::runtime_error("embedding table: token " + std::to_string(token) + " out of range");
  }
  return rows_.data() + static_cast<size_t>(token) * static_cast<size_t>(dim_);
}

Tensor EmbeddingTable::lookup(const std::vector<int>& tokens) const {
  std::vector<double> vals;
  vals.reserve(tokens.size() * static_cast<size_t>(dim_));
  for (int t : tokens) {
    const double* r = row(t);
    vals.insert(vals.end(), r, r + dim_);
  }
  return Tensor({static_cast<int>(tokens.size()), dim_}, std::move(vals));
}

std::vector<double> EmbeddingTable::mean_pooled(const std::vector<int>& tokens) const {
  std::vector<double> out(static_cast<size_t>(dim_), 0.0);
  for (int t : tokens) {
    const double* r = row(t);
    for (int j = 0; j < dim_; ++j) out[static_cast<size_t>(j)] += r[j];
  }
  double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& v : out) v *= inv;
  return out;
}

BuiltVocab build_vocab(const VocabSpec& spec) {
  // the null concept is itself clean, so one named clean concept suffices
  if (spec.clean_concepts.empty() || spec.harmful_concepts.empty()) {
    throw std::runtime_error("build_vocab: need at least 1 clean and 1 harmful concept");
  }
  if (spec.token_len <= 0 || spec.embed_dim <= 0 || spec.tokens_per_class < spec.token_len) {
    throw std::runtime_error("build_vocab: bad token_len/embed_dim/tokens_per_class");
  }
  std::set<std::string> names;
  names.insert(kPhiConceptId);
  for (const auto& n : spec.clean_concepts) {
    if (!names.insert(n).second) throw std::runtime_error("build_vocab: duplicate concept name: " + n);
  }
  for (const auto& n : spec.harmful_concepts) {
    if (!names.insert(n).second) throw std::runtime_error("build_vocab: duplicate concept name: " + n);
  }

  int s = spec.token_len, d = spec.embed_dim;
  int n_tokens = s + 2 * spec.tokens_per_class;  // reserved phi block, clean pool, harmful pool
  Rng rng(spec.seed);

  std::vector<double> rows(static_cast<size_t>(n_tokens) * static_cast<size_t>(d), 0.0);
  auto fill_row = [&](int token, double offset, double stddev, Rng& r) {
    double* p = rows.data() + static_cast<size_t>(token) * static_cast<size_t>(d);
    for (int j = 0; j < d; ++j) p[j] = (j == 0 ? offset : 0.0) + stddev * r.normal();
  };
  Rng table_rng = rng.fork(0);
  for (int t = 0; t < s; ++t) fill_row(t, 0.0, spec.phi_token_std, table_rng);
  for (int t = 0; t < spec.tokens_per_class; ++t)
    fill_row(s + t, spec.clean_offset, spec.token_std, table_rng);
  for (int t = 0; t < spec.tokens_per_class; ++t)
    fill_row(s + spec.tokens_per_class + t, spec.harmful_offset, spec.token_std, table_rng);

  std::vector<ConceptInfo> concepts;
  // phi: the dedicated reserved token block, in order
  ConceptInfo phi;
  phi.id = kPhiConceptId;
  phi.label = SafetyLabel::Clean;
  for (int t = 0; t < s; ++t) phi.tokens.push_back(t);
  concepts.push_back(phi);

  Rng pick_rng = rng.fork(1);
  auto draw_tokens = [&](int pool_base) {
    // distinct tokens within a concept
    std::set<int> chosen;
    std::vector<int> out;
    while (static_cast<int>(out.size()) < s) {
      int t = pool_base + static_cast<int>(pick_rng.uniform_int(0, spec.tokens_per_class - 1));
      if (chosen.insert(t).second) out.push_back(t);
    }
    return out;
  };
  for (const auto& n : spec.clean_concepts) {
    ConceptInfo c;
    c.id = n;
    c.label = SafetyLabel::Clean;
    c.tokens = draw_tokens(s);
    concepts.push_back(c);
  }
  for (const auto& n : spec.harmful_concepts) {
    ConceptInfo c;
    c.id = n;
    c.label = SafetyLabel::Harmful;
    c.tokens = draw_tokens(s + spec.tokens_per_class);
    concepts.push_back(c);
  }

  BuiltVocab built;
  built.spec = spec;
  built.vocab = ConceptVocab(std::move(concepts), 0);
  built.table = EmbeddingTable(n_tokens, d, std::move(rows));
  return built;
}

Tensor embed(const ConceptVocab& vocab, const EmbeddingTable& table, int concept_index) {
  if (concept_index < 0 || concept_index >= vocab.size()) {
    throw std::runtime_error("embed: concept index " + std::to_string(concept_index) + " out of range");
  }
  return table.lookup(vocab.concept_at(concept_index).tokens);
}

Tensor embed(const ConceptVocab& vocab, const EmbeddingTable& table, const std::string& id) {
  return embed(vocab, table, vocab.index_of(id));
}

void save_vocab(const std::string& path, const BuiltVocab& built) {
  Envelope env;
  env.magic = kVocabMagic;
  env.version = kFormatVersion;
  nlohmann::ordered_json jspec;
  to_json(jspec, built.spec);
  nlohmann::ordered_json jconcepts = nlohmann::ordered_json::array();
  for (int i = 0; i < built.vocab.size(); ++i) {
    const ConceptInfo& c = built.vocab.concept_at(i);
    jconcepts.push_back({{"id", c.id}, {"label", label_name(c.label)}, {"tokens", c.tokens}});
  }
  env.header = {{"spec", jspec},
                {"concepts", jconcepts},
                {"phi_index", built.vocab.phi_index()},
                {"token_count", built.table.token_count()},
                {"dim", built.table.dim()}};
  env.double_blocks.push_back(built.table.raw());
  write_envelope(path, env);
}

BuiltVocab load_vocab(const std::string& path) {
  Envelope env = read_envelope(path, kVocabMagic, kFormatVersion);
  BuiltVocab built;
  from_json(env.header.at("spec"), built.spec);
  std::vector<ConceptInfo> concepts;
  for (const auto& jc : env.header.at("concepts")) {
    ConceptInfo c;
    c.id = jc.at("id").get<std::string>();
    c.label = label_from_name(jc.at("label").get<std::string>());
    jc.at("tokens").get_to(c.tokens);
    concepts.push_back(c);
  }
  built.vocab = ConceptVocab(std::move(concepts), env.header.at("phi_index").get<int>());
  if (env.double_blocks.size() != 1) throw std::runtime_error("vocab file: missing embedding block");
  built.table = EmbeddingTable(env.header.at("token_count").get<int>(),
                               env.header.at("dim").get<int>(), std::move(env.double_blocks[0]));
  for (int i = 0; i < built.vocab.size(); ++i) {
    for (int t : built.vocab.concept_at(i).tokens) {
      if (t < 0 || t >= built.table.token_count()) {
        throw std::runtime_error("vocab file: token id out of range for concept " +
                                 built.vocab.concept_at(i).id);
      }
    }
  }
  return built;
}

// ---------------------------------------------------------------------------
// Datasets

int GeneratorSpec::index_of(const std::string& id) const {
  for (int i = 0; i < concept_count(); ++i) {
    if (concept_ids[static_cast<size_t>(i)] == id) return i;
  }
  throw std::runtime_error("generator spec: unknown concept id: " + id);
}

std::vector<double> cholesky_lower(const std::vector<double>& cov, int k, const std::string& what) {
  if (static_cast<int>(cov.size()) != k * k) {
    throw std::runtime_error(what + ": covariance must be " + std::to_string(k) + "x" + std::to_string(k));
  }
  std::vector<double> l(static_cast<size_t>(k) * k, 0.0);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j <= i; ++j) {
      double acc = cov[static_cast<size_t>(i * k + j)];
      for (int m = 0; m < j; ++m) acc -= l[static_cast<size_t>(i * k + m)] * l[static_cast<size_t>(j * k + m)];
      if (i == j) {
        if (acc <= 0.0) throw std::runtime_error(what + ": covariance not positive definite");
        l[static_cast<size_t>(i * k + j)] = std::sqrt(acc);
      } else {
        l[static_cast<size_t>(i * k + j)] = acc / l[static_cast<size_t>(j * k + j)];
      }
    }
  }
  return l;
}

void GeneratorSpec::validate() const {
  if (dim <= 0) throw std::runtime_error("generator spec: dim must be positive");
  size_t n = concept_ids.size();
  if (concept_labels.size() != n || concept_weights.size() != n || mixtures.size() != n) {
    throw std::runtime_error("generator spec: parallel arrays disagree in length");
  }
  double wsum = 0.0;
  for (double w : concept_weights) {
    if (w < 0.0) throw std::runtime_error("generator spec: negative concept weight");
    wsum += w;
  }
  if (n > 0 && std::fabs(wsum - 1.0) > 1e-9) {
    throw std::runtime_error("generator spec: concept weights must sum to 1");
  }
  for (size_t c = 0; c < n; ++c) {
    const ConceptMixture& mix = mixtures[c];
    if (mix.components.empty()) {
      throw std::runtime_error("generator spec: concept " + concept_ids[c] + " has no components");
    }
    double csum = 0.0;
    for (const MixtureComponent& comp : mix.components) {
      if (comp.weight <= 0.0) throw std::runtime_error("generator spec: component weight must be positive");
      csum += comp.weight;
      if (static_cast<int>(comp.mean.size()) != dim) {
        throw std::runtime_error("generator spec: component mean has wrong dimension");
      }
      cholesky_lower(comp.cov, dim, "generator spec (" + concept_ids[c] + ")");
    }
    if (std::fabs(csum - 1.0) > 1e-9) {
      throw std::runtime_error("generator spec: component weights of " + concept_ids[c] +
                               " must sum to 1");
    }
  }
}

void to_json(nlohmann::ordered_json& j, const GeneratorSpec& s) {
  nlohmann::ordered_json jm = nlohmann::ordered_json::array();
  for (const ConceptMixture& mix : s.mixtures) {
    nlohmann::ordered_json jc = nlohmann::ordered_json::array();
    for (const MixtureComponent& comp : mix.components) {
      jc.push_back({{"weight", comp.weight}, {"mean", comp.mean}, {"cov", comp.cov}});
    }
    jm.push_back(jc);
  }
  std::vector<std::string> labels;
  for (SafetyLabel l : s.concept_labels) labels.push_back(label_name(l));
  j = nlohmann::ordered_json{{"dim", s.dim},
                             {"concept_ids", s.concept_ids},
                             {"concept_labels", labels},
                             {"concept_weights", s.concept_weights},
                             {"mixtures", jm}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& s) {
  j.at("dim").get_to(s.dim);
  j.at("concept_ids").get_to(s.concept_ids);
  s.concept_labels.clear();
  for (const auto& l : j.at("concept_labels")) s.concept_labels.push_back(label_from_name(l));
  j.at("concept_weights").get_to(s.concept_weights);
  s.mixtures.clear();
  for (const auto& jmix : j.at("mixtures")) {
    ConceptMixture mix;
    for (const auto& jc : jmix) {
      MixtureComponent comp;
      jc.at("weight").get_to(comp.weight);
      jc.at("mean").get_to(comp.mean);
      jc.at("cov").get_to(comp.cov);
      mix.components.push_back(comp);
    }
    s.mixtures.push_back(mix);
  }
}

Dataset::Dataset(GeneratorSpec spec, uint64_t seed, std::vector<double> x,
                 std::vector<int32_t> concept_idx)
    : spec_(std::move(spec)), seed_(seed), x_(std::move(x)), concept_idx_(std::move(concept_idx)) {
  spec_.validate();
  if (x_.size() != concept_idx_.size() * static_cast<size_t>(spec_.dim)) {
    throw std::runtime_error("dataset: sample block does not match count and dim");
  }
  for (int32_t c : concept_idx_) {
    if (c < 0 || c >= spec_.concept_count()) {
      throw std::runtime_error("dataset: sample references unknown concept index " + std::to_string(c));
    }
  }
}

const std::string& Dataset::concept_id(int64_t i) const {
  return spec_.concept_ids[static_cast<size_t>(concept_index(i))];
}

SafetyLabel Dataset::label_of(int64_t i) const {
  ++label_reads_;
  return spec_.concept_labels[static_cast<size_t>(concept_index(i))];
}

Dataset generate_dataset(const GeneratorSpec& spec, int64_t n, uint64_t seed) {
  spec.validate();
  if (n < 0) throw std::runtime_error("generate_dataset: negative sample count");
  int k = spec.dim;

  // precompute cholesky factors
  std::vector<std::vector<std::vector<double>>> chol(spec.mixtures.size());
  for (size_t c = 0; c < spec.mixtures.size(); ++c) {
    for (const MixtureComponent& comp : spec.mixtures[c].components) {
      chol[c].push_back(cholesky_lower(comp.cov, k, "generate_dataset"));
    }
  }

  Rng rng(seed);
  std::vector<double> x(static_cast<size_t>(n) * k);
  std::vector<int32_t> cidx(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(k));
  for (int64_t i = 0; i < n; ++i) {
    double u = rng.uniform();
    int c = 0;
    double acc = 0.0;
    for (int j = 0; j < spec.concept_count(); ++j) {
      acc += spec.concept_weights[static_cast<size_t>(j)];
      if (u < acc || j == spec.concept_count() - 1) {
        c = j;
        break;
      }
    }
    const ConceptMixture& mix = spec.mixtures[static_cast<size_t>(c)];
    int comp = 0;
    if (mix.components.size() > 1) {
      double v = rng.uniform();
      double a2 = 0.0;
      for (size_t j = 0; j < mix.components.size(); ++j) {
        a2 += mix.components[j].weight;
        if (v < a2 || j + 1 == mix.components.size()) {
          comp = static_cast<int>(j);
          break;
        }
      }
    }
    for (int j = 0; j < k; ++j) z[static_cast<size_t>(j)] = rng.normal();
    const std::vector<double>& l = chol[static_cast<size_t>(c)][static_cast<size_t>(comp)];
    const std::vector<double>& mean = mix.components[static_cast<size_t>(comp)].mean;
    double* xi = x.data() + i * k;
    for (int r = 0; r < k; ++r) {
      double acc2 = mean[static_cast<size_t>(r)];
      for (int m = 0; m <= r; ++m) acc2 += l[static_cast<size_t>(r * k + m)] * z[static_cast<size_t>(m)];
      xi[r] = acc2;
    }
    cidx[static_cast<size_t>(i)] = static_cast<int32_t>(c);
  }
  return Dataset(spec, seed, std::move(x), std::move(cidx));
}

void save_dataset(const std::string& path, const Dataset& ds) {
  Envelope env;
  env.magic = kDatasetMagic;
  env.version = kFormatVersion;
  nlohmann::ordered_json jspec;
  to_json(jspec, ds.spec());
  env.header = {{"spec", jspec}, {"seed", ds.seed()}, {"count", ds.size()}, {"dim", ds.dim()}};
  env.double_blocks.push_back(ds.x_flat());
  std::vector<int32_t> cidx(static_cast<size_t>(ds.size()));
  for (int64_t i = 0; i < ds.size(); ++i) cidx[static_cast<size_t>(i)] = static_cast<int32_t>(ds.concept_index(i));
  env.int_blocks.push_back(std::move(cidx));
  write_envelope(path, env);
}

Dataset load_dataset(const std::string& path) {
  Envelope env = read_envelope(path, kDatasetMagic, kFormatVersion);
  GeneratorSpec spec;
  from_json(env.header.at("spec"), spec);
  uint64_t seed = env.header.at("seed").get<uint64_t>();
  int64_t count = env.header.at("count").get<int64_t>();
  if (env.double_blocks.size() != 1 || env.int_blocks.size() != 1) {
    throw std::runtime_error("dataset file: missing sample blocks");
  }
  if (static_cast<int64_t>(env.int_blocks[0].size()) != count) {
    throw std::runtime_error("dataset file: sample count disagrees with header");
  }
  return Dataset(std::move(spec), seed, std::move(env.double_blocks[0]), std::move(env.int_blocks[0]));
}

}  // namespace safecfg
