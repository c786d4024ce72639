#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "safecfg/tensor.hpp"

namespace safecfg {

enum class SafetyLabel { Clean, Harmful };

const char* label_name(SafetyLabel l);
SafetyLabel label_from_name(const std::string& s);

// Synthetic stand-in for a text encoder vocabulary. Tokens are grouped into
// a reserved null-concept block plus one pool per safety class; embeddings
// separate the classes along axis 0 so the geometry carries the label
// signal that CLIP embeddings carry at full scale.
struct VocabSpec {
  std::vector<std::string> clean_concepts;
  std::vector<std::string> harmful_concepts;
  int token_len = 8;   // S
  int embed_dim = 32;  // d
  int tokens_per_class = 64;
  double clean_offset = -0.6;
  double harmful_offset = 1.6;
  double token_std = 0.35;
  double phi_token_std = 0.35;
  uint64_t seed = 1;
};

void to_json(nlohmann::ordered_json& j, const VocabSpec& s);
void from_json(const nlohmann::json& j, VocabSpec& s);

struct ConceptInfo {
  std::string id;
  SafetyLabel label = SafetyLabel::Clean;
  std::vector<int> tokens;  // length S
};

class ConceptVocab {
 public:
  ConceptVocab() = default;
  ConceptVocab(std::vector<ConceptInfo> concepts, int phi_index);

  int size() const { return static_cast<int>(concepts_.size()); }
  const ConceptInfo& concept_at(int i) const { return concepts_.at(static_cast<size_t>(i)); }
  int index_of(const std::string& id) const;  // throws on unknown id
  bool contains(const std::string& id) const;
  int phi_index() const { return phi_index_; }
  const ConceptInfo& phi() const { return concepts_.at(static_cast<size_t>(phi_index_)); }

  std::vector<int> indices_with_label(SafetyLabel l, bool include_phi = false) const;

 private:
  std::vector<ConceptInfo> concepts_;
  int phi_index_ = 0;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(int token_count, int dim, std::vector<double> rows);

  int token_count() const { return token_count_; }
  int dim() const { return dim_; }
  const double* row(int token) const;
  const std::vector<double>& raw() const { return rows_; }

  // S x d token matrix for a concept; a pure lookup, never trainable
  Tensor lookup(const std::vector<int>& tokens) const;
  std::vector<double> mean_pooled(const std::vector<int>& tokens) const;

  uint64_t checksum() const { return checksum_values(rows_); }

 private:
  int token_count_ = 0;
  int dim_ = 0;
  std::vector<double> rows_;
};

struct BuiltVocab {
  VocabSpec spec;
  ConceptVocab vocab;
  EmbeddingTable table;
};

// Deterministic in spec.seed. Throws on duplicate concept names, a name
// clashing with the reserved null concept, or missing class members.
BuiltVocab build_vocab(const VocabSpec& spec);

inline const char* kPhiConceptId = "phi";

Tensor embed(const ConceptVocab& vocab, const EmbeddingTable& table, int concept_index);
Tensor embed(const ConceptVocab& vocab, const EmbeddingTable& table, const std::string& id);

void save_vocab(const std::string& path, const BuiltVocab& built);
BuiltVocab load_vocab(const std::string& path);

// ---------------------------------------------------------------------------
// Datasets

struct MixtureComponent {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> cov;  // k x k row-major, positive definite
};

struct ConceptMixture {
  std::vector<MixtureComponent> components;
};

// Per-concept mixtures plus sampling weights; doubles as the analytic
// ground truth consumed by the oracle and the harness metrics.
struct GeneratorSpec {
  int dim = 2;
  std::vector<std::string> concept_ids;
  std::vector<SafetyLabel> concept_labels;
  std::vector<double> concept_weights;  // sum to 1
  std::vector<ConceptMixture> mixtures;

  int concept_count() const { return static_cast<int>(concept_ids.size()); }
  int index_of(const std::string& id) const;
  void validate() const;  // throws on non-PD covariance or bad weights
};

void to_json(nlohmann::ordered_json& j, const GeneratorSpec& s);
void from_json(const nlohmann::json& j, GeneratorSpec& s);

class Dataset {
 public:
  Dataset() = default;
  Dataset(GeneratorSpec spec, uint64_t seed, std::vector<double> x, std::vector<int32_t> concept_idx);

  const GeneratorSpec& spec() const { return spec_; }
  uint64_t seed() const { return seed_; }
  int64_t size() const { return static_cast<int64_t>(concept_idx_.size()); }
  int dim() const { return spec_.dim; }
  const double* x(int64_t i) const { return x_.data() + i * spec_.dim; }
  const std::vector<double>& x_flat() const { return x_; }
  int concept_index(int64_t i) const { return concept_idx_[static_cast<size_t>(i)]; }
  const std::string& concept_id(int64_t i) const;

  // Safety label of sample i. Instrumented: every call is counted so the
  // alignment stage can prove it never looked.
  SafetyLabel label_of(int64_t i) const;
  uint64_t label_reads() const { return label_reads_; }

 private:
  GeneratorSpec spec_;
  uint64_t seed_ = 0;
  std::vector<double> x_;
  std::vector<int32_t> concept_idx_;
  mutable uint64_t label_reads_ = 0;
};

// Draw n samples: concept ~ weights, then x0 from its mixture. Deterministic
// in seed. Throws if any covariance fails its Cholesky factorization.
Dataset generate_dataset(const GeneratorSpec& spec, int64_t n, uint64_t seed);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Cholesky factor (lower) of a k x k SPD matrix; throws on non-PD input.
std::vector<double> cholesky_lower(const std::vector<double>& cov, int k, const std::string& what);

}  // namespace safecfg
