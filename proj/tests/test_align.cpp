#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "safecfg/align.hpp"

using namespace safecfg;

namespace {

struct Fixture {
  BuiltVocab built;
  NoiseSchedule sched;
  ScoreNetwork teacher;
  AhfcNetwork ahfc;

  Fixture()
      : built(make_vocab()),
        sched(make_schedule(200, 1e-4, 0.05)),
        teacher(make_teacher()),
        ahfc(make_ahfc()) {}

  static BuiltVocab make_vocab() {
    VocabSpec vs;
    vs.clean_concepts = {"a", "b"};
    vs.harmful_concepts = {"x", "y"};
    vs.token_len = 3;
    vs.embed_dim = 8;
    vs.tokens_per_class = 8;
    vs.seed = 4;
    return build_vocab(vs);
  }
  static ScoreNetwork make_teacher() {
    ScoreNetConfig nc;
    nc.x_dim = 2;
    nc.time_features = 4;
    nc.cond_dim = 8;
    nc.hidden = {16};
    Rng init(7);
    return ScoreNetwork(nc, init);
  }
  static AhfcNetwork make_ahfc() {
    AhfcConfig ac;
    ac.layers = 1;
    ac.heads = 2;
    ac.width = 8;
    ac.seq_len = 3;
    ac.ff_mult = 2;
    ac.dropout = 0.0;
    Rng init(9);
    return AhfcNetwork(ac, init);
  }
  Dataset dataset(int64_t n, uint64_t seed) const {
    GeneratorSpec spec;
    spec.dim = 2;
    spec.concept_ids = {"a", "b", "x", "y"};
    spec.concept_labels = {SafetyLabel::Clean, SafetyLabel::Clean, SafetyLabel::Harmful,
                           SafetyLabel::Harmful};
    spec.concept_weights = {0.45, 0.45, 0.05, 0.05};
    MixtureComponent clean{1.0, {2.0, 0.0}, {0.25, 0.0, 0.0, 0.25}};
    MixtureComponent harm{1.0, {-2.0, 0.0}, {0.25, 0.0, 0.0, 0.25}};
    spec.mixtures = {ConceptMixture{{clean}}, ConceptMixture{{clean}}, ConceptMixture{{harm}},
                     ConceptMixture{{harm}}};
    return generate_dataset(spec, n, seed);
  }
};

}  // namespace

TEST_CASE("threshold selection quantiles") {
  Fixture f;
  int a = f.built.vocab.index_of("a");
  int x = f.built.vocab.index_of("x");

  // a single repeated concept: every quantile returns its dis value
  double va = select_threshold(f.ahfc, f.built.vocab, f.built.table, {a, a, a}, 0.95);
  Tensor phi = embed(f.built.vocab, f.built.table, f.built.vocab.phi_index());
  CHECK(va == hed(f.ahfc, embed(f.built.vocab, f.built.table, a), phi));

  // q = 1 returns the max
  double v1 = select_threshold(f.ahfc, f.built.vocab, f.built.table, {a, x}, 1.0);
  double da = hed(f.ahfc, embed(f.built.vocab, f.built.table, a), phi);
  double dx = hed(f.ahfc, embed(f.built.vocab, f.built.table, x), phi);
  CHECK(v1 == std::max(da, dx));

  CHECK_THROWS_AS(select_threshold(f.ahfc, f.built.vocab, f.built.table, {}, 0.95),
                  std::runtime_error);
  CHECK_THROWS_AS(select_threshold(f.ahfc, f.built.vocab, f.built.table, {a}, 1.5),
                  std::runtime_error);
}

TEST_CASE("compute_target branch semantics") {
  Fixture f;
  int x_idx = f.built.vocab.index_of("x");
  AlignConceptState st = make_align_state(f.ahfc, f.built.vocab, f.built.table, x_idx);
  std::vector<double> pooled_phi = f.built.table.mean_pooled(f.built.vocab.phi().tokens);
  double x_t[2] = {0.4, -0.8};
  int t = 63;

  AlignConfig cfg;
  cfg.eta = 1.0;
  cfg.steps = 1;

  SUBCASE("below threshold: exactly the teacher conditional score") {
    cfg.dis_th = st.dis + 1.0;
    std::vector<double> target(2), direct(2);
    double raw = -1.0;
    compute_target(f.teacher, st, pooled_phi, x_t, t, 200, cfg, target.data(), &raw);
    f.teacher.eval_shared(x_t, 1, t, 200, st.pooled_c.data(), direct.data());
    CHECK(target == direct);
    CHECK(raw == 0.0);
  }

  SUBCASE("above threshold: null score plus weighted repulsion") {
    cfg.dis_th = st.dis / std::sqrt(2.0);  // dis^2 / th^2 = 2
    std::vector<double> target(2), eps_phi(2), eps_c(2), eps_a(2);
    double raw = 0.0;
    compute_target(f.teacher, st, pooled_phi, x_t, t, 200, cfg, target.data(), &raw);
    CHECK(raw == doctest::Approx(2.0).epsilon(1e-12));
    f.teacher.eval_shared(x_t, 1, t, 200, pooled_phi.data(), eps_phi.data());
    f.teacher.eval_shared(x_t, 1, t, 200, st.pooled_c.data(), eps_c.data());
    f.teacher.eval_shared(x_t, 1, t, 200, st.pooled_ahfc.data(), eps_a.data());
    double w = std::exp(2.0);
    for (int j = 0; j < 2; ++j) {
      CHECK(target[static_cast<size_t>(j)] ==
            doctest::Approx(eps_phi[static_cast<size_t>(j)] +
                            cfg.eta * w * (eps_c[static_cast<size_t>(j)] - eps_a[static_cast<size_t>(j)]))
                .epsilon(1e-12));
    }
  }

  SUBCASE("exponent clamps at e^4 with the raw value reported") {
    cfg.dis_th = st.dis / 10.0;  // raw exponent 100
    std::vector<double> target(2), eps_phi(2), eps_c(2), eps_a(2);
    double raw = 0.0;
    compute_target(f.teacher, st, pooled_phi, x_t, t, 200, cfg, target.data(), &raw);
    CHECK(raw == doctest::Approx(100.0).epsilon(1e-9));
    f.teacher.eval_shared(x_t, 1, t, 200, pooled_phi.data(), eps_phi.data());
    f.teacher.eval_shared(x_t, 1, t, 200, st.pooled_c.data(), eps_c.data());
    f.teacher.eval_shared(x_t, 1, t, 200, st.pooled_ahfc.data(), eps_a.data());
    double w = std::exp(4.0);
    for (int j = 0; j < 2; ++j) {
      CHECK(target[static_cast<size_t>(j)] ==
            doctest::Approx(eps_phi[static_cast<size_t>(j)] +
                            cfg.eta * w * (eps_c[static_cast<size_t>(j)] - eps_a[static_cast<size_t>(j)]))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("zero steps leaves the student equal to the teacher") {
  Fixture f;
  Dataset ds = f.dataset(64, 2);
  TeacherStudentPair pair = TeacherStudentPair::make(f.teacher);
  AlignConfig cfg;
  cfg.dis_th = 1.0;
  cfg.steps = 0;
  align_train(pair, f.ahfc, ds, f.built.vocab, f.built.table, f.sched, cfg);
  CHECK(pair.student.checksum() == pair.teacher.checksum());
}

TEST_CASE("alignment never reads labels and ignores them bitwise") {
  Fixture f;
  Dataset ds = f.dataset(256, 5);

  AlignConfig cfg;
  cfg.eta = 2.0;
  cfg.dis_th = 0.5;
  cfg.steps = 40;
  cfg.batch = 4;
  cfg.seed = 11;

  uint64_t reads_before = ds.label_reads();
  TeacherStudentPair p1 = TeacherStudentPair::make(f.teacher);
  align_train(p1, f.ahfc, ds, f.built.vocab, f.built.table, f.sched, cfg);
  CHECK(ds.label_reads() == reads_before);
  CHECK(p1.teacher.checksum() == p1.teacher_checksum);

  // flip every label; the computation must not change by a single bit
  GeneratorSpec scrambled = ds.spec();
  for (auto& l : scrambled.concept_labels) {
    l = l == SafetyLabel::Clean ? SafetyLabel::Harmful : SafetyLabel::Clean;
  }
  Dataset ds2(scrambled, ds.seed(), ds.x_flat(),
              [&] {
                std::vector<int32_t> idx(static_cast<size_t>(ds.size()));
                for (int64_t i = 0; i < ds.size(); ++i) idx[static_cast<size_t>(i)] = static_cast<int32_t>(ds.concept_index(i));
                return idx;
              }());
  TeacherStudentPair p2 = TeacherStudentPair::make(f.teacher);
  align_train(p2, f.ahfc, ds2, f.built.vocab, f.built.table, f.sched, cfg);
  CHECK(p1.student.checksum() == p2.student.checksum());
}

TEST_CASE("align config validation") {
  AlignConfig cfg;
  cfg.dis_th = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
  cfg.dis_th = 1.0;
  cfg.eta = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
}

TEST_CASE("ablation sweep needs a 2x2 grid at least") {
  Fixture f;
  Dataset ds = f.dataset(64, 8);
  AlignConfig base;
  base.dis_th = 1.0;
  ModelEvalConfig ec;
  CHECK_THROWS_AS(ablation_sweep(f.teacher, f.ahfc, ds, f.built.vocab, f.built.table,
                                 MixtureOracle(ds.spec()), f.sched, base, {1.0}, {10, 20}, ec, 0.5),
                  std::runtime_error);
}
