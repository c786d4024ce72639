#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "safecfg/ahfc.hpp"
#include "safecfg/gradcheck.hpp"

using namespace safecfg;

namespace {

AhfcConfig tiny_config() {
  AhfcConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.width = 8;
  cfg.seq_len = 3;
  cfg.ff_mult = 2;
  cfg.dropout = 0.0;
  return cfg;
}

BuiltVocab tiny_vocab() {
  VocabSpec vs;
  vs.clean_concepts = {"a", "b"};
  vs.harmful_concepts = {"x", "y"};
  vs.token_len = 3;
  vs.embed_dim = 8;
  vs.tokens_per_class = 8;
  vs.seed = 21;
  return build_vocab(vs);
}

}  // namespace

TEST_CASE("zero query/key attention averages the value rows") {
  // Softmax(QK^T/sqrt(d)) with Q=K=0 is row-uniform, so the attended output
  // is the mean of the value rows.
  Tensor v({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  Tensor q = Tensor::zeros({3, 2});
  Tensor attn = softmax_last(nullptr, scale(nullptr, matmul(nullptr, q, transpose(nullptr, q)),
                                            1.0 / std::sqrt(2.0)));
  for (int i = 0; i < 9; ++i) CHECK(attn.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  Tensor out = matmul(nullptr, attn, v);
  for (int r = 0; r < 3; ++r) {
    CHECK(out.at(r * 2 + 0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(out.at(r * 2 + 1) == doctest::Approx(4.0).epsilon(1e-12));
  }
}

TEST_CASE("attention rows are a probability distribution") {
  Rng rng(31);
  AhfcNetwork net(tiny_config(), rng);
  // probe through the public surface: outputs stay finite and deterministic
  Tensor tokens = Tensor::randn({3, 8}, rng, 1.0);
  Tensor a = net.forward(nullptr, tokens);
  Tensor b = net.forward(nullptr, tokens);
  CHECK(a.values() == b.values());
  CHECK(a.shape() == tokens.shape());
}

TEST_CASE("eval mode is deterministic, train mode dropout is seed-driven") {
  AhfcConfig cfg = tiny_config();
  cfg.dropout = 0.3;
  Rng init(5);
  AhfcNetwork net(cfg, init);
  Rng data_rng(6);
  Tensor tokens = Tensor::randn({3, 8}, data_rng, 1.0);

  Rng d1(9), d2(9), d3(10);
  Tensor t1 = net.forward(nullptr, tokens, true, &d1);
  Tensor t2 = net.forward(nullptr, tokens, true, &d2);
  Tensor t3 = net.forward(nullptr, tokens, true, &d3);
  CHECK(t1.values() == t2.values());
  CHECK(t1.values() != t3.values());

  CHECK_THROWS_AS(net.forward(nullptr, tokens, true, nullptr), std::runtime_error);
}

TEST_CASE("width mismatch is rejected") {
  Rng rng(3);
  AhfcNetwork net(tiny_config(), rng);
  Tensor bad = Tensor::zeros({3, 7});
  CHECK_THROWS_AS(net.forward(nullptr, bad), std::runtime_error);
}

TEST_CASE("full attention block passes the finite-difference check") {
  Rng rng(11);
  Tensor tokens = Tensor::randn({3, 8}, rng, 0.8);

  SUBCASE("dropout disabled") {
    Rng init(12);
    AhfcNetwork net(tiny_config(), init);
    // the checker's parameter copies alias the network's buffers
    GraphBuilder builder = [&net, &tokens](Tape* tape, const std::vector<Tensor>&) {
      return squared_l2(tape, net.forward(tape, tokens, false, nullptr));
    };
    GradCheckReport report = finite_diff_check(builder, net.params(), 1e-4);
    CHECK_MESSAGE(report.passed(1e-4), "max_rel_err=", report.max_rel_err);
  }

  SUBCASE("seed-fixed dropout mask") {
    AhfcConfig cfg = tiny_config();
    cfg.dropout = 0.25;
    Rng init(13);
    AhfcNetwork net(cfg, init);
    GraphBuilder builder = [&net, &tokens](Tape* tape, const std::vector<Tensor>&) {
      Rng mask_rng(777);  // same mask on every call keeps the builder deterministic
      return squared_l2(tape, net.forward(tape, tokens, true, &mask_rng));
    };
    GradCheckReport report = finite_diff_check(builder, net.params(), 1e-4);
    CHECK_MESSAGE(report.passed(1e-4), "max_rel_err=", report.max_rel_err);
  }
}

TEST_CASE("matrix distance formula") {
  Tensor a({1, 2}, {3.0, 4.0});
  Tensor b({1, 2}, {0.0, 0.0});
  CHECK(matrix_distance(a, b, HedPooling::Frobenius) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(matrix_distance(a, a, HedPooling::Frobenius) == 0.0);
  CHECK(matrix_distance(a, b, HedPooling::MeanPooled) == doctest::Approx(5.0).epsilon(1e-15));

  // mean-pooled collapses opposite rows, frobenius does not
  Tensor c({2, 1}, {1.0, -1.0});
  Tensor d({2, 1}, {0.0, 0.0});
  CHECK(std::fabs((matrix_distance(c, d, HedPooling::MeanPooled)) - (0.0)) <= 1e-15);
  CHECK(matrix_distance(c, d, HedPooling::Frobenius) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("hed is nonnegative and dropout-invariant at eval") {
  BuiltVocab built = tiny_vocab();
  AhfcConfig cfg = tiny_config();
  cfg.dropout = 0.3;
  Rng init(14);
  AhfcNetwork net(cfg, init);
  Tensor phi = embed(built.vocab, built.table, built.vocab.phi_index());
  Tensor c = embed(built.vocab, built.table, "a");
  double d1 = hed(net, c, phi);
  double d2 = hed(net, c, phi);
  CHECK(d1 >= 0.0);
  CHECK(d1 == d2);
}

TEST_CASE("hed report: separation, degeneracy, csv") {
  SUBCASE("perfect separation gives auc 1") {
    std::vector<HedEntry> entries;
    for (int i = 0; i < 5; ++i) entries.push_back({"c" + std::to_string(i), SafetyLabel::Clean, 0.5 + 0.01 * i});
    for (int i = 0; i < 5; ++i) entries.push_back({"f" + std::to_string(i), SafetyLabel::Harmful, 1.5 + 0.01 * i});
    HedReport r = make_hed_report(entries, 8);
    CHECK_FALSE(r.degenerate);
    CHECK(r.auc == doctest::Approx(1.0));
    CHECK(r.clean_mean < r.harmful_mean);
    std::string csv = r.to_csv();
    CHECK(csv.find("bin_lo,bin_hi,clean_count,harmful_count") == 0);
  }
  SUBCASE("all zeros is degenerate") {
    std::vector<HedEntry> entries{{"c", SafetyLabel::Clean, 0.0}, {"f", SafetyLabel::Harmful, 0.0}};
    HedReport r = make_hed_report(entries, 4);
    CHECK(r.degenerate);
    CHECK(std::isnan(r.auc));
    CHECK(r.to_json().at("auc").is_null());
  }
  SUBCASE("negative distance rejected") {
    std::vector<HedEntry> entries{{"c", SafetyLabel::Clean, -0.1}};
    CHECK_THROWS_AS(make_hed_report(entries, 4), std::runtime_error);
  }
}

TEST_CASE("ahfc loss is nonnegative and needs both labels to train") {
  BuiltVocab built = tiny_vocab();
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  ScoreNetConfig nc;
  nc.x_dim = 2;
  nc.time_features = 4;
  nc.cond_dim = 8;
  nc.hidden = {12};
  Rng snr(15);
  ScoreNetwork score(nc, snr);
  score.set_trainable(false);
  Rng anr(16);
  AhfcNetwork ahfc(tiny_config(), anr);

  double x0a[2] = {1.0, 0.2}, x0b[2] = {-1.0, -0.2};
  std::vector<AhfcBatchMember> batch{
      {x0a, built.vocab.index_of("a"), SafetyLabel::Clean},
      {x0b, built.vocab.index_of("x"), SafetyLabel::Harmful},
  };
  Rng loss_rng(17);
  Tape tape;
  Tensor loss = ahfc_loss(&tape, ahfc, score, built.vocab, built.table, sched, batch, loss_rng,
                          false);
  CHECK(loss.value() >= 0.0);

  // gradients reach AHFC parameters but never the frozen score network
  tape.backward(loss);
  double ahfc_grad_norm = 0.0;
  for (const Tensor& p : ahfc.params())
    for (double g : tape.grad(p)) ahfc_grad_norm += g * g;
  CHECK(ahfc_grad_norm > 0.0);
  for (const Tensor& p : score.params())
    for (double g : tape.grad(p)) CHECK(g == 0.0);

  // training requires both label classes
  GeneratorSpec spec;
  spec.dim = 2;
  spec.concept_ids = {"a"};
  spec.concept_labels = {SafetyLabel::Clean};
  spec.concept_weights = {1.0};
  spec.mixtures = {ConceptMixture{{MixtureComponent{1.0, {1.0, 0.0}, {1.0, 0.0, 0.0, 1.0}}}}};
  Dataset clean_only = generate_dataset(spec, 16, 1);
  AhfcTrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_WITH_AS(train_ahfc(ahfc, score, clean_only, built.vocab, built.table, sched, tc),
                       doctest::Contains("both clean and harmful"), std::runtime_error);
}

TEST_CASE("train_ahfc freezes the score network and embedding table") {
  BuiltVocab built = tiny_vocab();
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  ScoreNetConfig nc;
  nc.x_dim = 2;
  nc.time_features = 4;
  nc.cond_dim = 8;
  nc.hidden = {12};
  Rng snr(18);
  ScoreNetwork score(nc, snr);
  Rng anr(19);
  AhfcNetwork ahfc(tiny_config(), anr);

  GeneratorSpec spec;
  spec.dim = 2;
  spec.concept_ids = {"a", "x"};
  spec.concept_labels = {SafetyLabel::Clean, SafetyLabel::Harmful};
  spec.concept_weights = {0.5, 0.5};
  MixtureComponent comp{1.0, {1.0, 0.0}, {1.0, 0.0, 0.0, 1.0}};
  spec.mixtures = {ConceptMixture{{comp}}, ConceptMixture{{comp}}};
  Dataset ds = generate_dataset(spec, 32, 2);

  uint64_t score_before = score.checksum();
  uint64_t table_before = built.table.checksum();
  uint64_t phi_before = checksum_values(embed(built.vocab, built.table, built.vocab.phi_index()).values());
  uint64_t ahfc_before = ahfc.checksum();

  AhfcTrainConfig tc;
  tc.epochs = 1;
  tc.batch = 4;
  tc.seed = 10;
  LossCurve curve = train_ahfc(ahfc, score, ds, built.vocab, built.table, sched, tc);
  CHECK(curve.epoch_loss.size() == 1);
  CHECK(score.checksum() == score_before);
  CHECK(built.table.checksum() == table_before);
  CHECK(checksum_values(embed(built.vocab, built.table, built.vocab.phi_index()).values()) ==
        phi_before);
  CHECK(ahfc.checksum() != ahfc_before);

  // zero epochs leaves the network untouched
  uint64_t after = ahfc.checksum();
  tc.epochs = 0;
  train_ahfc(ahfc, score, ds, built.vocab, built.table, sched, tc);
  CHECK(ahfc.checksum() == after);

  // determinism
  Rng a1(25), a2(25);
  AhfcNetwork n1(tiny_config(), a1), n2(tiny_config(), a2);
  tc.epochs = 2;
  train_ahfc(n1, score, ds, built.vocab, built.table, sched, tc);
  train_ahfc(n2, score, ds, built.vocab, built.table, sched, tc);
  CHECK(n1.checksum() == n2.checksum());
}
