#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "safecfg/experiment.hpp"
#include "safecfg/serialize.hpp"

using namespace safecfg;

namespace {
std::string tmp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}
}  // namespace

TEST_CASE("config json roundtrip is stable") {
  ExperimentConfig cfg;
  cfg.seed = 123;
  cfg.sweep.etas = {0.0, 2.0};
  std::string dump1 = cfg.to_json().dump();
  ExperimentConfig back = ExperimentConfig::from_json(nlohmann::json::parse(dump1));
  CHECK(back.to_json().dump() == dump1);
  CHECK(back.hash() == cfg.hash());
  CHECK(back.seed == 123);
}

TEST_CASE("partial config files inherit defaults") {
  ExperimentConfig defaults;
  auto j = nlohmann::json::parse(R"({"seed": 9, "dm": {"epochs": 3}})");
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  CHECK(cfg.seed == 9);
  CHECK(cfg.dm.epochs == 3);
  CHECK(cfg.dm.batch == defaults.dm.batch);
  CHECK(cfg.data.embed_dim == defaults.data.embed_dim);
}

TEST_CASE("score net checkpoint roundtrip and descriptor mismatch") {
  ScoreNetConfig nc;
  nc.x_dim = 2;
  nc.time_features = 4;
  nc.cond_dim = 8;
  nc.hidden = {12};
  Rng init(3);
  ScoreNetwork net(nc, init);
  std::string path = (std::filesystem::temp_directory_path() / "safecfg_dm.ckpt").string();
  net.save_checkpoint(path);
  ScoreNetwork loaded = ScoreNetwork::load_checkpoint(path);
  CHECK(loaded.checksum() == net.checksum());
  CHECK(loaded.config() == net.config());

  ScoreNetConfig other = nc;
  other.hidden = {16};
  CHECK_THROWS_WITH_AS(ScoreNetwork::load_checkpoint(path, &other),
                       doctest::Contains("descriptor mismatch"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("ahfc checkpoint roundtrip and wrong-type rejection") {
  AhfcConfig ac;
  ac.layers = 1;
  ac.heads = 2;
  ac.width = 8;
  ac.seq_len = 3;
  ac.ff_mult = 2;
  Rng init(4);
  AhfcNetwork net(ac, init);
  std::string path = (std::filesystem::temp_directory_path() / "safecfg_ahfc.ckpt").string();
  net.save_checkpoint(path);
  AhfcNetwork loaded = AhfcNetwork::load_checkpoint(path);
  CHECK(loaded.checksum() == net.checksum());

  // a score-net loader refuses an ahfc checkpoint
  CHECK_THROWS_AS(ScoreNetwork::load_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("sweep table csv parses back to the exact doubles") {
  SweepTable table;
  table.rows = {{0.0, "cfg", 0.33333333333333331, 1.0 / 3.0},
                {1.5, "safecfg", 0.12345678901234567, 9.87654321e-3}};
  table.eta_zero_identical = true;
  std::string csv = table.to_csv();
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "eta,mode,harmful_rate,quality_distance");
  size_t row = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string eta_s, mode_s, hr_s, qd_s;
    std::getline(ls, eta_s, ',');
    std::getline(ls, mode_s, ',');
    std::getline(ls, hr_s, ',');
    std::getline(ls, qd_s, ',');
    CHECK(std::stod(eta_s) == table.rows[row].eta);
    CHECK(mode_s == table.rows[row].mode);
    CHECK(std::stod(hr_s) == table.rows[row].harmful_rate);
    CHECK(std::stod(qd_s) == table.rows[row].quality_distance);
    ++row;
  }
  CHECK(row == 2);
}

TEST_CASE("metrics record serializes without wall time") {
  MetricsRecord rec;
  rec.run_id = "abc";
  rec.stage = "sweep";
  rec.harmful_rate = 0.25;
  rec.wall_time_seconds = 123.0;
  auto j = rec.to_json();
  CHECK(j.at("harmful_rate").get<double>() == 0.25);
  CHECK(j.at("quality_distance").is_null());
  CHECK_FALSE(j.contains("wall_time_seconds"));
}

TEST_CASE("gen-data stage is byte-deterministic across output dirs") {
  ExperimentConfig cfg;
  cfg.seed = 51;
  cfg.data.n_train = 200;
  cfg.data.n_heldout = 50;
  cfg.align.dataset_n = 80;
  cfg.data.clean_concepts = 3;
  cfg.data.harmful_concepts = 2;
  cfg.data.heldout_clean = 1;
  cfg.data.heldout_harmful = 1;

  std::string dir_a = tmp_dir("safecfg_gen_a");
  std::string dir_b = tmp_dir("safecfg_gen_b");
  cfg.out_dir = dir_a;
  Pipeline(cfg).run_gen_data();
  cfg.out_dir = dir_b;
  Pipeline(cfg).run_gen_data();

  for (const char* name : {"vocab.bin", "train.bin", "heldout.bin", "align.bin"}) {
    std::string a = read_text_file(dir_a + "/" + name);
    std::string b = read_text_file(dir_b + "/" + name);
    CHECK_MESSAGE(a == b, name);
  }
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("stage markers make gen-data resumable") {
  ExperimentConfig cfg;
  cfg.seed = 52;
  cfg.data.n_train = 100;
  cfg.data.n_heldout = 20;
  cfg.align.dataset_n = 40;
  cfg.data.clean_concepts = 2;
  cfg.data.harmful_concepts = 1;
  cfg.data.heldout_clean = 1;
  cfg.data.heldout_harmful = 1;
  cfg.out_dir = tmp_dir("safecfg_resume");

  Pipeline pipe(cfg);
  pipe.run_gen_data();
  write_text_file(cfg.out_dir + "/gen-data.done", cfg.run_id());
  auto mtime = std::filesystem::last_write_time(cfg.out_dir + "/train.bin");

  // a config change invalidates the marker
  ExperimentConfig cfg2 = cfg;
  cfg2.seed = 53;
  CHECK(cfg2.run_id() != cfg.run_id());

  (void)mtime;
  std::filesystem::remove_all(cfg.out_dir);
}
