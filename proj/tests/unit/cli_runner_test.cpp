#include "vpfc/errors.hpp"
#include "vpfc/io.hpp"
#include "vpfc/model/checkpoint.hpp"
#include "vpfc/runner/experiment.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <set>
#include <sstream>

namespace vpfc::runner {
namespace {

namespace fs = std::filesystem;

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.name = "tiny";
  c.model.num_layers = 2;
  c.model.num_heads = 2;
  c.model.model_dim = 16;
  c.model.grid_side = 6;
  c.model.vocab_size = 19;
  c.model.max_seq_len = 64;
  c.model.ffn_dim = 32;
  c.model.seed = 5;
  c.dataset.num_objects = 6;
  c.dataset.dim = 16;
  c.dataset.grid_side = 6;
  c.dataset.max_objects = 2;
  c.dataset.num_scenes = 12;
  c.max_questions = 8;
  c.train.epochs = 1;
  c.train.scenes_per_epoch = 8;
  return c;
}

class RunnerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("vpfc_runner_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path dir;
  ExperimentConfig config = tiny_config();
  model::ModelWeights weights = model::ModelWeights::initialize(config.model);
  scene::Dataset dataset = scene::build_dataset(config.dataset);
};

PolicyEntry entry(const std::string& label, decode::Policy p) {
  PolicyEntry e;
  e.label = label;
  e.params.policy = p;
  e.params.vpfc.localization_heads = 2;
  e.params.vpfc.min_layer = 0;
  return e;
}

std::string slurp(const fs::path& p) { return read_file(p); }

TEST(Config, JsonRoundTrip) {
  auto c = tiny_config();
  c.policies = {entry("regular", decode::Policy::Regular), entry("vcd2", decode::Policy::Vcd),
                entry("vpfc", decode::Policy::Vpfc)};
  c.policies[1].params.sigma = 0.5;
  c.policies[2].params.vpfc.loss_target = 2;
  c.subsets = {scene::PopeSubset::Adversarial};
  c.sweep.alpha_grid = {0, 4};
  const auto text = config_to_json(c);
  EXPECT_EQ(config_from_json(text), c);
  EXPECT_EQ(config_to_json(config_from_json(text)), text);
  EXPECT_EQ(config_hash(c).size(), 64u);
}

TEST(Config, MissingFieldsTakeDefaults) {
  const auto c = config_from_json(R"({"name": "x", "policies": [{"policy": "vcd"}]})");
  EXPECT_EQ(c.model, model::ModelConfig{});
  ASSERT_EQ(c.policies.size(), 1u);
  EXPECT_EQ(c.policies[0].label, "vcd");
  EXPECT_EQ(c.effective_policies().front().label, "regular");
  EXPECT_EQ(c.sweep.alpha_grid, (std::vector<double>{0, 1, 2, 3, 4, 5, 6, 8}));
  EXPECT_EQ(c.sweep.gamma_grid, (std::vector<double>{0.125, 0.25, 0.5, 0.75, 1.0}));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(config_from_json("{"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"nmae": "typo"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"model": {"layers": 2}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"subsets": ["everything"]})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"schema_version": 99})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"model": {"num_layers": "four"}})"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);

  auto c = tiny_config();
  c.checkpoint = "/nonexistent/model.ckpt";
  EXPECT_THROW(c.validate(true), ConfigError);
  EXPECT_NO_THROW(c.validate(false));
  c.policies = {entry("a", decode::Policy::Vcd), entry("a", decode::Policy::Sid)};
  EXPECT_THROW(c.validate(false), ConfigError);
  c = tiny_config();
  c.sweep.gamma_grid.clear();
  EXPECT_THROW(c.validate(false), ConfigError);
  c = tiny_config();
  c.model.model_dim = 32;
  c.model.ffn_dim = 32;
  EXPECT_THROW(c.validate(false), ConfigError);
}

TEST(Config, OutputRootFromEnvironment) {
  auto c = tiny_config();
  c.output_dir = "runs/a";
  ::setenv(kOutputRootEnv, "/tmp/vpfc_root", 1);
  EXPECT_EQ(bundle_path(c), fs::path("/tmp/vpfc_root/runs/a"));
  c.output_dir = "/abs/b";
  EXPECT_EQ(bundle_path(c), fs::path("/abs/b"));
  ::unsetenv(kOutputRootEnv);
  c.output_dir = "runs/a";
  EXPECT_EQ(bundle_path(c), fs::current_path() / "runs/a");
}

TEST_F(RunnerTest, RegularOnlyHasZeroDeltas) {
  const auto r = run_experiment(config, weights, dataset, dir);
  EXPECT_TRUE(r.complete);
  ASSERT_EQ(r.cells.size(), 3u);
  ASSERT_EQ(r.deltas.size(), 3u);
  for (const auto& d : r.deltas) {
    EXPECT_EQ(d.omission_delta, 0);
    EXPECT_EQ(d.fabrication_delta, 0);
    EXPECT_EQ(d.accuracy_delta, 0.0);
  }
  for (const char* f : {"manifest.json", "config.json", "predictions.csv", "pope.csv", "delta.csv", "reports.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["complete"], true);
  EXPECT_EQ(manifest["config_sha256"], config_hash(config));
  for (const auto& f : manifest["files"]) {
    EXPECT_EQ(f["sha256"], sha256_hex(slurp(dir / f["name"].get<std::string>())));
  }
}

TEST_F(RunnerTest, RepeatedRunsAreByteIdentical) {
  config.policies = {entry("regular", decode::Policy::Regular), entry("vcd", decode::Policy::Vcd),
                     entry("vpfc", decode::Policy::Vpfc)};
  config.subsets = {scene::PopeSubset::Adversarial};
  config.captions.scenes = 2;
  config.captions.max_tokens = 4;
  run_experiment(config, weights, dataset, dir / "a");
  run_experiment(config, weights, dataset, dir / "b");
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    names.insert(e.path().filename().string());
  }
  EXPECT_TRUE(names.count("chair.csv"));
  EXPECT_TRUE(names.count("captions.csv"));
  for (const auto& n : names) {
    EXPECT_EQ(slurp(dir / "a" / n), slurp(dir / "b" / n)) << n;
  }
}

TEST_F(RunnerTest, AggregatesMatchShippedPredictions) {
  config.policies = {entry("sid", decode::Policy::Sid), entry("enh", decode::Policy::Enh)};
  const auto r = run_experiment(config, weights, dataset, dir);
  const auto recount = recount_bundle(dir);
  ASSERT_EQ(recount.size(), r.cells.size());
  for (std::size_t i = 0; i < recount.size(); ++i) {
    EXPECT_EQ(recount[i].policy, r.cells[i].policy);
    EXPECT_EQ(recount[i].subset, r.cells[i].subset);
    EXPECT_EQ(recount[i].report, r.cells[i].report);
  }
  const std::string pope = slurp(dir / "pope.csv");
  for (const auto& c : recount) {
    EXPECT_NE(pope.find(eval::pope_csv_row(c.policy, scene::to_string(c.subset), c.report)), std::string::npos);
  }
  EXPECT_NE(format_bundle_summary(dir).find("complete yes"), std::string::npos);
}

TEST_F(RunnerTest, NumericFailureKeepsFinishedCells) {
  auto bad = entry("vcd_huge", decode::Policy::Vcd);
  bad.params.sigma = 1e308;
  config.policies = {entry("regular", decode::Policy::Regular), bad};
  config.subsets = {scene::PopeSubset::Random};
  const auto r = run_experiment(config, weights, dataset, dir);
  EXPECT_FALSE(r.complete);
  EXPECT_EQ(r.failure, Failure::Numeric);
  EXPECT_EQ(r.failed_stage, "pope vcd_huge/random");
  ASSERT_EQ(r.cells.size(), 1u);
  EXPECT_EQ(r.cells[0].policy, "regular");
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["complete"], false);
  EXPECT_EQ(manifest["failure"], "numeric");
  EXPECT_EQ(recount_bundle(dir).size(), 1u);
}

TEST_F(RunnerTest, MismatchedCheckpointRejected) {
  auto other = config.model;
  other.ffn_dim = 16;
  EXPECT_THROW(run_experiment(config, model::ModelWeights::initialize(other), dataset, dir), ConfigError);
}

TEST(Sweep, DedupeWarns) {
  std::vector<std::string> warnings;
  EXPECT_EQ(dedupe_grid({4, 0, 4, 2, 0}, &warnings), (std::vector<double>{0, 2, 4}));
  EXPECT_EQ(warnings.size(), 2u);
}

TEST(Sweep, HeadTextRoundTrip) {
  const std::vector<model::HeadId> heads = {{0, 1}, {3, 7}};
  EXPECT_EQ(format_heads(heads), "0:1;3:7");
  EXPECT_EQ(parse_heads("0:1;3:7"), heads);
  EXPECT_TRUE(parse_heads("").empty());
  EXPECT_THROW(parse_heads("0-1"), FormatError);
}

TEST_F(RunnerTest, AlphaZeroRowEqualsRegular) {
  auto vp = entry("vpfc", decode::Policy::Vpfc);
  config.policies = {vp};
  config.subsets = {scene::PopeSubset::Adversarial};
  config.sweep.alpha_grid = {0, 4, 0};
  const auto sweep = run_sweep(config, weights, dataset, SweepParam::Alpha, dir);
  EXPECT_EQ(sweep.warnings.size(), 1u);
  ASSERT_EQ(sweep.rows.size(), 2u);
  EXPECT_EQ(sweep.rows[0].value, 0.0);
  const auto exp = run_experiment(config, weights, dataset, dir / "exp");
  EXPECT_EQ(sweep.rows[0].report.accuracy, exp.cell("regular", scene::PopeSubset::Adversarial)->report.accuracy);
  EXPECT_TRUE(fs::exists(dir / "sweep_alpha.csv"));
  EXPECT_TRUE(fs::exists(dir / "sweep_alpha_manifest.json"));
}

TEST_F(RunnerTest, GammaHeadListsAreNested) {
  config.model.num_layers = 4;
  config.model.num_heads = 2;
  weights = model::ModelWeights::initialize(config.model);
  config.policies = {entry("vpfc", decode::Policy::Vpfc)};
  config.sweep.subset = scene::PopeSubset::Random;
  config.sweep.gamma_grid = {0.125, 0.25, 0.5};
  run_sweep(config, weights, dataset, SweepParam::Gamma, dir);
  // read the emitted artifact back, not the in-memory result
  std::map<double, std::map<int, std::vector<model::HeadId>>> heads;
  std::istringstream in(slurp(dir / "sweep_gamma_heads.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "gamma,question_id,heads");
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    heads[std::stod(line.substr(0, a))][std::stoi(line.substr(a + 1, b - a - 1))] = parse_heads(line.substr(b + 1));
  }
  ASSERT_EQ(heads.size(), 3u);
  for (const auto& [qid, small] : heads[0.125]) {
    const auto& mid = heads[0.25][qid];
    EXPECT_EQ(small.size(), 1u);
    EXPECT_EQ(mid.size(), 2u);
    for (const auto& h : small) {
      EXPECT_NE(std::find(mid.begin(), mid.end(), h), mid.end());
    }
    for (const auto& h : mid) {
      const auto& big = heads[0.5][qid];
      EXPECT_NE(std::find(big.begin(), big.end(), h), big.end());
    }
  }
}

TEST_F(RunnerTest, TrainingWritesCheckpointAndLog) {
  config.checkpoint = (dir / "m.ckpt").string();
  const auto out = run_training(config);
  EXPECT_TRUE(fs::exists(out.checkpoint));
  EXPECT_EQ(slurp(out.loss_csv), out.log.to_csv());
  EXPECT_EQ(model::load_checkpoint(out.checkpoint).config, config.model);
  config.output_dir = (dir / "bundle").string();
  EXPECT_TRUE(run_experiment(config).complete);
}

}  // namespace
}  // namespace vpfc::runner
