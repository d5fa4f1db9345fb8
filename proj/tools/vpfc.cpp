// vpfc: dataset building, training, policy evaluation, sweeps and report inspection.

#include "vpfc/errors.hpp"
#include "vpfc/runner/experiment.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <optional>

namespace {

using namespace vpfc;

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kIncomplete = 4 };

struct Overrides {
  std::string checkpoint;
  std::string dataset;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_questions;
  std::optional<double> kappa;
  std::optional<double> rho;
  std::optional<int> epochs;
  std::vector<std::string> policies;
  std::vector<std::string> subsets;
  std::optional<double> alpha_steer;
  std::optional<double> gamma;
  bool no_centroid = false;
  std::optional<int> caption_scenes;
};

void add_common(CLI::App* cmd, std::string& config_path, Overrides& o) {
  cmd->add_option("-c,--config", config_path, "experiment config (JSON); defaults apply when omitted");
  cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint path");
  cmd->add_option("--dataset", o.dataset, "prebuilt dataset file");
  cmd->add_option("-o,--output-dir", o.output_dir, "bundle directory (relative to $VPFC_OUTPUT_ROOT)");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--max-questions", o.max_questions, "per-subset question cap (0 = all)");
  cmd->add_option("--policy", o.policies, "policy (regular|vcd|sid|enh|vpfc); repeatable");
  cmd->add_option("--subset", o.subsets, "subset (random|popular|adversarial); repeatable");
}

runner::ExperimentConfig resolve(const std::string& path, const Overrides& o) {
  auto c = path.empty() ? runner::ExperimentConfig{} : runner::load_config(path);
  if (!o.checkpoint.empty()) c.checkpoint = o.checkpoint;
  if (!o.dataset.empty()) c.dataset_path = o.dataset;
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (o.seed) c.seed = *o.seed;
  if (o.max_questions) c.max_questions = *o.max_questions;
  if (o.kappa) c.train.bias_knob = *o.kappa;
  if (o.rho) c.train.rare_fraction = *o.rho;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.caption_scenes) c.captions.scenes = *o.caption_scenes;
  if (!o.policies.empty()) {
    c.policies.clear();
    for (const auto& name : o.policies) {
      runner::PolicyEntry e;
      e.label = name;
      e.params.policy = decode::parse_policy(name);
      c.policies.push_back(e);
    }
  }
  if (!o.subsets.empty()) {
    c.subsets.clear();
    for (const auto& s : o.subsets) {
      c.subsets.push_back(scene::parse_subset(s));
    }
  }
  for (auto& p : c.policies) {
    if (o.alpha_steer) p.params.vpfc.alpha_steer = *o.alpha_steer;
    if (o.gamma) p.params.vpfc.gamma = *o.gamma;
    if (o.no_centroid) p.params.vpfc.centroid_mode = false;
  }
  return c;
}

int finish(const runner::ExperimentResult& r) {
  std::fputs(runner::format_bundle_summary(r.bundle).c_str(), stdout);
  if (r.complete) {
    return kOk;
  }
  spdlog::error("run incomplete at stage '{}': {}", r.failed_stage, r.error);
  return r.failure == runner::Failure::Numeric ? kNumeric : kIncomplete;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vpfc: toy vision-language hallucination lab"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  std::string config_path;
  Overrides o;

  auto* build = app.add_subcommand("build-data", "build the synthetic scene dataset and write it to a file");
  add_common(build, config_path, o);
  std::string data_out;
  build->add_option("--out", data_out, "dataset file to write (defaults to the config's dataset_path)");

  auto* train = app.add_subcommand("train", "train a model and save its checkpoint");
  add_common(train, config_path, o);
  train->add_option("--kappa", o.kappa, "co-occurrence bias of training scenes");
  train->add_option("--rho", o.rho, "drop rate of small objects in positive targets");
  train->add_option("--epochs", o.epochs, "training epochs");

  auto* eval = app.add_subcommand("eval", "evaluate policies on POPE subsets and write a report bundle");
  add_common(eval, config_path, o);
  eval->add_option("--alpha-steer", o.alpha_steer, "steering coefficient for vpfc");
  eval->add_option("--gamma", o.gamma, "head fraction for vpfc");
  eval->add_flag("--no-centroid", o.no_centroid, "use the raw high-attention mask instead of the centroid square");
  eval->add_option("--captions", o.caption_scenes, "number of scenes to caption (0 = none)");

  auto* sweep = app.add_subcommand("sweep", "accuracy of vpfc over the alpha or gamma grid");
  add_common(sweep, config_path, o);
  std::string param = "alpha";
  sweep->add_option("--param", param, "alpha|gamma")->check(CLI::IsMember({"alpha", "gamma"}));
  sweep->add_option("--alpha-steer", o.alpha_steer, "fixed steering coefficient during a gamma sweep");
  sweep->add_option("--gamma", o.gamma, "fixed head fraction during an alpha sweep");

  auto* show = app.add_subcommand("config", "print the resolved config as JSON");
  add_common(show, config_path, o);

  auto* report = app.add_subcommand("report", "print a bundle summary and recheck it against its predictions");
  std::string bundle;
  report->add_option("bundle", bundle, "bundle directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*show) {
      std::puts(runner::config_to_json(resolve(config_path, o)).c_str());
      return kOk;
    }
    if (*build) {
      const auto c = resolve(config_path, o);
      const std::string out = data_out.empty() ? c.dataset_path : data_out;
      if (out.empty()) {
        throw ConfigError("no output file: pass --out or set dataset_path");
      }
      c.dataset.validate();
      const auto ds = scene::build_dataset(c.dataset);
      scene::save_dataset(out, ds);
      spdlog::info("wrote {} scenes and {} questions to {}", ds.scenes.size(), ds.questions.size(), out);
      return kOk;
    }
    if (*train) {
      const auto c = resolve(config_path, o);
      spdlog::info("training {} epochs (kappa={}, rho={}, seed={})", c.train.epochs, c.train.bias_knob,
                   c.train.rare_fraction, c.train.seed);
      const auto out = runner::run_training(c);
      spdlog::info("loss {:.4f} -> {:.4f}; checkpoint {}", out.log.initial_loss, out.log.final_loss,
                   out.checkpoint.string());
      return kOk;
    }
    if (*eval) {
      const auto c = resolve(config_path, o);
      spdlog::info("evaluating into {}", runner::bundle_path(c).string());
      return finish(runner::run_experiment(c));
    }
    if (*sweep) {
      const auto c = resolve(config_path, o);
      const auto r = runner::run_sweep(c, runner::parse_sweep_param(param));
      for (const auto& w : r.warnings) {
        spdlog::warn("{}", w);
      }
      std::printf("%-8s %8s %9s %11s\n", param.c_str(), "accuracy", "omission", "fabrication");
      for (const auto& row : r.rows) {
        std::printf("%-8g %8.3f %9d %11d\n", row.value, row.report.accuracy, row.report.omission(),
                    row.report.fabrication());
      }
      return kOk;
    }
    if (*report) {
      std::fputs(runner::format_bundle_summary(bundle).c_str(), stdout);
      const auto recount = runner::recount_bundle(bundle);
      std::ifstream in(std::filesystem::path(bundle) / "pope.csv");
      const std::string pope((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      int mismatched = 0;
      for (const auto& c : recount) {
        if (pope.find(eval::pope_csv_row(c.policy, scene::to_string(c.subset), c.report)) == std::string::npos) {
          spdlog::error("pope.csv disagrees with predictions.csv for {}/{}", c.policy, scene::to_string(c.subset));
          ++mismatched;
        }
      }
      std::printf("\nrecount: %zu cells, %d mismatched\n", recount.size(), mismatched);
      return mismatched == 0 ? kOk : kIncomplete;
    }
  } catch (const NumericError& e) {
    spdlog::error("numeric error: {}", e.what());
    return kNumeric;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kConfig;
  }
  return kOk;
}
