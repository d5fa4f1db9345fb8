#include "vpfc/runner/experiment.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/io.hpp"
#include "vpfc/model/checkpoint.hpp"
#include "vpfc/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace vpfc::runner {

using Json = nlohmann::ordered_json;

namespace {

// Collects the files of one bundle so the manifest can list their digests.
class BundleWriter {
 public:
  explicit BundleWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& name, const std::string& contents) {
    write_file_atomic(dir_ / name, contents);
    files_.push_back({{"name", name}, {"bytes", contents.size()}, {"sha256", sha256_hex(contents)}});
  }

  void manifest(const std::string& manifest_name, Json head) {
    head["files"] = files_;
    write_file_atomic(dir_ / manifest_name, head.dump(2) + "\n");
  }

 private:
  std::filesystem::path dir_;
  Json files_ = Json::array();
};

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) {
    out.push_back(cur);
  }
  if (!line.empty() && line.back() == sep) {
    out.emplace_back();
  }
  return out;
}

std::string predictions_header() { return "policy,subset,question_id,scene_id,object,truth,token,answer,p_yes\n"; }

std::string prediction_row(const QuestionRecord& r) {
  return r.policy + "," + scene::to_string(r.subset) + "," + std::to_string(r.question_id) + "," +
         std::to_string(r.scene_id) + "," + std::to_string(r.object) + "," + scene::to_string(r.truth) + "," +
         std::to_string(r.token) + "," + eval::to_string(r.answer) + "," + format_double(r.p_yes) + "\n";
}

// Question ids of one subset in dataset order, capped at max_questions.
std::vector<int> subset_question_ids(const scene::Dataset& dataset, scene::PopeSubset subset, int cap) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < dataset.questions.size(); ++i) {
    if (dataset.questions[i].subset == subset) {
      ids.push_back(static_cast<int>(i));
      if (cap > 0 && static_cast<int>(ids.size()) == cap) {
        break;
      }
    }
  }
  if (ids.empty()) {
    throw ConfigError("dataset has no " + scene::to_string(subset) + " questions");
  }
  return ids;
}

QuestionRecord answer_question(const model::ModelWeights& weights, const scene::Dataset& dataset, int qid,
                               decode::PolicyParams params, std::uint64_t seed,
                               std::optional<intervene::InterventionRecord>* record = nullptr) {
  const auto& q = dataset.questions[static_cast<std::size_t>(qid)];
  const auto input = scene::make_pope_input(dataset.render(dataset.scene(q.scene_id)), q);
  params.distortion_seed = mix_seed(seed, static_cast<std::uint64_t>(qid));
  auto out = decode::decode_with_policy(weights, input, params, 1);
  QuestionRecord r;
  r.subset = q.subset;
  r.question_id = qid;
  r.scene_id = q.scene_id;
  r.object = q.object;
  r.truth = q.label;
  r.token = out.decoded.tokens.at(0);
  r.answer = eval::parse_answer(r.token);
  r.p_yes = out.decoded.distributions.at(0)[scene::tok::kYes];
  if (record) {
    *record = std::move(out.record);
  }
  return r;
}

eval::HallucinationReport report_of(const std::vector<QuestionRecord>& records) {
  std::vector<eval::Prediction> preds;
  preds.reserve(records.size());
  for (const auto& r : records) {
    preds.push_back({r.question_id, r.answer, r.truth});
  }
  return eval::pope_metrics(preds);
}

}  // namespace

const CellReport* ExperimentResult::cell(const std::string& policy, scene::PopeSubset subset) const {
  for (const auto& c : cells) {
    if (c.policy == policy && c.subset == subset) {
      return &c;
    }
  }
  return nullptr;
}

scene::Dataset load_experiment_dataset(const ExperimentConfig& config) {
  if (!config.dataset_path.empty()) {
    return scene::load_dataset(config.dataset_path);
  }
  return scene::build_dataset(config.dataset);
}

TrainingOutcome run_training(const ExperimentConfig& config) {
  config.validate(false);
  if (config.checkpoint.empty()) {
    throw ConfigError("checkpoint path is required for training");
  }
  const auto dataset = load_experiment_dataset(config);
  auto result = train::train(config.model, dataset, config.train);
  TrainingOutcome out;
  out.checkpoint = config.checkpoint;
  out.loss_csv = config.checkpoint + ".loss.csv";
  model::save_checkpoint(out.checkpoint, result.weights);
  write_file_atomic(out.loss_csv, result.log.to_csv());
  out.log = std::move(result.log);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const model::ModelWeights& weights,
                                const scene::Dataset& dataset, const std::filesystem::path& bundle_dir) {
  config.validate(false);
  if (!(weights.config == config.model)) {
    throw ConfigError("checkpoint model config differs from the experiment's model config");
  }
  const auto policies = config.effective_policies();
  std::vector<std::vector<int>> ids;
  for (auto s : config.subsets) {
    ids.push_back(subset_question_ids(dataset, s, config.max_questions));
  }

  ExperimentResult result;
  result.bundle = bundle_dir;
  std::string stage;
  try {
    for (const auto& policy : policies) {
      for (std::size_t si = 0; si < config.subsets.size(); ++si) {
        stage = "pope " + policy.label + "/" + scene::to_string(config.subsets[si]);
        std::vector<QuestionRecord> cell;
        for (int qid : ids[si]) {
          auto r = answer_question(weights, dataset, qid, policy.params, config.seed);
          r.policy = policy.label;
          cell.push_back(std::move(r));
        }
        result.cells.push_back({policy.label, config.subsets[si], report_of(cell)});
        result.predictions.insert(result.predictions.end(), cell.begin(), cell.end());
      }
    }
    if (config.captions.scenes > 0) {
      const int n = std::min<int>(config.captions.scenes, static_cast<int>(dataset.scenes.size()));
      for (const auto& policy : policies) {
        stage = "captions " + policy.label;
        std::vector<eval::CaptionRecord> caps;
        for (int i = 0; i < n; ++i) {
          const auto& sc = dataset.scenes[static_cast<std::size_t>(i)];
          auto params = policy.params;
          params.distortion_seed = mix_seed(config.seed ^ 0x63617074ULL, static_cast<std::uint64_t>(sc.id));
          const auto out = decode::decode_with_policy(weights, scene::make_caption_input(dataset.render(sc)), params,
                                                      config.captions.max_tokens, scene::tok::kEnd);
          caps.push_back({out.decoded.tokens, sc.present});
        }
        CaptionReport report{policy.label, eval::chair_metrics(caps, dataset.vocab), {}};
        for (auto& c : caps) {
          report.tokens.push_back(std::move(c.tokens));
        }
        result.captions.push_back(std::move(report));
      }
    }
    stage.clear();
  } catch (const NumericError& e) {
    result.failure = Failure::Numeric;
    result.failed_stage = stage;
    result.error = e.what();
  } catch (const Error& e) {
    result.failure = Failure::Other;
    result.failed_stage = stage;
    result.error = e.what();
  }
  result.complete = result.failure == Failure::None;

  const std::string regular_label =
      std::find_if(policies.begin(), policies.end(), [](const PolicyEntry& p) {
        return p.params.policy == decode::Policy::Regular;
      })->label;

  for (const auto& c : result.cells) {
    const CellReport* base = result.cell(regular_label, c.subset);
    if (!base) {
      continue;
    }
    result.deltas.push_back({c.policy, c.subset, c.report.omission(), c.report.fabrication(),
                             c.report.omission() - base->report.omission(),
                             c.report.fabrication() - base->report.fabrication(),
                             c.report.accuracy - base->report.accuracy});
  }

  BundleWriter bundle(bundle_dir);
  bundle.write("config.json", config_to_json(config));
  std::string preds = predictions_header();
  for (const auto& r : result.predictions) {
    preds += prediction_row(r);
  }
  bundle.write("predictions.csv", preds);
  std::string pope = eval::pope_csv_header();
  Json reports = Json::array();
  for (const auto& c : result.cells) {
    pope += eval::pope_csv_row(c.policy, scene::to_string(c.subset), c.report);
    reports.push_back({{"policy", c.policy},
                       {"subset", scene::to_string(c.subset)},
                       {"report", Json::parse(eval::to_json(c.report))}});
  }
  bundle.write("pope.csv", pope);
  std::string delta = "policy,subset,omission,fabrication,omission_delta,fabrication_delta,accuracy_delta\n";
  for (const auto& d : result.deltas) {
    delta += d.policy + "," + scene::to_string(d.subset) + "," + std::to_string(d.omission) + "," +
             std::to_string(d.fabrication) + "," + std::to_string(d.omission_delta) + "," +
             std::to_string(d.fabrication_delta) + "," + format_double(d.accuracy_delta) + "\n";
  }
  bundle.write("delta.csv", delta);
  Json chair = Json::array();
  if (!result.captions.empty()) {
    std::string csv = eval::chair_csv_header();
    for (const auto& c : result.captions) {
      csv += eval::chair_csv_row(c.policy, c.report);
      chair.push_back({{"policy", c.policy}, {"report", Json::parse(eval::to_json(c.report))}});
    }
    bundle.write("chair.csv", csv);
    std::string text = "policy,scene_id,caption\n";
    for (const auto& c : result.captions) {
      for (std::size_t i = 0; i < c.tokens.size(); ++i) {
        std::string words;
        for (int t : c.tokens[i]) {
          words += (words.empty() ? "" : " ") + dataset.vocab.token_text(t);
        }
        text += c.policy + "," + std::to_string(dataset.scenes[i].id) + "," + words + "\n";
      }
    }
    bundle.write("captions.csv", text);
  }
  bundle.write("reports.json", Json({{"pope", reports}, {"chair", chair}}).dump(2) + "\n");

  Json head = {{"schema_version", kBundleSchemaVersion},
               {"name", config.name},
               {"config_sha256", config_hash(config)},
               {"seed", config.seed},
               {"complete", result.complete}};
  if (!result.complete) {
    head["failed_stage"] = result.failed_stage;
    head["error"] = result.error;
    head["failure"] = result.failure == Failure::Numeric ? "numeric" : "other";
  }
  bundle.manifest("manifest.json", head);
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate(true);
  const auto weights = model::load_checkpoint(config.checkpoint);
  const auto dataset = load_experiment_dataset(config);
  return run_experiment(config, weights, dataset, bundle_path(config));
}

std::string to_string(SweepParam param) { return param == SweepParam::Alpha ? "alpha" : "gamma"; }

SweepParam parse_sweep_param(const std::string& text) {
  if (text == "alpha") return SweepParam::Alpha;
  if (text == "gamma") return SweepParam::Gamma;
  throw ConfigError("unknown sweep parameter '" + text + "' (alpha|gamma)");
}

std::vector<double> dedupe_grid(const std::vector<double>& grid, std::vector<std::string>* warnings) {
  std::vector<double> out = grid;
  std::sort(out.begin(), out.end());
  std::vector<double> unique;
  for (double v : out) {
    if (!unique.empty() && unique.back() == v) {
      if (warnings) {
        warnings->push_back("duplicate grid value " + format_double(v) + " dropped");
      }
      continue;
    }
    unique.push_back(v);
  }
  return unique;
}

std::string format_heads(const std::vector<model::HeadId>& heads) {
  std::string out;
  for (const auto& h : heads) {
    if (!out.empty()) {
      out += ';';
    }
    out += std::to_string(h.layer) + ":" + std::to_string(h.head);
  }
  return out;
}

std::vector<model::HeadId> parse_heads(const std::string& text) {
  std::vector<model::HeadId> out;
  for (const auto& item : split(text, ';')) {
    if (item.empty()) {
      continue;
    }
    const auto parts = split(item, ':');
    if (parts.size() != 2) {
      throw FormatError("bad head entry '" + item + "'");
    }
    out.push_back({std::stoi(parts[0]), std::stoi(parts[1])});
  }
  return out;
}

SweepResult run_sweep(const ExperimentConfig& config, const model::ModelWeights& weights,
                      const scene::Dataset& dataset, SweepParam param, const std::filesystem::path& bundle_dir) {
  config.validate(false);
  SweepResult result;
  result.param = param;
  result.subset = config.sweep.subset;
  result.bundle = bundle_dir;
  const auto grid =
      dedupe_grid(param == SweepParam::Alpha ? config.sweep.alpha_grid : config.sweep.gamma_grid, &result.warnings);
  decode::PolicyParams base;
  base.policy = decode::Policy::Vpfc;
  for (const auto& p : config.policies) {
    if (p.params.policy == decode::Policy::Vpfc) {
      base = p.params;
      break;
    }
  }
  result.question_ids = subset_question_ids(dataset, config.sweep.subset, config.max_questions);
  for (double v : grid) {
    auto params = base;
    (param == SweepParam::Alpha ? params.vpfc.alpha_steer : params.vpfc.gamma) = v;
    params.validate();
    params.vpfc.validate(weights.config);
    std::vector<QuestionRecord> cell;
    std::vector<std::vector<model::HeadId>> heads;
    for (int qid : result.question_ids) {
      std::optional<intervene::InterventionRecord> rec;
      cell.push_back(answer_question(weights, dataset, qid, params, config.seed, &rec));
      heads.push_back(rec ? rec->selected_heads : std::vector<model::HeadId>{});
    }
    result.rows.push_back({v, report_of(cell)});
    result.heads.push_back(std::move(heads));
  }

  const std::string name = "sweep_" + to_string(param);
  BundleWriter bundle(bundle_dir);
  std::string csv = to_string(param) + ",subset,total,tp,fp,fn,tn,accuracy,precision,recall,f1,omission,fabrication\n";
  for (const auto& row : result.rows) {
    const auto& r = row.report;
    csv += format_double(row.value) + "," + scene::to_string(result.subset) + "," + std::to_string(r.total) + "," +
           std::to_string(r.tp) + "," + std::to_string(r.fp) + "," + std::to_string(r.fn) + "," +
           std::to_string(r.tn) + "," + format_double(r.accuracy) + "," + format_double(r.precision) + "," +
           format_double(r.recall) + "," + format_double(r.f1) + "," + std::to_string(r.omission()) + "," +
           std::to_string(r.fabrication()) + "\n";
  }
  bundle.write(name + ".csv", csv);
  std::string heads = to_string(param) + ",question_id,heads\n";
  for (std::size_t g = 0; g < result.rows.size(); ++g) {
    for (std::size_t i = 0; i < result.question_ids.size(); ++i) {
      heads += format_double(result.rows[g].value) + "," + std::to_string(result.question_ids[i]) + "," +
               format_heads(result.heads[g][i]) + "\n";
    }
  }
  bundle.write(name + "_heads.csv", heads);
  bundle.manifest(name + "_manifest.json", {{"schema_version", kBundleSchemaVersion},
                                            {"name", config.name},
                                            {"config_sha256", config_hash(config)},
                                            {"seed", config.seed},
                                            {"parameter", to_string(param)},
                                            {"warnings", result.warnings},
                                            {"complete", true}});
  return result;
}

SweepResult run_sweep(const ExperimentConfig& config, SweepParam param) {
  config.validate(true);
  const auto weights = model::load_checkpoint(config.checkpoint);
  const auto dataset = load_experiment_dataset(config);
  return run_sweep(config, weights, dataset, param, bundle_path(config));
}

std::vector<CellReport> recount_bundle(const std::filesystem::path& bundle_dir) {
  const std::string text = read_file(bundle_dir / "predictions.csv");
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line + "\n" != predictions_header()) {
    throw FormatError("predictions.csv has an unexpected header");
  }
  // keyed by first appearance so the order matches the bundle
  std::vector<std::pair<std::string, scene::PopeSubset>> order;
  std::map<std::pair<std::string, scene::PopeSubset>, std::vector<eval::Prediction>> cells;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 9) {
      throw FormatError("predictions.csv row has " + std::to_string(f.size()) + " fields");
    }
    const auto key = std::make_pair(f[0], scene::parse_subset(f[1]));
    if (!cells.count(key)) {
      order.push_back(key);
    }
    cells[key].push_back({std::stoi(f[2]), eval::parse_answer_text(f[7]), scene::parse_label(f[5])});
  }
  std::vector<CellReport> out;
  for (const auto& key : order) {
    out.push_back({key.first, key.second, eval::pope_metrics(cells[key])});
  }
  return out;
}

std::string format_bundle_summary(const std::filesystem::path& bundle_dir) {
  const Json manifest = Json::parse(read_file(bundle_dir / "manifest.json"));
  std::string out = "bundle " + bundle_dir.string() + "\n";
  out += "config " + manifest.at("config_sha256").get<std::string>() + "\n";
  out += std::string("complete ") + (manifest.at("complete").get<bool>() ? "yes" : "no") + "\n";
  if (manifest.contains("error")) {
    out += "error [" + manifest.at("failed_stage").get<std::string>() + "] " +
           manifest.at("error").get<std::string>() + "\n";
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "\n%-14s %-12s %6s %6s %6s %9s %9s %9s\n", "policy", "subset", "acc", "prec",
                "rec", "omission", "fabric.", "d_om/d_fab");
  out += buf;
  std::map<std::pair<std::string, std::string>, std::string> deltas;
  {
    std::istringstream in(read_file(bundle_dir / "delta.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto f = split(line, ',');
      if (f.size() >= 6) {
        deltas[{f[0], f[1]}] = f[4] + "/" + f[5];
      }
    }
  }
  std::istringstream in(read_file(bundle_dir / "pope.csv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto f = split(line, ',');
    if (f.size() != 14) {
      continue;
    }
    std::snprintf(buf, sizeof buf, "%-14s %-12s %6.3f %6.3f %6.3f %9s %9s %9s\n", f[0].c_str(), f[1].c_str(),
                  std::stod(f[8]), std::stod(f[9]), std::stod(f[10]), f[12].c_str(), f[13].c_str(),
                  deltas[{f[0], f[1]}].c_str());
    out += buf;
  }
  return out;
}

}  // namespace vpfc::runner
