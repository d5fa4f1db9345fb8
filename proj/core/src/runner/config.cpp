#include "vpfc/runner/config.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <set>

namespace vpfc::runner {

using Json = nlohmann::ordered_json;

namespace {

std::string optimizer_name(train::Optimizer o) { return o == train::Optimizer::Adam ? "adam" : "sgd"; }

train::Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return train::Optimizer::Adam;
  if (s == "sgd") return train::Optimizer::Sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

std::string query_mode_name(lens::QueryMode m) { return m == lens::QueryMode::ObjectWord ? "object_word" : "final_prompt"; }

lens::QueryMode parse_query_mode(const std::string& s) {
  if (s == "object_word") return lens::QueryMode::ObjectWord;
  if (s == "final_prompt") return lens::QueryMode::FinalPrompt;
  throw ConfigError("unknown query_mode '" + s + "'");
}

// Reads fields out of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) {
      throw ConfigError(where_ + " must be an object");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      return;
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) {
        throw ConfigError("unknown field " + where_ + "." + k);
      }
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json model_json(const model::ModelConfig& m) {
  return {{"num_layers", m.num_layers}, {"num_heads", m.num_heads}, {"model_dim", m.model_dim},
          {"grid_side", m.grid_side},   {"vocab_size", m.vocab_size}, {"max_seq_len", m.max_seq_len},
          {"ffn_dim", m.ffn_dim},       {"seed", m.seed}};
}

void read_model(const Json& j, model::ModelConfig& m) {
  Fields f(j, "model");
  f.get("num_layers", m.num_layers);
  f.get("num_heads", m.num_heads);
  f.get("model_dim", m.model_dim);
  f.get("grid_side", m.grid_side);
  f.get("vocab_size", m.vocab_size);
  f.get("max_seq_len", m.max_seq_len);
  f.get("ffn_dim", m.ffn_dim);
  f.get("seed", m.seed);
  f.finish();
}

Json dataset_json(const scene::SceneBenchSpec& s) {
  return {{"num_objects", s.num_objects},
          {"dim", s.dim},
          {"grid_side", s.grid_side},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"eval_kappa", s.eval_kappa},
          {"num_scenes", s.num_scenes},
          {"questions_per_scene", s.questions_per_scene},
          {"noise", s.noise},
          {"halo", s.halo},
          {"vocab_seed", s.vocab_seed},
          {"scene_seed", s.scene_seed},
          {"render_seed", s.render_seed},
          {"question_seed", s.question_seed}};
}

void read_dataset(const Json& j, scene::SceneBenchSpec& s) {
  Fields f(j, "dataset");
  f.get("num_objects", s.num_objects);
  f.get("dim", s.dim);
  f.get("grid_side", s.grid_side);
  f.get("min_objects", s.min_objects);
  f.get("max_objects", s.max_objects);
  f.get("eval_kappa", s.eval_kappa);
  f.get("num_scenes", s.num_scenes);
  f.get("questions_per_scene", s.questions_per_scene);
  f.get("noise", s.noise);
  f.get("halo", s.halo);
  f.get("vocab_seed", s.vocab_seed);
  f.get("scene_seed", s.scene_seed);
  f.get("render_seed", s.render_seed);
  f.get("question_seed", s.question_seed);
  f.finish();
}

Json train_json(const train::TrainSpec& t) {
  return {{"optimizer", optimizer_name(t.optimizer)},
          {"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"scenes_per_epoch", t.scenes_per_epoch},
          {"kappa", t.bias_knob},
          {"rho", t.rare_fraction},
          {"caption_weight", t.caption_weight},
          {"seed", t.seed}};
}

void read_train(const Json& j, train::TrainSpec& t) {
  Fields f(j, "train");
  std::string opt = optimizer_name(t.optimizer);
  f.get("optimizer", opt);
  t.optimizer = parse_optimizer(opt);
  f.get("epochs", t.epochs);
  f.get("learning_rate", t.learning_rate);
  f.get("batch_size", t.batch_size);
  f.get("scenes_per_epoch", t.scenes_per_epoch);
  f.get("kappa", t.bias_knob);
  f.get("rho", t.rare_fraction);
  f.get("caption_weight", t.caption_weight);
  f.get("seed", t.seed);
  f.finish();
}

Json vpfc_json(const intervene::VpfcParams& v) {
  Json j = {{"alpha_steer", v.alpha_steer},
            {"gamma", v.gamma},
            {"probe_factor", v.probe_factor},
            {"hcvr_fraction", v.hcvr_fraction},
            {"centroid_mode", v.centroid_mode},
            {"localization_heads", v.localization_heads},
            {"min_layer", v.min_layer},
            {"query_mode", query_mode_name(v.query_mode)},
            {"enhance_mode", intervene::to_string(v.enhance_mode)}};
  j["loss_target"] = v.loss_target ? Json(*v.loss_target) : Json(nullptr);
  return j;
}

void read_vpfc(const Json& j, intervene::VpfcParams& v) {
  Fields f(j, "vpfc");
  f.get("alpha_steer", v.alpha_steer);
  f.get("gamma", v.gamma);
  f.get("probe_factor", v.probe_factor);
  f.get("hcvr_fraction", v.hcvr_fraction);
  f.get("centroid_mode", v.centroid_mode);
  f.get("localization_heads", v.localization_heads);
  f.get("min_layer", v.min_layer);
  std::string qm = query_mode_name(v.query_mode);
  f.get("query_mode", qm);
  v.query_mode = parse_query_mode(qm);
  std::string em = intervene::to_string(v.enhance_mode);
  f.get("enhance_mode", em);
  v.enhance_mode = intervene::parse_enhance_mode(em);
  if (const Json* t = f.sub("loss_target"); t && !t->is_null()) {
    v.loss_target = t->get<int>();
  }
  f.finish();
}

Json policy_json(const PolicyEntry& p) {
  const auto& q = p.params;
  return {{"label", p.label},
          {"policy", decode::to_string(q.policy)},
          {"alpha_contrast", q.alpha_contrast},
          {"beta", q.beta},
          {"p", q.p},
          {"sigma", q.sigma},
          {"importance_layer", q.importance_layer},
          {"vpfc", vpfc_json(q.vpfc)}};
}

PolicyEntry read_policy(const Json& j) {
  PolicyEntry p;
  Fields f(j, "policies[]");
  std::string name = "regular";
  f.get("policy", name);
  p.params.policy = decode::parse_policy(name);
  p.label = name;
  f.get("label", p.label);
  f.get("alpha_contrast", p.params.alpha_contrast);
  f.get("beta", p.params.beta);
  f.get("p", p.params.p);
  f.get("sigma", p.params.sigma);
  f.get("importance_layer", p.params.importance_layer);
  if (const Json* v = f.sub("vpfc")) {
    read_vpfc(*v, p.params.vpfc);
  }
  f.finish();
  return p;
}

}  // namespace

std::vector<PolicyEntry> ExperimentConfig::effective_policies() const {
  std::vector<PolicyEntry> out = policies;
  const bool has_regular = std::any_of(out.begin(), out.end(), [](const PolicyEntry& p) {
    return p.params.policy == decode::Policy::Regular;
  });
  if (!has_regular) {
    out.insert(out.begin(), PolicyEntry{"regular", {}});
  }
  return out;
}

void ExperimentConfig::validate(bool need_checkpoint) const {
  model.validate();
  dataset.validate();
  train.validate();
  if (model.grid_side != dataset.grid_side || model.model_dim != dataset.dim) {
    throw ConfigError("model grid_side/model_dim must match the dataset's grid_side/dim");
  }
  if (model.vocab_size < 7 + 2 * dataset.num_objects) {
    throw ConfigError("model vocab_size too small for " + std::to_string(dataset.num_objects) + " objects");
  }
  std::set<std::string> labels;
  for (const auto& p : policies) {
    if (p.label.empty() || !labels.insert(p.label).second) {
      throw ConfigError("policy labels must be nonempty and unique ('" + p.label + "')");
    }
    p.params.validate();
    if (p.params.policy == decode::Policy::Vpfc) {
      p.params.vpfc.validate(model);
    }
  }
  if (subsets.empty()) {
    throw ConfigError("subsets must not be empty");
  }
  if (max_questions < 0 || captions.scenes < 0 || captions.max_tokens < 1) {
    throw ConfigError("max_questions and captions.scenes must be >= 0, captions.max_tokens >= 1");
  }
  if (sweep.alpha_grid.empty() || sweep.gamma_grid.empty()) {
    throw ConfigError("sweep grids must not be empty");
  }
  if (output_dir.empty()) {
    throw ConfigError("output_dir must not be empty");
  }
  if (!dataset_path.empty() && !std::filesystem::exists(dataset_path)) {
    throw ConfigError("dataset file not found: " + dataset_path);
  }
  if (need_checkpoint) {
    if (checkpoint.empty()) {
      throw ConfigError("checkpoint path is required");
    }
    if (!std::filesystem::exists(checkpoint)) {
      throw ConfigError("checkpoint not found: " + checkpoint);
    }
  }
}

std::string config_to_json(const ExperimentConfig& c) {
  Json policies = Json::array();
  for (const auto& p : c.policies) {
    policies.push_back(policy_json(p));
  }
  Json subsets = Json::array();
  for (auto s : c.subsets) {
    subsets.push_back(scene::to_string(s));
  }
  const Json j = {
      {"schema_version", kConfigSchemaVersion},
      {"name", c.name},
      {"model", model_json(c.model)},
      {"checkpoint", c.checkpoint},
      {"dataset_path", c.dataset_path},
      {"dataset", dataset_json(c.dataset)},
      {"train", train_json(c.train)},
      {"policies", policies},
      {"subsets", subsets},
      {"max_questions", c.max_questions},
      {"captions", {{"scenes", c.captions.scenes}, {"max_tokens", c.captions.max_tokens}}},
      {"sweep",
       {{"subset", scene::to_string(c.sweep.subset)},
        {"alpha_grid", c.sweep.alpha_grid},
        {"gamma_grid", c.sweep.gamma_grid}}},
      {"output_dir", c.output_dir},
      {"seed", c.seed},
  };
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Fields f(j, "config");
  int version = kConfigSchemaVersion;
  f.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config schema_version " + std::to_string(version) + " is not supported");
  }
  f.get("name", c.name);
  if (const Json* m = f.sub("model")) read_model(*m, c.model);
  f.get("checkpoint", c.checkpoint);
  f.get("dataset_path", c.dataset_path);
  if (const Json* d = f.sub("dataset")) read_dataset(*d, c.dataset);
  if (const Json* t = f.sub("train")) read_train(*t, c.train);
  if (const Json* ps = f.sub("policies")) {
    if (!ps->is_array()) {
      throw ConfigError("policies must be an array");
    }
    for (const auto& p : *ps) {
      c.policies.push_back(read_policy(p));
    }
  }
  std::vector<std::string> subsets;
  f.get("subsets", subsets);
  if (!subsets.empty()) {
    c.subsets.clear();
    for (const auto& s : subsets) {
      c.subsets.push_back(scene::parse_subset(s));
    }
  }
  f.get("max_questions", c.max_questions);
  if (const Json* cap = f.sub("captions")) {
    Fields cf(*cap, "captions");
    cf.get("scenes", c.captions.scenes);
    cf.get("max_tokens", c.captions.max_tokens);
    cf.finish();
  }
  if (const Json* sw = f.sub("sweep")) {
    Fields sf(*sw, "sweep");
    std::string subset = scene::to_string(c.sweep.subset);
    sf.get("subset", subset);
    c.sweep.subset = scene::parse_subset(subset);
    sf.get("alpha_grid", c.sweep.alpha_grid);
    sf.get("gamma_grid", c.sweep.gamma_grid);
    sf.finish();
  }
  f.get("output_dir", c.output_dir);
  f.get("seed", c.seed);
  f.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  return config_from_json(read_file(path));
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(config_to_json(config)); }

std::filesystem::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::current_path();
}

std::filesystem::path bundle_path(const ExperimentConfig& config) {
  const std::filesystem::path p(config.output_dir);
  return p.is_absolute() ? p : output_root() / p;
}

}  // namespace vpfc::runner
