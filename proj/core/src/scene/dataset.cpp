#include "vpfc/scene/dataset.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/io.hpp"
#include "vpfc/rng.hpp"

#include <json.hpp>

namespace vpfc::scene {

using nlohmann::json;

void SceneBenchSpec::validate() const {
  if (num_objects < 2 || num_objects > 16) {
    throw ConfigError("num_objects must be in 2..16");
  }
  if (dim < 1 || grid_side < 1) {
    throw ConfigError("dim and grid_side must be positive");
  }
  if (min_objects < 1 || min_objects > max_objects || max_objects >= num_objects) {
    throw ConfigError("object count range must satisfy 1 <= min <= max < num_objects");
  }
  if (!(eval_kappa >= 0.0 && eval_kappa <= 1.0)) {
    throw ConfigError("eval_kappa must lie in [0,1]");
  }
  if (num_scenes < 1 || questions_per_scene < 1) {
    throw ConfigError("num_scenes and questions_per_scene must be positive");
  }
  if (!(noise >= 0.0) || !(halo >= 0.0 && halo <= 1.0)) {
    throw ConfigError("noise must be >= 0 and halo in [0,1]");
  }
}

SceneGenOptions SceneBenchSpec::gen_options() const {
  SceneGenOptions o;
  o.grid_side = grid_side;
  o.min_objects = min_objects;
  o.max_objects = max_objects;
  return o;
}

const Scene& Dataset::scene(int id) const {
  if (id >= 0 && id < static_cast<int>(scenes.size()) && scenes[static_cast<std::size_t>(id)].id == id) {
    return scenes[static_cast<std::size_t>(id)];
  }
  for (const Scene& s : scenes) {
    if (s.id == id) {
      return s;
    }
  }
  throw ConfigError("unknown scene id " + std::to_string(id));
}

std::vector<PopeQuestion> Dataset::subset(PopeSubset s) const {
  std::vector<PopeQuestion> out;
  for (const auto& q : questions) {
    if (q.subset == s) {
      out.push_back(q);
    }
  }
  return out;
}

RenderOptions Dataset::render_options(std::uint64_t seed) const {
  return RenderOptions{spec.noise, spec.halo, seed};
}

model::VisualInput Dataset::render(const Scene& s) const {
  return render_visual_tokens(s, vocab, render_options(mix_seed(spec.render_seed, static_cast<std::uint64_t>(s.id))));
}

Dataset build_dataset(const SceneBenchSpec& spec) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  d.vocab = ObjectVocab::make_default(spec.dim, spec.vocab_seed, spec.num_objects);
  const CooccurrenceSpec co = CooccurrenceSpec::paired(spec.num_objects, spec.eval_kappa);
  for (int i = 0; i < spec.num_scenes; ++i) {
    Scene s = generate_scene(mix_seed(spec.scene_seed, static_cast<std::uint64_t>(i)), co, d.vocab, spec.gen_options());
    s.id = i;
    d.scenes.push_back(std::move(s));
  }
  d.cooccurrence = cooccurrence_matrix(d.scenes, spec.num_objects);
  for (PopeSubset subset : kAllSubsets) {
    auto qs = build_pope_questions(d.scenes, subset, {spec.questions_per_scene, spec.question_seed}, d.cooccurrence,
                                   d.vocab);
    d.questions.insert(d.questions.end(), qs.begin(), qs.end());
  }
  verify_questions(d.questions, d.scenes, d.vocab);
  return d;
}

namespace {

json row_to_json(const RowVec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    a.push_back(v[i]);
  }
  return a;
}

RowVec row_from_json(const json& a) {
  RowVec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

json spec_to_json(const SceneBenchSpec& s) {
  return {{"num_objects", s.num_objects},   {"dim", s.dim},
          {"grid_side", s.grid_side},       {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},   {"eval_kappa", s.eval_kappa},
          {"num_scenes", s.num_scenes},     {"questions_per_scene", s.questions_per_scene},
          {"noise", s.noise},               {"halo", s.halo},
          {"vocab_seed", s.vocab_seed},     {"scene_seed", s.scene_seed},
          {"render_seed", s.render_seed},   {"question_seed", s.question_seed}};
}

}  // namespace

std::string dataset_to_json(const Dataset& d) {
  json vocab = {{"dim", d.vocab.dim}, {"background", row_to_json(d.vocab.background)}, {"objects", json::array()}};
  for (const auto& o : d.vocab.objects) {
    vocab["objects"].push_back({{"name", o.name},
                                {"name_token", o.name_token},
                                {"synonym_tokens", o.synonym_tokens},
                                {"synonym_names", o.synonym_names},
                                {"instance_size", o.instance_size},
                                {"prototype", row_to_json(o.prototype)}});
  }
  json scenes = json::array();
  for (const Scene& s : d.scenes) {
    json cells = json::array();
    for (const auto& c : s.cells) {
      cells.push_back(json::array({c.object, c.instance_size}));
    }
    scenes.push_back({{"id", s.id}, {"grid_side", s.grid_side}, {"present", s.present}, {"cells", cells}});
  }
  json questions = json::array();
  for (const auto& q : d.questions) {
    questions.push_back({{"scene_id", q.scene_id},
                         {"object", q.object},
                         {"label", to_string(q.label)},
                         {"subset", to_string(q.subset)},
                         {"prompt", q.prompt}});
  }
  json co = json::array();
  for (Eigen::Index i = 0; i < d.cooccurrence.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < d.cooccurrence.cols(); ++j) {
      row.push_back(d.cooccurrence(i, j));
    }
    co.push_back(row);
  }
  json root = {{"schema_version", d.schema_version},
               {"spec", spec_to_json(d.spec)},
               {"vocab", vocab},
               {"scenes", scenes},
               {"cooccurrence", co},
               {"questions", questions}};
  return root.dump(1) + "\n";
}

Dataset dataset_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset is not valid JSON: ") + e.what());
  }
  try {
    Dataset d;
    d.schema_version = root.at("schema_version").get<int>();
    if (d.schema_version != kDatasetSchemaVersion) {
      throw FormatError("dataset schema version " + std::to_string(d.schema_version) + " is not supported (expected " +
                        std::to_string(kDatasetSchemaVersion) + ")");
    }
    const json& s = root.at("spec");
    auto& sp = d.spec;
    sp.num_objects = s.at("num_objects").get<int>();
    sp.dim = s.at("dim").get<int>();
    sp.grid_side = s.at("grid_side").get<int>();
    sp.min_objects = s.at("min_objects").get<int>();
    sp.max_objects = s.at("max_objects").get<int>();
    sp.eval_kappa = s.at("eval_kappa").get<double>();
    sp.num_scenes = s.at("num_scenes").get<int>();
    sp.questions_per_scene = s.at("questions_per_scene").get<int>();
    sp.noise = s.at("noise").get<double>();
    sp.halo = s.at("halo").get<double>();
    sp.vocab_seed = s.at("vocab_seed").get<std::uint64_t>();
    sp.scene_seed = s.at("scene_seed").get<std::uint64_t>();
    sp.render_seed = s.at("render_seed").get<std::uint64_t>();
    sp.question_seed = s.at("question_seed").get<std::uint64_t>();

    const json& v = root.at("vocab");
    d.vocab.dim = v.at("dim").get<int>();
    d.vocab.background = row_from_json(v.at("background"));
    for (const json& o : v.at("objects")) {
      ObjectCategory c;
      c.name = o.at("name").get<std::string>();
      c.name_token = o.at("name_token").get<int>();
      c.synonym_tokens = o.at("synonym_tokens").get<std::vector<int>>();
      c.synonym_names = o.at("synonym_names").get<std::vector<std::string>>();
      c.instance_size = o.at("instance_size").get<int>();
      c.prototype = row_from_json(o.at("prototype"));
      d.vocab.objects.push_back(std::move(c));
    }
    d.vocab.validate();

    for (const json& js : root.at("scenes")) {
      Scene sc;
      sc.id = js.at("id").get<int>();
      sc.grid_side = js.at("grid_side").get<int>();
      sc.present = js.at("present").get<std::vector<int>>();
      for (const json& c : js.at("cells")) {
        sc.cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
      }
      sc.validate();
      d.scenes.push_back(std::move(sc));
    }
    const json& co = root.at("cooccurrence");
    const auto k = static_cast<Eigen::Index>(co.size());
    d.cooccurrence = CountMatrix::Zero(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) {
        d.cooccurrence(i, j) = co.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(j)).get<int>();
      }
    }
    for (const json& q : root.at("questions")) {
      d.questions.push_back({q.at("scene_id").get<int>(), q.at("object").get<int>(),
                             parse_label(q.at("label").get<std::string>()),
                             parse_subset(q.at("subset").get<std::string>()), q.at("prompt").get<std::vector<int>>()});
    }
    verify_questions(d.questions, d.scenes, d.vocab);
    return d;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset: ") + e.what());
  }
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  write_file_atomic(path, dataset_to_json(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return dataset_from_json(read_file(path)); }

}  // namespace vpfc::scene
