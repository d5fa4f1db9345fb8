#include "vpfc/train/trainer.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/io.hpp"
#include "vpfc/model/transformer.hpp"
#include "vpfc/rng.hpp"

#include <algorithm>
#include <cmath>

namespace vpfc::train {

using model::ModelWeights;
using scene::ObjectVocab;
using scene::Scene;
namespace tok = scene::tok;

void TrainSpec::validate() const {
  if (epochs < 0) {
    throw ConfigError("epochs must be >= 0");
  }
  if (batch_size < 1 || scenes_per_epoch < 1) {
    throw ConfigError("batch_size and scenes_per_epoch must be positive");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be positive");
  }
  if (!(bias_knob >= 0.0 && bias_knob <= 1.0)) {
    throw ConfigError("bias_knob must lie in [0,1]");
  }
  if (!(rare_fraction >= 0.0 && rare_fraction <= 1.0)) {
    throw ConfigError("rare_fraction must lie in [0,1]");
  }
  if (!(caption_weight >= 0.0)) {
    throw ConfigError("caption_weight must be >= 0");
  }
}

model::SequenceSpec PackedExample::sequence() const {
  model::SequenceSpec seq;
  seq.visual = &visual;
  seq.tokens = tokens;
  seq.positions = positions;
  seq.segments = segments;
  return seq;
}

std::vector<int> caption_tokens(const std::vector<int>& objects, const ObjectVocab& vocab) {
  std::vector<int> out;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    out.push_back(vocab.objects.at(static_cast<std::size_t>(objects[i])).name_token);
    if (i % 2 == 1 || i + 1 == objects.size()) {
      out.push_back(tok::kPeriod);
    }
  }
  out.push_back(tok::kEnd);
  return out;
}

PackedExample make_training_example(const Scene& scene, const ObjectVocab& vocab, const model::VisualInput& visual,
                                    double rare_fraction, double caption_weight, std::uint64_t seed) {
  Rng rng(seed);
  PackedExample ex;
  ex.visual = visual;
  const int v = visual.cells();
  int segment = 0;

  auto add_segment = [&](const std::vector<int>& text, int supervise_from, double weight) {
    ++segment;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const int row = v + static_cast<int>(ex.tokens.size());
      ex.tokens.push_back(text[i]);
      ex.positions.push_back(v + static_cast<int>(i));
      ex.segments.push_back(segment);
      if (static_cast<int>(i) >= supervise_from && i + 1 < text.size()) {
        ex.target_rows.push_back(row);
        ex.targets.push_back(text[i + 1]);
        ex.target_weights.push_back(weight);
      }
    }
  };

  std::vector<int> shown;
  for (int o : scene.present) {
    const bool rare = vocab.objects[static_cast<std::size_t>(o)].small();
    if (rare && rare_fraction > 0.0 && rng.bernoulli(rare_fraction)) {
      continue;
    }
    shown.push_back(o);
  }
  std::vector<int> absent;
  for (int o = 0; o < vocab.size(); ++o) {
    if (!scene.contains(o)) {
      absent.push_back(o);
    }
  }
  rng.shuffle(absent);
  const std::size_t negatives = std::min(absent.size(), std::max<std::size_t>(shown.size(), 1));

  std::vector<std::pair<int, int>> probes;
  for (int o : shown) {
    probes.emplace_back(o, tok::kYes);
  }
  for (std::size_t i = 0; i < negatives; ++i) {
    probes.emplace_back(absent[i], tok::kNo);
  }
  rng.shuffle(probes);
  for (const auto& [object, answer] : probes) {
    std::vector<int> text = scene::pope_prompt(vocab, object);
    text.push_back(answer);
    add_segment(text, static_cast<int>(text.size()) - 2, 1.0);
  }
  if (caption_weight > 0.0) {
    std::vector<int> order = shown;
    rng.shuffle(order);
    std::vector<int> text = scene::caption_prompt();
    const auto cap = caption_tokens(order, vocab);
    text.insert(text.end(), cap.begin(), cap.end());
    add_segment(text, 0, caption_weight);
  }
  return ex;
}

double accumulate_batch(const ModelWeights& weights, const std::vector<PackedExample>& batch, ModelWeights* grads) {
  double weight_total = 0.0;
  for (const auto& ex : batch) {
    for (double w : ex.target_weights) {
      weight_total += w;
    }
  }
  if (weight_total <= 0.0) {
    return 0.0;
  }
  double loss = 0.0;
  model::ForwardCache cache;
  for (const auto& ex : batch) {
    const model::SequenceSpec seq = ex.sequence();
    model::run_forward(weights, seq, {}, cache, ex.target_rows);
    Mat dlogits = Mat::Zero(cache.logits.rows(), cache.logits.cols());
    for (std::size_t i = 0; i < ex.target_rows.size(); ++i) {
      const int r = ex.target_rows[i];
      const auto row = cache.logits.row(r);
      const double peak = row.maxCoeff();
      RowVec p = (row.array() - peak).exp().matrix();
      const double z = p.sum();
      p /= z;
      const double w = ex.target_weights[i] / weight_total;
      loss += w * (peak + std::log(z) - row(ex.targets[i]));
      if (grads != nullptr) {
        dlogits.row(r) += w * p;
        dlogits(r, ex.targets[i]) -= w;
      }
    }
    if (grads != nullptr) {
      model::run_backward(weights, seq, cache, dlogits, nullptr, grads);
    }
  }
  return loss;
}

namespace {

std::vector<PackedExample> make_epoch(const scene::Dataset& dataset, const TrainSpec& spec, std::uint64_t stream,
                                      int epoch, int count) {
  const auto co = scene::CooccurrenceSpec::paired(dataset.vocab.size(), spec.bias_knob);
  const auto gen = dataset.spec.gen_options();
  std::vector<PackedExample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = mix_seed(mix_seed(stream, static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(i));
    const Scene sc = scene::generate_scene(s, co, dataset.vocab, gen);
    const auto visual = scene::render_visual_tokens(sc, dataset.vocab, dataset.render_options(mix_seed(s, 1)));
    out.push_back(make_training_example(sc, dataset.vocab, visual, spec.rare_fraction, spec.caption_weight,
                                        mix_seed(s, 2)));
  }
  return out;
}

}  // namespace

std::string TrainingLog::to_csv() const {
  std::string out = "epoch,loss\n0," + format_double(initial_loss) + "\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.loss) + "\n";
  }
  return out;
}

TrainResult train(const model::ModelConfig& config, const scene::Dataset& dataset, const TrainSpec& spec) {
  spec.validate();
  config.validate();
  if (dataset.scenes.empty()) {
    throw ConfigError("training needs a nonempty dataset");
  }
  if (config.vocab_size < dataset.vocab.vocab_size() || config.grid_side != dataset.spec.grid_side ||
      config.model_dim != dataset.spec.dim) {
    throw ConfigError("model config does not fit the dataset (vocab, grid side or dim)");
  }
  TrainResult result{ModelWeights::initialize(config), {}};
  ModelWeights& w = result.weights;
  const std::uint64_t stream = mix_seed(spec.seed, 0x7472u);
  const auto probe = make_epoch(dataset, spec, mix_seed(stream, 0xbeefu), 0, std::min(64, spec.scenes_per_epoch));
  result.log.initial_loss = accumulate_batch(w, probe, nullptr);
  result.log.final_loss = result.log.initial_loss;
  if (spec.epochs == 0) {
    return result;
  }

  ModelWeights grads = ModelWeights::zeros(config);
  ModelWeights moment1 = ModelWeights::zeros(config);
  ModelWeights moment2 = ModelWeights::zeros(config);
  std::vector<Mat*> wp, gp, m1p, m2p;
  w.for_each_tensor([&](const std::string&, Mat& m) { wp.push_back(&m); });
  grads.for_each_tensor([&](const std::string&, Mat& m) { gp.push_back(&m); });
  moment1.for_each_tensor([&](const std::string&, Mat& m) { m1p.push_back(&m); });
  moment2.for_each_tensor([&](const std::string&, Mat& m) { m2p.push_back(&m); });
  long long step = 0;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    const auto data = make_epoch(dataset, spec, stream, epoch, spec.scenes_per_epoch);
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += static_cast<std::size_t>(spec.batch_size)) {
      const std::size_t end = std::min(data.size(), begin + static_cast<std::size_t>(spec.batch_size));
      const std::vector<PackedExample> batch(data.begin() + static_cast<std::ptrdiff_t>(begin),
                                             data.begin() + static_cast<std::ptrdiff_t>(end));
      grads.for_each_tensor([](const std::string&, Mat& m) { m.setZero(); });
      double loss = 0.0;
      try {
        loss = accumulate_batch(w, batch, &grads);
      } catch (const NumericError& e) {
        throw NumericError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what(), e.layer(),
                           e.head());
      }
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged in epoch " + std::to_string(epoch));
      }
      if (spec.optimizer == Optimizer::Sgd) {
        w.add_scaled(grads, -spec.learning_rate);
      } else {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++step;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t t = 0; t < wp.size(); ++t) {
          auto g = gp[t]->array();
          auto m1 = m1p[t]->array();
          auto m2 = m2p[t]->array();
          m1 = b1 * m1 + (1.0 - b1) * g;
          m2 = b2 * m2 + (1.0 - b2) * g.square();
          wp[t]->array() -= spec.learning_rate * (m1 / c1) / ((m2 / c2).sqrt() + eps);
        }
      }
      epoch_loss += loss;
      ++steps;
    }
    result.log.epochs.push_back({epoch, epoch_loss / steps});
  }
  result.log.final_loss = accumulate_batch(w, probe, nullptr);
  if (!std::isfinite(result.log.final_loss)) {
    throw NumericError("training diverged in epoch " + std::to_string(spec.epochs));
  }
  w.validate();
  return result;
}

LossSummary evaluate_loss(const ModelWeights& weights, const std::vector<LabeledExample>& split) {
  if (split.empty()) {
    throw ConfigError("cannot evaluate the loss of an empty split");
  }
  LossSummary s;
  for (const auto& ex : split) {
    if (ex.targets.empty()) {
      throw ConfigError("labeled example without targets");
    }
    std::vector<int> context(ex.targets.begin(), ex.targets.end() - 1);
    const auto trace = model::forward_with_generated(weights, ex.input, context);
    for (std::size_t i = 0; i < ex.targets.size(); ++i) {
      const int pos = trace.layout.answer_position() + static_cast<int>(i);
      s.total += model::nll_loss(trace, ex.targets[i], pos).value;
      ++s.count;
    }
  }
  s.mean = s.total / s.count;
  return s;
}

std::vector<LabeledExample> pope_split(const scene::Dataset& dataset, scene::PopeSubset subset) {
  std::vector<LabeledExample> out;
  for (const auto& q : dataset.subset(subset)) {
    const auto visual = dataset.render(dataset.scene(q.scene_id));
    out.push_back({scene::make_pope_input(visual, q), {q.label == scene::PopeLabel::Present ? tok::kYes : tok::kNo}});
  }
  return out;
}

}  // namespace vpfc::train
