#include "vpfc/scene/pope.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/rng.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace vpfc::scene {

std::string to_string(PopeSubset subset) {
  switch (subset) {
    case PopeSubset::Random: return "random";
    case PopeSubset::Popular: return "popular";
    case PopeSubset::Adversarial: return "adversarial";
  }
  return "?";
}

std::string to_string(PopeLabel label) { return label == PopeLabel::Present ? "present" : "absent"; }

PopeSubset parse_subset(const std::string& text) {
  for (PopeSubset s : kAllSubsets) {
    if (to_string(s) == text) {
      return s;
    }
  }
  throw ConfigError("unknown POPE subset '" + text + "'");
}

PopeLabel parse_label(const std::string& text) {
  if (text == "present") return PopeLabel::Present;
  if (text == "absent") return PopeLabel::Absent;
  throw ConfigError("unknown label '" + text + "'");
}

CountMatrix cooccurrence_matrix(const std::vector<Scene>& scenes, int num_objects) {
  CountMatrix m = CountMatrix::Zero(num_objects, num_objects);
  for (const Scene& s : scenes) {
    for (std::size_t i = 0; i < s.present.size(); ++i) {
      for (std::size_t j = i + 1; j < s.present.size(); ++j) {
        const int a = s.present[i];
        const int b = s.present[j];
        if (a >= num_objects || b >= num_objects) {
          throw ConfigError("scene " + std::to_string(s.id) + " references an object outside the vocabulary");
        }
        ++m(a, b);
        ++m(b, a);
      }
    }
  }
  return m;
}

std::vector<int> object_frequency(const std::vector<Scene>& scenes, int num_objects) {
  std::vector<int> freq(static_cast<std::size_t>(num_objects), 0);
  for (const Scene& s : scenes) {
    for (int o : s.present) {
      ++freq.at(static_cast<std::size_t>(o));
    }
  }
  return freq;
}

namespace {

// Highest score first, lowest id on ties.
std::vector<int> top_by_score(std::vector<int> candidates, const std::vector<long long>& score, int m) {
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    const long long sa = score[static_cast<std::size_t>(a)];
    const long long sb = score[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  candidates.resize(static_cast<std::size_t>(m));
  return candidates;
}

std::vector<int> sample_without_replacement(Rng& rng, std::vector<int> pool, int m) {
  for (int i = 0; i < m; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + rng.below(pool.size() - static_cast<std::size_t>(i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(m));
  return pool;
}

}  // namespace

std::vector<PopeQuestion> build_pope_questions(const std::vector<Scene>& scenes, PopeSubset subset,
                                               const PopeCounts& counts, const CountMatrix& cooccurrence,
                                               const ObjectVocab& vocab) {
  const int k = vocab.size();
  if (counts.per_scene < 1) {
    throw ConfigError("questions per scene must be positive");
  }
  if (cooccurrence.rows() != k || cooccurrence.cols() != k) {
    throw ConfigError("co-occurrence matrix does not match the vocabulary size");
  }
  std::vector<int> bad;
  for (const Scene& s : scenes) {
    const int present = static_cast<int>(s.present.size());
    if (present == 0 || present == k) {
      bad.push_back(s.id);
    }
  }
  if (!bad.empty()) {
    std::string ids;
    for (int id : bad) {
      ids += (ids.empty() ? "" : ",") + std::to_string(id);
    }
    throw ConfigError("cannot balance present/absent probes for scenes [" + ids + "]");
  }

  const std::vector<int> freq = object_frequency(scenes, k);
  Rng rng(mix_seed(counts.seed, static_cast<std::uint64_t>(subset)));
  std::vector<PopeQuestion> out;
  for (const Scene& s : scenes) {
    std::vector<int> absent;
    for (int o = 0; o < k; ++o) {
      if (!s.contains(o)) {
        absent.push_back(o);
      }
    }
    const int m = std::min({counts.per_scene, static_cast<int>(s.present.size()), static_cast<int>(absent.size())});
    const std::vector<int> present = sample_without_replacement(rng, s.present, m);

    std::vector<int> negatives;
    if (subset == PopeSubset::Random) {
      negatives = sample_without_replacement(rng, absent, m);
    } else {
      std::vector<long long> score(static_cast<std::size_t>(k), 0);
      for (int o : absent) {
        long long& v = score[static_cast<std::size_t>(o)];
        if (subset == PopeSubset::Popular) {
          v = freq[static_cast<std::size_t>(o)];
        } else {
          for (int p : s.present) {
            v += cooccurrence(p, o);
          }
        }
      }
      negatives = top_by_score(absent, score, m);
    }
    for (int o : present) {
      out.push_back({s.id, o, PopeLabel::Present, subset, pope_prompt(vocab, o)});
    }
    for (int o : negatives) {
      out.push_back({s.id, o, PopeLabel::Absent, subset, pope_prompt(vocab, o)});
    }
  }
  return out;
}

std::vector<int> pope_prompt(const ObjectVocab& vocab, int object) {
  return {tok::kQuery, vocab.objects.at(static_cast<std::size_t>(object)).name_token, tok::kQuestionMark};
}

std::vector<int> caption_prompt() { return {tok::kDescribe}; }

model::PromptInput make_pope_input(const model::VisualInput& visual, const PopeQuestion& question) {
  model::PromptInput in;
  in.visual = visual;
  in.text = question.prompt;
  in.query_object_pos = kPopeObjectIndex;
  return in;
}

model::PromptInput make_caption_input(const model::VisualInput& visual) {
  model::PromptInput in;
  in.visual = visual;
  in.text = caption_prompt();
  return in;
}

void verify_questions(const std::vector<PopeQuestion>& questions, const std::vector<Scene>& scenes,
                      const ObjectVocab& vocab) {
  std::map<int, const Scene*> by_id;
  for (const Scene& s : scenes) {
    by_id[s.id] = &s;
  }
  for (const PopeQuestion& q : questions) {
    const auto it = by_id.find(q.scene_id);
    if (it == by_id.end()) {
      throw ConfigError("question references unknown scene " + std::to_string(q.scene_id));
    }
    const PopeLabel expected = it->second->contains(q.object) ? PopeLabel::Present : PopeLabel::Absent;
    if (q.label != expected) {
      throw ConfigError("label of object " + std::to_string(q.object) + " in scene " + std::to_string(q.scene_id) +
                        " disagrees with the scene");
    }
    if (q.prompt != pope_prompt(vocab, q.object)) {
      throw ConfigError("prompt of a question in scene " + std::to_string(q.scene_id) + " is malformed");
    }
  }
}

}  // namespace vpfc::scene
