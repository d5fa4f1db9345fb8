#include "vpfc/eval/metrics.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>

namespace vpfc::eval {

std::string to_string(Answer answer) {
  switch (answer) {
    case Answer::Yes: return "yes";
    case Answer::No: return "no";
    case Answer::Other: return "other";
  }
  return "other";
}

Answer parse_answer_text(const std::string& text) {
  if (text == "yes") return Answer::Yes;
  if (text == "no") return Answer::No;
  if (text == "other") return Answer::Other;
  throw FormatError("unknown answer '" + text + "'");
}

Answer parse_answer(int token) {
  if (token == scene::tok::kYes) return Answer::Yes;
  if (token == scene::tok::kNo) return Answer::No;
  return Answer::Other;
}

HallucinationReport pope_metrics(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) {
    throw ConfigError("pope_metrics needs at least one prediction");
  }
  std::set<int> ids;
  HallucinationReport r;
  for (const auto& p : predictions) {
    if (!ids.insert(p.question_id).second) {
      throw ConfigError("duplicate question id " + std::to_string(p.question_id));
    }
    const bool present = p.truth == scene::PopeLabel::Present;
    switch (p.answer) {
      case Answer::Yes: (present ? r.tp : r.fp) += 1; break;
      case Answer::No: (present ? r.fn : r.tn) += 1; break;
      case Answer::Other: (present ? r.other_present : r.other_absent) += 1; break;
    }
  }
  r.total = static_cast<int>(predictions.size());
  r.accuracy = static_cast<double>(r.tp + r.tn) / r.total;
  if (r.tp + r.fp > 0) {
    r.precision = static_cast<double>(r.tp) / (r.tp + r.fp);
  } else {
    r.precision_undefined = true;
  }
  if (r.tp + r.fn > 0) {
    r.recall = static_cast<double>(r.tp) / (r.tp + r.fn);
  } else {
    r.recall_undefined = true;
  }
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

CaptionParse parse_caption_objects(const std::vector<int>& tokens, const scene::ObjectVocab& vocab) {
  CaptionParse out;
  std::set<int> all;
  std::set<int> sentence;
  bool open = false;
  auto close = [&] {
    if (open) {
      out.sentences.emplace_back(sentence.begin(), sentence.end());
      ++out.sentence_count;
    }
    sentence.clear();
    open = false;
  };
  for (int t : tokens) {
    if (t == scene::tok::kEnd) {
      break;
    }
    if (t == scene::tok::kPeriod) {
      close();
      continue;
    }
    open = true;
    if (const auto o = vocab.object_for_token(t)) {
      all.insert(*o);
      sentence.insert(*o);
      ++out.mentions;
    }
  }
  close();
  out.objects.assign(all.begin(), all.end());
  return out;
}

ChairReport chair_metrics(const std::vector<CaptionRecord>& captions, const scene::ObjectVocab& vocab) {
  ChairReport r;
  for (const auto& c : captions) {
    const std::set<int> truth(c.present.begin(), c.present.end());
    auto absent = [&](int o) { return truth.count(o) == 0; };
    const CaptionParse p = parse_caption_objects(c.tokens, vocab);
    ++r.captions;
    r.mentioned_objects += static_cast<int>(p.objects.size());
    r.hallucinated_objects += static_cast<int>(std::count_if(p.objects.begin(), p.objects.end(), absent));
    r.raw_mentions += p.mentions;
    for (int t : c.tokens) {
      if (t == scene::tok::kEnd) {
        break;
      }
      if (const auto o = vocab.object_for_token(t); o && absent(*o)) {
        ++r.hallucinated_mentions;
      }
    }
    r.sentences += p.sentence_count;
    bool caption_bad = false;
    for (const auto& s : p.sentences) {
      if (std::any_of(s.begin(), s.end(), absent)) {
        ++r.hallucinated_sentences;
        caption_bad = true;
      }
    }
    r.hallucinated_captions += caption_bad ? 1 : 0;
  }
  if (r.mentioned_objects > 0) {
    r.chair_i = static_cast<double>(r.hallucinated_objects) / r.mentioned_objects;
  } else {
    r.chair_i_undefined = true;
  }
  if (r.sentences > 0) {
    r.chair_s = static_cast<double>(r.hallucinated_sentences) / r.sentences;
  } else {
    r.chair_s_undefined = true;
  }
  if (r.captions > 0) {
    r.chair_s_caption = static_cast<double>(r.hallucinated_captions) / r.captions;
  }
  return r;
}

std::string pope_csv_header() {
  return "policy,subset,total,tp,fp,fn,tn,other,accuracy,precision,recall,f1,omission,fabrication\n";
}

std::string pope_csv_row(const std::string& policy, const std::string& subset, const HallucinationReport& r) {
  return policy + "," + subset + "," + std::to_string(r.total) + "," + std::to_string(r.tp) + "," +
         std::to_string(r.fp) + "," + std::to_string(r.fn) + "," + std::to_string(r.tn) + "," +
         std::to_string(r.other()) + "," + format_double(r.accuracy) + "," + format_double(r.precision) + "," +
         format_double(r.recall) + "," + format_double(r.f1) + "," + std::to_string(r.omission()) + "," +
         std::to_string(r.fabrication()) + "\n";
}

std::string chair_csv_header() {
  return "policy,captions,mentioned_objects,hallucinated_objects,raw_mentions,hallucinated_mentions,sentences,"
         "hallucinated_sentences,hallucinated_captions,chair_i,chair_s,chair_s_caption\n";
}

std::string chair_csv_row(const std::string& policy, const ChairReport& r) {
  return policy + "," + std::to_string(r.captions) + "," + std::to_string(r.mentioned_objects) + "," +
         std::to_string(r.hallucinated_objects) + "," + std::to_string(r.raw_mentions) + "," +
         std::to_string(r.hallucinated_mentions) + "," + std::to_string(r.sentences) + "," +
         std::to_string(r.hallucinated_sentences) + "," + std::to_string(r.hallucinated_captions) + "," +
         format_double(r.chair_i) + "," + format_double(r.chair_s) + "," + format_double(r.chair_s_caption) + "\n";
}

std::string to_json(const HallucinationReport& r) {
  const nlohmann::ordered_json j = {
      {"total", r.total},         {"tp", r.tp},
      {"fp", r.fp},               {"fn", r.fn},
      {"tn", r.tn},               {"other_present", r.other_present},
      {"other_absent", r.other_absent},
      {"accuracy", r.accuracy},   {"precision", r.precision},
      {"recall", r.recall},       {"f1", r.f1},
      {"omission", r.omission()}, {"fabrication", r.fabrication()},
      {"precision_undefined", r.precision_undefined},
      {"recall_undefined", r.recall_undefined},
  };
  return j.dump(2);
}

std::string to_json(const ChairReport& r) {
  const nlohmann::ordered_json j = {
      {"captions", r.captions},
      {"mentioned_objects", r.mentioned_objects},
      {"hallucinated_objects", r.hallucinated_objects},
      {"raw_mentions", r.raw_mentions},
      {"hallucinated_mentions", r.hallucinated_mentions},
      {"sentences", r.sentences},
      {"hallucinated_sentences", r.hallucinated_sentences},
      {"hallucinated_captions", r.hallucinated_captions},
      {"chair_i", r.chair_i},
      {"chair_s", r.chair_s},
      {"chair_s_caption", r.chair_s_caption},
      {"chair_i_undefined", r.chair_i_undefined},
      {"chair_s_undefined", r.chair_s_undefined},
  };
  return j.dump(2);
}

}  // namespace vpfc::eval
