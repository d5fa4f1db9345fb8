#pragma once

#include "vpfc/scene/pope.hpp"
#include "vpfc/scene/vocab.hpp"

#include <string>
#include <vector>

namespace vpfc::eval {

enum class Answer { Yes, No, Other };

std::string to_string(Answer answer);
Answer parse_answer_text(const std::string& text);
/// Reads the first generated token.
Answer parse_answer(int token);

struct Prediction {
  int question_id = 0;
  Answer answer = Answer::Other;
  scene::PopeLabel truth = scene::PopeLabel::Present;
};

struct HallucinationReport {
  int total = 0;
  int tp = 0;
  int fp = 0;  // fabrication
  int fn = 0;  // omission
  int tn = 0;
  int other_present = 0;
  int other_absent = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;

  int omission() const { return fn; }
  int fabrication() const { return fp; }
  int other() const { return other_present + other_absent; }
  bool operator==(const HallucinationReport&) const = default;
};

/// "yes" is the positive class. "other" answers are wrong but count as
/// neither omission nor fabrication. Throws ConfigError on an empty list
/// or duplicate question ids.
HallucinationReport pope_metrics(const std::vector<Prediction>& predictions);

struct CaptionParse {
  std::vector<int> objects;                 // distinct, ascending
  std::vector<std::vector<int>> sentences;  // distinct objects per sentence
  int sentence_count = 0;
  int mentions = 0;  // raw object mentions
};

/// Resolves names and synonyms; splits sentences on "."; stops at <END>.
/// Empty sentences are not counted.
CaptionParse parse_caption_objects(const std::vector<int>& tokens, const scene::ObjectVocab& vocab);

struct CaptionRecord {
  std::vector<int> tokens;
  std::vector<int> present;  // ground-truth objects of the scene
};

struct ChairReport {
  int captions = 0;
  int mentioned_objects = 0;      // distinct per caption, summed
  int hallucinated_objects = 0;
  int raw_mentions = 0;
  int hallucinated_mentions = 0;
  int sentences = 0;
  int hallucinated_sentences = 0;
  int hallucinated_captions = 0;
  double chair_i = 0.0;
  double chair_s = 0.0;          // per sentence
  double chair_s_caption = 0.0;  // classical per-caption variant
  bool chair_i_undefined = false;
  bool chair_s_undefined = false;

  bool operator==(const ChairReport&) const = default;
};

ChairReport chair_metrics(const std::vector<CaptionRecord>& captions, const scene::ObjectVocab& vocab);

std::string pope_csv_header();
std::string pope_csv_row(const std::string& policy, const std::string& subset, const HallucinationReport& r);
std::string chair_csv_header();
std::string chair_csv_row(const std::string& policy, const ChairReport& r);

/// Full counts and flags as a JSON object.
std::string to_json(const HallucinationReport& r);
std::string to_json(const ChairReport& r);

}  // namespace vpfc::eval
