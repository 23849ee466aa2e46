#pragma once

#include <map>
#include <string>
#include <vector>

namespace zsslu {

enum class LabelKind { Intent, Slot };

struct SemanticLabel {
  std::string id;
  LabelKind kind = LabelKind::Intent;
  std::string name;         // raw label string, e.g. "convert_datetime"
  std::string description;  // short natural-language gloss; may be empty
};

enum class AnswerMode { Binary, Extractive };

struct Question {
  std::string label_id;
  LabelKind kind = LabelKind::Intent;
  std::string text;
  AnswerMode answer_mode = AnswerMode::Binary;
};

// Intent questions take binary yes/no answers; slot questions take extractive
// answers. The intent->slot map records which slot types are worth asking
// about once an intent is chosen; it is curated input, not learned.
struct QuestionSet {
  int schema_version = 1;
  std::vector<Question> q_intent;
  std::vector<Question> q_slot;
  std::map<std::string, std::vector<std::string>> intent_slot_map;

  void validate() const;  // throws std::invalid_argument naming the offender
  const Question* find_intent(const std::string& label_id) const;
  const Question* find_slot(const std::string& label_id) const;
};

// Prompt text pair for the two-step question generation flow: first ask an
// LLM for a concise label description, then translate that description into
// the fixed question format. These strings are written to files for offline
// use; nothing in this module talks to a network.
struct LlmPromptPair {
  std::string description_prompt;
  std::string question_template;
};

// Fixed question formats: intents become "Does the user want to ...?" and
// slots become "What is the ...?". Leading boilerplate and trailing periods
// in the description are stripped first.
Question question_from_description(const SemanticLabel& label);

LlmPromptPair build_llm_prompts(const SemanticLabel& label,
                                const std::vector<std::string>& examples);

QuestionSet load_question_set(const std::string& path);
void save_question_set(const QuestionSet& set, const std::string& path);

bool operator==(const Question& a, const Question& b);
bool operator==(const QuestionSet& a, const QuestionSet& b);

}  // namespace zsslu
