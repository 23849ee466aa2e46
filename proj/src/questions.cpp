#include "zsslu/questions.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace zsslu {

namespace {

using nlohmann::json;

std::string strip_prefix_ci(const std::string& s, const std::string& prefix) {
  if (s.size() < prefix.size()) return s;
  for (size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return s;
    }
  }
  return s.substr(prefix.size());
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\n");
  size_t e = s.find_last_not_of(" \t\n");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

std::string quoted_list(const std::vector<std::string>& items) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += "\"" + items[i] + "\"";
  }
  return out;
}

std::string kind_str(LabelKind k) { return k == LabelKind::Intent ? "intent" : "slot"; }

LabelKind kind_from_str(const std::string& s, const std::string& where) {
  if (s == "intent") return LabelKind::Intent;
  if (s == "slot") return LabelKind::Slot;
  throw std::invalid_argument(where + ": unknown label kind '" + s + "'");
}

json question_to_json(const Question& q) {
  return json{{"label_id", q.label_id},
              {"kind", kind_str(q.kind)},
              {"text", q.text},
              {"answer_mode", q.answer_mode == AnswerMode::Binary ? "binary" : "extractive"}};
}

Question question_from_json(const json& j, const std::string& where) {
  Question q;
  q.label_id = j.at("label_id").get<std::string>();
  q.kind = kind_from_str(j.at("kind").get<std::string>(), where);
  q.text = j.at("text").get<std::string>();
  const std::string mode = j.at("answer_mode").get<std::string>();
  if (mode == "binary") {
    q.answer_mode = AnswerMode::Binary;
  } else if (mode == "extractive") {
    q.answer_mode = AnswerMode::Extractive;
  } else {
    throw std::invalid_argument(where + ": unknown answer_mode '" + mode + "'");
  }
  return q;
}

}  // namespace

void QuestionSet::validate() const {
  std::set<std::string> intent_ids, slot_ids;
  auto check_question = [](const Question& q, const char* list) {
    if (q.text.empty() || q.text.back() != '?') {
      throw std::invalid_argument(std::string(list) + " question for '" + q.label_id +
                                  "' must be nonempty and end with '?': \"" + q.text + "\"");
    }
  };
  for (const auto& q : q_intent) {
    check_question(q, "intent");
    if (q.kind != LabelKind::Intent || q.answer_mode != AnswerMode::Binary) {
      throw std::invalid_argument("intent question '" + q.label_id +
                                  "' must be kind=intent with binary answers");
    }
    if (!intent_ids.insert(q.label_id).second) {
      throw std::invalid_argument("duplicate intent question for '" + q.label_id + "'");
    }
  }
  for (const auto& q : q_slot) {
    check_question(q, "slot");
    if (q.kind != LabelKind::Slot || q.answer_mode != AnswerMode::Extractive) {
      throw std::invalid_argument("slot question '" + q.label_id +
                                  "' must be kind=slot with extractive answers");
    }
    if (!slot_ids.insert(q.label_id).second) {
      throw std::invalid_argument("duplicate slot question for '" + q.label_id + "'");
    }
  }
  for (const auto& [intent, slots] : intent_slot_map) {
    if (intent_ids.find(intent) == intent_ids.end()) {
      throw std::invalid_argument("intent_slot_map references unknown intent '" + intent + "'");
    }
    for (const auto& slot : slots) {
      if (slot_ids.find(slot) == slot_ids.end()) {
        throw std::invalid_argument("intent_slot_map for '" + intent +
                                    "' references unknown slot '" + slot + "'");
      }
    }
  }
}

const Question* QuestionSet::find_intent(const std::string& label_id) const {
  for (const auto& q : q_intent) {
    if (q.label_id == label_id) return &q;
  }
  return nullptr;
}

const Question* QuestionSet::find_slot(const std::string& label_id) const {
  for (const auto& q : q_slot) {
    if (q.label_id == label_id) return &q;
  }
  return nullptr;
}

Question question_from_description(const SemanticLabel& label) {
  if (label.description.empty()) {
    throw std::invalid_argument("question_from_description: label '" + label.id +
                                "' has no description");
  }
  std::string desc = trim(label.description);
  if (label.kind == LabelKind::Intent) {
    desc = trim(strip_prefix_ci(desc, "The user wants to "));
  } else {
    desc = trim(strip_prefix_ci(desc, "A slot label that refers to "));
    desc = strip_prefix_ci(desc, "the ");
  }
  while (!desc.empty() && (desc.back() == '.' || desc.back() == ' ')) desc.pop_back();
  if (desc.empty()) {
    throw std::invalid_argument("question_from_description: label '" + label.id +
                                "' has an empty description after normalization");
  }

  Question q;
  q.label_id = label.id;
  q.kind = label.kind;
  if (label.kind == LabelKind::Intent) {
    q.answer_mode = AnswerMode::Binary;
    q.text = "Does the user want to " + desc + "?";
  } else {
    q.answer_mode = AnswerMode::Extractive;
    q.text = "What is the " + desc + "?";
  }
  return q;
}

LlmPromptPair build_llm_prompts(const SemanticLabel& label,
                                const std::vector<std::string>& examples) {
  if (examples.empty()) {
    throw std::invalid_argument("build_llm_prompts: label '" + label.id +
                                "' needs at least one example");
  }
  LlmPromptPair pair;
  if (label.kind == LabelKind::Intent) {
    pair.description_prompt = "Give a very short description of the intent \"" + label.name +
                              "\", starting with \"The user wants to\". Here are some example "
                              "queries: " +
                              quoted_list(examples) + ".";
    pair.question_template = "Does the user want to [intent_description]?";
  } else {
    pair.description_prompt = "Give a very short description of the slot label \"" + label.name +
                              "\", starting with \"A slot label that refers to\". Here are some "
                              "example slot values: " +
                              quoted_list(examples) + ".";
    pair.question_template = "What is the [slot_description]?";
  }
  return pair;
}

QuestionSet load_question_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_question_set: cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("load_question_set: " + path + ": " + e.what());
  }
  QuestionSet set;
  set.schema_version = j.at("schema_version").get<int>();
  if (set.schema_version != 1) {
    throw std::invalid_argument("load_question_set: unsupported schema_version " +
                                std::to_string(set.schema_version));
  }
  for (const auto& q : j.at("q_intent")) {
    set.q_intent.push_back(question_from_json(q, path + ":q_intent"));
  }
  for (const auto& q : j.at("q_slot")) {
    set.q_slot.push_back(question_from_json(q, path + ":q_slot"));
  }
  for (const auto& [intent, slots] : j.at("intent_slot_map").items()) {
    set.intent_slot_map[intent] = slots.get<std::vector<std::string>>();
  }
  set.validate();
  return set;
}

void save_question_set(const QuestionSet& set, const std::string& path) {
  set.validate();
  json qi = json::array(), qs = json::array();
  for (const auto& q : set.q_intent) qi.push_back(question_to_json(q));
  for (const auto& q : set.q_slot) qs.push_back(question_to_json(q));
  json j{{"schema_version", set.schema_version},
         {"q_intent", qi},
         {"q_slot", qs},
         {"intent_slot_map", set.intent_slot_map}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_question_set: cannot write " + path);
  out << j.dump(2) << "\n";
}

bool operator==(const Question& a, const Question& b) {
  return a.label_id == b.label_id && a.kind == b.kind && a.text == b.text &&
         a.answer_mode == b.answer_mode;
}

bool operator==(const QuestionSet& a, const QuestionSet& b) {
  return a.schema_version == b.schema_version && a.q_intent == b.q_intent &&
         a.q_slot == b.q_slot && a.intent_slot_map == b.intent_slot_map;
}

}  // namespace zsslu
