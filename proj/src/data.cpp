#include "zsslu/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "zsslu/rng.hpp"
#include "zsslu/vocab.hpp"

namespace zsslu {

namespace {

using nlohmann::json;

constexpr const char* kPairToken = "{pair}";
constexpr const char* kNounToken = "{noun}";

int count_occurrences(const std::string& s, const std::string& needle) {
  int n = 0;
  size_t pos = 0;
  while ((pos = s.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

}  // namespace

const CorpusSpec::SlotSpec* CorpusSpec::find_slot(const std::string& id) const {
  for (const auto& s : slots) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

bool CorpusSpec::is_held_out(const std::string& slot_id) const {
  return std::find(held_out_slots.begin(), held_out_slots.end(), slot_id) !=
         held_out_slots.end();
}

void CorpusSpec::validate() const {
  if (slots.empty()) throw std::invalid_argument("CorpusSpec: no slots defined");
  if (intents.empty()) throw std::invalid_argument("CorpusSpec: no intents defined");
  std::set<std::string> slot_ids;
  for (const auto& s : slots) {
    if (!slot_ids.insert(s.id).second) {
      throw std::invalid_argument("CorpusSpec: duplicate slot id '" + s.id + "'");
    }
    if (s.values.empty()) {
      throw std::invalid_argument("CorpusSpec: slot '" + s.id + "' has an empty value pool");
    }
  }
  std::set<std::string> intent_ids;
  for (const auto& it : intents) {
    if (!intent_ids.insert(it.id).second) {
      throw std::invalid_argument("CorpusSpec: duplicate intent id '" + it.id + "'");
    }
    if (it.patterns.empty()) {
      throw std::invalid_argument("CorpusSpec: intent '" + it.id + "' has no patterns");
    }
    for (const auto& slot : it.relevant_slots) {
      if (slot_ids.find(slot) == slot_ids.end()) {
        throw std::invalid_argument("CorpusSpec: intent '" + it.id +
                                    "' references unknown slot '" + slot + "'");
      }
    }
  }
  for (const auto& h : held_out_slots) {
    if (slot_ids.find(h) == slot_ids.end()) {
      throw std::invalid_argument("CorpusSpec: held-out slot '" + h + "' is not defined");
    }
  }
  if (held_out_slots.size() >= slots.size()) {
    throw std::invalid_argument("CorpusSpec: every slot is held out; nothing left to train on");
  }
  if (d_feat < 1 || frames_per_token < 1 || noise_sigma < 0) {
    throw std::invalid_argument("CorpusSpec: invalid featurizer parameters");
  }
}

Tensor featurize(const std::string& transcript, const CorpusSpec& spec, Rng& rng) {
  auto tokens = Vocabulary::tokenize(transcript);
  if (tokens.empty()) throw std::invalid_argument("featurize: empty transcript");
  const int fpt = spec.frames_per_token;
  Tensor features({static_cast<int>(tokens.size()) * fpt, spec.d_feat});
  int row = 0;
  for (const auto& tok : tokens) {
    // Fixed per-token embedding from a corpus-independent hash of the word.
    Rng token_rng(fnv1a64(tok));
    std::vector<double> emb(static_cast<size_t>(spec.d_feat));
    for (auto& e : emb) e = token_rng.normal();
    for (int f = 0; f < fpt; ++f, ++row) {
      for (int c = 0; c < spec.d_feat; ++c) {
        double noise = spec.noise_sigma > 0 ? rng.normal(0.0, spec.noise_sigma) : 0.0;
        features.at(row, c) = emb[static_cast<size_t>(c)] + noise;
      }
    }
  }
  return features;
}

namespace {

struct PatternFill {
  std::string transcript;
  std::vector<SLUEntity> entities;
};

// Expands one intent pattern. pair_slots supplies the slot for each {pair}
// placeholder in order; {noun} mentions draw from all slot nouns. Values are
// sampled distinct within the utterance so gold entities never collide on
// the value string.
PatternFill fill_pattern(const std::string& pattern, const CorpusSpec& spec,
                         const std::vector<const CorpusSpec::SlotSpec*>& pair_slots, Rng& rng) {
  PatternFill out;
  std::set<std::string> used_values;
  size_t pair_idx = 0;
  std::string text = pattern;
  std::string result;
  size_t pos = 0;
  while (pos < text.size()) {
    if (text.compare(pos, 6, kPairToken) == 0) {
      const auto* slot = pair_slots.at(pair_idx++);
      std::string value;
      for (int attempt = 0; attempt < 64; ++attempt) {
        value = slot->values[static_cast<size_t>(rng.uniform_int(
            static_cast<int>(slot->values.size())))];
        if (used_values.insert(value).second) break;
        value.clear();
      }
      if (value.empty()) {
        throw std::runtime_error("generate_corpus: cannot pick a distinct value for slot '" +
                                 slot->id + "'");
      }
      result += slot->noun + " to " + value;
      out.entities.push_back({slot->id, value});
    } else if (text.compare(pos, 6, kNounToken) == 0) {
      const auto& slot = spec.slots[static_cast<size_t>(
          rng.uniform_int(static_cast<int>(spec.slots.size())))];
      result += slot.noun;
    } else {
      result += text[pos];
      ++pos;
      continue;
    }
    pos += 6;
  }
  out.transcript = result;
  return out;
}

SLUExample make_example(const std::string& id, const CorpusSpec& spec, bool test_split,
                        Rng& rng) {
  // Test utterances must exercise a held-out slot, so they are drawn from
  // intents whose patterns carry {pair} placeholders.
  std::vector<const CorpusSpec::IntentSpec*> candidates;
  for (const auto& intent : spec.intents) {
    if (!test_split) {
      candidates.push_back(&intent);
      continue;
    }
    for (const auto& p : intent.patterns) {
      if (count_occurrences(p, kPairToken) > 0) {
        candidates.push_back(&intent);
        break;
      }
    }
  }
  if (candidates.empty()) {
    throw std::invalid_argument("generate_corpus: no intent has {pair} patterns for the test split");
  }
  const auto* intent = candidates[static_cast<size_t>(
      rng.uniform_int(static_cast<int>(candidates.size())))];

  std::vector<std::string> patterns = intent->patterns;
  if (test_split) {
    std::erase_if(patterns, [](const std::string& p) { return count_occurrences(p, kPairToken) == 0; });
  }
  const std::string& pattern =
      patterns[static_cast<size_t>(rng.uniform_int(static_cast<int>(patterns.size())))];
  const int n_pairs = count_occurrences(pattern, kPairToken);

  std::vector<const CorpusSpec::SlotSpec*> seen, held;
  for (const auto& s : spec.slots) {
    (spec.is_held_out(s.id) ? held : seen).push_back(&s);
  }
  if (test_split && held.empty()) {
    throw std::invalid_argument("generate_corpus: test split requires held-out slots");
  }

  // Pick distinct slots for the pairs. Test: first one held out, the rest
  // seen, order shuffled so held-out entities appear in varied positions.
  std::vector<const CorpusSpec::SlotSpec*> pair_slots;
  if (n_pairs > 0) {
    if (test_split) {
      pair_slots.push_back(held[static_cast<size_t>(
          rng.uniform_int(static_cast<int>(held.size())))]);
      auto extra = rng.sample_without_replacement(static_cast<int>(seen.size()), n_pairs - 1);
      for (int idx : extra) pair_slots.push_back(seen[static_cast<size_t>(idx)]);
      rng.shuffle(pair_slots);
    } else {
      auto idxs = rng.sample_without_replacement(static_cast<int>(seen.size()), n_pairs);
      if (static_cast<int>(idxs.size()) < n_pairs) {
        throw std::invalid_argument("generate_corpus: pattern needs " + std::to_string(n_pairs) +
                                    " distinct seen slots, only " +
                                    std::to_string(seen.size()) + " available");
      }
      for (int idx : idxs) pair_slots.push_back(seen[static_cast<size_t>(idx)]);
    }
  }

  PatternFill fill = fill_pattern(pattern, spec, pair_slots, rng);
  return SLUExample{id, fill.transcript, intent->id, std::move(fill.entities)};
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec, int n_train, int n_dev, int n_test, Rng& rng) {
  spec.validate();
  Corpus corpus;
  for (int i = 0; i < n_train; ++i) {
    corpus.train.push_back(make_example("train-" + std::to_string(i), spec, false, rng));
  }
  for (int i = 0; i < n_dev; ++i) {
    corpus.dev.push_back(make_example("dev-" + std::to_string(i), spec, false, rng));
  }
  for (int i = 0; i < n_test; ++i) {
    corpus.test.push_back(make_example("test-" + std::to_string(i), spec, true, rng));
  }
  auto violations = scan_zero_shot_violations(corpus.train, spec.held_out_slots);
  auto dev_violations = scan_zero_shot_violations(corpus.dev, spec.held_out_slots);
  violations.insert(violations.end(), dev_violations.begin(), dev_violations.end());
  if (!violations.empty()) {
    throw std::logic_error("generate_corpus: zero-shot hygiene violated: " + violations.front());
  }
  return corpus;
}

std::vector<std::string> scan_zero_shot_violations(const std::vector<SLUExample>& split,
                                                   const std::vector<std::string>& held_out) {
  std::set<std::string> held(held_out.begin(), held_out.end());
  std::vector<std::string> violations;
  for (const auto& ex : split) {
    for (const auto& ent : ex.entities) {
      if (held.count(ent.slot_id)) {
        violations.push_back("example '" + ex.id + "' annotates held-out slot '" + ent.slot_id +
                             "'");
      }
    }
  }
  return violations;
}

QuestionSet corpus_question_set(const CorpusSpec& spec) {
  QuestionSet set;
  for (const auto& intent : spec.intents) {
    SemanticLabel label{intent.id, LabelKind::Intent, intent.id, intent.description};
    set.q_intent.push_back(question_from_description(label));
    set.intent_slot_map[intent.id] = intent.relevant_slots;
  }
  for (const auto& slot : spec.slots) {
    SemanticLabel label{slot.id, LabelKind::Slot, slot.id, slot.description};
    set.q_slot.push_back(question_from_description(label));
  }
  set.validate();
  return set;
}

Vocabulary build_vocabulary(const Corpus& corpus, const QuestionSet& questions) {
  std::vector<std::string> texts{"yes no"};
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test}) {
    for (const auto& ex : *split) texts.push_back(ex.transcript);
  }
  for (const auto& q : questions.q_intent) texts.push_back(q.text);
  for (const auto& q : questions.q_slot) texts.push_back(q.text);
  return Vocabulary::build(texts);
}

CorpusSpec default_toy_spec() {
  CorpusSpec spec;
  const std::vector<std::string> pool = {"red",  "blue", "green", "purple", "white",  "black",
                                         "high", "low",  "warm",  "cool",   "bright", "dim",
                                         "fast", "slow", "silver", "golden"};
  // A broad attribute inventory keeps the question-noun matcher general
  // instead of memorizing a handful of gates; two types stay held out.
  const std::vector<std::string> all_slots = {
      "color",    "volume", "temperature", "brightness", "speed",  "channel", "mood",
      "pitch",    "contrast", "balance",   "tempo",      "texture", "density", "sharpness",
      "hue",      "tone",   "depth",       "width",      "height", "length",  "angle",
      "level",    "range",  "gain",        "bass",       "treble", "echo",    "reverb",
      "focus",    "zoom",   "tilt",        "pan",        "warmth", "clarity", "rhythm",
      "motion",   "shade",  "glow",        "pulse",      "drift",  "flavor",  "direction"};
  for (const auto& name : all_slots) {
    spec.slots.push_back({name, name, name, pool});
  }
  spec.intents.push_back({"set_device",
                          "set a device attribute",
                          {"set the {pair}", "set the {pair} and the {pair}",
                           "please set the {pair}", "set the {noun} now"},
                          all_slots});
  spec.intents.push_back({"adjust_setting",
                          "adjust a setting",
                          {"adjust the {pair}", "adjust the {pair} and the {pair}",
                           "kindly adjust the {pair}", "adjust the {noun} now"},
                          all_slots});
  spec.intents.push_back({"compare_attributes",
                          "compare two attributes",
                          {"compare the {noun} with the {noun}",
                           "please compare the {noun} with the {noun}"},
                          {}});
  spec.intents.push_back({"check_status",
                          "check the current status",
                          {"check the {noun} status", "check the {noun} status now"},
                          {}});
  spec.intents.push_back({"start_playback",
                          "start the playback",
                          {"start the playback", "start the playback now"},
                          {}});
  spec.intents.push_back({"stop_device",
                          "stop the machine",
                          {"stop the machine", "stop the machine now"},
                          {}});
  spec.held_out_slots = {"flavor", "direction"};
  spec.noise_sigma = 0.02;
  return spec;
}

namespace {

json example_to_json(const SLUExample& ex) {
  json ents = json::array();
  for (const auto& e : ex.entities) ents.push_back(json{{"slot", e.slot_id}, {"value", e.value}});
  return json{{"id", ex.id}, {"transcript", ex.transcript}, {"intent", ex.intent_id},
              {"entities", ents}};
}

SLUExample example_from_json(const json& j) {
  SLUExample ex;
  ex.id = j.at("id").get<std::string>();
  ex.transcript = j.at("transcript").get<std::string>();
  ex.intent_id = j.at("intent").get<std::string>();
  for (const auto& e : j.at("entities")) {
    ex.entities.push_back({e.at("slot").get<std::string>(), e.at("value").get<std::string>()});
  }
  return ex;
}

}  // namespace

std::vector<SLUExample> load_examples_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_examples_jsonl: cannot read " + path);
  std::vector<SLUExample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("load_examples_jsonl: " + path + " line " +
                                  std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_examples_jsonl(const std::vector<SLUExample>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_examples_jsonl: cannot write " + path);
  for (const auto& ex : examples) out << example_to_json(ex).dump() << "\n";
}

CorpusSpec load_corpus_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_corpus_spec: cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("load_corpus_spec: " + path + ": " + e.what());
  }
  CorpusSpec spec;
  spec.schema_version = j.at("schema_version").get<int>();
  for (const auto& s : j.at("slots")) {
    spec.slots.push_back({s.at("id").get<std::string>(), s.at("noun").get<std::string>(),
                          s.at("description").get<std::string>(),
                          s.at("values").get<std::vector<std::string>>()});
  }
  for (const auto& it : j.at("intents")) {
    spec.intents.push_back({it.at("id").get<std::string>(),
                            it.at("description").get<std::string>(),
                            it.at("patterns").get<std::vector<std::string>>(),
                            it.at("relevant_slots").get<std::vector<std::string>>()});
  }
  spec.held_out_slots = j.at("held_out_slots").get<std::vector<std::string>>();
  spec.noise_sigma = j.at("noise_sigma").get<double>();
  spec.frames_per_token = j.at("frames_per_token").get<int>();
  spec.d_feat = j.at("d_feat").get<int>();
  spec.validate();
  return spec;
}

void save_corpus_spec(const CorpusSpec& spec, const std::string& path) {
  json slots = json::array();
  for (const auto& s : spec.slots) {
    slots.push_back(json{{"id", s.id}, {"noun", s.noun}, {"description", s.description},
                         {"values", s.values}});
  }
  json intents = json::array();
  for (const auto& it : spec.intents) {
    intents.push_back(json{{"id", it.id}, {"description", it.description},
                           {"patterns", it.patterns}, {"relevant_slots", it.relevant_slots}});
  }
  json j{{"schema_version", spec.schema_version}, {"slots", slots}, {"intents", intents},
         {"held_out_slots", spec.held_out_slots}, {"noise_sigma", spec.noise_sigma},
         {"frames_per_token", spec.frames_per_token}, {"d_feat", spec.d_feat}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_corpus_spec: cannot write " + path);
  out << j.dump(2) << "\n";
}

SlurpLoadReport load_slurp_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_slurp_jsonl: cannot read " + path);
  SlurpLoadReport report;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      SLUExample ex;
      if (j.contains("slurp_id")) {
        ex.id = j.at("slurp_id").is_string() ? j.at("slurp_id").get<std::string>()
                                             : std::to_string(j.at("slurp_id").get<int64_t>());
      } else {
        ex.id = "line-" + std::to_string(line_no);
      }
      ex.transcript = j.contains("sentence") ? j.at("sentence").get<std::string>()
                                             : j.at("transcript").get<std::string>();
      if (j.contains("intent")) {
        ex.intent_id = j.at("intent").get<std::string>();
      } else {
        ex.intent_id =
            j.at("scenario").get<std::string>() + "_" + j.at("action").get<std::string>();
      }
      for (const auto& e : j.at("entities")) {
        ex.entities.push_back(
            {e.at("type").get<std::string>(), e.at("filler").get<std::string>()});
      }
      report.examples.push_back(std::move(ex));
    } catch (const std::exception& e) {
      report.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (report.examples.empty()) {
    throw std::runtime_error("load_slurp_jsonl: no valid lines in " + path +
                             (report.errors.empty() ? "" : " (" + report.errors.front() + ")"));
  }
  return report;
}

}  // namespace zsslu
