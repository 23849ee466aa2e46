#pragma once

#include <string>
#include <vector>

#include "zsslu/questions.hpp"
#include "zsslu/tensor.hpp"
#include "zsslu/vocab.hpp"

namespace zsslu {

class Rng;

struct SLUEntity {
  std::string slot_id;
  std::string value;
  bool operator==(const SLUEntity&) const = default;
};

struct SLUExample {
  std::string id;
  std::string transcript;
  std::string intent_id;
  std::vector<SLUEntity> entities;
  bool operator==(const SLUExample&) const = default;
};

// Synthetic corpus recipe. Utterances are built from intent patterns where
// "{pair}" expands to "the <noun> to <value>" (producing an entity) and
// "{noun}" mentions an attribute noun with no value (no entity). Held-out
// slots never appear as entities outside the test split, but their nouns
// still occur in training transcripts through {noun} mentions, so the
// surrogate ASR can transcribe them.
struct CorpusSpec {
  struct SlotSpec {
    std::string id;
    std::string noun;
    std::string description;
    std::vector<std::string> values;
  };
  struct IntentSpec {
    std::string id;
    std::string description;
    std::vector<std::string> patterns;
    std::vector<std::string> relevant_slots;  // intent_slot_map entry
  };

  int schema_version = 1;
  std::vector<SlotSpec> slots;
  std::vector<IntentSpec> intents;
  std::vector<std::string> held_out_slots;
  double noise_sigma = 0.05;
  int frames_per_token = 2;
  int d_feat = 16;

  const SlotSpec* find_slot(const std::string& id) const;
  bool is_held_out(const std::string& slot_id) const;
  void validate() const;
};

struct Corpus {
  std::vector<SLUExample> train;
  std::vector<SLUExample> dev;
  std::vector<SLUExample> test;
};

// Pseudo-speech features: per token, frames_per_token frames of a fixed
// hash-derived embedding plus gaussian noise. The hash depends only on the
// token string, so unseen words featurize consistently across corpora.
Tensor featurize(const std::string& transcript, const CorpusSpec& spec, Rng& rng);

// Train/dev draw entity pairs from non-held-out slots only; every test
// utterance exercises at least one held-out slot, mixed with seen slots to
// exercise selection under distraction.
Corpus generate_corpus(const CorpusSpec& spec, int n_train, int n_dev, int n_test, Rng& rng);

// Entity annotations referencing held-out slots; empty means the split is
// hygienic for zero-shot evaluation.
std::vector<std::string> scan_zero_shot_violations(const std::vector<SLUExample>& split,
                                                   const std::vector<std::string>& held_out);

// Question set derived from the corpus spec labels, with the intent->slot
// relevance map copied from the intent specs.
QuestionSet corpus_question_set(const CorpusSpec& spec);

CorpusSpec default_toy_spec();

// Closed vocabulary over every transcript, every question text, and the
// answer words. Mirrors a pretrained tokenizer covering the whole task space.
Vocabulary build_vocabulary(const Corpus& corpus, const QuestionSet& questions);

std::vector<SLUExample> load_examples_jsonl(const std::string& path);
void save_examples_jsonl(const std::vector<SLUExample>& examples, const std::string& path);

CorpusSpec load_corpus_spec(const std::string& path);
void save_corpus_spec(const CorpusSpec& spec, const std::string& path);

struct SlurpLoadReport {
  std::vector<SLUExample> examples;
  std::vector<std::string> errors;  // "line N: reason" for every skipped line
};

// SLURP-style annotation reader: intent = "<scenario>_<action>", entities
// from (type, filler) spans. Malformed lines are reported, valid lines kept.
SlurpLoadReport load_slurp_jsonl(const std::string& path);

}  // namespace zsslu
