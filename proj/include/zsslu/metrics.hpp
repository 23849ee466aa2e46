#pragma once

#include <string>
#include <vector>

#include "zsslu/data.hpp"

namespace zsslu {

// Word-level edit distance over token sequences.
int levenshtein_words(const std::vector<std::string>& a, const std::vector<std::string>& b);
int levenshtein_chars(const std::string& a, const std::string& b);

// Word error rate: edit distance / reference length. Empty reference is an
// error.
double wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);

enum class MatchMode { Exact, Word, Char };

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Maximum-credit one-to-one matching restricted to equal slot types, solved
// exactly (entity counts per utterance are small). Exact mode: credit 1 on
// equal values. Word/char modes: partial credit 1 - edit_distance / max(len).
// Both sides empty scores a perfect 1; one empty side scores 0.
PRF entity_f1(const std::vector<SLUEntity>& gold, const std::vector<SLUEntity>& pred,
              MatchMode mode);

// Total matched credit (the numerator shared by precision and recall).
double matching_credit(const std::vector<SLUEntity>& gold, const std::vector<SLUEntity>& pred,
                       MatchMode mode);

// Harmonic mean of word-level and char-level F1 (0 if either is 0).
double slu_f1(const std::vector<SLUEntity>& gold, const std::vector<SLUEntity>& pred);

struct PredictedUtterance {
  std::string transcript;
  std::string intent_id;
  std::vector<SLUEntity> entities;
};

// 1 iff intent matches and the entity multisets agree exactly.
bool perfect_parse(const SLUExample& gold, const PredictedUtterance& pred);

double intent_accuracy(const std::vector<std::string>& golds,
                       const std::vector<std::string>& preds);

struct EvalReport {
  double wer = 0.0;
  double intent_accuracy = 0.0;
  double f1_exact = 0.0;
  double f1_word = 0.0;
  double f1_char = 0.0;
  double slu_f1 = 0.0;
  double perfect_parsing = 0.0;
  int64_t n_utterances = 0;
  int64_t n_gold_entities = 0;
  int64_t n_pred_entities = 0;
};

// Corpus-level aggregation: WER over pooled words, micro-averaged entity F1
// with matching confined to each utterance.
EvalReport evaluate(const std::vector<SLUExample>& golds,
                    const std::vector<PredictedUtterance>& preds);

std::string eval_report_json(const EvalReport& report);
// Columns in the usual table order: WER, Acc., SLU-F1, PP.
std::string eval_report_csv(const EvalReport& report);

}  // namespace zsslu
