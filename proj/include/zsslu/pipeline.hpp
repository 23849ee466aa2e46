#pragma once

#include <string>
#include <vector>

#include "zsslu/metrics.hpp"
#include "zsslu/model.hpp"
#include "zsslu/prefix.hpp"
#include "zsslu/questions.hpp"

namespace zsslu {

// Records the exact token sequences fed to the decoder, for testability.
struct PromptTrace {
  struct Entry {
    std::string stage;     // "asr" | "intent" | "slot"
    std::string label_id;  // question label, empty for ASR
    std::vector<int> tokens;
    int position_offset = 0;
    const void* decoder_bank = nullptr;
  };
  std::vector<Entry> entries;
};

struct PipelineConfig {
  bool include_transcript_in_prompt = true;
  bool use_asr_states = true;
  int max_transcript_len = 24;
  int max_answer_len = 6;
  enum class YesNoNorm { TwoToken, FullVocab } yes_no_norm = YesNoNorm::TwoToken;
  int workers = 1;
  PromptTrace* trace = nullptr;

  // Both ablation flags off leaves answers conditioned on the question alone.
  bool is_degenerate() const { return !include_transcript_in_prompt && !use_asr_states; }
};

struct IntentScore {
  std::string intent_id;
  double p_yes = 0.0;
};

struct Entity {
  std::string slot_id;
  std::string value;
  double log_prob = 0.0;
};

struct SLUPrediction {
  std::string transcript;
  std::string intent_id;
  double intent_score = 0.0;
  std::vector<Entity> entities;

  PredictedUtterance to_predicted() const;
};

// Stage-1 output: transcript plus the reserved decoder states. `tokens`
// covers everything the decoder consumed (SOT followed by the transcript
// words); the cache holds exactly one K/V row per consumed token at every
// layer. SLU stages extend copies of the cache, never the original.
struct AsrResult {
  std::string transcript;
  std::vector<int> tokens;
  DecoderCache cache;
  bool truncated = false;
};

AsrResult run_asr(const Tensor& features, const Model& model, const PrefixBanks& banks,
                  const PipelineConfig& config);

// Scores every intent question with the yes/no likelihood ratio from the
// first answer position, sorted by descending p_yes (ties break to the
// smaller intent id). Question fan-out across workers is merged by question
// index, so batched and sequential execution coincide.
std::vector<IntentScore> classify_intent(const AsrResult& asr, const Model& model,
                                         const PrefixBanks& banks, const QuestionSet& questions,
                                         const PipelineConfig& config);

// Decodes only the slot questions mapped to `intent_id`. EOT-first answers
// mean slot absent; among slots yielding an identical answer string only the
// highest sequence log-probability survives (ties: smaller slot id).
std::vector<Entity> fill_slots(const AsrResult& asr, const Model& model,
                               const PrefixBanks& banks, const std::string& intent_id,
                               const QuestionSet& questions, const PipelineConfig& config);

SLUPrediction run_pipeline(const Tensor& features, const Model& model, const PrefixBanks& banks,
                           const QuestionSet& questions, const PipelineConfig& config);

constexpr int kPredictionSchemaVersion = 1;
std::string prediction_to_json(const std::string& example_id, const SLUPrediction& pred);

}  // namespace zsslu
