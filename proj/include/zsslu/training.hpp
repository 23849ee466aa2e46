#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zsslu/data.hpp"
#include "zsslu/metrics.hpp"
#include "zsslu/model.hpp"
#include "zsslu/pipeline.hpp"
#include "zsslu/prefix.hpp"
#include "zsslu/questions.hpp"
#include "zsslu/tensor.hpp"

namespace zsslu {

// One question + prepared answer for contrastive training. Intent items
// answer with a single yes/no token; slot items answer with the entity value
// followed by EOT, or EOT alone for negatives.
struct QAItem {
  LabelKind kind = LabelKind::Intent;
  std::string label_id;
  std::vector<int> question_tokens;
  std::vector<int> answer_tokens;
  bool positive = false;
};

struct ContrastiveBatch {
  std::string example_id;
  std::vector<int> transcript_tokens;  // word ids, no specials
  Tensor features;
  std::vector<QAItem> intent_items;  // exactly one positive, then negatives
  std::vector<QAItem> slot_items;    // positives for gold entities, then negatives
};

// Samples N negatives without replacement from the given question set (all
// available when fewer exist). The caller restricts the set to labels
// observed in training data; gold labels missing from it are an error.
ContrastiveBatch build_batch(const SLUExample& example, const QuestionSet& questions,
                             int n_negatives, const Vocabulary& vocab, Rng& rng);

struct LossConfig {
  bool include_transcript_in_prompt = true;
  bool use_asr_states = true;
  // Cache SLU states from a free-running greedy pass instead of the gold
  // teacher-forced pass.
  bool free_running_states = false;
  int max_transcript_len = 24;
};

// ASR cross-entropy over the transcript plus answer-masked cross-entropy over
// every QA item, wired exactly like inference (prompts appended after the
// cached states, cross-attention skipped for stage-2/3 tokens). Gradients
// reach whatever tensors have requires_grad set; training sets that flag on
// prefix banks only.
Tensor compute_loss(const Model& model, const PrefixBanks& banks, const ContrastiveBatch& batch,
                    const LossConfig& config, Tape* tape);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay; the learning rate scales both the
// adaptive update and the decay term. A non-finite gradient rejects the whole
// step before any parameter moves.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, AdamWConfig config);

  void step(const std::vector<std::vector<double>>& grads, double lr);
  int64_t step_count() const { return step_; }

 private:
  std::vector<Tensor*> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  int64_t step_ = 0;
};

// lr(step) = base_lr * (1 - step / total_steps), clamped at zero; no warmup.
struct LinearSchedule {
  double base_lr = 0.002;
  int64_t total_steps = 1;

  double lr(int64_t step) const {
    double f = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
    return base_lr * (f > 0.0 ? f : 0.0);
  }
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 12;
  int n_negatives = 10;
  double base_lr = 0.002;
  double weight_decay = 0.01;
  PrefixConfig prefix;
  LossConfig loss;
  uint64_t seed = 0;
  int workers = 1;
  int max_answer_len = 6;  // dev evaluation decode cap
  bool dev_eval = true;    // run the dev-set pipeline after each epoch
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double lr_last = 0.0;
  EvalReport dev;
};

struct TrainResult {
  PrefixBanks banks;
  std::vector<EpochLog> log;
  int best_epoch = 0;  // 1-based epoch with the best dev score
};

// Prefix-tuning: the base model is frozen, fresh banks are trained with
// contrastive batches over shuffled utterance mini-batches, negatives
// resampled every epoch, dev-set evaluation after each epoch. When run_dir
// is nonempty, per-epoch metrics and best/final checkpoints are written
// there.
TrainResult train(const Model& model, const Corpus& corpus, const CorpusSpec& spec,
                  const QuestionSet& questions, const TrainConfig& config,
                  const std::string& run_dir = "");

// Full-parameter training of the surrogate base model on the same ASR + QA
// objective, with no prefixes involved. This stands in for the pretrained
// foundation model that prefix-tuning adapts.
std::vector<EpochLog> pretrain(Model& model, const Corpus& corpus, const CorpusSpec& spec,
                               const QuestionSet& questions, const TrainConfig& config);

// Question set restricted to labels that actually occur in the examples
// (gold intents; gold entity slots). Keeps held-out labels out of training.
QuestionSet observed_question_set(const QuestionSet& questions,
                                  const std::vector<SLUExample>& examples);

// Deterministic per-example featurization for evaluation.
Tensor eval_features(const SLUExample& example, const CorpusSpec& spec, uint64_t seed);

}  // namespace zsslu
