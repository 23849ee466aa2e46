#include "zsslu/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "zsslu/checkpoint.hpp"
#include "zsslu/rng.hpp"

namespace zsslu {

namespace {

std::vector<int> sample_negatives(int available, int requested, Rng& rng) {
  return rng.sample_without_replacement(available, std::min(requested, available));
}

}  // namespace

ContrastiveBatch build_batch(const SLUExample& example, const QuestionSet& questions,
                             int n_negatives, const Vocabulary& vocab, Rng& rng) {
  const Question* gold_intent = questions.find_intent(example.intent_id);
  if (!gold_intent) {
    throw std::invalid_argument("build_batch: gold intent '" + example.intent_id +
                                "' missing from question set (example '" + example.id + "')");
  }
  const int yes_id = vocab.id("yes");
  const int no_id = vocab.id("no");
  if (yes_id < 0 || no_id < 0) {
    throw std::invalid_argument("build_batch: vocabulary lacks the answer words yes/no");
  }

  ContrastiveBatch batch;
  batch.example_id = example.id;
  batch.transcript_tokens = vocab.encode(example.transcript);

  batch.intent_items.push_back(QAItem{LabelKind::Intent, example.intent_id,
                                      vocab.encode(gold_intent->text),
                                      {yes_id},
                                      true});
  std::vector<const Question*> other_intents;
  for (const auto& q : questions.q_intent) {
    if (q.label_id != example.intent_id) other_intents.push_back(&q);
  }
  for (int idx : sample_negatives(static_cast<int>(other_intents.size()), n_negatives, rng)) {
    const Question* q = other_intents[static_cast<size_t>(idx)];
    batch.intent_items.push_back(
        QAItem{LabelKind::Intent, q->label_id, vocab.encode(q->text), {no_id}, false});
  }

  std::set<std::string> gold_slots;
  for (const auto& entity : example.entities) {
    const Question* q = questions.find_slot(entity.slot_id);
    if (!q) {
      throw std::invalid_argument("build_batch: gold slot '" + entity.slot_id +
                                  "' missing from question set (example '" + example.id + "')");
    }
    gold_slots.insert(entity.slot_id);
    std::vector<int> answer = vocab.encode(entity.value);
    answer.push_back(vocab.eot());
    batch.slot_items.push_back(
        QAItem{LabelKind::Slot, entity.slot_id, vocab.encode(q->text), std::move(answer), true});
  }
  std::vector<const Question*> other_slots;
  for (const auto& q : questions.q_slot) {
    if (gold_slots.find(q.label_id) == gold_slots.end()) other_slots.push_back(&q);
  }
  for (int idx : sample_negatives(static_cast<int>(other_slots.size()), n_negatives, rng)) {
    const Question* q = other_slots[static_cast<size_t>(idx)];
    batch.slot_items.push_back(QAItem{LabelKind::Slot, q->label_id, vocab.encode(q->text),
                                      {vocab.eot()}, false});
  }
  return batch;
}

Tensor compute_loss(const Model& model, const PrefixBanks& banks, const ContrastiveBatch& batch,
                    const LossConfig& config, Tape* tape) {
  const Vocabulary& vocab = model.vocab();
  const PrefixBank* dec_bank = banks.decoder_or_null();

  EncoderOutput enc = model.encode(batch.features, banks.encoder_or_null(), tape);

  // Stage 1 teacher-forced: [SOT w1..wn] predicting [w1..wn EOT].
  std::vector<int> dec_in{vocab.sot()};
  dec_in.insert(dec_in.end(), batch.transcript_tokens.begin(), batch.transcript_tokens.end());
  std::vector<int> asr_targets = batch.transcript_tokens;
  asr_targets.push_back(vocab.eot());

  DecoderCache asr_cache = DecoderCache::empty(model.config());
  Tensor asr_logits = model.decode_step(dec_in, asr_cache, &enc, dec_bank, true, 0, tape);
  Tensor loss = cross_entropy_logits(asr_logits, asr_targets,
                                     std::vector<uint8_t>(asr_targets.size(), 1), tape);

  // SLU stages condition on the reserved states: gold teacher-forced by
  // default, or a free-running transcription when configured.
  DecoderCache slu_cache = asr_cache;
  if (config.free_running_states) {
    DecoderCache fresh = DecoderCache::empty(model.config());
    model.greedy_decode({vocab.sot()}, fresh, &enc, dec_bank, true, config.max_transcript_len,
                        tape);
    slu_cache = fresh;
  }

  Tensor slu_sum = Tensor::scalar(0.0);
  int64_t total_positions = 0;
  auto add_item = [&](const QAItem& item) {
    std::vector<int> prompt;
    if (config.include_transcript_in_prompt) {
      prompt.insert(prompt.end(), batch.transcript_tokens.begin(),
                    batch.transcript_tokens.end());
    }
    prompt.insert(prompt.end(), item.question_tokens.begin(), item.question_tokens.end());
    if (prompt.empty()) {
      throw std::invalid_argument("compute_loss: empty prompt for item '" + item.label_id + "'");
    }
    std::vector<int> feed = prompt;
    feed.insert(feed.end(), item.answer_tokens.begin(), item.answer_tokens.end() - 1);

    DecoderCache cache = config.use_asr_states ? slu_cache : DecoderCache::empty(model.config());
    const int offset = cache.length;
    Tensor logits = model.decode_step(feed, cache, nullptr, dec_bank, false, offset, tape);

    const size_t n = feed.size();
    const size_t first = prompt.size() - 1;
    std::vector<int> targets(n, 0);
    std::vector<uint8_t> mask(n, 0);
    for (size_t j = first; j < n; ++j) {
      targets[j] = item.answer_tokens[j - first];
      mask[j] = 1;
    }
    Tensor item_loss = cross_entropy_logits(logits, targets, mask, tape);
    const auto count = static_cast<int64_t>(item.answer_tokens.size());
    slu_sum = add(slu_sum, scale(item_loss, static_cast<double>(count), tape), tape);
    total_positions += count;
  };
  for (const auto& item : batch.intent_items) add_item(item);
  for (const auto& item : batch.slot_items) add_item(item);

  if (total_positions > 0) {
    loss = add(loss, scale(slu_sum, 1.0 / static_cast<double>(total_positions), tape), tape);
  }
  return loss;
}

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* p : params_) {
    m_.emplace_back(p->data->size(), 0.0);
    v_.emplace_back(p->data->size(), 0.0);
  }
}

void AdamW::step(const std::vector<std::vector<double>>& grads, double lr) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("AdamW::step: " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(params_.size()) +
                                " parameters");
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    if (grads[i].size() != params_[i]->data->size()) {
      throw std::invalid_argument("AdamW::step: gradient " + std::to_string(i) +
                                  " size mismatch");
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        throw std::domain_error("AdamW::step: non-finite gradient for parameter " +
                                std::to_string(i) + "; step rejected");
      }
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i]->data;
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (size_t j = 0; j < p.size(); ++j) {
      const double decayed = p[j] * (1.0 - lr * config_.weight_decay);
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] = decayed - lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

QuestionSet observed_question_set(const QuestionSet& questions,
                                  const std::vector<SLUExample>& examples) {
  std::set<std::string> intents, slots;
  for (const auto& ex : examples) {
    intents.insert(ex.intent_id);
    for (const auto& e : ex.entities) slots.insert(e.slot_id);
  }
  QuestionSet out;
  out.schema_version = questions.schema_version;
  for (const auto& q : questions.q_intent) {
    if (intents.count(q.label_id)) out.q_intent.push_back(q);
  }
  for (const auto& q : questions.q_slot) {
    if (slots.count(q.label_id)) out.q_slot.push_back(q);
  }
  for (const auto& [intent, mapped] : questions.intent_slot_map) {
    if (!intents.count(intent)) continue;
    std::vector<std::string> kept;
    for (const auto& s : mapped) {
      if (slots.count(s)) kept.push_back(s);
    }
    out.intent_slot_map[intent] = std::move(kept);
  }
  return out;
}

Tensor eval_features(const SLUExample& example, const CorpusSpec& spec, uint64_t seed) {
  Rng rng(seed ^ fnv1a64(example.id));
  return featurize(example.transcript, spec, rng);
}

namespace {

struct PreparedUtterance {
  ContrastiveBatch batch;
};

// Shared epoch driver for prefix training and base pretraining. Trainable
// tensors carry requires_grad; per-utterance tapes run independently (the
// parameters are read-only during forward), gradients are reduced in
// utterance order.
struct EpochStats {
  double mean_loss = 0.0;
  double lr_last = 0.0;
};

EpochStats run_epoch(const Model& model, const PrefixBanks& banks,
                     const std::vector<const SLUExample*>& order, const CorpusSpec& spec,
                     const QuestionSet& train_questions, const TrainConfig& config, AdamW& opt,
                     const LinearSchedule& schedule, const std::vector<Tensor*>& params,
                     Rng& rng) {
  double loss_sum = 0.0;
  int64_t n_batches = 0;
  EpochStats stats;
  for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(config.batch_size)) {
    const size_t end = std::min(order.size(), begin + static_cast<size_t>(config.batch_size));
    const int count = static_cast<int>(end - begin);

    // Sampling happens up front on the epoch RNG so worker count cannot
    // change the stream.
    std::vector<PreparedUtterance> prepared(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      const SLUExample& ex = *order[begin + static_cast<size_t>(i)];
      prepared[static_cast<size_t>(i)].batch =
          build_batch(ex, train_questions, config.n_negatives, model.vocab(), rng);
      prepared[static_cast<size_t>(i)].batch.features = featurize(ex.transcript, spec, rng);
    }

    std::vector<std::vector<std::vector<double>>> grads(static_cast<size_t>(count));
    std::vector<double> losses(static_cast<size_t>(count), 0.0);
    auto run_one = [&](int i) {
      Tape tape;
      Tensor loss = compute_loss(model, banks, prepared[static_cast<size_t>(i)].batch,
                                 config.loss, &tape);
      tape.backward(loss);
      losses[static_cast<size_t>(i)] = loss.item();
      grads[static_cast<size_t>(i)].reserve(params.size());
      for (Tensor* p : params) grads[static_cast<size_t>(i)].push_back(tape.grad(*p));
    };
    const int workers = std::max(1, std::min(config.workers, count));
    if (workers <= 1) {
      for (int i = 0; i < count; ++i) run_one(i);
    } else {
      std::vector<std::future<void>> futures;
      for (int w = 0; w < workers; ++w) {
        futures.push_back(std::async(std::launch::async, [&, w] {
          for (int i = w; i < count; i += workers) run_one(i);
        }));
      }
      for (auto& f : futures) f.get();
    }

    // Fixed reduction order: utterance 0, 1, 2, ...
    std::vector<std::vector<double>> total(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
      total[p].assign(params[p]->data->size(), 0.0);
    }
    double batch_loss = 0.0;
    for (int i = 0; i < count; ++i) {
      batch_loss += losses[static_cast<size_t>(i)];
      for (size_t p = 0; p < params.size(); ++p) {
        const auto& g = grads[static_cast<size_t>(i)][p];
        for (size_t j = 0; j < g.size(); ++j) total[p][j] += g[j] / count;
      }
    }
    stats.lr_last = schedule.lr(opt.step_count());
    opt.step(total, stats.lr_last);
    loss_sum += batch_loss / count;
    ++n_batches;
  }
  stats.mean_loss = n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0;
  return stats;
}

EvalReport eval_split(const Model& model, const PrefixBanks& banks,
                      const std::vector<SLUExample>& split, const CorpusSpec& spec,
                      const QuestionSet& questions, const TrainConfig& config) {
  PipelineConfig pc;
  pc.include_transcript_in_prompt = config.loss.include_transcript_in_prompt;
  pc.use_asr_states = config.loss.use_asr_states;
  pc.max_transcript_len = config.loss.max_transcript_len;
  pc.max_answer_len = config.max_answer_len;
  pc.workers = config.workers;
  std::vector<PredictedUtterance> preds;
  preds.reserve(split.size());
  for (const auto& ex : split) {
    Tensor features = eval_features(ex, spec, config.seed);
    preds.push_back(run_pipeline(features, model, banks, questions, pc).to_predicted());
  }
  return evaluate(split, preds);
}

double dev_score(const EvalReport& r) { return r.intent_accuracy + r.slu_f1; }

void write_metrics_log(const std::string& run_dir, const std::vector<EpochLog>& log) {
  std::ofstream out(run_dir + "/metrics.jsonl");
  for (const auto& e : log) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"lr_last", e.lr_last},
                     {"dev_wer", e.dev.wer},
                     {"dev_intent_accuracy", e.dev.intent_accuracy},
                     {"dev_slu_f1", e.dev.slu_f1},
                     {"dev_perfect_parsing", e.dev.perfect_parsing}};
    out << j.dump() << "\n";
  }
}

}  // namespace

TrainResult train(const Model& model, const Corpus& corpus, const CorpusSpec& spec,
                  const QuestionSet& questions, const TrainConfig& config,
                  const std::string& run_dir) {
  if (corpus.train.empty()) throw std::invalid_argument("train: empty training corpus");
  questions.validate();
  QuestionSet train_questions = observed_question_set(questions, corpus.train);

  Rng rng(config.seed);
  TrainResult result;
  result.banks = new_banks(config.prefix, model.config().n_enc_layers,
                           model.config().n_dec_layers, model.config().d_model, rng);

  std::vector<Tensor*> params = trainable_parameters(model, result.banks);
  for (Tensor* p : params) p->requires_grad = true;

  AdamWConfig opt_config;
  opt_config.weight_decay = config.weight_decay;
  AdamW opt(params, opt_config);
  const int64_t steps_per_epoch =
      (static_cast<int64_t>(corpus.train.size()) + config.batch_size - 1) / config.batch_size;
  LinearSchedule schedule{config.base_lr, std::max<int64_t>(1, steps_per_epoch * config.epochs)};

  std::vector<const SLUExample*> order;
  for (const auto& ex : corpus.train) order.push_back(&ex);

  double best = -1.0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    EpochStats stats = run_epoch(model, result.banks, order, spec, train_questions, config, opt,
                                 schedule, params, rng);
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = stats.mean_loss;
    entry.lr_last = stats.lr_last;
    if (config.dev_eval) {
      entry.dev = eval_split(model, result.banks, corpus.dev, spec, questions, config);
    }
    result.log.push_back(entry);

    if (dev_score(entry.dev) > best) {
      best = dev_score(entry.dev);
      result.best_epoch = epoch;
      if (!run_dir.empty()) {
        save_checkpoint(run_dir + "/checkpoint_best.json", model, result.banks);
      }
    }
  }
  for (Tensor* p : params) p->requires_grad = false;
  if (!run_dir.empty()) {
    save_checkpoint(run_dir + "/checkpoint_final.json", model, result.banks);
    write_metrics_log(run_dir, result.log);
  }
  return result;
}

std::vector<EpochLog> pretrain(Model& model, const Corpus& corpus, const CorpusSpec& spec,
                               const QuestionSet& questions, const TrainConfig& config) {
  if (corpus.train.empty()) throw std::invalid_argument("pretrain: empty training corpus");
  questions.validate();
  QuestionSet train_questions = observed_question_set(questions, corpus.train);

  Rng rng(config.seed);
  PrefixBanks no_banks;
  std::vector<Tensor*> params;
  for (auto& [name, t] : model.named_parameters()) {
    params.push_back(t);
    t->requires_grad = true;
  }
  std::vector<std::vector<double>> best_params;
  double best = -1.0;

  AdamWConfig opt_config;
  opt_config.weight_decay = config.weight_decay;
  AdamW opt(params, opt_config);
  const int64_t steps_per_epoch =
      (static_cast<int64_t>(corpus.train.size()) + config.batch_size - 1) / config.batch_size;
  LinearSchedule schedule{config.base_lr, std::max<int64_t>(1, steps_per_epoch * config.epochs)};

  std::vector<const SLUExample*> order;
  for (const auto& ex : corpus.train) order.push_back(&ex);

  std::vector<EpochLog> log;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    EpochStats stats = run_epoch(model, no_banks, order, spec, train_questions, config, opt,
                                 schedule, params, rng);
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = stats.mean_loss;
    entry.lr_last = stats.lr_last;
    if (config.dev_eval) {
      entry.dev = eval_split(model, no_banks, corpus.dev, spec, questions, config);
      // Keep the best dev epoch; epoch-to-epoch variance is substantial at
      // this scale and the final epoch is not reliably the strongest.
      if (dev_score(entry.dev) > best) {
        best = dev_score(entry.dev);
        best_params.clear();
        for (Tensor* p : params) best_params.push_back(*p->data);
      }
    }
    log.push_back(entry);
  }
  if (!best_params.empty()) {
    for (size_t i = 0; i < params.size(); ++i) *params[i]->data = best_params[i];
  }
  for (Tensor* p : params) p->requires_grad = false;
  return log;
}

}  // namespace zsslu
