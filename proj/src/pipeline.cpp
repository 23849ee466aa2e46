#include "zsslu/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace zsslu {

namespace {

// Prompt = (transcript words if configured) ++ question tokens, with the base
// cache and start position chosen by the ASR-states ablation flag.
struct PromptPlan {
  std::vector<int> tokens;
  DecoderCache cache;
  int offset = 0;
};

PromptPlan plan_prompt(const AsrResult& asr, const Model& model, const Question& question,
                       const PipelineConfig& config) {
  PromptPlan plan;
  if (config.include_transcript_in_prompt) {
    std::vector<int> words = model.vocab().encode(asr.transcript);
    plan.tokens.insert(plan.tokens.end(), words.begin(), words.end());
  }
  std::vector<int> q = model.vocab().encode(question.text);
  plan.tokens.insert(plan.tokens.end(), q.begin(), q.end());
  if (plan.tokens.empty()) {
    throw std::invalid_argument("pipeline: empty prompt for question '" + question.label_id + "'");
  }
  if (config.use_asr_states) {
    plan.cache = asr.cache;  // tensors are immutable; the copy extends privately
    plan.offset = asr.cache.length;
  } else {
    plan.cache = DecoderCache::empty(model.config());
    plan.offset = 0;
  }
  return plan;
}

void record_trace(const PipelineConfig& config, std::vector<PromptTrace::Entry>&& entries) {
  if (!config.trace) return;
  for (auto& e : entries) config.trace->entries.push_back(std::move(e));
}

PromptTrace::Entry trace_entry(const std::string& stage, const std::string& label,
                               const std::vector<int>& tokens, int offset,
                               const PrefixBanks& banks) {
  return PromptTrace::Entry{stage, label, tokens, offset,
                            static_cast<const void*>(banks.decoder_or_null())};
}

// Runs fn(i) for i in [0, n) across the configured worker count; results are
// merged by index so the schedule cannot affect the output.
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> futures;
  futures.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&fn, w, n, workers] {
      for (int i = w; i < n; i += workers) fn(i);
    }));
  }
  for (auto& f : futures) f.get();
}

}  // namespace

PredictedUtterance SLUPrediction::to_predicted() const {
  PredictedUtterance out;
  out.transcript = transcript;
  out.intent_id = intent_id;
  for (const auto& e : entities) out.entities.push_back({e.slot_id, e.value});
  return out;
}

AsrResult run_asr(const Tensor& features, const Model& model, const PrefixBanks& banks,
                  const PipelineConfig& config) {
  if (features.rank() != 2 || features.shape[0] == 0) {
    throw std::invalid_argument("run_asr: features must be a nonempty [T x d_feat] tensor");
  }
  EncoderOutput enc = model.encode(features, banks.encoder_or_null());
  AsrResult result;
  result.cache = DecoderCache::empty(model.config());
  std::vector<int> start{model.vocab().sot()};
  GreedyResult greedy = model.greedy_decode(start, result.cache, &enc, banks.decoder_or_null(),
                                            true, config.max_transcript_len);
  result.tokens = start;
  result.tokens.insert(result.tokens.end(), greedy.tokens.begin(), greedy.tokens.end());
  result.transcript = model.vocab().decode(greedy.tokens);
  result.truncated = greedy.truncated;
  record_trace(config, {trace_entry("asr", "", result.tokens, 0, banks)});
  return result;
}

std::vector<IntentScore> classify_intent(const AsrResult& asr, const Model& model,
                                         const PrefixBanks& banks, const QuestionSet& questions,
                                         const PipelineConfig& config) {
  if (questions.q_intent.empty()) {
    throw std::invalid_argument("classify_intent: empty intent question set");
  }
  const int yes_id = model.vocab().id("yes");
  const int no_id = model.vocab().id("no");
  if (yes_id < 0 || no_id < 0) {
    throw std::invalid_argument("classify_intent: vocabulary lacks the answer words yes/no");
  }

  const int n = static_cast<int>(questions.q_intent.size());
  std::vector<IntentScore> scores(static_cast<size_t>(n));
  std::vector<PromptTrace::Entry> traces(static_cast<size_t>(n));

  parallel_for(n, config.workers, [&](int i) {
    const Question& q = questions.q_intent[static_cast<size_t>(i)];
    PromptPlan plan = plan_prompt(asr, model, q, config);
    Tensor logits = model.decode_step(plan.tokens, plan.cache, nullptr, banks.decoder_or_null(),
                                      false, plan.offset);
    const int last = logits.shape[0] - 1;
    double p_yes = 0.0;
    if (config.yes_no_norm == PipelineConfig::YesNoNorm::TwoToken) {
      p_yes = 1.0 / (1.0 + std::exp(logits.at(last, no_id) - logits.at(last, yes_id)));
    } else {
      const int v = logits.shape[1];
      double mx = logits.at(last, 0);
      for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(last, j));
      double z = 0.0;
      for (int j = 0; j < v; ++j) z += std::exp(logits.at(last, j) - mx);
      p_yes = std::exp(logits.at(last, yes_id) - mx) / z;
    }
    scores[static_cast<size_t>(i)] = IntentScore{q.label_id, p_yes};
    traces[static_cast<size_t>(i)] = trace_entry("intent", q.label_id, plan.tokens, plan.offset,
                                                 banks);
  });
  record_trace(config, std::move(traces));

  std::stable_sort(scores.begin(), scores.end(), [](const IntentScore& a, const IntentScore& b) {
    if (a.p_yes != b.p_yes) return a.p_yes > b.p_yes;
    return a.intent_id < b.intent_id;
  });
  return scores;
}

std::vector<Entity> fill_slots(const AsrResult& asr, const Model& model, const PrefixBanks& banks,
                               const std::string& intent_id, const QuestionSet& questions,
                               const PipelineConfig& config) {
  auto it = questions.intent_slot_map.find(intent_id);
  if (it == questions.intent_slot_map.end()) {
    std::string known;
    for (const auto& [id, slots] : questions.intent_slot_map) {
      if (!known.empty()) known += ", ";
      known += id;
    }
    throw std::invalid_argument("fill_slots: intent '" + intent_id +
                                "' missing from intent_slot_map; known intents: " + known);
  }
  const auto& slot_ids = it->second;
  const int n = static_cast<int>(slot_ids.size());

  struct Answer {
    bool present = false;
    Entity entity;
  };
  std::vector<Answer> answers(static_cast<size_t>(n));
  std::vector<PromptTrace::Entry> traces(static_cast<size_t>(n));

  parallel_for(n, config.workers, [&](int i) {
    const std::string& slot_id = slot_ids[static_cast<size_t>(i)];
    const Question* q = questions.find_slot(slot_id);
    if (!q) {
      throw std::invalid_argument("fill_slots: no slot question for '" + slot_id + "'");
    }
    PromptPlan plan = plan_prompt(asr, model, *q, config);
    GreedyResult greedy = model.greedy_decode(plan.tokens, plan.cache, nullptr,
                                              banks.decoder_or_null(), false,
                                              config.max_answer_len);
    traces[static_cast<size_t>(i)] = trace_entry("slot", slot_id, plan.tokens, plan.offset, banks);
    if (greedy.tokens.empty()) return;  // EOT alone: slot absent
    Answer& a = answers[static_cast<size_t>(i)];
    a.present = true;
    a.entity = Entity{slot_id, model.vocab().decode(greedy.tokens), greedy.log_prob};
  });
  record_trace(config, std::move(traces));

  // Identical answer strings collapse to the most probable slot.
  std::map<std::string, Entity> by_value;
  for (const auto& a : answers) {
    if (!a.present) continue;
    auto found = by_value.find(a.entity.value);
    if (found == by_value.end()) {
      by_value.emplace(a.entity.value, a.entity);
    } else if (a.entity.log_prob > found->second.log_prob ||
               (a.entity.log_prob == found->second.log_prob &&
                a.entity.slot_id < found->second.slot_id)) {
      found->second = a.entity;
    }
  }
  std::vector<Entity> entities;
  for (const auto& a : answers) {  // question order, winners only
    if (!a.present) continue;
    const Entity& winner = by_value.at(a.entity.value);
    if (winner.slot_id == a.entity.slot_id) entities.push_back(a.entity);
  }
  return entities;
}

SLUPrediction run_pipeline(const Tensor& features, const Model& model, const PrefixBanks& banks,
                           const QuestionSet& questions, const PipelineConfig& config) {
  questions.validate();
  AsrResult asr = run_asr(features, model, banks, config);
  std::vector<IntentScore> intents = classify_intent(asr, model, banks, questions, config);
  SLUPrediction pred;
  pred.transcript = asr.transcript;
  pred.intent_id = intents.front().intent_id;
  pred.intent_score = intents.front().p_yes;
  pred.entities = fill_slots(asr, model, banks, pred.intent_id, questions, config);
  return pred;
}

std::string prediction_to_json(const std::string& example_id, const SLUPrediction& pred) {
  nlohmann::json ents = nlohmann::json::array();
  for (const auto& e : pred.entities) {
    ents.push_back(nlohmann::json{{"slot", e.slot_id}, {"value", e.value},
                                  {"log_prob", e.log_prob}});
  }
  nlohmann::json j{{"schema_version", kPredictionSchemaVersion},
                   {"id", example_id},
                   {"transcript", pred.transcript},
                   {"intent", {{"id", pred.intent_id}, {"score", pred.intent_score}}},
                   {"entities", ents}};
  return j.dump();
}

}  // namespace zsslu
