#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "zsslu/metrics.hpp"
#include "zsslu/pipeline.hpp"
#include "zsslu/rng.hpp"
#include "zsslu/training.hpp"

using namespace zsslu;

namespace {

QuestionSet many_label_set(int n_intents, int n_slots) {
  QuestionSet set;
  for (int i = 0; i < n_intents; ++i) {
    std::string id = "intent_" + std::to_string(i);
    set.q_intent.push_back({id, LabelKind::Intent,
                            "Does the user want action " + std::to_string(i) + "?",
                            AnswerMode::Binary});
    set.intent_slot_map[id] = {};
  }
  for (int i = 0; i < n_slots; ++i) {
    std::string id = "slot_" + std::to_string(i);
    set.q_slot.push_back({id, LabelKind::Slot, "What is the thing " + std::to_string(i) + "?",
                          AnswerMode::Extractive});
  }
  return set;
}

Vocabulary batch_vocab() {
  return Vocabulary::build({"yes no set the color to red volume high what is does user want "
                            "action thing 0 1 2 3 4 5 6 7 8 9 10 11 ?"});
}

// Small end-to-end fixture: a 3-slot corpus (one slot held out), a compact
// model pretrained to overfit it, shared across the expensive test cases.
struct OverfitFixture {
  CorpusSpec spec;
  Corpus corpus;
  QuestionSet questions;
  Vocabulary vocab;
  Model model;
  std::vector<EpochLog> pretrain_log;

  static CorpusSpec make_spec() {
    CorpusSpec spec;
    const std::vector<std::string> pool = {"red", "blue", "high", "low", "warm", "cool"};
    for (const char* name : {"color", "volume", "temperature"}) {
      spec.slots.push_back({name, name, name, pool});
    }
    spec.intents.push_back({"set_device",
                            "set a device attribute",
                            {"set the {pair}", "set the {pair} and the {pair}"},
                            {"color", "volume", "temperature"}});
    spec.intents.push_back({"adjust_setting",
                            "adjust a setting",
                            {"adjust the {pair}"},
                            {"color", "volume", "temperature"}});
    spec.intents.push_back({"compare_attributes",
                            "compare two attributes",
                            {"compare the {noun} with the {noun}"},
                            {}});
    spec.held_out_slots = {"temperature"};
    spec.noise_sigma = 0.02;
    spec.frames_per_token = 2;
    spec.d_feat = 8;
    return spec;
  }

  static ModelConfig make_config(const Vocabulary& v) {
    ModelConfig c;
    c.d_model = 32;
    c.n_heads = 4;
    c.n_enc_layers = 1;
    c.n_dec_layers = 1;
    c.d_ff = 64;
    c.d_feat = 8;
    c.max_positions = 72;
    c.vocab_size = v.size();
    return c;
  }

  OverfitFixture()
      : spec(make_spec()),
        corpus([this] {
          Rng rng(404);
          return generate_corpus(spec, 24, 6, 6, rng);
        }()),
        questions(corpus_question_set(spec)),
        vocab(build_vocabulary(corpus, questions)),
        model(make_config(vocab), vocab, 2024) {
    TrainConfig config;
    config.epochs = 200;
    config.batch_size = 8;
    config.n_negatives = 2;
    config.base_lr = 0.003;
    config.weight_decay = 0.0;
    config.seed = 11;
    config.workers = 2;
    config.dev_eval = false;
    pretrain_log = pretrain(model, corpus, spec, questions, config);
  }

  static const OverfitFixture& get() {
    static OverfitFixture fixture;
    return fixture;
  }
};

}  // namespace

TEST_CASE("build_batch composition and clamping") {
  Vocabulary vocab = batch_vocab();
  QuestionSet set = many_label_set(12, 12);
  SLUExample ex{"u1", "set the color to red", "intent_3", {{"slot_2", "red"}}};

  Rng rng(1);
  ContrastiveBatch batch = build_batch(ex, set, 10, vocab, rng);
  // 1 positive + 10 negatives.
  CHECK(batch.intent_items.size() == 11);
  CHECK(batch.intent_items[0].positive);
  CHECK(batch.intent_items[0].label_id == "intent_3");
  CHECK(batch.intent_items[0].answer_tokens == std::vector<int>{vocab.id("yes")});
  for (size_t i = 1; i < batch.intent_items.size(); ++i) {
    CHECK_FALSE(batch.intent_items[i].positive);
    CHECK(batch.intent_items[i].label_id != "intent_3");
    CHECK(batch.intent_items[i].answer_tokens == std::vector<int>{vocab.id("no")});
  }
  // Negatives are distinct.
  std::set<std::string> neg_ids;
  for (size_t i = 1; i < batch.intent_items.size(); ++i) {
    CHECK(neg_ids.insert(batch.intent_items[i].label_id).second);
  }

  // Slot side: one positive with value + EOT, negatives with EOT alone.
  REQUIRE(batch.slot_items.size() == 11);
  CHECK(batch.slot_items[0].positive);
  std::vector<int> expected_answer = vocab.encode("red");
  expected_answer.push_back(vocab.eot());
  CHECK(batch.slot_items[0].answer_tokens == expected_answer);
  for (size_t i = 1; i < batch.slot_items.size(); ++i) {
    CHECK(batch.slot_items[i].answer_tokens == std::vector<int>{vocab.eot()});
    CHECK(batch.slot_items[i].label_id != "slot_2");
  }
}

TEST_CASE("build_batch clamps negatives and is seed-deterministic") {
  Vocabulary vocab = batch_vocab();
  QuestionSet small = many_label_set(3, 3);
  SLUExample ex{"u1", "set the color to red", "intent_0", {}};

  Rng rng(2);
  ContrastiveBatch batch = build_batch(ex, small, 10, vocab, rng);
  CHECK(batch.intent_items.size() == 3);  // 1 positive + 2 available negatives
  CHECK(batch.slot_items.size() == 3);    // no gold slots, 3 negatives

  Rng ra(33), rb(33);
  ContrastiveBatch a = build_batch(ex, small, 2, vocab, ra);
  ContrastiveBatch b = build_batch(ex, small, 2, vocab, rb);
  REQUIRE(a.intent_items.size() == b.intent_items.size());
  for (size_t i = 0; i < a.intent_items.size(); ++i) {
    CHECK(a.intent_items[i].label_id == b.intent_items[i].label_id);
  }

  SLUExample missing{"u2", "set the color to red", "unknown_intent", {}};
  CHECK_THROWS_AS(build_batch(missing, small, 2, vocab, rng), std::invalid_argument);
}

TEST_CASE("adamw zero-gradient and constant-gradient behavior") {
  Tensor p({3}, {1.0, -2.0, 0.5});
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt({&p}, cfg);

  // Zero gradient, no decay: parameters unchanged exactly.
  opt.step({std::vector<double>(3, 0.0)}, 0.01);
  CHECK(*p.data == std::vector<double>{1.0, -2.0, 0.5});

  // Constant gradient: per-step movement approaches lr in magnitude.
  Tensor q({1}, {0.0});
  AdamW opt2({&q}, cfg);
  const double lr = 0.01;
  double prev = (*q.data)[0];
  double delta = 0.0;
  for (int i = 0; i < 50; ++i) {
    opt2.step({{0.5}}, lr);
    delta = prev - (*q.data)[0];
    prev = (*q.data)[0];
  }
  CHECK(delta == doctest::Approx(lr).epsilon(1e-6));

  // Pure decay: zero gradient with weight decay shrinks by (1 - lr*lambda).
  Tensor r({2}, {4.0, -8.0});
  AdamWConfig dcfg;
  dcfg.weight_decay = 0.1;
  AdamW opt3({&r}, dcfg);
  opt3.step({std::vector<double>(2, 0.0)}, 0.5);
  CHECK((*r.data)[0] == doctest::Approx(4.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-12));
  CHECK((*r.data)[1] == doctest::Approx(-8.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-12));
}

TEST_CASE("adamw rejects non-finite gradients atomically") {
  Tensor p({2}, {1.0, 2.0});
  Tensor q({1}, {3.0});
  AdamW opt({&p, &q}, AdamWConfig{});
  std::vector<std::vector<double>> grads{{0.1, std::numeric_limits<double>::quiet_NaN()}, {0.1}};
  CHECK_THROWS_AS(opt.step(grads, 0.01), std::domain_error);
  CHECK(*p.data == std::vector<double>{1.0, 2.0});
  CHECK(*q.data == std::vector<double>{3.0});
  CHECK(opt.step_count() == 0);
}

TEST_CASE("linear schedule endpoints") {
  LinearSchedule s{0.002, 1000};
  CHECK(s.lr(0) == 0.002);
  CHECK(s.lr(500) == doctest::Approx(0.001));
  CHECK(s.lr(999) == doctest::Approx(0.002 / 1000).epsilon(1e-9));
  CHECK(s.lr(999) <= 0.002 / 1000 + 1e-15);
  CHECK(s.lr(1000) == 0.0);
  CHECK(s.lr(5000) == 0.0);

  // Paper defaults.
  TrainConfig defaults;
  CHECK(defaults.epochs == 10);
  CHECK(defaults.batch_size == 12);
  CHECK(defaults.n_negatives == 10);
  CHECK(defaults.base_lr == 0.002);
  CHECK(defaults.prefix.per_task_length == 10);
  CHECK(defaults.prefix.decoder_length() == 30);
}

TEST_CASE("observed_question_set drops labels absent from the data") {
  QuestionSet set = many_label_set(4, 4);
  set.intent_slot_map["intent_0"] = {"slot_0", "slot_1", "slot_3"};
  std::vector<SLUExample> examples = {
      {"a", "x", "intent_0", {{"slot_0", "v"}}},
      {"b", "y", "intent_2", {{"slot_1", "w"}}},
  };
  QuestionSet observed = observed_question_set(set, examples);
  CHECK(observed.q_intent.size() == 2);
  CHECK(observed.q_slot.size() == 2);
  CHECK(observed.find_intent("intent_1") == nullptr);
  CHECK(observed.find_slot("slot_3") == nullptr);
  CHECK(observed.intent_slot_map.at("intent_0") == std::vector<std::string>{"slot_0", "slot_1"});
}

TEST_CASE("eval_features is deterministic per example") {
  CorpusSpec spec = OverfitFixture::make_spec();
  SLUExample a{"id-1", "set the color to red", "set_device", {}};
  SLUExample b{"id-2", "set the color to red", "set_device", {}};
  Tensor f1 = eval_features(a, spec, 7);
  Tensor f2 = eval_features(a, spec, 7);
  Tensor f3 = eval_features(b, spec, 7);
  CHECK(*f1.data == *f2.data);
  CHECK(*f1.data != *f3.data);
}

TEST_CASE("pretraining overfits the tiny corpus") {
  const auto& fx = OverfitFixture::get();
  // Loss drops over training.
  CHECK(fx.pretrain_log.back().train_loss < fx.pretrain_log.front().train_loss);
  CHECK(fx.pretrain_log[9].train_loss < fx.pretrain_log[0].train_loss);

  // Teacher-forced loss saturates near zero on a training utterance.
  Rng rng(5);
  QuestionSet observed = observed_question_set(fx.questions, fx.corpus.train);
  ContrastiveBatch batch = build_batch(fx.corpus.train[0], observed, 2, fx.vocab, rng);
  batch.features = eval_features(fx.corpus.train[0], fx.spec, 11);
  Tensor loss = compute_loss(fx.model, PrefixBanks{}, batch, LossConfig{}, nullptr);
  CHECK(loss.item() < 0.01);

  // Greedy transcription of training utterances is exact (WER 0).
  PipelineConfig pc;
  int wer_zero = 0;
  for (int i = 0; i < 6; ++i) {
    const auto& ex = fx.corpus.train[static_cast<size_t>(i)];
    Tensor features = eval_features(ex, fx.spec, 11);
    AsrResult asr = run_asr(features, fx.model, PrefixBanks{}, pc);
    if (asr.transcript == ex.transcript) ++wer_zero;
    CHECK(asr.cache.length == static_cast<int>(asr.tokens.size()));
  }
  CHECK(wer_zero == 6);
}

TEST_CASE("prefix training: freeze contract, determinism, learning curve") {
  const auto& fx = OverfitFixture::get();

  TrainConfig config;
  config.epochs = 13;  // 24/8 = 3 steps per epoch -> 39 steps
  config.batch_size = 8;
  config.n_negatives = 2;
  config.base_lr = 0.002;
  config.seed = 21;
  config.workers = 2;
  config.dev_eval = false;
  config.prefix.per_task_length = 4;

  const uint64_t base_before = fx.model.checksum();
  TrainResult r1 = train(fx.model, fx.corpus, fx.spec, fx.questions, config);
  CHECK(fx.model.checksum() == base_before);

  // The banks did move away from their initialization.
  Rng rng(config.seed);
  PrefixBanks init = new_banks(config.prefix, fx.model.config().n_enc_layers,
                               fx.model.config().n_dec_layers, fx.model.config().d_model, rng);
  CHECK(*r1.banks.decoder->layers[0].k.data != *init.decoder->layers[0].k.data);

  // Same seed, same trajectory, bit-identical banks.
  TrainResult r2 = train(fx.model, fx.corpus, fx.spec, fx.questions, config);
  REQUIRE(r1.log.size() == r2.log.size());
  for (size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
  }
  for (int l = 0; l < fx.model.config().n_dec_layers; ++l) {
    CHECK(*r1.banks.decoder->layers[l].k.data == *r2.banks.decoder->layers[l].k.data);
    CHECK(*r1.banks.decoder->layers[l].v.data == *r2.banks.decoder->layers[l].v.data);
  }

  // Training reduces the loss from the first to the last epoch.
  CHECK(r1.log.back().train_loss < r1.log.front().train_loss);
}

TEST_CASE("prefix gradients match finite differences through the full loss") {
  const auto& fx = OverfitFixture::get();
  Rng rng(31);
  PrefixConfig pc;
  pc.per_task_length = 2;
  PrefixBanks banks = new_banks(pc, fx.model.config().n_enc_layers,
                                fx.model.config().n_dec_layers, fx.model.config().d_model, rng);

  QuestionSet observed = observed_question_set(fx.questions, fx.corpus.train);
  Rng brng(32);
  ContrastiveBatch batch = build_batch(fx.corpus.train[1], observed, 2, fx.vocab, brng);
  batch.features = eval_features(fx.corpus.train[1], fx.spec, 11);

  for (Tensor* p : trainable_parameters(fx.model, banks)) p->requires_grad = true;
  Tape tape;
  Tensor loss = compute_loss(fx.model, banks, batch, LossConfig{}, &tape);
  tape.backward(loss);

  // Spot-check one K and one V bank tensor against central differences.
  for (Tensor* p : {&banks.decoder->layers[0].k, &banks.encoder->layers[0].v}) {
    auto analytic = tape.grad(*p);
    auto numeric = zsslu::testing::finite_difference(*p, [&] {
      return compute_loss(fx.model, banks, batch, LossConfig{}, nullptr).item();
    });
    CHECK(zsslu::testing::max_rel_err(analytic, numeric) <= 1e-3);
  }
}

TEST_CASE("loss wiring honors the ablation flags") {
  const auto& fx = OverfitFixture::get();
  Rng rng(41);
  QuestionSet observed = observed_question_set(fx.questions, fx.corpus.train);
  ContrastiveBatch batch = build_batch(fx.corpus.train[2], observed, 2, fx.vocab, rng);
  batch.features = eval_features(fx.corpus.train[2], fx.spec, 11);

  LossConfig full;
  LossConfig no_transcript;
  no_transcript.include_transcript_in_prompt = false;
  LossConfig no_states;
  no_states.use_asr_states = false;

  double l_full = compute_loss(fx.model, PrefixBanks{}, batch, full, nullptr).item();
  double l_nt = compute_loss(fx.model, PrefixBanks{}, batch, no_transcript, nullptr).item();
  double l_ns = compute_loss(fx.model, PrefixBanks{}, batch, no_states, nullptr).item();
  CHECK(l_full != l_nt);
  CHECK(l_full != l_ns);
  CHECK(l_nt != l_ns);
}
