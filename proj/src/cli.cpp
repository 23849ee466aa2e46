#include "zsslu/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "zsslu/checkpoint.hpp"
#include "zsslu/data.hpp"
#include "zsslu/metrics.hpp"
#include "zsslu/pipeline.hpp"
#include "zsslu/questions.hpp"
#include "zsslu/rng.hpp"
#include "zsslu/training.hpp"

namespace zsslu::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitInvalidConfig = 4;

struct MissingFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void fail_line(const std::string& code, const std::string& message) {
  json j{{"error", {{"code", code}, {"message", message}}}};
  std::cerr << j.dump() << "\n";
}

std::string resolve_out(const std::string& out) {
  const char* root = std::getenv("ZSSLU_OUT_ROOT");
  if (root && *root && !out.empty() && !fs::path(out).is_absolute()) {
    return (fs::path(root) / out).string();
  }
  return out;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) {
    throw MissingFileError(what + " not found: " + path);
  }
}

json load_json_file(const std::string& path, const std::string& what) {
  require_file(path, what);
  std::ifstream in(path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(what + " is not valid JSON (" + path + "): " + e.what());
  }
  return j;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

// File-under-flags layering: every option not given on the command line is
// back-filled from the --config file, and the fully resolved set is written
// into the run directory.
void layer_config(const CLI::App& cmd, json& resolved, const std::string& config_path) {
  if (config_path.empty()) return;
  json file = load_json_file(config_path, "config file");
  for (auto& [key, value] : file.items()) {
    if (!resolved.contains(key)) continue;
    const CLI::Option* opt = nullptr;
    for (const CLI::Option* o : cmd.get_options()) {
      if (o->get_single_name() == key) opt = o;
    }
    if (opt && opt->count() > 0) continue;  // flag wins
    resolved[key] = value;
  }
}

struct CorpusPaths {
  std::string dir;
  std::string spec() const { return dir + "/corpus_spec.json"; }
  std::string questions() const { return dir + "/questions.json"; }
  std::string split(const std::string& name) const { return dir + "/" + name + ".jsonl"; }
};

Corpus load_corpus(const CorpusPaths& paths) {
  Corpus corpus;
  require_file(paths.split("train"), "train split");
  require_file(paths.split("dev"), "dev split");
  require_file(paths.split("test"), "test split");
  corpus.train = load_examples_jsonl(paths.split("train"));
  corpus.dev = load_examples_jsonl(paths.split("dev"));
  corpus.test = load_examples_jsonl(paths.split("test"));
  return corpus;
}

PipelineConfig ablation_config(const std::string& ablation) {
  PipelineConfig pc;
  if (ablation == "none") {
    // defaults
  } else if (ablation == "no-transcript") {
    pc.include_transcript_in_prompt = false;
  } else if (ablation == "no-asr-states") {
    pc.use_asr_states = false;
  } else {
    throw std::invalid_argument("unknown ablation '" + ablation +
                                "' (expected none, no-transcript, no-asr-states)");
  }
  return pc;
}

// Smallest max_positions covering encoder frames and the longest
// cache + prompt + answer sequence any stage can produce.
int required_positions(const Corpus& corpus, const CorpusSpec& spec, const QuestionSet& questions,
                       int max_answer_len) {
  size_t max_tokens = 1;
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test}) {
    for (const auto& ex : *split) {
      max_tokens = std::max(max_tokens, Vocabulary::tokenize(ex.transcript).size());
    }
  }
  size_t max_q = 0;
  for (const auto& q : questions.q_intent) {
    max_q = std::max(max_q, Vocabulary::tokenize(q.text).size());
  }
  for (const auto& q : questions.q_slot) {
    max_q = std::max(max_q, Vocabulary::tokenize(q.text).size());
  }
  const size_t enc_need = max_tokens * static_cast<size_t>(spec.frames_per_token);
  const size_t dec_need = (1 + max_tokens) + max_tokens + max_q +
                          static_cast<size_t>(max_answer_len) + 2;
  return static_cast<int>(std::max(enc_need, dec_need));
}

int cmd_gen_corpus(const std::string& out_dir, const std::string& spec_path, int n_train,
                   int n_dev, int n_test, uint64_t seed, const json& resolved) {
  CorpusSpec spec = spec_path.empty() ? default_toy_spec() : load_corpus_spec(spec_path);
  Rng rng(seed);
  Corpus corpus = generate_corpus(spec, n_train, n_dev, n_test, rng);
  QuestionSet questions = corpus_question_set(spec);

  fs::create_directories(out_dir);
  save_corpus_spec(spec, out_dir + "/corpus_spec.json");
  save_examples_jsonl(corpus.train, out_dir + "/train.jsonl");
  save_examples_jsonl(corpus.dev, out_dir + "/dev.jsonl");
  save_examples_jsonl(corpus.test, out_dir + "/test.jsonl");
  save_question_set(questions, out_dir + "/questions.json");
  write_text(out_dir + "/config.json", resolved.dump(2) + "\n");
  std::cout << "corpus written to " << out_dir << " (train " << corpus.train.size() << ", dev "
            << corpus.dev.size() << ", test " << corpus.test.size() << ")\n";
  return 0;
}

SemanticLabel label_from_json(const json& j) {
  SemanticLabel label;
  label.id = j.at("id").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "intent") {
    label.kind = LabelKind::Intent;
  } else if (kind == "slot") {
    label.kind = LabelKind::Slot;
  } else {
    throw std::invalid_argument("label '" + label.id + "' has unknown kind '" + kind + "'");
  }
  label.name = j.value("name", label.id);
  label.description = j.value("description", "");
  return label;
}

int cmd_gen_questions(const std::string& labels_path, const std::string& out_path,
                      const std::string& prompts_dir, const std::string& descriptions_path) {
  json spec = load_json_file(labels_path, "labels file");
  json desc_overrides = json::object();
  if (!descriptions_path.empty()) {
    desc_overrides = load_json_file(descriptions_path, "descriptions file");
  }

  std::vector<SemanticLabel> labels;
  std::vector<std::vector<std::string>> examples;
  for (const auto& lj : spec.at("labels")) {
    SemanticLabel label = label_from_json(lj);
    if (desc_overrides.contains(label.id)) {
      label.description = desc_overrides.at(label.id).get<std::string>();
    }
    labels.push_back(label);
    examples.push_back(lj.value("examples", std::vector<std::string>{}));
  }

  if (!prompts_dir.empty()) {
    fs::create_directories(prompts_dir);
    int written = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
      if (examples[i].empty()) continue;
      LlmPromptPair pair = build_llm_prompts(labels[i], examples[i]);
      std::ostringstream text;
      text << "label: " << labels[i].id << "\n"
           << "kind: " << (labels[i].kind == LabelKind::Intent ? "intent" : "slot") << "\n\n"
           << "description prompt:\n"
           << pair.description_prompt << "\n\n"
           << "question template:\n"
           << pair.question_template << "\n";
      write_text(prompts_dir + "/" + labels[i].id + ".txt", text.str());
      ++written;
    }
    std::cout << written << " prompt files written to " << prompts_dir << "\n";
  }

  if (!out_path.empty()) {
    QuestionSet set;
    for (const auto& label : labels) {
      if (label.description.empty()) {
        throw std::invalid_argument("label '" + label.id +
                                    "' has no description; supply --descriptions or emit prompts "
                                    "first");
      }
      Question q = question_from_description(label);
      (label.kind == LabelKind::Intent ? set.q_intent : set.q_slot).push_back(q);
    }
    if (spec.contains("intent_slot_map")) {
      for (const auto& [intent, slots] : spec.at("intent_slot_map").items()) {
        set.intent_slot_map[intent] = slots.get<std::vector<std::string>>();
      }
    } else {
      for (const auto& q : set.q_intent) set.intent_slot_map[q.label_id] = {};
    }
    set.validate();
    save_question_set(set, out_path);
    std::cout << "question set written to " << out_path << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string corpus_dir, out_dir, questions_path, config_path;
  uint64_t seed = 0;
  int epochs = 10, batch_size = 12, negatives = 10;
  double lr = 0.002, weight_decay = 0.01;
  int prefix_length = 10;
  bool no_encoder_prefix = false;
  int pretrain_epochs = 12;
  double pretrain_lr = 0.002;
  int d_model = 64, n_heads = 4, enc_layers = 2, dec_layers = 2, d_ff = 256;
  int max_positions = 0;  // 0 = derive from the corpus
  int workers = 2;
  bool no_transcript = false, no_asr_states = false, free_running_states = false;
};

json train_args_to_json(const TrainArgs& a) {
  return json{{"command", "train"},
              {"corpus", a.corpus_dir},
              {"out", a.out_dir},
              {"questions", a.questions_path},
              {"seed", a.seed},
              {"epochs", a.epochs},
              {"batch-size", a.batch_size},
              {"negatives", a.negatives},
              {"lr", a.lr},
              {"weight-decay", a.weight_decay},
              {"prefix-length", a.prefix_length},
              {"no-encoder-prefix", a.no_encoder_prefix},
              {"pretrain-epochs", a.pretrain_epochs},
              {"pretrain-lr", a.pretrain_lr},
              {"d-model", a.d_model},
              {"n-heads", a.n_heads},
              {"enc-layers", a.enc_layers},
              {"dec-layers", a.dec_layers},
              {"d-ff", a.d_ff},
              {"max-positions", a.max_positions},
              {"workers", a.workers},
              {"no-transcript", a.no_transcript},
              {"no-asr-states", a.no_asr_states},
              {"free-running-states", a.free_running_states}};
}

void train_args_from_json(TrainArgs& a, const json& j) {
  a.corpus_dir = j.value("corpus", a.corpus_dir);
  a.out_dir = j.value("out", a.out_dir);
  a.questions_path = j.value("questions", a.questions_path);
  a.seed = j.value("seed", a.seed);
  a.epochs = j.value("epochs", a.epochs);
  a.batch_size = j.value("batch-size", a.batch_size);
  a.negatives = j.value("negatives", a.negatives);
  a.lr = j.value("lr", a.lr);
  a.weight_decay = j.value("weight-decay", a.weight_decay);
  a.prefix_length = j.value("prefix-length", a.prefix_length);
  a.no_encoder_prefix = j.value("no-encoder-prefix", a.no_encoder_prefix);
  a.pretrain_epochs = j.value("pretrain-epochs", a.pretrain_epochs);
  a.pretrain_lr = j.value("pretrain-lr", a.pretrain_lr);
  a.d_model = j.value("d-model", a.d_model);
  a.n_heads = j.value("n-heads", a.n_heads);
  a.enc_layers = j.value("enc-layers", a.enc_layers);
  a.dec_layers = j.value("dec-layers", a.dec_layers);
  a.d_ff = j.value("d-ff", a.d_ff);
  a.max_positions = j.value("max-positions", a.max_positions);
  a.workers = j.value("workers", a.workers);
  a.no_transcript = j.value("no-transcript", a.no_transcript);
  a.no_asr_states = j.value("no-asr-states", a.no_asr_states);
  a.free_running_states = j.value("free-running-states", a.free_running_states);
}

void write_epoch_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  for (const auto& e : log) {
    json j{{"epoch", e.epoch},
           {"train_loss", e.train_loss},
           {"lr_last", e.lr_last},
           {"dev_wer", e.dev.wer},
           {"dev_intent_accuracy", e.dev.intent_accuracy},
           {"dev_slu_f1", e.dev.slu_f1},
           {"dev_perfect_parsing", e.dev.perfect_parsing}};
    out << j.dump() << "\n";
  }
}

int cmd_train(TrainArgs args, const json& resolved) {
  CorpusPaths paths{args.corpus_dir};
  require_file(paths.spec(), "corpus spec");
  CorpusSpec spec = load_corpus_spec(paths.spec());
  Corpus corpus = load_corpus(paths);
  const std::string questions_path =
      args.questions_path.empty() ? paths.questions() : args.questions_path;
  require_file(questions_path, "question set");
  QuestionSet questions = load_question_set(questions_path);

  auto violations = scan_zero_shot_violations(corpus.train, spec.held_out_slots);
  if (!violations.empty()) {
    throw std::invalid_argument("training split is not zero-shot clean: " + violations.front());
  }

  Vocabulary vocab = build_vocabulary(corpus, questions);
  ModelConfig mc;
  mc.d_model = args.d_model;
  mc.n_heads = args.n_heads;
  mc.n_enc_layers = args.enc_layers;
  mc.n_dec_layers = args.dec_layers;
  mc.d_ff = args.d_ff;
  mc.d_feat = spec.d_feat;
  mc.vocab_size = vocab.size();
  mc.max_positions = args.max_positions > 0
                         ? args.max_positions
                         : required_positions(corpus, spec, questions, 8);
  Model model(mc, vocab, args.seed);

  fs::create_directories(args.out_dir);
  write_text(args.out_dir + "/config.json", resolved.dump(2) + "\n");

  TrainConfig base;
  base.batch_size = args.batch_size;
  base.n_negatives = args.negatives;
  base.weight_decay = args.weight_decay;
  base.workers = args.workers;
  base.loss.include_transcript_in_prompt = !args.no_transcript;
  base.loss.use_asr_states = !args.no_asr_states;
  base.loss.free_running_states = args.free_running_states;

  if (args.pretrain_epochs > 0) {
    TrainConfig pre = base;
    pre.epochs = args.pretrain_epochs;
    pre.base_lr = args.pretrain_lr;
    pre.weight_decay = 0.0;
    pre.seed = args.seed;
    std::vector<EpochLog> pre_log = pretrain(model, corpus, spec, questions, pre);
    write_epoch_log(args.out_dir + "/pretrain_metrics.jsonl", pre_log);
    save_checkpoint(args.out_dir + "/checkpoint_base.json", model, PrefixBanks{});
  }

  TrainConfig fine = base;
  fine.epochs = args.epochs;
  fine.base_lr = args.lr;
  fine.seed = args.seed + 1;
  fine.prefix.per_task_length = args.prefix_length;
  fine.prefix.encoder_enabled = !args.no_encoder_prefix;
  TrainResult result = train(model, corpus, spec, questions, fine, args.out_dir);

  std::cout << "training complete; best dev epoch " << result.best_epoch << "; artifacts in "
            << args.out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& corpus_dir,
             const std::string& split, const std::string& questions_path,
             const std::string& ablation, const std::string& out_dir, uint64_t seed, int workers,
             const json& resolved) {
  require_file(checkpoint_path, "checkpoint");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);

  CorpusPaths paths{corpus_dir};
  require_file(paths.spec(), "corpus spec");
  CorpusSpec spec = load_corpus_spec(paths.spec());
  require_file(paths.split(split), split + " split");
  std::vector<SLUExample> examples = load_examples_jsonl(paths.split(split));

  const std::string qpath = questions_path.empty() ? paths.questions() : questions_path;
  require_file(qpath, "question set");
  QuestionSet questions = load_question_set(qpath);

  PipelineConfig pc = ablation_config(ablation);
  pc.workers = workers;
  if (pc.is_degenerate()) {
    std::cerr << "warning: both transcript and ASR states disabled; answers will not depend on "
                 "the audio\n";
  }

  std::vector<PredictedUtterance> preds;
  std::ostringstream lines;
  for (const auto& ex : examples) {
    Tensor features = eval_features(ex, spec, seed);
    SLUPrediction pred = run_pipeline(features, ckpt.model, ckpt.banks, questions, pc);
    lines << prediction_to_json(ex.id, pred) << "\n";
    preds.push_back(pred.to_predicted());
  }
  EvalReport report = evaluate(examples, preds);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir + "/config.json", resolved.dump(2) + "\n");
    write_text(out_dir + "/predictions.jsonl", lines.str());
    write_text(out_dir + "/eval_report.json", eval_report_json(report) + "\n");
    write_text(out_dir + "/eval_report.csv", eval_report_csv(report));
  }
  std::cout << eval_report_json(report) << "\n";
  return 0;
}

int cmd_infer(const std::string& checkpoint_path, const std::string& corpus_dir,
              const std::string& text, const std::string& example_id,
              const std::string& questions_path, const std::string& ablation, uint64_t seed,
              int workers) {
  require_file(checkpoint_path, "checkpoint");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);

  CorpusPaths paths{corpus_dir};
  require_file(paths.spec(), "corpus spec");
  CorpusSpec spec = load_corpus_spec(paths.spec());

  const std::string qpath = questions_path.empty() ? paths.questions() : questions_path;
  require_file(qpath, "question set");
  QuestionSet questions = load_question_set(qpath);

  SLUExample example;
  if (!example_id.empty()) {
    bool found = false;
    for (const char* split : {"test", "dev", "train"}) {
      const std::string p = paths.split(split);
      if (!fs::exists(p)) continue;
      for (auto& ex : load_examples_jsonl(p)) {
        if (ex.id == example_id) {
          example = ex;
          found = true;
          break;
        }
      }
      if (found) break;
    }
    if (!found) {
      throw std::invalid_argument("example id '" + example_id + "' not found in " + corpus_dir);
    }
  } else if (!text.empty()) {
    example.id = "adhoc";
    example.transcript = text;
  } else {
    throw std::invalid_argument("infer needs --text or --id");
  }

  PipelineConfig pc = ablation_config(ablation);
  pc.workers = workers;
  Tensor features = eval_features(example, spec, seed);
  SLUPrediction pred = run_pipeline(features, ckpt.model, ckpt.banks, questions, pc);
  std::cout << prediction_to_json(example.id, pred) << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"zero-shot spoken language understanding over a prefix-tuned "
               "encoder-decoder transformer"};
  app.require_subcommand(1);
  int exit_code = 0;

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic zero-shot SLU corpus");
  std::string gen_out, gen_spec;
  int gen_train = 2000, gen_dev = 200, gen_test = 200;
  uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--spec", gen_spec, "corpus spec JSON (default: built-in toy spec)");
  gen->add_option("--train", gen_train, "train split size");
  gen->add_option("--dev", gen_dev, "dev split size");
  gen->add_option("--test", gen_test, "test split size");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->callback([&] {
    json resolved{{"command", "gen-corpus"}, {"out", gen_out},   {"spec", gen_spec},
                  {"train", gen_train},      {"dev", gen_dev},   {"test", gen_test},
                  {"seed", gen_seed}};
    exit_code = cmd_gen_corpus(resolve_out(gen_out), gen_spec, gen_train, gen_dev, gen_test,
                               gen_seed, resolved);
  });

  // gen-questions
  auto* genq = app.add_subcommand("gen-questions",
                                  "build questions from label descriptions and emit LLM prompts");
  std::string genq_labels, genq_out, genq_prompts, genq_desc;
  genq->add_option("--labels", genq_labels, "labels JSON file")->required();
  genq->add_option("--out", genq_out, "questions.json output path");
  genq->add_option("--prompts-dir", genq_prompts, "directory for emitted LLM prompt files");
  genq->add_option("--descriptions", genq_desc, "JSON map of label id to completed description");
  genq->callback([&] {
    exit_code = cmd_gen_questions(genq_labels, resolve_out(genq_out), resolve_out(genq_prompts),
                                  genq_desc);
  });

  // train
  auto* tr = app.add_subcommand("train", "pretrain the surrogate base model and prefix-tune it");
  TrainArgs ta;
  tr->add_option("--corpus", ta.corpus_dir, "corpus directory");
  tr->add_option("--out", ta.out_dir, "run directory");
  tr->add_option("--questions", ta.questions_path, "question set (default: corpus questions)");
  tr->add_option("--config", ta.config_path, "config file; explicit flags override it");
  tr->add_option("--seed", ta.seed, "training seed");
  tr->add_option("--epochs", ta.epochs, "prefix-tuning epochs");
  tr->add_option("--batch-size", ta.batch_size, "utterances per optimizer step");
  tr->add_option("--negatives", ta.negatives, "negative questions per utterance");
  tr->add_option("--lr", ta.lr, "prefix-tuning base learning rate");
  tr->add_option("--weight-decay", ta.weight_decay, "AdamW weight decay");
  tr->add_option("--prefix-length", ta.prefix_length, "prefix length per task");
  tr->add_flag("--no-encoder-prefix", ta.no_encoder_prefix, "disable encoder prefix vectors");
  tr->add_option("--pretrain-epochs", ta.pretrain_epochs, "base-model pretraining epochs");
  tr->add_option("--pretrain-lr", ta.pretrain_lr, "base-model pretraining learning rate");
  tr->add_option("--d-model", ta.d_model, "model width");
  tr->add_option("--n-heads", ta.n_heads, "attention heads");
  tr->add_option("--enc-layers", ta.enc_layers, "encoder layers");
  tr->add_option("--dec-layers", ta.dec_layers, "decoder layers");
  tr->add_option("--d-ff", ta.d_ff, "feed-forward width");
  tr->add_option("--max-positions", ta.max_positions, "max positions (0 = derive)");
  tr->add_option("--workers", ta.workers, "parallel workers");
  tr->add_flag("--no-transcript", ta.no_transcript, "train without transcript in the prompt");
  tr->add_flag("--no-asr-states", ta.no_asr_states, "train without cached ASR states");
  tr->add_flag("--free-running-states", ta.free_running_states,
               "cache states from a free-running ASR pass during training");
  tr->callback([&] {
    json resolved = train_args_to_json(ta);
    layer_config(*tr, resolved, ta.config_path);
    train_args_from_json(ta, resolved);
    ta.out_dir = resolve_out(ta.out_dir);
    resolved["out"] = ta.out_dir;
    if (ta.corpus_dir.empty() || ta.out_dir.empty()) {
      throw std::invalid_argument("train requires --corpus and --out (directly or via --config)");
    }
    exit_code = cmd_train(ta, resolved);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "run the pipeline over a split and score it");
  std::string ev_ckpt, ev_corpus, ev_split = "test", ev_questions, ev_ablation = "none", ev_out;
  uint64_t ev_seed = 0;
  int ev_workers = 2;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--corpus", ev_corpus, "corpus directory")->required();
  ev->add_option("--split", ev_split, "split name (train, dev, test)");
  ev->add_option("--questions", ev_questions, "question set (default: corpus questions)");
  ev->add_option("--ablation", ev_ablation, "none | no-transcript | no-asr-states");
  ev->add_option("--out", ev_out, "output directory for report and predictions");
  ev->add_option("--seed", ev_seed, "featurization seed");
  ev->add_option("--workers", ev_workers, "parallel workers");
  ev->callback([&] {
    json resolved{{"command", "eval"},        {"checkpoint", ev_ckpt},
                  {"corpus", ev_corpus},      {"split", ev_split},
                  {"questions", ev_questions}, {"ablation", ev_ablation},
                  {"out", ev_out},            {"seed", ev_seed},
                  {"workers", ev_workers},
                  {"use_asr_states", ev_ablation != "no-asr-states"},
                  {"include_transcript_in_prompt", ev_ablation != "no-transcript"}};
    exit_code = cmd_eval(ev_ckpt, ev_corpus, ev_split, ev_questions, ev_ablation,
                         resolve_out(ev_out), ev_seed, ev_workers, resolved);
  });

  // infer
  auto* in = app.add_subcommand("infer", "run one utterance through the pipeline");
  std::string in_ckpt, in_corpus, in_text, in_id, in_questions, in_ablation = "none";
  uint64_t in_seed = 0;
  int in_workers = 2;
  in->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
  in->add_option("--corpus", in_corpus, "corpus directory (for featurizer settings)")->required();
  in->add_option("--text", in_text, "utterance text to featurize");
  in->add_option("--id", in_id, "corpus example id");
  in->add_option("--questions", in_questions, "question set (default: corpus questions)");
  in->add_option("--ablation", in_ablation, "none | no-transcript | no-asr-states");
  in->add_option("--seed", in_seed, "featurization seed");
  in->add_option("--workers", in_workers, "parallel workers");
  in->callback([&] {
    exit_code = cmd_infer(in_ckpt, in_corpus, in_text, in_id, in_questions, in_ablation, in_seed,
                          in_workers);
  });

  // inspect-checkpoint
  auto* insp = app.add_subcommand("inspect-checkpoint", "print a checkpoint summary");
  std::string insp_ckpt;
  insp->add_option("--checkpoint", insp_ckpt, "model checkpoint")->required();
  insp->callback([&] {
    require_file(insp_ckpt, "checkpoint");
    std::cout << checkpoint_summary(insp_ckpt);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", e.what());
    return kExitUsage;
  } catch (const MissingFileError& e) {
    fail_line("missing_file", e.what());
    return kExitMissingFile;
  } catch (const std::invalid_argument& e) {
    fail_line("invalid_config", e.what());
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    fail_line("runtime", e.what());
    return 1;
  }
  return exit_code;
}

}  // namespace zsslu::cli
