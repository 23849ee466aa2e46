#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "zsslu/checkpoint.hpp"
#include "zsslu/rng.hpp"

using namespace zsslu;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  Vocabulary vocab = Vocabulary::build({"set the color to red yes no what is ?"});
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 2;
  cfg.d_ff = 24;
  cfg.d_feat = 4;
  cfg.max_positions = 24;
  cfg.vocab_size = vocab.size();
  Model model(cfg, vocab, 123);
  Rng rng(5);
  PrefixConfig pc;
  pc.per_task_length = 3;
  PrefixBanks banks = new_banks(pc, 1, 2, 16, rng);

  std::string path = temp_path("zsslu_ckpt.json");
  save_checkpoint(path, model, banks);
  Checkpoint loaded = load_checkpoint(path);

  CHECK(loaded.model.checksum() == model.checksum());
  CHECK(loaded.model.vocab().tokens() == vocab.tokens());
  CHECK(loaded.model.config().d_model == 16);
  REQUIRE(loaded.banks.encoder.has_value());
  REQUIRE(loaded.banks.decoder.has_value());
  CHECK(loaded.banks.decoder->length == 9);
  for (int l = 0; l < 2; ++l) {
    CHECK(*loaded.banks.decoder->layers[l].k.data == *banks.decoder->layers[l].k.data);
    CHECK(*loaded.banks.decoder->layers[l].v.data == *banks.decoder->layers[l].v.data);
  }

  // Saving the loaded checkpoint again produces identical bytes.
  std::string path2 = temp_path("zsslu_ckpt2.json");
  save_checkpoint(path2, loaded.model, loaded.banks);
  CHECK(read_file(path) == read_file(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint errors") {
  CHECK_THROWS_AS(load_checkpoint(temp_path("zsslu_ckpt_missing.json")), std::runtime_error);

  std::string path = temp_path("zsslu_ckpt_bad.json");
  {
    std::ofstream out(path);
    out << "{\"format_version\": 99}";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  {
    std::ofstream out(path);
    out << "not json";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint summary mentions structure and counts") {
  Vocabulary vocab = Vocabulary::build({"hello world"});
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.d_ff = 16;
  cfg.d_feat = 4;
  cfg.max_positions = 16;
  cfg.vocab_size = vocab.size();
  Model model(cfg, vocab, 1);
  PrefixBanks banks;
  Rng rng(2);
  banks.decoder = new_bank(PrefixSite::DecoderSelf, 1, 2, 8, 0.02, rng);

  std::string path = temp_path("zsslu_ckpt_summary.json");
  save_checkpoint(path, model, banks);
  std::string summary = checkpoint_summary(path);
  CHECK(summary.find("d_model=8") != std::string::npos);
  CHECK(summary.find("decoder prefix: length 2") != std::string::npos);
  CHECK(summary.find("prefix parameters: 32") != std::string::npos);
  std::remove(path.c_str());
}
