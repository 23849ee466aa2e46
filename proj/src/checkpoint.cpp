#include "zsslu/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace zsslu {

namespace {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape}, {"data", *t.data}};
}

Tensor tensor_from_json(const json& j) {
  Shape shape = j.at("shape").get<Shape>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(data));
}

json config_to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},       {"n_heads", c.n_heads},
              {"n_enc_layers", c.n_enc_layers}, {"n_dec_layers", c.n_dec_layers},
              {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size},
              {"max_positions", c.max_positions}, {"d_feat", c.d_feat}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_enc_layers = j.at("n_enc_layers").get<int>();
  c.n_dec_layers = j.at("n_dec_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.d_feat = j.at("d_feat").get<int>();
  return c;
}

json bank_to_json(const PrefixBank& bank) {
  json layers = json::array();
  for (const auto& layer : bank.layers) {
    layers.push_back(json{{"k", tensor_to_json(layer.k)}, {"v", tensor_to_json(layer.v)}});
  }
  return json{{"site", bank.site == PrefixSite::EncoderSelf ? "encoder_self" : "decoder_self"},
              {"length", bank.length},
              {"layers", layers}};
}

PrefixBank bank_from_json(const json& j) {
  PrefixBank bank;
  bank.site = j.at("site").get<std::string>() == "encoder_self" ? PrefixSite::EncoderSelf
                                                                : PrefixSite::DecoderSelf;
  bank.length = j.at("length").get<int>();
  for (const auto& layer : j.at("layers")) {
    bank.layers.push_back(
        {tensor_from_json(layer.at("k")), tensor_from_json(layer.at("v"))});
  }
  return bank;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const PrefixBanks& banks) {
  json params = json::object();
  for (const auto& [name, t] : model.named_parameters()) {
    params[name] = tensor_to_json(*t);
  }
  json j{{"format_version", kCheckpointFormatVersion},
         {"config", config_to_json(model.config())},
         {"vocab", model.vocab().tokens()},
         {"params", params}};
  json banks_json = json::object();
  if (banks.encoder) banks_json["encoder"] = bank_to_json(*banks.encoder);
  if (banks.decoder) banks_json["decoder"] = bank_to_json(*banks.decoder);
  j["prefix_banks"] = banks_json;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << j.dump();
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_checkpoint: " + path + " is not valid JSON: " + e.what());
  }
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("load_checkpoint: unsupported format version " +
                             std::to_string(version));
  }
  ModelConfig config = config_from_json(j.at("config"));
  Vocabulary vocab = Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>());

  Checkpoint ckpt{Model(config, std::move(vocab), 0), PrefixBanks{}};
  const json& params = j.at("params");
  for (auto& [name, t] : ckpt.model.named_parameters()) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw std::runtime_error("load_checkpoint: parameter '" + name + "' missing from " + path);
    }
    Tensor loaded = tensor_from_json(*it);
    if (loaded.shape != t->shape) {
      throw std::runtime_error("load_checkpoint: parameter '" + name + "' has shape " +
                               format_shape(loaded.shape) + ", expected " +
                               format_shape(t->shape));
    }
    *t = std::move(loaded);
  }
  const json& banks = j.at("prefix_banks");
  if (banks.contains("encoder")) ckpt.banks.encoder = bank_from_json(banks.at("encoder"));
  if (banks.contains("decoder")) ckpt.banks.decoder = bank_from_json(banks.at("decoder"));
  return ckpt;
}

std::string checkpoint_summary(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  const ModelConfig& c = ckpt.model.config();
  std::ostringstream out;
  out << "format_version: " << kCheckpointFormatVersion << "\n"
      << "config: d_model=" << c.d_model << " n_heads=" << c.n_heads
      << " enc_layers=" << c.n_enc_layers << " dec_layers=" << c.n_dec_layers
      << " d_ff=" << c.d_ff << " d_feat=" << c.d_feat << " max_positions=" << c.max_positions
      << "\n"
      << "vocab: " << ckpt.model.vocab().size() << " tokens\n"
      << "base parameters: " << ckpt.model.parameter_count() << "\n"
      << "base checksum: " << ckpt.model.checksum() << "\n";
  int64_t prefix_params = 0;
  if (ckpt.banks.encoder) {
    prefix_params += ckpt.banks.encoder->parameter_count();
    out << "encoder prefix: length " << ckpt.banks.encoder->length << " x "
        << ckpt.banks.encoder->n_layers() << " layers\n";
  }
  if (ckpt.banks.decoder) {
    prefix_params += ckpt.banks.decoder->parameter_count();
    out << "decoder prefix: length " << ckpt.banks.decoder->length << " x "
        << ckpt.banks.decoder->n_layers() << " layers\n";
  }
  out << "prefix parameters: " << prefix_params << "\n";
  return out.str();
}

}  // namespace zsslu
