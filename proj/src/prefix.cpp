#include "zsslu/prefix.hpp"

#include <stdexcept>

#include "zsslu/model.hpp"
#include "zsslu/rng.hpp"

namespace zsslu {

int64_t PrefixBank::parameter_count() const {
  int64_t n = 0;
  for (const auto& layer : layers) n += layer.k.numel() + layer.v.numel();
  return n;
}

void PrefixBank::set_requires_grad(bool on) {
  for (auto& layer : layers) {
    layer.k.requires_grad = on;
    layer.v.requires_grad = on;
  }
}

PrefixBank new_bank(PrefixSite site, int n_layers, int length, int d_model, double init_scale,
                    Rng& rng) {
  if (length < 0 || n_layers < 0) {
    throw std::invalid_argument("new_bank: lengths must be nonnegative");
  }
  PrefixBank bank;
  bank.site = site;
  bank.length = length;
  bank.layers.reserve(static_cast<size_t>(n_layers));
  for (int l = 0; l < n_layers; ++l) {
    PrefixBank::LayerPair p;
    p.k = Tensor::randn({length, d_model}, init_scale, rng);
    p.v = Tensor::randn({length, d_model}, init_scale, rng);
    bank.layers.push_back(std::move(p));
  }
  return bank;
}

PrefixBanks new_banks(const PrefixConfig& config, int n_enc_layers, int n_dec_layers, int d_model,
                      Rng& rng) {
  PrefixBanks banks;
  if (config.encoder_enabled && config.encoder_length() > 0) {
    banks.encoder = new_bank(PrefixSite::EncoderSelf, n_enc_layers, config.encoder_length(),
                             d_model, config.init_scale, rng);
  }
  banks.decoder = new_bank(PrefixSite::DecoderSelf, n_dec_layers, config.decoder_length(), d_model,
                           config.init_scale, rng);
  return banks;
}

std::pair<Tensor, Tensor> inject(const Tensor& k, const Tensor& v, const PrefixBank& bank,
                                 int layer, Tape* tape) {
  if (bank.length == 0) return {k, v};
  if (layer < 0 || layer >= bank.n_layers()) {
    throw std::out_of_range("inject: layer " + std::to_string(layer) + " outside bank of " +
                            std::to_string(bank.n_layers()) + " layers");
  }
  const auto& p = bank.layers[static_cast<size_t>(layer)];
  if (k.rank() != 2 || k.shape[1] != p.k.shape[1]) {
    throw std::invalid_argument("inject: key width " + format_shape(k.shape) +
                                " does not match prefix width " + format_shape(p.k.shape));
  }
  if (v.rank() != 2 || v.shape[1] != p.v.shape[1]) {
    throw std::invalid_argument("inject: value width " + format_shape(v.shape) +
                                " does not match prefix width " + format_shape(p.v.shape));
  }
  return {concat({p.k, k}, 0, tape), concat({p.v, v}, 0, tape)};
}

std::vector<Tensor*> trainable_parameters(const Model&, PrefixBanks& banks) {
  std::vector<Tensor*> params;
  for (PrefixBank* bank : {banks.encoder ? &*banks.encoder : nullptr,
                           banks.decoder ? &*banks.decoder : nullptr}) {
    if (!bank) continue;
    for (auto& layer : bank->layers) {
      params.push_back(&layer.k);
      params.push_back(&layer.v);
    }
  }
  return params;
}

}  // namespace zsslu
