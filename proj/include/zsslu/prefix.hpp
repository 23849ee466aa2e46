#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "zsslu/tensor.hpp"

namespace zsslu {

class Rng;
class Model;

enum class PrefixSite { EncoderSelf, DecoderSelf };

// Trainable per-layer key/value prefix vectors for one attention site. These
// are the only trainable parameters of the whole system: a bank is a plain
// embedding table per layer, concatenated in front of K and V at attention
// time. The decoder bank is shared across the ASR, intent, and slot stages.
struct PrefixBank {
  struct LayerPair {
    Tensor k;  // [length x d_model]
    Tensor v;  // [length x d_model]
  };

  PrefixSite site = PrefixSite::DecoderSelf;
  int length = 0;
  std::vector<LayerPair> layers;

  int n_layers() const { return static_cast<int>(layers.size()); }
  int64_t parameter_count() const;
  void set_requires_grad(bool on);
};

struct PrefixBanks {
  std::optional<PrefixBank> encoder;
  std::optional<PrefixBank> decoder;

  const PrefixBank* encoder_or_null() const { return encoder ? &*encoder : nullptr; }
  const PrefixBank* decoder_or_null() const { return decoder ? &*decoder : nullptr; }
};

// Paper-style sizing: one block of `per_task_length` vectors per task. The
// encoder site serves the ASR task only; the decoder site is shared by all
// tasks, so its length is per_task_length * n_tasks.
struct PrefixConfig {
  int per_task_length = 10;
  int n_tasks = 3;  // ASR, intent, slot
  bool encoder_enabled = true;
  double init_scale = 0.02;

  int encoder_length() const { return encoder_enabled ? per_task_length : 0; }
  int decoder_length() const { return per_task_length * n_tasks; }
};

// Fresh bank with entries drawn i.i.d. normal(0, init_scale^2).
PrefixBank new_bank(PrefixSite site, int n_layers, int length, int d_model, double init_scale,
                    Rng& rng);

PrefixBanks new_banks(const PrefixConfig& config, int n_enc_layers, int n_dec_layers, int d_model,
                      Rng& rng);

// K' = concat(p_K, K), V' = concat(p_V, V) along the sequence axis. A zero
// length bank passes K/V through untouched. Callers extend attention masks so
// every query may attend to all prefix rows.
std::pair<Tensor, Tensor> inject(const Tensor& k, const Tensor& v, const PrefixBank& bank,
                                 int layer, Tape* tape = nullptr);

// Exactly the prefix bank tensors; base model parameters are excluded.
std::vector<Tensor*> trainable_parameters(const Model& model, PrefixBanks& banks);

}  // namespace zsslu
