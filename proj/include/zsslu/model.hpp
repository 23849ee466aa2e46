#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "zsslu/prefix.hpp"
#include "zsslu/tensor.hpp"
#include "zsslu/vocab.hpp"

namespace zsslu {

class Rng;

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 256;
  int vocab_size = 0;    // set from the vocabulary
  int max_positions = 96;
  int d_feat = 16;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

struct EncoderOutput {
  Tensor states;  // [T_enc x d_model]
};

// Per-layer self-attention K/V rows for every decoded position. Rows are
// projected (post W_k/W_v) and exclude prefix vectors, which are re-injected
// at attention time. Tensors are immutable, so copying the struct gives an
// independent snapshot that later steps can extend privately.
struct DecoderCache {
  struct LayerKV {
    Tensor k;  // [T_so_far x d_model]
    Tensor v;
  };
  std::vector<LayerKV> layers;
  int length = 0;

  static DecoderCache empty(const ModelConfig& config);
};

struct GreedyResult {
  std::vector<int> tokens;          // emitted tokens, EOT excluded
  std::vector<double> probs;        // model probability of each emitted token
  double log_prob = 0.0;            // sum over all decisions, incl. the EOT stop
  bool truncated = false;           // hit max_new_tokens before EOT
};

// Single-head scaled dot-product attention. Masked positions receive -inf
// before the softmax; a fully-masked query row is an error.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMat& mask,
                 Tape* tape = nullptr);

struct AttnParams {
  Tensor wq, wk, wv, wo;  // [d_model x d_model] each
};
struct FfParams {
  Tensor w1, b1, w2, b2;
};
struct LnParams {
  Tensor g, b;
};
struct EncLayerParams {
  LnParams ln1;
  AttnParams attn;
  LnParams ln2;
  FfParams ff;
};
struct DecLayerParams {
  LnParams ln1;
  AttnParams self_attn;
  LnParams ln2;
  AttnParams cross_attn;
  LnParams ln3;
  FfParams ff;
};

// Small encoder-decoder transformer over pseudo-speech features: pre-norm
// residual blocks, GELU feed-forward, learned absolute positions, untied
// output projection. Decoder prefixes occupy attention-key slots but no
// positional indices. Parameters are read-only during inference and may be
// shared across threads; each decode owns its cache exclusively.
class Model {
 public:
  Model(ModelConfig config, Vocabulary vocab, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }

  EncoderOutput encode(const Tensor& features, const PrefixBank* encoder_prefixes,
                       Tape* tape = nullptr) const;

  // Runs the decoder over `new_tokens`, attending causally over
  // (decoder prefixes ++ cached rows ++ new rows) and extending the cache by
  // one row per token at every layer. With use_cross_attention=false the
  // cross-attention sublayer is skipped (residual passes through) and the
  // encoder output is ignored entirely. An empty token list is a no-op.
  Tensor decode_step(const std::vector<int>& new_tokens, DecoderCache& cache,
                     const EncoderOutput* enc_out, const PrefixBank* decoder_prefixes,
                     bool use_cross_attention, int position_offset, Tape* tape = nullptr) const;

  // Feeds `input_tokens`, then emits argmax tokens until EOT or max_new_tokens.
  // The cache ends up covering input_tokens plus every emitted token. A tape
  // makes the cached states differentiable (token choices stay discrete).
  GreedyResult greedy_decode(const std::vector<int>& input_tokens, DecoderCache& cache,
                             const EncoderOutput* enc_out, const PrefixBank* decoder_prefixes,
                             bool use_cross_attention, int max_new_tokens,
                             Tape* tape = nullptr) const;

  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
  int64_t parameter_count() const;
  // FNV-1a over the raw bytes of every parameter, in named order.
  uint64_t checksum() const;

 private:
  Tensor multihead(const AttnParams& p, const Tensor& q_src, const Tensor& k_all,
                   const Tensor& v_all, const BoolMat& mask, Tape* tape) const;

  ModelConfig config_;
  Vocabulary vocab_;

  Tensor feat_proj_w_, feat_proj_b_;
  Tensor enc_pos_;
  std::vector<EncLayerParams> enc_layers_;
  LnParams enc_ln_f_;

  Tensor tok_emb_;
  Tensor dec_pos_;
  std::vector<DecLayerParams> dec_layers_;
  LnParams dec_ln_f_;
  Tensor out_w_;  // [d_model x vocab]

  friend struct ModelWeightAccess;
};

// Test/tooling backdoor for constructing models with hand-set weights.
struct ModelWeightAccess {
  Model& model;
  Tensor& tok_emb() { return model.tok_emb_; }
  Tensor& dec_pos() { return model.dec_pos_; }
  Tensor& out_w() { return model.out_w_; }
  std::vector<DecLayerParams>& dec_layers() { return model.dec_layers_; }
  std::vector<EncLayerParams>& enc_layers() { return model.enc_layers_; }
  LnParams& dec_ln_f() { return model.dec_ln_f_; }
};

}  // namespace zsslu
