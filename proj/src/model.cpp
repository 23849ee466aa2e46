#include "zsslu/model.hpp"

#include <cmath>
#include <stdexcept>

#include "zsslu/rng.hpp"

namespace zsslu {

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                " must be a positive multiple of n_heads " +
                                std::to_string(n_heads));
  }
  if (n_enc_layers < 1 || n_dec_layers < 1 || d_ff < 1 || d_feat < 1) {
    throw std::invalid_argument("ModelConfig: layer and width counts must be positive");
  }
  if (vocab_size < 4) {
    throw std::invalid_argument("ModelConfig: vocab_size must cover the special tokens");
  }
  if (max_positions < 1) {
    throw std::invalid_argument("ModelConfig: max_positions must be positive");
  }
}

DecoderCache DecoderCache::empty(const ModelConfig& config) {
  DecoderCache cache;
  cache.layers.resize(static_cast<size_t>(config.n_dec_layers));
  for (auto& layer : cache.layers) {
    layer.k = Tensor({0, config.d_model});
    layer.v = Tensor({0, config.d_model});
  }
  return cache;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMat& mask,
                 Tape* tape) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.shape[1] != k.shape[1] ||
      k.shape[0] != v.shape[0]) {
    throw std::invalid_argument("attention: inconsistent shapes q=" + format_shape(q.shape) +
                                " k=" + format_shape(k.shape) + " v=" + format_shape(v.shape));
  }
  if (mask.rows != q.shape[0] || mask.cols != k.shape[0]) {
    throw std::invalid_argument("attention: mask [" + std::to_string(mask.rows) + "x" +
                                std::to_string(mask.cols) + "] does not cover queries x keys");
  }
  Tensor scores = scale(matmul(q, transpose(k, tape), tape),
                        1.0 / std::sqrt(static_cast<double>(q.shape[1])), tape);
  Tensor weights = softmax(apply_mask(scores, mask, tape), 1, tape);
  return matmul(weights, v, tape);
}

namespace {

Tensor xavier(Shape shape, Rng& rng) {
  double fan = static_cast<double>(shape[0] + shape[shape.size() - 1]);
  return Tensor::randn(std::move(shape), std::sqrt(2.0 / fan), rng);
}

LnParams make_ln(int d) {
  return LnParams{Tensor({d}, 1.0), Tensor({d}, 0.0)};
}

AttnParams make_attn(int d, Rng& rng) {
  return AttnParams{xavier({d, d}, rng), xavier({d, d}, rng), xavier({d, d}, rng),
                    xavier({d, d}, rng)};
}

FfParams make_ff(int d, int d_ff, Rng& rng) {
  return FfParams{xavier({d, d_ff}, rng), Tensor({d_ff}, 0.0), xavier({d_ff, d}, rng),
                  Tensor({d}, 0.0)};
}

}  // namespace

Model::Model(ModelConfig config, Vocabulary vocab, uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
  if (config_.vocab_size != vocab_.size()) {
    throw std::invalid_argument("Model: config vocab_size " + std::to_string(config_.vocab_size) +
                                " != vocabulary size " + std::to_string(vocab_.size()));
  }
  config_.validate();
  Rng rng(seed);
  const int d = config_.d_model;

  feat_proj_w_ = xavier({config_.d_feat, d}, rng);
  feat_proj_b_ = Tensor({d}, 0.0);
  enc_pos_ = Tensor::randn({config_.max_positions, d}, 0.05, rng);
  for (int l = 0; l < config_.n_enc_layers; ++l) {
    enc_layers_.push_back(
        EncLayerParams{make_ln(d), make_attn(d, rng), make_ln(d), make_ff(d, config_.d_ff, rng)});
  }
  enc_ln_f_ = make_ln(d);

  tok_emb_ = Tensor::randn({config_.vocab_size, d}, 0.05, rng);
  dec_pos_ = Tensor::randn({config_.max_positions, d}, 0.05, rng);
  for (int l = 0; l < config_.n_dec_layers; ++l) {
    dec_layers_.push_back(DecLayerParams{make_ln(d), make_attn(d, rng), make_ln(d),
                                         make_attn(d, rng), make_ln(d),
                                         make_ff(d, config_.d_ff, rng)});
  }
  dec_ln_f_ = make_ln(d);
  out_w_ = xavier({d, config_.vocab_size}, rng);
}

Tensor Model::multihead(const AttnParams& p, const Tensor& q_src, const Tensor& k_all,
                        const Tensor& v_all, const BoolMat& mask, Tape* tape) const {
  const int dh = config_.head_dim();
  Tensor q = matmul(q_src, p.wq, tape);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(config_.n_heads));
  for (int h = 0; h < config_.n_heads; ++h) {
    Tensor qh = slice(q, 1, h * dh, (h + 1) * dh, tape);
    Tensor kh = slice(k_all, 1, h * dh, (h + 1) * dh, tape);
    Tensor vh = slice(v_all, 1, h * dh, (h + 1) * dh, tape);
    heads.push_back(attention(qh, kh, vh, mask, tape));
  }
  return matmul(concat(heads, 1, tape), p.wo, tape);
}

namespace {

Tensor ff_block(const FfParams& ff, const Tensor& x, Tape* tape) {
  Tensor h = gelu(add_bias(matmul(x, ff.w1, tape), ff.b1, tape), tape);
  return add_bias(matmul(h, ff.w2, tape), ff.b2, tape);
}

}  // namespace

EncoderOutput Model::encode(const Tensor& features, const PrefixBank* encoder_prefixes,
                            Tape* tape) const {
  if (features.rank() != 2 || features.shape[1] != config_.d_feat) {
    throw std::invalid_argument("encode: features " + format_shape(features.shape) +
                                " do not match d_feat " + std::to_string(config_.d_feat));
  }
  const int t = features.shape[0];
  if (t > config_.max_positions) {
    throw std::invalid_argument("encode: " + std::to_string(t) + " frames exceed max_positions " +
                                std::to_string(config_.max_positions));
  }
  if (encoder_prefixes && encoder_prefixes->length > 0 &&
      encoder_prefixes->n_layers() != config_.n_enc_layers) {
    throw std::invalid_argument("encode: prefix bank has " +
                                std::to_string(encoder_prefixes->n_layers()) + " layers, model has " +
                                std::to_string(config_.n_enc_layers));
  }
  const int lp = encoder_prefixes ? encoder_prefixes->length : 0;

  Tensor x = add(add_bias(matmul(features, feat_proj_w_, tape), feat_proj_b_, tape),
                 slice(enc_pos_, 0, 0, t, tape), tape);
  for (int l = 0; l < config_.n_enc_layers; ++l) {
    const auto& layer = enc_layers_[static_cast<size_t>(l)];
    Tensor xn = layer_norm(x, layer.ln1.g, layer.ln1.b, 1e-5, tape);
    Tensor k = matmul(xn, layer.attn.wk, tape);
    Tensor v = matmul(xn, layer.attn.wv, tape);
    if (lp > 0) {
      auto kv = inject(k, v, *encoder_prefixes, l, tape);
      k = kv.first;
      v = kv.second;
    }
    Tensor att = multihead(layer.attn, xn, k, v, BoolMat::all_true(t, lp + t), tape);
    x = add(x, att, tape);
    Tensor xn2 = layer_norm(x, layer.ln2.g, layer.ln2.b, 1e-5, tape);
    x = add(x, ff_block(layer.ff, xn2, tape), tape);
  }
  return EncoderOutput{layer_norm(x, enc_ln_f_.g, enc_ln_f_.b, 1e-5, tape)};
}

Tensor Model::decode_step(const std::vector<int>& new_tokens, DecoderCache& cache,
                          const EncoderOutput* enc_out, const PrefixBank* decoder_prefixes,
                          bool use_cross_attention, int position_offset, Tape* tape) const {
  if (cache.layers.size() != static_cast<size_t>(config_.n_dec_layers)) {
    throw std::invalid_argument("decode_step: cache has " + std::to_string(cache.layers.size()) +
                                " layers, model has " + std::to_string(config_.n_dec_layers));
  }
  const int n_new = static_cast<int>(new_tokens.size());
  if (n_new == 0) return Tensor({0, config_.vocab_size});
  if (position_offset < 0 || position_offset + n_new > config_.max_positions) {
    throw std::invalid_argument("decode_step: positions [" + std::to_string(position_offset) +
                                ", " + std::to_string(position_offset + n_new) +
                                ") exceed max_positions " + std::to_string(config_.max_positions));
  }
  if (use_cross_attention && !enc_out) {
    throw std::invalid_argument("decode_step: cross-attention requested without encoder output");
  }
  if (decoder_prefixes && decoder_prefixes->length > 0 &&
      decoder_prefixes->n_layers() != config_.n_dec_layers) {
    throw std::invalid_argument("decode_step: prefix bank has " +
                                std::to_string(decoder_prefixes->n_layers()) +
                                " layers, model has " + std::to_string(config_.n_dec_layers));
  }
  const int lp = decoder_prefixes ? decoder_prefixes->length : 0;
  const int t_prev = cache.length;

  Tensor x = add(embedding_lookup(tok_emb_, new_tokens, tape),
                 slice(dec_pos_, 0, position_offset, position_offset + n_new, tape), tape);

  // Causal mask over (prefix ++ cached ++ new): prefixes and cached rows are
  // always visible; new row i sees new rows <= i.
  BoolMat mask(n_new, lp + t_prev + n_new, false);
  for (int r = 0; r < n_new; ++r) {
    for (int c = 0; c < lp + t_prev + r + 1; ++c) mask.at(r, c) = 1;
  }

  for (int l = 0; l < config_.n_dec_layers; ++l) {
    const auto& layer = dec_layers_[static_cast<size_t>(l)];
    auto& kv = cache.layers[static_cast<size_t>(l)];

    Tensor xn = layer_norm(x, layer.ln1.g, layer.ln1.b, 1e-5, tape);
    Tensor k_new = matmul(xn, layer.self_attn.wk, tape);
    Tensor v_new = matmul(xn, layer.self_attn.wv, tape);
    Tensor k_tokens = t_prev > 0 ? concat({kv.k, k_new}, 0, tape) : k_new;
    Tensor v_tokens = t_prev > 0 ? concat({kv.v, v_new}, 0, tape) : v_new;
    kv.k = k_tokens;
    kv.v = v_tokens;

    Tensor k_att = k_tokens;
    Tensor v_att = v_tokens;
    if (lp > 0) {
      auto injected = inject(k_tokens, v_tokens, *decoder_prefixes, l, tape);
      k_att = injected.first;
      v_att = injected.second;
    }
    x = add(x, multihead(layer.self_attn, xn, k_att, v_att, mask, tape), tape);

    if (use_cross_attention) {
      Tensor xn2 = layer_norm(x, layer.ln2.g, layer.ln2.b, 1e-5, tape);
      Tensor ek = matmul(enc_out->states, layer.cross_attn.wk, tape);
      Tensor ev = matmul(enc_out->states, layer.cross_attn.wv, tape);
      BoolMat cross_mask = BoolMat::all_true(n_new, enc_out->states.shape[0]);
      x = add(x, multihead(layer.cross_attn, xn2, ek, ev, cross_mask, tape), tape);
    }

    Tensor xn3 = layer_norm(x, layer.ln3.g, layer.ln3.b, 1e-5, tape);
    x = add(x, ff_block(layer.ff, xn3, tape), tape);
  }
  cache.length = t_prev + n_new;

  Tensor h = layer_norm(x, dec_ln_f_.g, dec_ln_f_.b, 1e-5, tape);
  return matmul(h, out_w_, tape);
}

GreedyResult Model::greedy_decode(const std::vector<int>& input_tokens, DecoderCache& cache,
                                  const EncoderOutput* enc_out,
                                  const PrefixBank* decoder_prefixes, bool use_cross_attention,
                                  int max_new_tokens, Tape* tape) const {
  if (input_tokens.empty()) {
    throw std::invalid_argument("greedy_decode: at least one input token required");
  }
  GreedyResult result;
  Tensor logits = decode_step(input_tokens, cache, enc_out, decoder_prefixes, use_cross_attention,
                              cache.length, tape);

  while (true) {
    // Full-vocabulary softmax of the last row; argmax ties break to the
    // lowest token id.
    const int v = config_.vocab_size;
    const double* row = logits.data->data() + static_cast<int64_t>(logits.shape[0] - 1) * v;
    int best = 0;
    for (int j = 1; j < v; ++j) {
      if (row[j] > row[best]) best = j;
    }
    double mx = row[best];
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    double p_best = 1.0 / z;  // exp(0) / z
    result.log_prob += std::log(p_best);

    if (best == vocab_.eot()) break;
    result.tokens.push_back(best);
    result.probs.push_back(p_best);

    const bool at_limit = static_cast<int>(result.tokens.size()) >= max_new_tokens;
    const bool out_of_room = cache.length >= config_.max_positions;
    if (at_limit || out_of_room) {
      result.truncated = true;
      // Keep the cache covering every emitted token.
      if (cache.length < config_.max_positions) {
        decode_step({best}, cache, enc_out, decoder_prefixes, use_cross_attention, cache.length,
                    tape);
      }
      break;
    }
    logits = decode_step({best}, cache, enc_out, decoder_prefixes, use_cross_attention,
                         cache.length, tape);
  }
  return result;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add_ln = [&](const std::string& name, LnParams& ln) {
    out.emplace_back(name + ".g", &ln.g);
    out.emplace_back(name + ".b", &ln.b);
  };
  auto add_attn = [&](const std::string& name, AttnParams& a) {
    out.emplace_back(name + ".wq", &a.wq);
    out.emplace_back(name + ".wk", &a.wk);
    out.emplace_back(name + ".wv", &a.wv);
    out.emplace_back(name + ".wo", &a.wo);
  };
  auto add_ff = [&](const std::string& name, FfParams& f) {
    out.emplace_back(name + ".w1", &f.w1);
    out.emplace_back(name + ".b1", &f.b1);
    out.emplace_back(name + ".w2", &f.w2);
    out.emplace_back(name + ".b2", &f.b2);
  };

  out.emplace_back("enc.feat_proj.w", &feat_proj_w_);
  out.emplace_back("enc.feat_proj.b", &feat_proj_b_);
  out.emplace_back("enc.pos", &enc_pos_);
  for (size_t l = 0; l < enc_layers_.size(); ++l) {
    std::string p = "enc.l" + std::to_string(l);
    add_ln(p + ".ln1", enc_layers_[l].ln1);
    add_attn(p + ".attn", enc_layers_[l].attn);
    add_ln(p + ".ln2", enc_layers_[l].ln2);
    add_ff(p + ".ff", enc_layers_[l].ff);
  }
  add_ln("enc.ln_f", enc_ln_f_);

  out.emplace_back("dec.tok_emb", &tok_emb_);
  out.emplace_back("dec.pos", &dec_pos_);
  for (size_t l = 0; l < dec_layers_.size(); ++l) {
    std::string p = "dec.l" + std::to_string(l);
    add_ln(p + ".ln1", dec_layers_[l].ln1);
    add_attn(p + ".self", dec_layers_[l].self_attn);
    add_ln(p + ".ln2", dec_layers_[l].ln2);
    add_attn(p + ".cross", dec_layers_[l].cross_attn);
    add_ln(p + ".ln3", dec_layers_[l].ln3);
    add_ff(p + ".ff", dec_layers_[l].ff);
  }
  add_ln("dec.ln_f", dec_ln_f_);
  out.emplace_back("dec.out_w", &out_w_);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_parameters() const {
  auto mut = const_cast<Model*>(this)->named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(name, t);
  return out;
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t->numel();
  return n;
}

uint64_t Model::checksum() const {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : named_parameters()) {
    for (double v : *t->data) {
      const unsigned char* bytes = reinterpret_cast<const unsigned char*>(&v);
      for (int i = 0; i < 8; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

}  // namespace zsslu
