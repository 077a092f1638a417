#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plugs/common.hpp"
#include "plugs/features.hpp"
#include "plugs/optimizer.hpp"
#include "plugs/schedule.hpp"
#include "plugs/tensor.hpp"
#include "plugs/vocab.hpp"

namespace plugs {

// ---------------------------------------------------------------------------
// Model configuration and presets.
// ---------------------------------------------------------------------------

struct ModelConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  double dropout = 0.1;
  int vocab_size = 0;
  std::vector<LangId> langs;

  void validate() const {
    if (enc_layers < 1 || dec_layers < 1 || heads < 1 || d_model < 2 ||
        d_ff < 1)
      throw ConfigError("model config: all sizes must be positive");
    if (d_model % heads != 0)
      throw ConfigError("model config: d_model " + std::to_string(d_model) +
                        " not divisible by heads " + std::to_string(heads));
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("model config: dropout must be in [0,1)");
    if (vocab_size < SpecialTokens::count)
      throw ConfigError("model config: vocab_size smaller than reserved ids");
  }
};

inline ModelConfig model_preset(const std::string& name) {
  ModelConfig c;
  if (name == "multi30k") {
    c.enc_layers = 3; c.dec_layers = 3; c.heads = 8;
    c.d_model = 512; c.d_ff = 2048; c.dropout = 0.3;
  } else if (name == "cc_base") {
    c.enc_layers = 6; c.dec_layers = 6; c.heads = 8;
    c.d_model = 512; c.d_ff = 2048; c.dropout = 0.3;
  } else if (name == "cc_large") {
    c.enc_layers = 10; c.dec_layers = 10; c.heads = 12;
    c.d_model = 768; c.d_ff = 3072; c.dropout = 0.3;
  } else if (name == "desk_tiny") {
    c.enc_layers = 2; c.dec_layers = 2; c.heads = 4;
    c.d_model = 64; c.d_ff = 256; c.dropout = 0.1;
  } else if (name == "desk_large") {
    c.enc_layers = 3; c.dec_layers = 3; c.heads = 6;
    c.d_model = 96; c.d_ff = 384; c.dropout = 0.1;
  } else {
    throw ConfigError("unknown model preset '" + name + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parameter containers. Every tensor is registered in a ParamMap under a
// stable dotted name; containers hold aliasing handles, so optimizer updates
// through the map are visible here.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor init_weight(size_t rows, size_t cols, Rng& rng, ParamMap& params,
                          const std::string& name) {
  std::vector<double> data(rows * cols);
  double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& x : data)
    x = static_cast<double>(static_cast<float>(rng.next_normal() * s));
  Tensor t({rows, cols}, std::move(data), /*requires_grad=*/true);
  params.emplace(name, t);
  return t;
}

inline Tensor init_const(std::vector<size_t> shape, double value,
                         ParamMap& params, const std::string& name) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  Tensor t(std::move(shape), std::vector<double>(n, value),
           /*requires_grad=*/true);
  params.emplace(name, t);
  return t;
}

inline Tensor param_at(const ParamMap& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end())
    throw ConfigError("missing parameter " + name);
  return it->second;
}

}  // namespace detail

struct LayerNormParams {
  Tensor gamma, beta;

  static LayerNormParams init(const std::string& prefix, int d,
                              ParamMap& params) {
    LayerNormParams ln;
    ln.gamma = detail::init_const({static_cast<size_t>(d)}, 1.0, params,
                                  prefix + ".gamma");
    ln.beta = detail::init_const({static_cast<size_t>(d)}, 0.0, params,
                                 prefix + ".beta");
    return ln;
  }
  static LayerNormParams from_params(const std::string& prefix,
                                     const ParamMap& params) {
    return {detail::param_at(params, prefix + ".gamma"),
            detail::param_at(params, prefix + ".beta")};
  }
  Tensor apply(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// No bias on the key projection: softmax scores are invariant to a constant
// shift per query row, so a key bias is a dead parameter by construction.
struct AttentionParams {
  Tensor wq, bq, wk, wv, bv, wo, bo;

  static AttentionParams init(const std::string& prefix, int d, Rng& rng,
                              ParamMap& params) {
    AttentionParams a;
    size_t dd = static_cast<size_t>(d);
    a.wq = detail::init_weight(dd, dd, rng, params, prefix + ".wq");
    a.bq = detail::init_const({dd}, 0.0, params, prefix + ".bq");
    a.wk = detail::init_weight(dd, dd, rng, params, prefix + ".wk");
    a.wv = detail::init_weight(dd, dd, rng, params, prefix + ".wv");
    a.bv = detail::init_const({dd}, 0.0, params, prefix + ".bv");
    a.wo = detail::init_weight(dd, dd, rng, params, prefix + ".wo");
    a.bo = detail::init_const({dd}, 0.0, params, prefix + ".bo");
    return a;
  }
  static AttentionParams from_params(const std::string& prefix,
                                     const ParamMap& params) {
    AttentionParams a;
    a.wq = detail::param_at(params, prefix + ".wq");
    a.bq = detail::param_at(params, prefix + ".bq");
    a.wk = detail::param_at(params, prefix + ".wk");
    a.wv = detail::param_at(params, prefix + ".wv");
    a.bv = detail::param_at(params, prefix + ".bv");
    a.wo = detail::param_at(params, prefix + ".wo");
    a.bo = detail::param_at(params, prefix + ".bo");
    return a;
  }
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;

  static FeedForwardParams init(const std::string& prefix, int d, int d_ff,
                                Rng& rng, ParamMap& params) {
    FeedForwardParams f;
    size_t dd = static_cast<size_t>(d), ff = static_cast<size_t>(d_ff);
    f.w1 = detail::init_weight(dd, ff, rng, params, prefix + ".w1");
    f.b1 = detail::init_const({ff}, 0.0, params, prefix + ".b1");
    f.w2 = detail::init_weight(ff, dd, rng, params, prefix + ".w2");
    f.b2 = detail::init_const({dd}, 0.0, params, prefix + ".b2");
    return f;
  }
  static FeedForwardParams from_params(const std::string& prefix,
                                       const ParamMap& params) {
    FeedForwardParams f;
    f.w1 = detail::param_at(params, prefix + ".w1");
    f.b1 = detail::param_at(params, prefix + ".b1");
    f.w2 = detail::param_at(params, prefix + ".w2");
    f.b2 = detail::param_at(params, prefix + ".b2");
    return f;
  }
  Tensor apply(const Tensor& x) const {
    return add_bias(matmul(relu(add_bias(matmul(x, w1), b1)), w2), b2);
  }
};

struct EncoderLayer {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  FeedForwardParams ff;
};

struct DecoderLayer {
  LayerNormParams ln1, ln2, ln3;
  AttentionParams self_attn, cross_attn;
  FeedForwardParams ff;
};

// Deterministic dropout bookkeeping: each call site consumes the next salt,
// in fixed code order, so a (seed, step, example) triple fully determines
// every mask. Disabled outside training.
struct DropoutCtx {
  double p = 0.0;
  uint64_t seed = 0;
  uint64_t next_salt = 0;
  bool enabled = false;

  Tensor apply(const Tensor& x) {
    if (!enabled || p == 0.0) return x;
    return plugs::dropout(x, p, seed, next_salt++);
  }
};

// Encoder output plus the key mask cross-attention must respect.
struct Memory {
  Tensor states;
  std::vector<uint8_t> mask;
};

// ---------------------------------------------------------------------------
// The model.
// ---------------------------------------------------------------------------

class Transformer {
 public:
  static Transformer init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Transformer m;
    m.cfg_ = cfg;
    Rng rng(hash_str(seed, "model-init"));
    m.embed_ = detail::init_weight(static_cast<size_t>(cfg.vocab_size),
                                   static_cast<size_t>(cfg.d_model), rng,
                                   m.params_, "embed.tok");
    m.features_ = FeatureParams::init(cfg.d_model, rng, m.params_);
    for (int i = 0; i < cfg.enc_layers; ++i) {
      std::string p = "enc.L" + std::to_string(i);
      EncoderLayer layer;
      layer.ln1 = LayerNormParams::init(p + ".ln1", cfg.d_model, m.params_);
      layer.attn = AttentionParams::init(p + ".attn", cfg.d_model, rng,
                                         m.params_);
      layer.ln2 = LayerNormParams::init(p + ".ln2", cfg.d_model, m.params_);
      layer.ff = FeedForwardParams::init(p + ".ff", cfg.d_model, cfg.d_ff, rng,
                                         m.params_);
      m.enc_.push_back(layer);
    }
    m.enc_ln_ = LayerNormParams::init("enc.ln_final", cfg.d_model, m.params_);
    for (int i = 0; i < cfg.dec_layers; ++i) {
      std::string p = "dec.L" + std::to_string(i);
      DecoderLayer layer;
      layer.ln1 = LayerNormParams::init(p + ".ln1", cfg.d_model, m.params_);
      layer.self_attn = AttentionParams::init(p + ".self", cfg.d_model, rng,
                                              m.params_);
      layer.ln2 = LayerNormParams::init(p + ".ln2", cfg.d_model, m.params_);
      layer.cross_attn = AttentionParams::init(p + ".cross", cfg.d_model, rng,
                                               m.params_);
      layer.ln3 = LayerNormParams::init(p + ".ln3", cfg.d_model, m.params_);
      layer.ff = FeedForwardParams::init(p + ".ff", cfg.d_model, cfg.d_ff, rng,
                                         m.params_);
      m.dec_.push_back(layer);
    }
    m.dec_ln_ = LayerNormParams::init("dec.ln_final", cfg.d_model, m.params_);
    snap_params_f32(m.params_);
    return m;
  }

  static Transformer from_params(const ModelConfig& cfg, ParamMap params) {
    cfg.validate();
    Transformer m;
    m.cfg_ = cfg;
    m.params_ = std::move(params);
    m.embed_ = detail::param_at(m.params_, "embed.tok");
    if (m.embed_.dim(0) != static_cast<size_t>(cfg.vocab_size) ||
        m.embed_.dim(1) != static_cast<size_t>(cfg.d_model))
      throw ConfigError("embed.tok shape does not match model config");
    m.features_ = FeatureParams::from_params(m.params_);
    for (int i = 0; i < cfg.enc_layers; ++i) {
      std::string p = "enc.L" + std::to_string(i);
      EncoderLayer layer;
      layer.ln1 = LayerNormParams::from_params(p + ".ln1", m.params_);
      layer.attn = AttentionParams::from_params(p + ".attn", m.params_);
      layer.ln2 = LayerNormParams::from_params(p + ".ln2", m.params_);
      layer.ff = FeedForwardParams::from_params(p + ".ff", m.params_);
      m.enc_.push_back(layer);
    }
    m.enc_ln_ = LayerNormParams::from_params("enc.ln_final", m.params_);
    for (int i = 0; i < cfg.dec_layers; ++i) {
      std::string p = "dec.L" + std::to_string(i);
      DecoderLayer layer;
      layer.ln1 = LayerNormParams::from_params(p + ".ln1", m.params_);
      layer.self_attn = AttentionParams::from_params(p + ".self", m.params_);
      layer.ln2 = LayerNormParams::from_params(p + ".ln2", m.params_);
      layer.cross_attn = AttentionParams::from_params(p + ".cross", m.params_);
      layer.ln3 = LayerNormParams::from_params(p + ".ln3", m.params_);
      layer.ff = FeedForwardParams::from_params(p + ".ff", m.params_);
      m.dec_.push_back(layer);
    }
    m.dec_ln_ = LayerNormParams::from_params("dec.ln_final", m.params_);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }
  const FeatureParams& features() const { return features_; }
  const Tensor& token_embedding() const { return embed_; }

  EncoderInput assemble(const GlobalImageEmbedding& img,
                        const ObjectLabelList& labels, LangId lang,
                        const std::optional<std::vector<int>>& src_text,
                        std::optional<int> prefix_len,
                        const ObjectLabelEmbeddingTable& table) const {
    return assemble_encoder_input(img, labels, lang, src_text, prefix_len,
                                  table, features_, embed_);
  }

  // Pre-layer-norm encoder stack over an assembled input.
  Memory encode(const EncoderInput& input, DropoutCtx* drop = nullptr) const {
    DropoutCtx off;
    DropoutCtx& d = drop ? *drop : off;
    std::vector<uint8_t> mask(input.mask.size());
    for (size_t i = 0; i < mask.size(); ++i)
      mask[i] = input.mask[i] != 0.0 ? 1 : 0;
    Tensor x = d.apply(input.x);
    for (const EncoderLayer& layer : enc_) {
      Tensor h = layer.ln1.apply(x);
      x = add(x, d.apply(attention(h, h, mask, layer.attn, /*causal=*/false)));
      x = add(x, d.apply(layer.ff.apply(layer.ln2.apply(x))));
    }
    return Memory{enc_ln_.apply(x), std::move(mask)};
  }

  // Teacher-forced decoder: logits[t] predicts the token following
  // decoder_input[t]. decoder_input must start with a start-of-sequence
  // token; strict causality over decoder_input is guaranteed.
  Tensor forward_teacher_forced(const Memory& memory,
                                const std::vector<int>& decoder_input,
                                DropoutCtx* drop = nullptr) const {
    if (decoder_input.empty() || !SpecialTokens::is_sos(decoder_input[0]))
      throw DataError(
          "forward_teacher_forced: decoder input must start with a "
          "start-of-sequence token");
    DropoutCtx off;
    DropoutCtx& d = drop ? *drop : off;
    const size_t dm = static_cast<size_t>(cfg_.d_model);
    Tensor x = add(scale(embedding_lookup(embed_, decoder_input),
                         std::sqrt(static_cast<double>(dm))),
                   sinusoid_positions(decoder_input.size(), dm));
    x = d.apply(x);
    for (const DecoderLayer& layer : dec_) {
      Tensor h = layer.ln1.apply(x);
      x = add(x, d.apply(attention(h, h, {}, layer.self_attn,
                                   /*causal=*/true)));
      x = add(x, d.apply(attention(layer.ln2.apply(x), memory.states,
                                   memory.mask, layer.cross_attn,
                                   /*causal=*/false)));
      x = add(x, d.apply(layer.ff.apply(layer.ln3.apply(x))));
    }
    // Tied output projection.
    return matmul(dec_ln_.apply(x), transpose(embed_));
  }

 private:
  // key_mask: one flag per key row of `kv`; empty means all allowed.
  Tensor attention(const Tensor& q_in, const Tensor& kv,
                   const std::vector<uint8_t>& key_mask,
                   const AttentionParams& a, bool causal) const {
    const int H = cfg_.heads;
    const size_t hd = static_cast<size_t>(cfg_.d_model / H);
    Tensor q = add_bias(matmul(q_in, a.wq), a.bq);
    Tensor k = matmul(kv, a.wk);
    Tensor v = add_bias(matmul(kv, a.wv), a.bv);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Tensor> heads;
    heads.reserve(H);
    for (int h = 0; h < H; ++h) {
      Tensor qh = slice_cols(q, h * hd, hd);
      Tensor kh = slice_cols(k, h * hd, hd);
      Tensor vh = slice_cols(v, h * hd, hd);
      Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
      Tensor w = causal ? causal_softmax_rows(scores)
                 : key_mask.empty()
                     ? softmax(scores)
                     : masked_softmax_rows(scores, key_mask);
      heads.push_back(matmul(w, vh));
    }
    return add_bias(matmul(concat_cols(heads), a.wo), a.bo);
  }

  ModelConfig cfg_;
  ParamMap params_;
  Tensor embed_;
  FeatureParams features_;
  std::vector<EncoderLayer> enc_;
  LayerNormParams enc_ln_;
  std::vector<DecoderLayer> dec_;
  LayerNormParams dec_ln_;
};

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

// One training example: raw encoder-side inputs plus the full target token
// sequence (ending in eos, not starting with sos).
struct TrainExample {
  GlobalImageEmbedding image;
  ObjectLabelList labels;
  LangId lang = LangId::en;
  std::optional<std::vector<int>> src_text;
  std::optional<int> prefix_len;
  std::vector<int> target;
};

// One optimizer step on the mean token cross-entropy over all target
// positions in the batch. Returns the loss.
inline double train_step(Transformer& model,
                         const std::vector<TrainExample>& batch,
                         const ObjectLabelEmbeddingTable& table,
                         const TrainConfig& cfg, OptState& opt, int64_t step) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  size_t total_tokens = 0;
  for (const TrainExample& ex : batch) {
    if (ex.target.empty()) throw DataError("train_step: empty target");
    total_tokens += ex.target.size();
  }

  Tape tape;
  Tape::Scope scope(tape);
  Tensor loss;
  bool first = true;
  size_t ex_index = 0;
  for (const TrainExample& ex : batch) {
    DropoutCtx drop;
    drop.p = cfg.dropout;
    drop.enabled = cfg.dropout > 0.0;
    drop.seed = hash_u64(cfg.seed, static_cast<uint64_t>(step), ex_index);
    EncoderInput enc_in = model.assemble(ex.image, ex.labels, ex.lang,
                                         ex.src_text, ex.prefix_len, table);
    Memory mem = model.encode(enc_in, &drop);
    std::vector<int> dec_input;
    dec_input.reserve(ex.target.size());
    dec_input.push_back(SpecialTokens::sos(ex.lang));
    dec_input.insert(dec_input.end(), ex.target.begin(), ex.target.end() - 1);
    Tensor logits = model.forward_teacher_forced(mem, dec_input, &drop);
    std::vector<uint8_t> pad_mask(ex.target.size(), 1);
    Tensor ce = cross_entropy(logits, ex.target, pad_mask);
    Tensor weighted = scale(ce, static_cast<double>(ex.target.size()) /
                                    static_cast<double>(total_tokens));
    loss = first ? weighted : add(loss, weighted);
    first = false;
    ++ex_index;
  }
  double loss_value = loss[0];
  if (!std::isfinite(loss_value))
    throw NumericError("train_step: non-finite loss");
  backward(tape, loss);
  optimizer_step(opt, model.params(), cfg, step);
  return loss_value;
}

}  // namespace plugs
