#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wlm/ops.hpp"
#include "wlm/rng.hpp"
#include "wlm/tensor.hpp"
#include "wlm/tokenizer.hpp"

namespace wlm {

enum class MaskRegime : std::uint8_t { causal = 0, window = 1, mlm = 2 };

inline const char* to_string(MaskRegime r) {
  switch (r) {
    case MaskRegime::causal: return "causal";
    case MaskRegime::window: return "window";
    case MaskRegime::mlm: return "mlm";
  }
  return "?";
}

inline MaskRegime parse_regime(std::string_view s) {
  if (s == "causal") return MaskRegime::causal;
  if (s == "window") return MaskRegime::window;
  if (s == "mlm") return MaskRegime::mlm;
  fail(ErrorKind::config, "unknown regime '" + std::string(s) + "' (expected causal, window or mlm)");
}

struct ModelConfig {
  std::size_t num_layers = 3;
  std::size_t model_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 2048;
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;
  double dropout_rate = 0.2;
  MaskRegime regime = MaskRegime::window;
  double mlm_prob = 0.15;

  void validate() const {
    if (num_layers == 0) fail(ErrorKind::config, "num_layers must be positive");
    if (model_dim < 2) fail(ErrorKind::config, "model_dim must be at least 2");
    if (num_heads == 0 || model_dim % num_heads != 0)
      fail(ErrorKind::config, "model_dim " + std::to_string(model_dim) + " is not divisible by num_heads " +
                                  std::to_string(num_heads));
    if (ffn_dim == 0) fail(ErrorKind::config, "ffn_dim must be positive");
    if (vocab_size <= kNumSpecials) fail(ErrorKind::config, "vocab_size must exceed the special tokens");
    if (max_len < 3) fail(ErrorKind::config, "max_len must be at least 3");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail(ErrorKind::config, "dropout_rate must lie in [0, 1)");
    if (regime == MaskRegime::mlm && !(mlm_prob > 0.0 && mlm_prob < 1.0))
      fail(ErrorKind::config, "mlm_prob must lie strictly between 0 and 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Additive n×n attention mask of {0, kMaskSentinel}.
template <class T = float>
Tensor<T> build_mask(MaskRegime regime, std::size_t n) {
  if (n < 2) fail(ErrorKind::degenerate_sequence, "attention mask needs n >= 2, got " + std::to_string(n));
  Tensor<T> mask({n, n});
  const T blocked = static_cast<T>(kMaskSentinel);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      bool masked = false;
      switch (regime) {
        case MaskRegime::window: masked = (i == j); break;
        case MaskRegime::causal: masked = (j > i); break;
        case MaskRegime::mlm: masked = false; break;
      }
      if (masked) mask.at(i, j) = blocked;
    }
  return mask;
}

// Token ids for `batch` sequences right-padded to `seq`; valid marks real tokens.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> valid;

  static SequenceBatch single(const std::vector<TokenId>& ids) {
    return {1, ids.size(), ids, std::vector<std::uint8_t>(ids.size(), 1)};
  }
};

template <class T>
struct LayerActivations {
  Var<T> embed_out;
  std::vector<Var<T>> context_out;
  Var<T> final_hidden;
  Var<T> logits;
};

template <class T>
struct AttentionParams {
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t heads = 1;
};

template <class T>
struct CombineParams {
  Var<T> proj_w;  // [2d×d]; unused by the standard residual
  Var<T> proj_b;
  Var<T> ln_gain;
  Var<T> ln_bias;
};

// Multi-head attention over x with the given mask. Queries come from
// query_src when supplied (the shifted stream under window masking), from x
// otherwise; keys and values always come from x.
template <class T>
Var<T> attention_layer(Graph<T>& g, const Var<T>& x, const Tensor<T>& mask, const AttentionParams<T>& p,
                       AttentionLayout layout, std::span<const std::uint8_t> key_valid = {},
                       const Var<T>& query_src = nullptr) {
  const Var<T>& qin = query_src ? query_src : x;
  auto q = linear(g, qin, p.wq, p.bq);
  auto k = linear(g, x, p.wk, p.bk);
  auto v = linear(g, x, p.wv, p.bv);
  layout.heads = p.heads;
  auto a = attention(g, q, k, v, layout, mask, key_valid);
  return linear(g, a, p.wo, p.bo);
}

// Row i of the result is LayerNorm(W · [attn_out[i] ; resid_in[i−1]] + b).
// The first row of each segment uses its own residual row.
template <class T>
Var<T> shifted_residual_combine(Graph<T>& g, const Var<T>& attn_out, const Var<T>& resid_in, const CombineParams<T>& p,
                                std::size_t segment, const Var<T>& shifted_resid = nullptr) {
  detail::require_same(*attn_out, *resid_in, "shifted_residual_combine");
  auto prev = shifted_resid ? shifted_resid : shift_rows(g, resid_in, segment);
  auto joined = concat_cols(g, attn_out, prev);
  return layer_norm(g, linear(g, joined, p.proj_w, p.proj_b), p.ln_gain, p.ln_bias);
}

template <class T>
Var<T> standard_residual_combine(Graph<T>& g, const Var<T>& attn_out, const Var<T>& resid_in, const CombineParams<T>& p) {
  return layer_norm(g, add(g, attn_out, resid_in), p.ln_gain, p.ln_bias);
}

// Transformer encoder shared by the three regimes. Parameters live in one
// ordered list (the checkpoint order); layers refer to them by index.
template <class T = float>
class Model {
 public:
  Model(const ModelConfig& cfg, Rng rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.model_dim, f = cfg_.ffn_dim;
    tok_emb_ = add_param("tok_emb", {cfg_.vocab_size, d}, Init::embedding, rng);
    pos_emb_ = add_param("pos_emb", {cfg_.max_len, d}, Init::embedding, rng);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      Layer layer;
      layer.wq = add_param(pre + "wq", {d, d}, Init::glorot, rng);
      layer.bq = add_param(pre + "bq", {d}, Init::zeros, rng);
      layer.wk = add_param(pre + "wk", {d, d}, Init::glorot, rng);
      layer.bk = add_param(pre + "bk", {d}, Init::zeros, rng);
      layer.wv = add_param(pre + "wv", {d, d}, Init::glorot, rng);
      layer.bv = add_param(pre + "bv", {d}, Init::zeros, rng);
      layer.wo = add_param(pre + "wo", {d, d}, Init::glorot, rng);
      layer.bo = add_param(pre + "bo", {d}, Init::zeros, rng);
      if (cfg_.regime == MaskRegime::window) {
        layer.wc = add_param(pre + "combine_w", {2 * d, d}, Init::glorot, rng);
        layer.bc = add_param(pre + "combine_b", {d}, Init::zeros, rng);
      }
      layer.ln1_g = add_param(pre + "ln1_gain", {d}, Init::ones, rng);
      layer.ln1_b = add_param(pre + "ln1_bias", {d}, Init::zeros, rng);
      layer.w1 = add_param(pre + "ffn_w1", {d, f}, Init::glorot, rng);
      layer.b1 = add_param(pre + "ffn_b1", {f}, Init::zeros, rng);
      layer.w2 = add_param(pre + "ffn_w2", {f, d}, Init::glorot, rng);
      layer.b2 = add_param(pre + "ffn_b2", {d}, Init::zeros, rng);
      layer.ln2_g = add_param(pre + "ln2_gain", {d}, Init::ones, rng);
      layer.ln2_b = add_param(pre + "ln2_bias", {d}, Init::zeros, rng);
      layers_.push_back(layer);
    }
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  MaskRegime regime() const noexcept { return cfg_.regime; }

  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }

  std::vector<Parameter<T>*> parameter_ptrs() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  Parameter<T>& parameter(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    fail(ErrorKind::config, "no parameter named '" + std::string(name) + "'");
  }

  const Parameter<T>& token_embedding() const { return params_[tok_emb_]; }

  AttentionParams<T> attention_params(std::size_t l) const {
    const auto& L = layers_.at(l);
    return {v(L.wq), v(L.bq), v(L.wk), v(L.bk), v(L.wv), v(L.bv), v(L.wo), v(L.bo), cfg_.num_heads};
  }

  CombineParams<T> combine_params(std::size_t l) const {
    const auto& L = layers_.at(l);
    return {L.wc ? v(*L.wc) : nullptr, L.bc ? v(*L.bc) : nullptr, v(L.ln1_g), v(L.ln1_b)};
  }

  // Token plus learned position embedding, [(batch·seq)×d].
  Var<T> embed(Graph<T>& g, const SequenceBatch& batch) const {
    check_batch(batch);
    std::vector<TokenId> positions(batch.batch * batch.seq);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<TokenId>(i % batch.seq);
    return add(g, embedding(g, v(tok_emb_), std::span<const TokenId>(batch.ids)),
               embedding(g, v(pos_emb_), std::span<const TokenId>(positions)));
  }

  LayerActivations<T> forward(Graph<T>& g, const SequenceBatch& batch, bool training, Rng& rng) const {
    return forward_embedded(g, embed(g, batch), batch, training, rng);
  }

  LayerActivations<T> forward(Graph<T>& g, const SequenceBatch& batch) const {
    Rng unused(0);
    return forward(g, batch, false, unused);
  }

  // Runs the encoder from precomputed input embeddings; used directly by the
  // leakage probes, which perturb single embedding rows.
  LayerActivations<T> forward_embedded(Graph<T>& g, const Var<T>& embedded, const SequenceBatch& batch, bool training,
                                       Rng& rng) const {
    check_batch(batch);
    const std::size_t seq = batch.seq;
    const auto mask = build_mask<T>(cfg_.regime, seq);
    const AttentionLayout layout{batch.batch, seq, cfg_.num_heads};
    const std::span<const std::uint8_t> valid(batch.valid);
    const bool shifted = cfg_.regime == MaskRegime::window;

    LayerActivations<T> acts;
    acts.embed_out = embedded;
    Var<T> x = dropout(g, embedded, cfg_.dropout_rate, training, rng);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      Var<T> prev = shifted ? shift_rows(g, x, seq) : nullptr;
      auto a = attention_layer(g, x, mask, attention_params(l), layout, valid, prev);
      a = dropout(g, a, cfg_.dropout_rate, training, rng);
      auto c = shifted ? shifted_residual_combine(g, a, x, combine_params(l), seq, prev)
                       : standard_residual_combine(g, a, x, combine_params(l));
      auto h = relu(g, linear(g, c, v(L.w1), v(L.b1)));
      auto f = dropout(g, linear(g, h, v(L.w2), v(L.b2)), cfg_.dropout_rate, training, rng);
      x = layer_norm(g, add(g, c, f), v(L.ln2_g), v(L.ln2_b));
      acts.context_out.push_back(x);
    }
    acts.final_hidden = x;
    acts.logits = matmul_nt(g, x, v(tok_emb_));
    return acts;
  }

 private:
  enum class Init { zeros, ones, glorot, embedding };

  struct Layer {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::optional<std::size_t> wc, bc;
    std::size_t ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
  };

  const Var<T>& v(std::size_t index) const { return params_[index].value; }

  std::size_t add_param(std::string name, Shape shape, Init init, Rng& rng) {
    const std::size_t n = numel(shape);
    std::vector<T> values(n, T(0));
    switch (init) {
      case Init::zeros: break;
      case Init::ones: std::fill(values.begin(), values.end(), T(1)); break;
      case Init::glorot: {
        const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
        for (auto& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
        break;
      }
      case Init::embedding: {
        const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg_.model_dim));
        for (auto& v : values) v = static_cast<T>(rng.normal(0.0, stddev));
        break;
      }
    }
    params_.emplace_back(std::move(name), std::move(shape), std::move(values));
    return params_.size() - 1;
  }

  void check_batch(const SequenceBatch& batch) const {
    if (batch.seq > cfg_.max_len)
      fail(ErrorKind::length, "sequence length " + std::to_string(batch.seq) + " exceeds max_len " +
                                  std::to_string(cfg_.max_len));
    if (batch.batch == 0 || batch.ids.size() != batch.batch * batch.seq || batch.valid.size() != batch.ids.size())
      fail(ErrorKind::dimension, "malformed sequence batch");
  }

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::vector<Layer> layers_;
  std::size_t tok_emb_ = 0;
  std::size_t pos_emb_ = 0;
};

}  // namespace wlm
