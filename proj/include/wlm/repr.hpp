#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "wlm/model.hpp"
#include "wlm/tokenizer.hpp"

namespace wlm {

// Which activation a representation is read from. Context layers are
// 1-based; layer 0 stands for "the last layer".
struct ReprLevel {
  enum class Kind { embed, context, output };
  Kind kind = Kind::context;
  std::size_t layer = 0;

  static ReprLevel embed() { return {Kind::embed, 0}; }
  static ReprLevel context(std::size_t layer = 0) { return {Kind::context, layer}; }
  static ReprLevel output() { return {Kind::output, 0}; }

  std::size_t resolved_layer(std::size_t num_layers) const {
    if (kind != Kind::context) return 0;
    const std::size_t l = layer == 0 ? num_layers : layer;
    if (l < 1 || l > num_layers)
      fail(ErrorKind::config, "context layer " + std::to_string(l) + " outside 1.." + std::to_string(num_layers));
    return l;
  }

  std::string name(std::size_t num_layers) const {
    switch (kind) {
      case Kind::embed: return "embed";
      case Kind::output: return "output";
      case Kind::context: return "context:" + std::to_string(resolved_layer(num_layers));
    }
    return "?";
  }

  // Accepts "embed", "output", "context" (last layer) and "context:k".
  static ReprLevel parse(std::string_view s) {
    if (s == "embed") return embed();
    if (s == "output") return output();
    if (s == "context") return context();
    if (s.starts_with("context:")) {
      const auto num = s.substr(8);
      std::size_t layer = 0;
      const auto [end, ec] = std::from_chars(num.data(), num.data() + num.size(), layer);
      if (ec == std::errc() && end == num.data() + num.size() && layer >= 1) return context(layer);
    }
    fail(ErrorKind::config, "unknown representation level '" + std::string(s) +
                                "' (valid: embed, context, context:k, output)");
  }

  bool operator==(const ReprLevel&) const = default;
};

// [n×d] token vectors of one sentence at the requested level, from a single
// inference-mode forward pass.
inline Tensor<float> token_representations(const Model<float>& model, const EncodedSentence& sentence, ReprLevel level) {
  const auto layer = level.resolved_layer(model.config().num_layers);
  Graph<float> g(false);
  auto acts = model.forward(g, SequenceBatch::single(sentence.ids));
  switch (level.kind) {
    case ReprLevel::Kind::embed: return *acts.embed_out;
    case ReprLevel::Kind::output: return *acts.final_hidden;
    case ReprLevel::Kind::context: return *acts.context_out[layer - 1];
  }
  return {};
}

struct SentenceVector {
  std::vector<double> values;
  ReprLevel level;
  std::string pooling = "mean";
};

// Mean over the rows between the START and END markers.
inline SentenceVector pool_sentence(const Tensor<float>& tokens, ReprLevel level = ReprLevel::context()) {
  if (tokens.shape.size() != 2 || tokens.rows() < 3)
    fail(ErrorKind::contract, "pooling needs START, at least one token and END; got " + shape_str(tokens.shape));
  const std::size_t n = tokens.rows(), d = tokens.cols();
  SentenceVector out{std::vector<double>(d, 0.0), level, "mean"};
  for (std::size_t r = 1; r + 1 < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out.values[c] += tokens.at(r, c);
  for (auto& v : out.values) v /= static_cast<double>(n - 2);
  return out;
}

inline SentenceVector sentence_vector(const Model<float>& model, const EncodedSentence& sentence, ReprLevel level) {
  return pool_sentence(token_representations(model, sentence, level), level);
}

struct LmScore {
  double log_likelihood = 0.0;
  std::size_t passes = 0;
};

namespace detail {

inline double log_prob(const Tensor<float>& logits, std::size_t row, TokenId target) {
  const std::size_t V = logits.cols();
  const float* r = logits.data.data() + row * V;
  double mx = r[0];
  for (std::size_t j = 1; j < V; ++j) mx = std::max<double>(mx, r[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < V; ++j) z += std::exp(r[j] - mx);
  return static_cast<double>(r[target]) - mx - std::log(z);
}

}  // namespace detail

// Sentence log-likelihood. Causal and window models score in one pass; the
// MLM scores by pseudo-likelihood, masking each inner position in its own pass.
inline LmScore lm_score(const Model<float>& model, const EncodedSentence& sentence) {
  const auto& ids = sentence.ids;
  const std::size_t n = ids.size();
  if (n < 3) fail(ErrorKind::contract, "scoring needs at least one token between the markers");
  LmScore out;
  auto run = [&](const std::vector<TokenId>& input) {
    Graph<float> g(false);
    ++out.passes;
    return *model.forward(g, SequenceBatch::single(input)).logits;
  };
  switch (model.regime()) {
    case MaskRegime::causal: {
      const auto logits = run(ids);
      for (std::size_t i = 0; i + 1 < n; ++i) out.log_likelihood += detail::log_prob(logits, i, ids[i + 1]);
      break;
    }
    case MaskRegime::window: {
      const auto logits = run(ids);
      for (std::size_t i = 1; i < n; ++i) out.log_likelihood += detail::log_prob(logits, i, ids[i]);
      break;
    }
    case MaskRegime::mlm: {
      std::vector<TokenId> masked = ids;
      for (std::size_t i = 1; i + 1 < n; ++i) {
        masked[i] = kMask;
        const auto logits = run(masked);
        out.log_likelihood += detail::log_prob(logits, i, ids[i]);
        masked[i] = ids[i];
      }
      break;
    }
  }
  return out;
}

}  // namespace wlm
