#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wlm/formats.hpp"
#include "wlm/model.hpp"
#include "wlm/repr.hpp"
#include "wlm/rng.hpp"
#include "wlm/tokenizer.hpp"

namespace wlm {

// ---------------------------------------------------------------------------
// Similarity and correlation

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty())
    fail(ErrorKind::dimension, "cosine_similarity of vectors with sizes " + std::to_string(u.size()) + " and " +
                                   std::to_string(v.size()));
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) fail(ErrorKind::undefined_similarity, "cosine similarity with a zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

// Sample Pearson correlation, computed on centred data.
inline double pearson_r(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size() || pred.size() < 2)
    fail(ErrorKind::dimension, "pearson_r needs two equal-length lists of at least 2 values");
  const double n = static_cast<double>(pred.size());
  const double mp = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  const double mg = std::accumulate(gold.begin(), gold.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i] - mp, dy = gold[i] - mg;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorKind::undefined_correlation, "zero variance in pearson_r input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// STS / SICK

struct StsPairRow {
  std::size_t index = 0;
  double gold = 0.0;
  double predicted = 0.0;
};

struct StsReport {
  std::string level;
  double pearson = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
  std::vector<StsPairRow> rows;
};

// Cosine of pooled sentence vectors per pair, correlated with gold. Pairs
// whose sentences do not tokenize are skipped and counted.
inline StsReport sts_eval(const Model<float>& model, const Vocabulary& vocab, const std::vector<ScoredPair>& pairs,
                          ReprLevel level) {
  StsReport report;
  report.level = level.name(model.config().num_layers);
  std::vector<double> pred, gold;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EncodedSentence a, b;
    try {
      a = vocab.encode(pairs[i].sentence_a, model.config().max_len);
      b = vocab.encode(pairs[i].sentence_b, model.config().max_len);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::empty_sentence) throw;
      ++report.skipped;
      continue;
    }
    const auto va = sentence_vector(model, a, level);
    const auto vb = sentence_vector(model, b, level);
    const double sim = cosine_similarity(va.values, vb.values);
    report.rows.push_back({i, pairs[i].gold, sim});
    pred.push_back(sim);
    gold.push_back(pairs[i].gold);
  }
  report.used = report.rows.size();
  report.pearson = pearson_r(pred, gold);
  return report;
}

// ---------------------------------------------------------------------------
// N-best reranking

struct RerankConfig {
  double lambda = 0.5;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorKind::config, "lambda must lie in [0, 1]");
  }
};

inline double interpolate(double s2s, double lm, double lambda) { return (1.0 - lambda) * s2s + lambda * lm; }

struct RerankChoice {
  std::size_t index = 0;
  double s2s = 0.0;
  double lm = 0.0;
  double combined = 0.0;
};

// argmax of the interpolated score; ties go to the earlier (beam-order) candidate.
inline RerankChoice select_candidate(const NBestEntry& entry, std::span<const double> lm_scores, const RerankConfig& cfg) {
  cfg.validate();
  if (entry.candidates.empty()) fail(ErrorKind::contract, "cannot rerank an empty candidate list");
  if (lm_scores.size() != entry.candidates.size()) fail(ErrorKind::dimension, "one LM score per candidate required");
  RerankChoice best;
  for (std::size_t i = 0; i < entry.candidates.size(); ++i) {
    const double s = interpolate(entry.candidates[i].s2s_score, lm_scores[i], cfg.lambda);
    if (i == 0 || s > best.combined) best = {i, entry.candidates[i].s2s_score, lm_scores[i], s};
  }
  return best;
}

// Highest decoder score, earlier candidate on ties.
inline std::size_t beam_best(const NBestEntry& entry) {
  if (entry.candidates.empty()) fail(ErrorKind::contract, "empty candidate list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < entry.candidates.size(); ++i)
    if (entry.candidates[i].s2s_score > entry.candidates[best].s2s_score) best = i;
  return best;
}

inline std::vector<RerankChoice> rerank(const Model<float>& model, const Vocabulary& vocab,
                                        const std::vector<NBestEntry>& entries, const RerankConfig& cfg) {
  cfg.validate();
  std::vector<RerankChoice> out;
  for (const auto& e : entries) {
    if (e.candidates.empty()) fail(ErrorKind::contract, "cannot rerank an empty candidate list");
    std::vector<double> lm;
    for (const auto& c : e.candidates) lm.push_back(lm_score(model, vocab.encode(c.text, model.config().max_len)).log_likelihood);
    out.push_back(select_candidate(e, lm, cfg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus BLEU

inline constexpr double kBleuEpsilon = 1e-9;

struct BleuResult {
  double bleu = 0.0;
  std::array<double, 4> precision{};
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 1.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

// Corpus BLEU-4, uniform weights, single reference, whitespace tokens.
// A zero match count at orders 2–4 is replaced by epsilon; no unigram match
// at all yields exactly 0. Orders with no candidate n-grams anywhere in the
// corpus are left out of the geometric mean.
inline BleuResult corpus_bleu(const std::vector<std::string>& selected, const std::vector<std::string>& references) {
  if (selected.size() != references.size())
    fail(ErrorKind::dimension, "corpus_bleu needs one reference per candidate");
  if (selected.empty()) fail(ErrorKind::contract, "corpus_bleu of an empty corpus");
  auto words = [](const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  };
  BleuResult r;
  for (std::size_t s = 0; s < selected.size(); ++s) {
    const auto cand = words(selected[s]);
    const auto ref = words(references[s]);
    r.candidate_length += cand.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
      for (std::size_t i = 0; i + n <= cand.size(); ++i) ++cand_counts[{cand.begin() + i, cand.begin() + i + n}];
      for (const auto& [gram, count] : cand_counts) {
        auto it = ref_counts.find(gram);
        r.matches[n - 1] += std::min(count, it == ref_counts.end() ? std::size_t{0} : it->second);
        r.totals[n - 1] += count;
      }
    }
  }
  if (r.candidate_length == 0 || r.matches[0] == 0) return r;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (r.totals[n] == 0) continue;
    const double m = r.matches[n] == 0 ? kBleuEpsilon : static_cast<double>(r.matches[n]);
    r.precision[n] = m / static_cast<double>(r.totals[n]);
    log_sum += std::log(r.precision[n]);
    ++orders;
  }
  r.brevity_penalty = r.candidate_length > r.reference_length
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(r.reference_length) / static_cast<double>(r.candidate_length));
  r.bleu = r.brevity_penalty * std::exp(log_sum / static_cast<double>(orders));
  return r;
}

// ---------------------------------------------------------------------------
// Logistic-regression probe

struct LogRegConfig {
  std::size_t epochs = 500;
  double lr = 0.5;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;

  double probability(std::span<const double> x) const {
    double z = bias;
    for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * x[i];
    return 1.0 / (1.0 + std::exp(-z));
  }

  // Ties (p == 0.5) go to class 0.
  int predict(std::span<const double> x) const { return probability(x) > 0.5 ? 1 : 0; }
};

// Full-batch gradient descent on mean logistic loss plus (l2/2)·|w|².
inline LogisticModel logreg_train(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                                  const LogRegConfig& cfg = {}) {
  if (features.size() != labels.size() || features.empty())
    fail(ErrorKind::dimension, "logreg_train needs one label per feature vector");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) fail(ErrorKind::config, "labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  if (pos < 2 || labels.size() - pos < 2)
    fail(ErrorKind::config, "logreg_train needs at least two examples of each class");
  const std::size_t d = features[0].size();
  for (const auto& f : features)
    if (f.size() != d) fail(ErrorKind::dimension, "feature vectors differ in length");

  Rng rng(cfg.seed);
  LogisticModel m;
  m.weights.resize(d);
  for (auto& w : m.weights) w = rng.uniform(-0.01, 0.01);
  const double inv_n = 1.0 / static_cast<double>(features.size());
  std::vector<double> gw(d);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      const double err = m.probability(features[i]) - labels[i];
      for (std::size_t k = 0; k < d; ++k) gw[k] += err * features[i][k];
      gb += err;
    }
    for (std::size_t k = 0; k < d; ++k) m.weights[k] -= cfg.lr * (gw[k] * inv_n + cfg.l2 * m.weights[k]);
    m.bias -= cfg.lr * gb * inv_n;
  }
  return m;
}

// confusion[actual][predicted]
using Confusion = std::array<std::array<std::size_t, 2>, 2>;

inline Confusion confusion_matrix(std::span<const int> predicted, std::span<const int> actual) {
  if (predicted.size() != actual.size()) fail(ErrorKind::dimension, "confusion_matrix needs equal-length inputs");
  Confusion c{};
  for (std::size_t i = 0; i < actual.size(); ++i) ++c.at(static_cast<std::size_t>(actual[i])).at(static_cast<std::size_t>(predicted[i]));
  return c;
}

inline double accuracy(const Confusion& c) {
  const double total = static_cast<double>(c[0][0] + c[0][1] + c[1][0] + c[1][1]);
  return total == 0.0 ? 0.0 : static_cast<double>(c[0][0] + c[1][1]) / total;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Per class: shuffle with the seed, first 80% (rounded down, at least one
// left for test) to train. Both lists are returned in ascending order.
inline Split stratified_split(const std::vector<int>& labels, std::uint64_t seed, double train_fraction = 0.8) {
  Rng rng(seed);
  Split s;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    std::size_t k = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size())));
    if (k == idx.size() && k > 0) --k;
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    s.test.insert(s.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

struct SmsReport {
  std::string level;
  double accuracy = 0.0;
  double majority_rate = 0.0;
  Confusion confusion{};
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::uint64_t split_seed = 0;
};

// Probe on precomputed sentence features. Features are standardized with
// train-split statistics before fitting.
inline SmsReport sms_eval_features(std::vector<std::vector<double>> features, const std::vector<int>& labels,
                                   std::uint64_t split_seed, const LogRegConfig& cfg = {}) {
  const auto split = stratified_split(labels, split_seed);
  const std::size_t d = features.at(0).size();
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (auto i : split.train)
    for (std::size_t k = 0; k < d; ++k) mean[k] += features[i][k];
  for (auto& m : mean) m /= static_cast<double>(split.train.size());
  for (auto i : split.train)
    for (std::size_t k = 0; k < d; ++k) sd[k] += (features[i][k] - mean[k]) * (features[i][k] - mean[k]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(split.train.size()));
  for (auto& f : features)
    for (std::size_t k = 0; k < d; ++k) f[k] = sd[k] > 0.0 ? (f[k] - mean[k]) / sd[k] : 0.0;

  std::vector<std::vector<double>> xtr;
  std::vector<int> ytr;
  for (auto i : split.train) {
    xtr.push_back(features[i]);
    ytr.push_back(labels[i]);
  }
  LogRegConfig c = cfg;
  c.seed = split_seed;
  const auto model = logreg_train(xtr, ytr, c);

  std::vector<int> pred, actual;
  for (auto i : split.test) {
    pred.push_back(model.predict(features[i]));
    actual.push_back(labels[i]);
  }
  SmsReport r;
  r.confusion = confusion_matrix(pred, actual);
  r.accuracy = accuracy(r.confusion);
  const auto spam = static_cast<double>(std::count(actual.begin(), actual.end(), 1));
  r.majority_rate = std::max(spam, static_cast<double>(actual.size()) - spam) / static_cast<double>(actual.size());
  r.train_size = split.train.size();
  r.test_size = split.test.size();
  r.split_seed = split_seed;
  return r;
}

inline SmsReport sms_eval(const Model<float>& model, const Vocabulary& vocab, const std::vector<LabeledMessage>& messages,
                          ReprLevel level, std::uint64_t split_seed, const LogRegConfig& cfg = {}) {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  for (const auto& m : messages) {
    features.push_back(sentence_vector(model, vocab.encode(m.text, model.config().max_len), level).values);
    labels.push_back(static_cast<int>(m.label));
  }
  auto r = sms_eval_features(std::move(features), labels, split_seed, cfg);
  r.level = level.name(model.config().num_layers);
  return r;
}

// ---------------------------------------------------------------------------
// Runtime benchmark

struct BenchRow {
  MaskRegime regime = MaskRegime::window;
  std::size_t n = 0;
  double mean_ms = 0.0;
  std::size_t passes = 0;
};

// Times lm_score on one synthetic sentence of each length n (markers
// included): two discarded warm-up calls, then the mean over `trials`.
inline std::vector<BenchRow> runtime_bench(const std::vector<const Model<float>*>& models,
                                           const std::vector<std::size_t>& lengths, std::size_t trials,
                                           std::uint64_t seed = 0) {
  if (trials < 5) fail(ErrorKind::config, "runtime_bench needs at least 5 trials");
  std::vector<BenchRow> rows;
  for (const auto* model : models) {
    for (auto n : lengths) {
      if (n < 3 || n > model->config().max_len)
        fail(ErrorKind::config, "benchmark length " + std::to_string(n) + " outside 3.." + std::to_string(model->config().max_len));
      Rng rng = Rng(seed).split(n);
      EncodedSentence s;
      s.ids.push_back(kStart);
      for (std::size_t i = 0; i + 2 < n; ++i)
        s.ids.push_back(static_cast<TokenId>(kNumSpecials + rng.below(model->config().vocab_size - kNumSpecials)));
      s.ids.push_back(kEnd);
      for (int w = 0; w < 2; ++w) (void)lm_score(*model, s);
      double total_ms = 0.0;
      std::size_t passes = 0;
      for (std::size_t t = 0; t < trials; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto score = lm_score(*model, s);
        total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        passes = score.passes;
      }
      rows.push_back({model->regime(), n, total_ms / static_cast<double>(trials), passes});
    }
  }
  return rows;
}

}  // namespace wlm
