#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wlm/checkpoint.hpp"
#include "wlm/model.hpp"
#include "wlm/ops.hpp"
#include "wlm/optim.hpp"

namespace wlm {

// Right-padded id matrix. weights is the loss-eligibility matrix: 1 on real
// tokens, 0 on PAD.
struct PaddedBatch {
  SequenceBatch seqs;
  std::vector<std::size_t> lengths;
  std::vector<float> weights;
};

inline PaddedBatch make_batch(std::span<const EncodedSentence> sentences, std::size_t max_len) {
  if (sentences.empty()) fail(ErrorKind::contract, "cannot build an empty batch");
  std::size_t width = 0;
  for (const auto& s : sentences) {
    if (s.size() > max_len)
      fail(ErrorKind::length, "sentence of length " + std::to_string(s.size()) + " exceeds max_len " + std::to_string(max_len));
    width = std::max(width, s.size());
  }
  PaddedBatch out;
  out.seqs.batch = sentences.size();
  out.seqs.seq = width;
  out.seqs.ids.assign(sentences.size() * width, kPad);
  out.seqs.valid.assign(sentences.size() * width, 0);
  out.weights.assign(sentences.size() * width, 0.0f);
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    const auto& ids = sentences[b].ids;
    out.lengths.push_back(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.seqs.ids[b * width + i] = ids[i];
      out.seqs.valid[b * width + i] = 1;
      out.weights[b * width + i] = 1.0f;
    }
  }
  return out;
}

struct MlmCorruption {
  EncodedSentence corrupted;
  std::vector<std::uint8_t> weights;  // 1 exactly where a token was replaced
};

// Replaces each non-marker position with MASK independently with probability
// p. When nothing is selected one position is forced, so no sentence carries
// zero signal.
inline MlmCorruption mlm_corrupt(const EncodedSentence& sentence, double p, Rng& rng) {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::config, "mlm probability must lie strictly between 0 and 1");
  MlmCorruption out{sentence, std::vector<std::uint8_t>(sentence.size(), 0)};
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    const auto id = sentence.ids[i];
    if (id == kStart || id == kEnd || id == kPad) continue;
    eligible.push_back(i);
  }
  if (eligible.empty()) fail(ErrorKind::no_signal, "sentence has no maskable position");
  bool any = false;
  for (auto i : eligible) {
    if (rng.bernoulli(p)) {
      out.corrupted.ids[i] = kMask;
      out.weights[i] = 1;
      any = true;
    }
  }
  if (!any) {
    const auto i = eligible[rng.below(eligible.size())];
    out.corrupted.ids[i] = kMask;
    out.weights[i] = 1;
  }
  return out;
}

// Inputs, per-position targets and loss weights for one regime.
struct TrainingBatch {
  SequenceBatch input;
  std::vector<TokenId> targets;
  std::vector<float> weights;
  std::size_t target_count = 0;
};

inline TrainingBatch prepare_batch(std::span<const EncodedSentence> sentences, MaskRegime regime, double mlm_prob,
                                   std::size_t max_len, Rng& rng) {
  std::vector<EncodedSentence> inputs(sentences.begin(), sentences.end());
  std::vector<std::vector<std::uint8_t>> mlm_weights;
  if (regime == MaskRegime::mlm) {
    for (auto& s : inputs) {
      auto c = mlm_corrupt(s, mlm_prob, rng);
      s = std::move(c.corrupted);
      mlm_weights.push_back(std::move(c.weights));
    }
  }
  auto padded = make_batch(inputs, max_len);
  const std::size_t width = padded.seqs.seq;
  TrainingBatch out;
  out.targets.assign(padded.seqs.ids.size(), kPad);
  out.weights.assign(padded.seqs.ids.size(), 0.0f);
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    const auto& orig = sentences[b].ids;
    const std::size_t n = orig.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t at = b * width + i;
      bool use = false;
      TokenId target = kPad;
      switch (regime) {
        case MaskRegime::causal:
          use = i + 1 < n;
          if (use) target = orig[i + 1];
          break;
        case MaskRegime::window:
          use = i >= 1;
          target = orig[i];
          break;
        case MaskRegime::mlm:
          use = mlm_weights[b][i] != 0;
          target = orig[i];
          break;
      }
      if (use && padded.weights[at] != 0.0f) {
        out.targets[at] = target;
        out.weights[at] = 1.0f;
        ++out.target_count;
      }
    }
  }
  out.input = std::move(padded.seqs);
  return out;
}

struct StepResult {
  double loss = 0.0;
  std::size_t targets = 0;
};

// One forward, one backward, one Adam update.
inline StepResult train_step(Model<float>& model, const TrainingBatch& batch, const AdamConfig& adam, Rng& dropout_rng) {
  Graph<float> g;
  auto acts = model.forward(g, batch.input, true, dropout_rng);
  CrossEntropyResult info;
  auto loss = cross_entropy(g, acts.logits, std::span<const TokenId>(batch.targets), std::span<const float>(batch.weights),
                            &info);
  g.backward(loss);
  auto params = model.parameter_ptrs();
  adam_step(std::span<Parameter<float>* const>(params), adam);
  return {info.loss, info.targets};
}

struct LossRow {
  std::size_t step = 0;
  MaskRegime regime = MaskRegime::window;
  double loss = 0.0;
  std::size_t targets = 0;
  double ms = 0.0;
};

struct LossLog {
  std::vector<LossRow> rows;

  static constexpr const char* kHeader = "step,regime,loss,targets,ms";

  void append(const LossRow& row) {
    if (!rows.empty() && row.step <= rows.back().step)
      fail(ErrorKind::contract, "loss log steps must increase strictly");
    rows.push_back(row);
  }

  static std::string format_row(const LossRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%zu,%.3f", r.step, to_string(r.regime), r.loss, r.targets, r.ms);
    return buf;
  }

  std::string to_csv() const {
    std::string out = std::string(kHeader) + "\n";
    for (const auto& r : rows) out += format_row(r) + "\n";
    return out;
  }
};

struct TrainResult {
  Checkpoint checkpoint;
  LossLog log;
};

// Samples batch_size sentences uniformly with replacement per step. RNG streams
// for initialization, sampling, dropout and corruption are split from the seed.
inline TrainResult train_loop(const std::vector<EncodedSentence>& corpus, const Vocabulary& vocab, ModelConfig mcfg,
                              const TrainConfig& tcfg, const std::function<void(const LossRow&)>& on_log = {}) {
  tcfg.validate();
  mcfg.regime = tcfg.regime;
  mcfg.vocab_size = vocab.size();
  mcfg.validate();
  if (corpus.size() < tcfg.batch_size)
    fail(ErrorKind::ingestion, "corpus has " + std::to_string(corpus.size()) + " sentences, fewer than one batch of " +
                                   std::to_string(tcfg.batch_size));
  for (const auto& s : corpus)
    if (s.size() > mcfg.max_len) fail(ErrorKind::length, "corpus sentence longer than max_len");

  const Rng root(tcfg.seed);
  Model<float> model(mcfg, root.split(1));
  Rng sampler = root.split(2);
  Rng dropout_rng = root.split(3);
  Rng corrupt_rng = root.split(4);
  const AdamConfig adam{tcfg.lr};

  LossLog log;
  const auto start = std::chrono::steady_clock::now();
  std::vector<EncodedSentence> picked(tcfg.batch_size);
  for (std::size_t step = 1; step <= tcfg.steps; ++step) {
    for (auto& s : picked) s = corpus[sampler.below(corpus.size())];
    const auto batch = prepare_batch(picked, mcfg.regime, mcfg.mlm_prob, mcfg.max_len, corrupt_rng);
    const auto res = train_step(model, batch, adam, dropout_rng);
    if (!std::isfinite(res.loss)) fail(ErrorKind::numeric, "non-finite loss at step " + std::to_string(step));
    if (step % tcfg.log_every == 0 || step == tcfg.steps) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      LossRow row{step, mcfg.regime, res.loss, res.targets, ms};
      log.append(row);
      if (on_log) on_log(row);
    }
  }
  return TrainResult{Checkpoint{kCheckpointVersion, vocab, tcfg, tcfg.steps, std::move(model)}, std::move(log)};
}

}  // namespace wlm
