#include <gtest/gtest.h>

#include <filesystem>

#include "synthetic.hpp"
#include "wlm/checkpoint.hpp"
#include "wlm/training.hpp"

namespace wlm {
namespace {

EncodedSentence sentence(std::size_t n, TokenId fill = 7) {
  EncodedSentence s;
  s.ids.push_back(kStart);
  for (std::size_t i = 0; i + 2 < n; ++i) s.ids.push_back(fill + static_cast<TokenId>(i % 3));
  s.ids.push_back(kEnd);
  return s;
}

ModelConfig tiny(MaskRegime r) {
  ModelConfig c;
  c.num_layers = 1;
  c.model_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.vocab_size = 12;
  c.max_len = 12;
  c.dropout_rate = 0.1;
  c.regime = r;
  return c;
}

TEST(MakeBatch, PadsToLongest) {
  const std::vector<EncodedSentence> s{sentence(5), sentence(7)};
  const auto b = make_batch(s, 64);
  EXPECT_EQ(b.seqs.batch, 2u);
  EXPECT_EQ(b.seqs.seq, 7u);
  EXPECT_EQ(b.seqs.ids[5], kPad);
  EXPECT_EQ(b.seqs.ids[6], kPad);
  EXPECT_EQ(b.seqs.ids[4], kEnd);
  EXPECT_EQ(b.weights[5], 0.0f);
  EXPECT_EQ(b.weights[6], 0.0f);
  EXPECT_EQ(b.seqs.valid[6], 0);
}

TEST(MakeBatch, SingleSentenceHasNoPadding) {
  const std::vector<EncodedSentence> s{sentence(6)};
  const auto b = make_batch(s, 64);
  EXPECT_EQ(b.seqs.seq, 6u);
  EXPECT_EQ(std::count(b.seqs.ids.begin(), b.seqs.ids.end(), kPad), 0);
}

TEST(MlmCorrupt, TinyProbabilityForcesExactlyOne) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto c = mlm_corrupt(sentence(10), 1e-12, rng);
    EXPECT_EQ(std::count(c.weights.begin(), c.weights.end(), 1), 1);
  }
}

TEST(MlmCorrupt, NearOneMasksEveryInnerPosition) {
  Rng rng(2);
  const auto c = mlm_corrupt(sentence(10), 1.0 - 1e-12, rng);
  for (std::size_t i = 1; i + 1 < 10; ++i) EXPECT_EQ(c.corrupted.ids[i], kMask);
  EXPECT_EQ(c.corrupted.ids[0], kStart);
  EXPECT_EQ(c.corrupted.ids[9], kEnd);
}

TEST(MlmCorrupt, SameSeedSameCorruption) {
  Rng a(3), b(3);
  for (int t = 0; t < 10; ++t) EXPECT_EQ(mlm_corrupt(sentence(15), 0.15, a).corrupted, mlm_corrupt(sentence(15), 0.15, b).corrupted);
}

TEST(PrepareBatch, WindowTrainsEveryPositionButStart) {
  Rng rng(4);
  const std::vector<EncodedSentence> s{sentence(5), sentence(9), sentence(3)};
  const auto b = prepare_batch(s, MaskRegime::window, 0.15, 64, rng);
  EXPECT_EQ(b.target_count, 4u + 8u + 2u);
}

TEST(PrepareBatch, CausalTargetsAreNextTokens) {
  Rng rng(4);
  const std::vector<EncodedSentence> s{sentence(5)};
  const auto b = prepare_batch(s, MaskRegime::causal, 0.15, 64, rng);
  EXPECT_EQ(b.target_count, 4u);
  for (std::size_t i = 0; i + 1 < 5; ++i) EXPECT_EQ(b.targets[i], s[0].ids[i + 1]);
  EXPECT_EQ(b.weights[4], 0.0f);
}

TEST(PrepareBatch, MlmTargetsAboutFifteenPercent) {
  Rng rng(5);
  double total = 0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    const std::vector<EncodedSentence> s{sentence(20)};
    total += static_cast<double>(prepare_batch(s, MaskRegime::mlm, 0.15, 64, rng).target_count);
  }
  // 18 maskable positions: 18·0.15 = 2.7, plus the forced floor when none is drawn.
  const double expected = 18 * 0.15 + std::pow(0.85, 18);
  EXPECT_NEAR(total / trials, expected, 0.15);
}

TEST(TrainStep, RepeatedBatchOverfits) {
  Model<float> m(tiny(MaskRegime::window), Rng(1));
  Rng rng(2), drop(3);
  const std::vector<EncodedSentence> s{sentence(8), sentence(6)};
  const auto b = prepare_batch(s, MaskRegime::window, 0.15, 12, rng);
  const auto first = train_step(m, b, AdamConfig{1e-2}, drop);
  StepResult last;
  for (int i = 0; i < 50; ++i) last = train_step(m, b, AdamConfig{1e-2}, drop);
  EXPECT_LT(last.loss, first.loss);
  EXPECT_EQ(first.targets, 12u);
  for (const auto& p : m.parameters()) EXPECT_EQ(p.step_count, 51u);
}

TEST(LossLog, CsvFormat) {
  LossLog log;
  log.append({10, MaskRegime::window, 1.5, 64, 12.5});
  log.append({20, MaskRegime::window, 1.25, 60, 25.0});
  EXPECT_EQ(log.to_csv(), "step,regime,loss,targets,ms\n10,window,1.500000,64,12.500\n20,window,1.250000,60,25.000\n");
  EXPECT_THROW(log.append({20, MaskRegime::window, 1.0, 1, 1.0}), Error);
}

std::vector<EncodedSentence> toy_corpus(const Vocabulary& v, std::size_t n) {
  std::vector<EncodedSentence> out;
  for (const auto& s : synthetic::grammar_corpus(n, 17)) out.push_back(v.encode(s, 16));
  return out;
}

Vocabulary toy_vocab() {
  std::string text;
  for (const auto& s : synthetic::grammar_corpus(200, 17)) text += s + "\n";
  return Vocabulary::build(text, 1000, 1);
}

TrainConfig quick(MaskRegime r, std::size_t steps = 6) {
  TrainConfig t;
  t.batch_size = 4;
  t.steps = steps;
  t.lr = 1e-3;
  t.seed = 99;
  t.regime = r;
  t.log_every = 2;
  return t;
}

ModelConfig toy_model() {
  ModelConfig c;
  c.num_layers = 2;
  c.model_dim = 16;
  c.num_heads = 2;
  c.ffn_dim = 32;
  c.max_len = 16;
  return c;
}

TEST(TrainLoop, SameSeedGivesIdenticalCheckpoints) {
  const auto v = toy_vocab();
  const auto corpus = toy_corpus(v, 40);
  for (auto r : {MaskRegime::causal, MaskRegime::window, MaskRegime::mlm}) {
    const auto a = train_loop(corpus, v, toy_model(), quick(r));
    const auto b = train_loop(corpus, v, toy_model(), quick(r));
    EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint)) << to_string(r);
    ASSERT_EQ(a.log.rows.size(), 3u);
    EXPECT_EQ(a.log.rows[0].step, 2u);
    EXPECT_EQ(a.log.rows[2].step, 6u);
    EXPECT_EQ(a.log.rows[1].loss, b.log.rows[1].loss);
  }
}

TEST(TrainLoop, LogsFinalStepOffCadence) {
  const auto v = toy_vocab();
  auto t = quick(MaskRegime::window, 5);
  const auto r = train_loop(toy_corpus(v, 40), v, toy_model(), t);
  ASSERT_EQ(r.log.rows.size(), 3u);
  EXPECT_EQ(r.log.rows.back().step, 5u);
}

TEST(TrainLoop, CorpusSmallerThanBatchIsRejected) {
  const auto v = toy_vocab();
  auto t = quick(MaskRegime::window);
  t.batch_size = 50;
  EXPECT_THROW(train_loop(toy_corpus(v, 10), v, toy_model(), t), Error);
}

TEST(TrainLoop, DivergenceIsReportedWithStep) {
  const auto v = toy_vocab();
  auto t = quick(MaskRegime::window, 3);
  t.lr = 1e30;
  try {
    train_loop(toy_corpus(v, 40), v, toy_model(), t);
    FAIL() << "expected a numeric failure";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    vocab = toy_vocab();
    result = std::make_unique<TrainResult>(train_loop(toy_corpus(vocab, 40), vocab, toy_model(), quick(MaskRegime::window, 3)));
  }
  Vocabulary vocab;
  std::unique_ptr<TrainResult> result;
};

TEST_F(CheckpointTest, RoundTripGivesBitwiseIdenticalLogits) {
  const auto path = std::filesystem::temp_directory_path() / "wlm_roundtrip.ckpt";
  save_checkpoint(result->checkpoint, path);
  const auto back = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.vocab, result->checkpoint.vocab);
  EXPECT_EQ(back.train, result->checkpoint.train);
  EXPECT_EQ(back.config(), result->checkpoint.config());
  EXPECT_EQ(back.completed_steps, 3u);
  for (const auto& s : synthetic::grammar_corpus(10, 5)) {
    const auto ids = vocab.encode(s, 16).ids;
    Graph<float> g(false);
    EXPECT_EQ(back.model.forward(g, SequenceBatch::single(ids)).logits->data,
              result->checkpoint.model.forward(g, SequenceBatch::single(ids)).logits->data);
  }
  const auto& p0 = back.model.parameters()[0];
  EXPECT_EQ(p0.adam_m.data, result->checkpoint.model.parameters()[0].adam_m.data);
  EXPECT_EQ(p0.step_count, 3u);
}

TEST_F(CheckpointTest, FlippedByteIsCorruption) {
  auto bytes = serialize_checkpoint(result->checkpoint);
  bytes[bytes.size() / 2] ^= 0x5A;
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::corruption);
  }
}

TEST_F(CheckpointTest, TruncationNamesOffset) {
  auto bytes = serialize_checkpoint(result->checkpoint);
  bytes.resize(bytes.size() - 100);
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::corruption);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}

TEST_F(CheckpointTest, OtherVersionIsIncompatible) {
  auto bytes = serialize_checkpoint(result->checkpoint);
  bytes[4] = 7;
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::incompatible);
  }
}

TEST_F(CheckpointTest, BadMagicIsCorruption) {
  auto bytes = serialize_checkpoint(result->checkpoint);
  bytes[0] = 'X';
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::corruption);
  }
}

TEST(CheckpointIo, MissingFileIsIoError) {
  try {
    load_checkpoint("/nonexistent/dir/model.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

}  // namespace
}  // namespace wlm
