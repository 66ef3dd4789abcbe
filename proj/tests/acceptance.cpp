// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"
#include "wlm/cli.hpp"
#include "wlm/memory.hpp"
#include "wlm/wlm.hpp"

namespace fs = std::filesystem;
using namespace wlm;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 3) { return fmt(v, digits); }

std::vector<std::string> grammar_text(std::size_t n, std::uint64_t seed) { return synthetic::grammar_corpus(n, seed); }

Vocabulary vocab_for(const std::vector<std::string>& lines) {
  std::string all;
  for (const auto& l : lines) all += l + "\n";
  return Vocabulary::build(all, 10000, 1);
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids{kStart};
  for (std::size_t i = 0; i + 2 < n; ++i) ids.push_back(static_cast<TokenId>(kNumSpecials + rng.below(vocab - kNumSpecials)));
  ids.push_back(kEnd);
  return ids;
}

// ---------------------------------------------------------------------------

Verdict gradient_correctness() {
  std::size_t graphs_ok = 0, checked = 0;
  std::string first;
  for (std::uint64_t seed = 1000; seed < 1100; ++seed) {
    auto rg = testing::random_graph(seed);
    const auto r = testing::check_gradients(rg.build, rg.pool->vars);
    checked += r.checked;
    if (r.ok()) ++graphs_ok;
    else if (first.empty()) first = "seed " + std::to_string(seed) + ": " + r.first_failure;
  }
  std::size_t models_ok = 0, rechecked = 0;
  for (auto regime : {MaskRegime::causal, MaskRegime::window, MaskRegime::mlm}) {
    ModelConfig c;
    c.num_layers = 1;
    c.model_dim = 8;
    c.num_heads = 2;
    c.ffn_dim = 16;
    c.vocab_size = 14;
    c.max_len = 8;
    c.dropout_rate = 0.0;
    c.regime = regime;
    Model<double> m(c, Rng(7));
    Rng rng(8);
    std::vector<EncodedSentence> sents{{random_ids(rng, 7, 14)}, {random_ids(rng, 5, 14)}, {random_ids(rng, 8, 14)}};
    const auto batch = prepare_batch(sents, regime, 0.3, c.max_len, rng);
    std::vector<Var<double>> leaves;
    for (auto& p : m.parameters()) leaves.push_back(p.value);
    const auto r = testing::check_gradients(testing::model_loss(m, batch), leaves, 1e-3, 1e-2, 1e-4, 1e-6);
    checked += r.checked;
    rechecked += r.rechecked;
    if (r.ok()) ++models_ok;
    else if (first.empty()) first = std::string("model ") + to_string(regime) + ": " + r.first_failure;
  }
  return {graphs_ok == 100 && models_ok == 3,
          std::to_string(graphs_ok) + "/100 random graphs, " + std::to_string(models_ok) + "/3 one-layer models, " +
              std::to_string(checked) + " partials at h=1e-3, " + std::to_string(rechecked) +
              " disagreeing there but matching at h=1e-6" + (first.empty() ? "" : "; first failure " + first)};
}

double relative_change(const Model<float>& m, const std::vector<TokenId>& ids, std::size_t at, std::size_t row, Rng& rng) {
  Graph<float> g(false);
  const auto batch = SequenceBatch::single(ids);
  auto emb = m.embed(g, batch);
  Rng unused(0);
  const auto base = *m.forward_embedded(g, emb, batch, false, unused).logits;
  auto moved = std::make_shared<Tensor<float>>(*emb);
  for (std::size_t c = 0; c < moved->cols(); ++c) moved->at(at, c) += static_cast<float>(rng.normal(0.0, 1.0));
  const auto after = *m.forward_embedded(g, moved, batch, false, unused).logits;
  double diff = 0, norm = 0;
  for (std::size_t c = 0; c < base.cols(); ++c) {
    diff += std::pow(static_cast<double>(after.at(row, c)) - base.at(row, c), 2);
    norm += std::pow(static_cast<double>(base.at(row, c)), 2);
  }
  return std::sqrt(diff) / std::sqrt(norm);
}

ModelConfig default_model(MaskRegime regime, std::size_t vocab, std::size_t layers = 3) {
  ModelConfig c;
  c.num_layers = layers;
  c.vocab_size = vocab;
  c.regime = regime;
  return c;
}

Verdict self_exclusion() {
  const auto vocab = vocab_for(grammar_text(200, 1));
  Model<float> one(default_model(MaskRegime::window, vocab.size(), 1), Rng(11));
  Model<float> three(default_model(MaskRegime::window, vocab.size(), 3), Rng(12));
  Rng rng(13);
  double worst = 0.0;
  std::size_t flowing = 0;
  for (int t = 0; t < 50; ++t) {
    const auto ids = random_ids(rng, 4 + rng.below(20), vocab.size());
    const auto i = 1 + rng.below(ids.size() - 1);
    worst = std::max(worst, relative_change(one, ids, i, i, rng));
    flowing += relative_change(three, ids, i, i, rng) > 1e-4;
  }
  return {worst < 1e-6 && flowing >= 45,
          "L=1 max relative change " + fmt(worst, 9) + " (< 1e-6); L=3 " + std::to_string(flowing) + "/50 draws above 1e-4"};
}

Verdict causality() {
  const auto vocab = vocab_for(grammar_text(200, 1));
  Model<float> m(default_model(MaskRegime::causal, vocab.size()), Rng(21));
  Rng rng(22);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const auto ids = random_ids(rng, 4 + rng.below(20), vocab.size());
    const auto j = 1 + rng.below(ids.size() - 1);
    for (std::size_t i = 0; i < j; ++i) worst = std::max(worst, relative_change(m, ids, j, i, rng));
  }
  return {worst < 1e-6, "max relative change at earlier positions " + fmt(worst, 9) + " over 50 draws"};
}

Verdict signal_ratio() {
  const auto text = grammar_text(2000, 31);
  const auto vocab = vocab_for(text);
  std::vector<EncodedSentence> all;
  for (const auto& s : text) all.push_back(vocab.encode(s, 64));
  Rng pick(32), corrupt(33);
  bool exact = true;
  double ratio_sum = 0.0;
  for (int b = 0; b < 100; ++b) {
    std::vector<EncodedSentence> batch;
    std::size_t expected = 0;
    for (int k = 0; k < 64; ++k) {
      batch.push_back(all[pick.below(all.size())]);
      expected += batch.back().size() - 1;
    }
    const auto w = prepare_batch(batch, MaskRegime::window, 0.15, 64, corrupt);
    const auto m = prepare_batch(batch, MaskRegime::mlm, 0.15, 64, corrupt);
    exact &= w.target_count == expected;
    ratio_sum += static_cast<double>(w.target_count) / static_cast<double>(m.target_count);
  }
  const double ratio = ratio_sum / 100.0;
  return {exact && ratio >= 4.0 && ratio <= 10.0,
          std::string("window count == sum(n-1) on every batch: ") + (exact ? "yes" : "no") + "; mean window/mlm ratio " +
              num(ratio) + " (needs 4..10)"};
}

Verdict complexity() {
  const auto vocab = vocab_for(grammar_text(200, 1));
  Model<float> w(default_model(MaskRegime::window, vocab.size()), Rng(41));
  Model<float> c(default_model(MaskRegime::causal, vocab.size()), Rng(41));
  Model<float> m(default_model(MaskRegime::mlm, vocab.size()), Rng(41));
  const std::vector<std::size_t> lengths{5, 10, 20, 40};
  const auto rows = runtime_bench({&w, &c, &m}, lengths, 10, 42);
  bool passes_ok = true;
  std::map<std::pair<MaskRegime, std::size_t>, double> ms;
  for (const auto& r : rows) {
    passes_ok &= r.passes == (r.regime == MaskRegime::mlm ? r.n - 2 : 1);
    ms[{r.regime, r.n}] = r.mean_ms;
  }
  auto ratio = [&](std::size_t n) { return ms[{MaskRegime::mlm, n}] / ms[{MaskRegime::window, n}]; };
  const bool ok = passes_ok && ratio(20) >= 3.0 && ratio(40) > ratio(5);
  return {ok, std::string("pass counts ") + (passes_ok ? "exact" : "WRONG") + "; mlm/window time ratio n=5 " + num(ratio(5), 2) +
                  ", n=20 " + num(ratio(20), 2) + ", n=40 " + num(ratio(40), 2)};
}

Verdict trainability() {
  const auto text = grammar_text(200, 51);
  const auto vocab = vocab_for(text);
  std::vector<EncodedSentence> corpus;
  for (const auto& s : text) corpus.push_back(vocab.encode(s, 64));
  bool ok = true;
  std::string detail;
  for (auto regime : {MaskRegime::window, MaskRegime::causal, MaskRegime::mlm}) {
    TrainConfig tc;
    tc.steps = 300;
    tc.seed = 52;
    tc.regime = regime;
    tc.log_every = 1;
    bool finite = true;
    const auto res = train_loop(corpus, vocab, ModelConfig{}, tc, [&](const LossRow& r) { finite &= std::isfinite(r.loss); });
    const auto& rows = res.log.rows;
    auto mean = [&](std::size_t from, std::size_t to) {
      double s = 0;
      for (std::size_t i = from; i < to; ++i) s += rows[i].loss;
      return s / static_cast<double>(to - from);
    };
    const double initial = mean(0, 10), final = mean(rows.size() - 20, rows.size());
    const bool pass = finite && rows.size() == 300 && final < 0.5 * initial;
    ok &= pass;
    detail += std::string(detail.empty() ? "" : "; ") + to_string(regime) + " " + num(initial) + " -> " + num(final) +
              (pass ? "" : " (FAIL)");
  }
  return {ok, "mean of first 10 steps -> mean of last 20: " + detail};
}

Verdict metric_oracles() {
  Rng rng(61);
  double worst_p = 0, worst_c = 0, worst_b = 0;
  std::size_t confusion_bad = 0;
  const std::vector<std::string> lexicon{"a", "b", "c", "d", "e", "f"};
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(-5, 5);
      y[i] = rng.uniform(-5, 5) + (t % 2 ? x[i] : 0.0);
    }
    worst_p = std::max(worst_p, std::abs(pearson_r(x, y) - oracle::pearson(x, y)));
    worst_c = std::max(worst_c, std::abs(cosine_similarity(x, y) - oracle::cosine(x, y)));

    std::vector<std::string> cand, ref;
    for (std::size_t s = 0; s < 1 + rng.below(5); ++s) {
      auto sent = [&] {
        std::vector<std::string> w;
        for (std::size_t i = 0; i < 1 + rng.below(10); ++i) w.push_back(lexicon[rng.below(lexicon.size())]);
        return synthetic::join(w);
      };
      cand.push_back(sent());
      ref.push_back(sent());
    }
    worst_b = std::max(worst_b, std::abs(corpus_bleu(cand, ref).bleu - oracle::bleu(cand, ref)));

    std::vector<int> p(1 + rng.below(40)), a(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = static_cast<int>(rng.below(2));
      a[i] = static_cast<int>(rng.below(2));
    }
    const auto cm = confusion_matrix(p, a);
    for (int i : {0, 1})
      for (int j : {0, 1}) confusion_bad += cm[i][j] != oracle::count_pairs(p, a, i, j);
  }
  const bool ok = worst_p <= 1e-9 && worst_c <= 1e-9 && worst_b <= 1e-6 && confusion_bad == 0;
  return {ok, "max deviation pearson " + fmt(worst_p, 12) + ", cosine " + fmt(worst_c, 12) + ", bleu " + fmt(worst_b, 12) +
                  ", confusion mismatches " + std::to_string(confusion_bad) + " over 1000 instances each"};
}

Verdict reranking() {
  const auto entries = synthetic::nbest_entries(50, 20, 71);
  std::vector<std::string> lines = grammar_text(200, 1);
  const auto vocab = vocab_for(lines);
  Model<float> m(default_model(MaskRegime::window, vocab.size(), 1), Rng(72));
  const auto zero = rerank(m, vocab, entries, {0.0});
  std::size_t beam_match = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) beam_match += zero[i].index == beam_best(entries[i]);

  Rng rng(73);
  std::size_t arithmetic_ok = 0, shift_ok = 0;
  for (int t = 0; t < 20; ++t) {
    NBestEntry e;
    std::vector<double> lm, shifted;
    const double c = rng.uniform(-100, 100);
    for (std::size_t k = 0; k < 1 + rng.below(20); ++k) {
      e.candidates.push_back({"c", rng.uniform(-20, 0)});
      lm.push_back(rng.uniform(-60, 0));
      shifted.push_back(lm.back() + c);
    }
    const auto choice = select_candidate(e, lm, {0.5});
    std::size_t best = 0;
    double best_score = 0.5 * e.candidates[0].s2s_score + 0.5 * lm[0];
    for (std::size_t k = 1; k < lm.size(); ++k) {
      const double s = 0.5 * e.candidates[k].s2s_score + 0.5 * lm[k];
      if (s > best_score) {
        best = k;
        best_score = s;
      }
    }
    arithmetic_ok += choice.index == best && std::abs(choice.combined - best_score) < 1e-12;
    shift_ok += select_candidate(e, shifted, {0.5}).index == choice.index;
  }
  return {beam_match == 50 && arithmetic_ok == 20 && shift_ok == 20,
          "lambda=0 matches beam 1-best on " + std::to_string(beam_match) + "/50; hand arithmetic " +
              std::to_string(arithmetic_ok) + "/20; shift invariance " + std::to_string(shift_ok) + "/20"};
}

// CSV helper: header check plus numeric parse of selected columns.
bool csv_ok(const std::string& text, const std::string& header, std::size_t rows, std::vector<std::size_t> numeric) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) return false;
  const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++count;
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char ch : line) {
      if (ch == '"') quoted = !quoted;
      else if (ch == ',' && !quoted) {
        cells.push_back(cell);
        cell.clear();
      } else cell.push_back(ch);
    }
    cells.push_back(cell);
    if (cells.size() != columns) return false;
    for (auto k : numeric) {
      try {
        (void)std::stod(cells[k]);
      } catch (...) {
        return false;
      }
    }
  }
  return count == rows;
}

int cli(std::vector<std::string> args, std::string* err = nullptr) {
  args.insert(args.begin(), "wlm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, e;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, e);
  if (err) *err = e.str();
  return code;
}

bool manifest_ok(const std::string& path) {
  try {
    const auto m = nlohmann::json::parse(read_file(path));
    for (const char* k : {"command", "config", "inputs", "seed", "version", "started_at", "finished_at"})
      if (!m.contains(k)) return false;
    return !m["inputs"].empty();
  } catch (...) {
    return false;
  }
}

Verdict pipelines() {
  const auto dir = fs::temp_directory_path() / "wlm_acceptance_pipelines";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const std::string& name) { return (dir / name).string(); };

  const auto pairs = synthetic::sts_pairs(100, 81);
  const auto messages = synthetic::sms_messages(200, 82);
  const auto nbest = synthetic::nbest_entries(50, 20, 83);
  std::string corpus, pairs_tsv, sms_tsv, nbest_jsonl;
  for (const auto& s : grammar_text(400, 84)) corpus += s + "\n";
  for (const auto& m : synthetic::sms_messages(400, 85)) corpus += m.text + "\n";
  for (const auto& s : pairs) pairs_tsv += fmt(s.gold, 3) + "\t" + s.sentence_a + "\t" + s.sentence_b + "\n";
  for (const auto& m : messages) sms_tsv += std::string(m.label == SmsLabel::spam ? "spam" : "ham") + "\t" + m.text + "\n";
  for (const auto& e : nbest) nbest_jsonl += nbest_to_json_line(e) + "\n";
  write_file(p("corpus.txt"), corpus);
  write_file(p("pairs.tsv"), pairs_tsv);
  write_file(p("sms.tsv"), sms_tsv);
  write_file(p("nbest.jsonl"), nbest_jsonl);

  std::string err;
  std::vector<std::string> problems;
  auto step = [&](const std::string& what, std::vector<std::string> args) {
    if (cli(std::move(args), &err) != 0) problems.push_back(what + " failed: " + err);
  };
  step("build-vocab", {"build-vocab", "--corpus", p("corpus.txt"), "--out", p("vocab.txt")});
  step("train", {"train", "--corpus", p("corpus.txt"), "--vocab", p("vocab.txt"), "--steps", "100", "--batch", "32", "--lr",
                 "1e-3", "--seed", "3", "--out", p("model.ckpt")});
  step("eval-sts", {"eval-sts", "--ckpt", p("model.ckpt"), "--pairs", p("pairs.tsv"), "--level", "context,embed,output", "--out",
                    p("sts.csv")});
  step("eval-sms", {"eval-sms", "--ckpt", p("model.ckpt"), "--data", p("sms.tsv"), "--level", "context,embed,output",
                    "--split-seed", "5", "--out", p("sms.csv")});
  step("rerank", {"rerank", "--ckpt", p("model.ckpt"), "--nbest", p("nbest.jsonl"), "--out", p("rerank.csv")});
  if (!problems.empty()) return {false, problems.front()};

  const std::vector<std::string> outputs{"vocab.txt", "model.ckpt", "sts.csv", "sts.csv.pairs.csv", "sms.csv", "rerank.csv", "rerank.csv.bleu.csv"};
  std::map<std::string, std::string> first;
  for (const auto& o : outputs) first[o] = read_file(p(o));

  if (!csv_ok(first["sts.csv"], "level,pearson,pairs,skipped", 3, {1, 2, 3})) problems.push_back("sts.csv schema");
  if (!csv_ok(first["sts.csv.pairs.csv"], "level,index,gold,predicted", 300, {1, 2, 3})) problems.push_back("sts pairs schema");
  if (!csv_ok(first["sms.csv"],
              "level,accuracy,majority_rate,train,test,split_seed,ham_as_ham,ham_as_spam,spam_as_ham,spam_as_spam", 3,
              {1, 2, 3, 4, 5, 6, 7, 8, 9}))
    problems.push_back("sms.csv schema");
  if (!csv_ok(first["rerank.csv"], "entry,selected,s2s_score,lm_score,combined,text", 50, {0, 1, 2, 3, 4}))
    problems.push_back("rerank.csv schema");
  if (!csv_ok(first["rerank.csv.bleu.csv"], "lambda,entries,bleu,beam_bleu,p1,p2,p3,p4,brevity_penalty,smoothing", 1,
              {0, 1, 2, 3, 4, 5, 6, 7, 8}))
    problems.push_back("bleu schema");
  for (const char* m : {"vocab.txt", "model.ckpt", "sts.csv", "sms.csv", "rerank.csv"})
    if (!manifest_ok(p(std::string(m) + ".manifest.json"))) problems.push_back(std::string("manifest for ") + m);

  // Probe accuracy on the default (context) level.
  double accuracy = 0, majority = 0;
  {
    std::istringstream in(first["sms.csv"]);
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    accuracy = std::stod(cells.at(1));
    majority = std::stod(cells.at(2));
  }
  if (!(accuracy >= majority + 0.05)) problems.push_back("SMS accuracy " + num(accuracy) + " below majority " + num(majority) + " + 0.05");

  for (const char* m : {"vocab.txt", "model.ckpt", "sts.csv", "sms.csv", "rerank.csv"})
    if (cli({"--manifest", p(std::string(m) + ".manifest.json")}, &err) != 0) problems.push_back(std::string("replay ") + m + ": " + err);
  std::size_t identical = 0;
  for (const auto& o : outputs) {
    if (read_file(p(o)) == first[o]) ++identical;
    else problems.push_back(o + " differs on rerun");
  }

  const bool ok = problems.empty();
  if (ok) fs::remove_all(dir);
  return {ok, std::to_string(identical) + "/" + std::to_string(outputs.size()) + " outputs byte-identical on replay; SMS context accuracy " +
                  num(accuracy) + " vs majority " + num(majority) + (ok ? "" : "; problems: " + problems.front())};
}

Verdict checkpoint_round_trip() {
  const auto text = grammar_text(200, 91);
  const auto vocab = vocab_for(text);
  std::vector<EncodedSentence> corpus;
  for (const auto& s : text) corpus.push_back(vocab.encode(s, 64));
  TrainConfig tc;
  tc.steps = 3;
  tc.seed = 92;
  const auto res = train_loop(corpus, vocab, ModelConfig{}, tc);
  const auto path = fs::temp_directory_path() / "wlm_acceptance.ckpt";
  save_checkpoint(res.checkpoint, path);
  const auto back = load_checkpoint(path);
  fs::remove(path);
  Rng rng(93);
  std::size_t same = 0;
  for (int t = 0; t < 20; ++t) {
    const auto ids = random_ids(rng, 3 + rng.below(60), vocab.size());
    Graph<float> g(false);
    same += back.model.forward(g, SequenceBatch::single(ids)).logits->data ==
            res.checkpoint.model.forward(g, SequenceBatch::single(ids)).logits->data;
  }
  return {same == 20, std::to_string(same) + "/20 sentences with bitwise-identical logits after save and load"};
}

}  // namespace

int main() {
  tune_allocator();
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = no time limit
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 120, gradient_correctness},
      {2, "self-exclusion", 60, self_exclusion},
      {3, "causality", 0, causality},
      {4, "training-signal ratio", 0, signal_ratio},
      {5, "scoring complexity", 300, complexity},
      {6, "trainability", 600, trainability},
      {7, "metric oracles", 0, metric_oracles},
      {8, "reranking contract", 0, reranking},
      {9, "end-to-end pipelines", 0, pipelines},
      {10, "checkpoint round-trip", 0, checkpoint_round_trip},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      v.pass = false;
      v.detail += "; over the " + num(c.budget_s, 0) + " s budget";
    }
    failed += !v.pass;
    std::printf("[%s] criterion %d %s (%.1f s): %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, secs, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
