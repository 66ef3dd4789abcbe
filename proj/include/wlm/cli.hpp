#pragma once

// Command-line front end. Each subcommand resolves its flags into a JSON
// config object and hands it to run_command(); a manifest written next to
// the primary output stores that object, so `--manifest PATH` replays a run
// through the same code path.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wlm/checkpoint.hpp"
#include "wlm/eval.hpp"
#include "wlm/formats.hpp"
#include "wlm/hash.hpp"
#include "wlm/repr.hpp"
#include "wlm/tokenizer.hpp"
#include "wlm/training.hpp"
#include "wlm/version.hpp"

namespace wlm::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

inline std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string file_hash(const std::string& path) { return hex64(fnv1a(read_file(path))); }

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    T v{};
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || end != item.data() + item.size())
      fail(ErrorKind::config, std::string("bad ") + what + " entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) fail(ErrorKind::config, std::string(what) + " list is empty");
  return out;
}

// Input files per command; their content hashes go into the manifest.
inline std::vector<std::string> input_keys(const std::string& command) {
  if (command == "build-vocab") return {"corpus"};
  if (command == "train") return {"corpus", "vocab"};
  if (command == "eval-sts") return {"ckpt", "pairs"};
  if (command == "eval-sms") return {"ckpt", "data"};
  if (command == "rerank") return {"ckpt", "nbest"};
  if (command == "bench") return {"ckpts"};
  fail(ErrorKind::config, "unknown command '" + command + "'");
}

inline json input_hashes(const std::string& command, const json& cfg) {
  json out = json::object();
  for (const auto& key : input_keys(command))
    for (const auto& path : split_list(cfg.at(key).get<std::string>())) out[path] = file_hash(path);
  return out;
}

inline std::vector<ReprLevel> parse_levels(const std::string& s) {
  std::vector<ReprLevel> out;
  for (const auto& item : split_list(s)) out.push_back(ReprLevel::parse(item));
  if (out.empty()) fail(ErrorKind::config, "no representation level given (valid: embed, context, context:k, output)");
  return out;
}

inline std::vector<std::string> read_nonblank_lines(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> out;
  for (std::string line; formats_detail::next_line(in, line);)
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
  return out;
}

// ---------------------------------------------------------------------------
// Commands. Each returns the path of its primary output.

inline std::string cmd_build_vocab(const json& cfg, std::ostream& log) {
  std::istringstream in(read_file(cfg.at("corpus").get<std::string>()));
  const auto vocab = Vocabulary::build(in, cfg.at("max_size").get<std::size_t>(), cfg.at("min_freq").get<std::size_t>());
  const auto out = cfg.at("out").get<std::string>();
  write_file(out, vocab.serialize());
  log << "vocabulary: " << vocab.size() << " entries -> " << out << "\n";
  return out;
}

inline std::string cmd_train(const json& cfg, std::ostream& log) {
  std::istringstream vin(read_file(cfg.at("vocab").get<std::string>()));
  const auto vocab = Vocabulary::load(vin);
  ModelConfig mc;
  mc.num_layers = cfg.at("layers");
  mc.model_dim = cfg.at("dim");
  mc.num_heads = cfg.at("heads");
  mc.ffn_dim = cfg.at("ffn");
  mc.max_len = cfg.at("max_len");
  mc.dropout_rate = cfg.at("dropout");
  mc.mlm_prob = cfg.at("mlm_prob");
  TrainConfig tc;
  tc.batch_size = cfg.at("batch");
  tc.steps = cfg.at("steps");
  tc.lr = cfg.at("lr");
  tc.seed = cfg.at("seed");
  tc.regime = parse_regime(cfg.at("regime").get<std::string>());
  tc.log_every = cfg.at("log_every");

  std::vector<EncodedSentence> corpus;
  for (const auto& line : read_nonblank_lines(cfg.at("corpus").get<std::string>())) corpus.push_back(vocab.encode(line, mc.max_len));
  auto result = train_loop(corpus, vocab, mc, tc, [&](const LossRow& r) { log << LossLog::format_row(r) << "\n"; });
  const auto out = cfg.at("out").get<std::string>();
  save_checkpoint(result.checkpoint, out);
  write_file(cfg.at("log").get<std::string>(), result.log.to_csv());
  log << "checkpoint -> " << out << "\n";
  return out;
}

inline std::string cmd_eval_sts(const json& cfg, std::ostream& log) {
  const auto ck = load_checkpoint(cfg.at("ckpt").get<std::string>());
  std::istringstream in(read_file(cfg.at("pairs").get<std::string>()));
  const auto pairs = read_scored_pairs(in);
  std::string summary = "level,pearson,pairs,skipped\n";
  std::string detail = "level,index,gold,predicted\n";
  for (const auto& level : parse_levels(cfg.at("level").get<std::string>())) {
    const auto r = sts_eval(ck.model, ck.vocab, pairs, level);
    summary += r.level + "," + fmt(r.pearson) + "," + std::to_string(r.used) + "," + std::to_string(r.skipped) + "\n";
    for (const auto& row : r.rows)
      detail += r.level + "," + std::to_string(row.index) + "," + fmt(row.gold) + "," + fmt(row.predicted) + "\n";
    log << r.level << ": r = " << fmt(r.pearson, 4) << " over " << r.used << " pairs\n";
  }
  const auto out = cfg.at("out").get<std::string>();
  write_file(out, summary);
  write_file(out + ".pairs.csv", detail);
  return out;
}

inline std::string cmd_eval_sms(const json& cfg, std::ostream& log) {
  const auto ck = load_checkpoint(cfg.at("ckpt").get<std::string>());
  std::istringstream in(read_file(cfg.at("data").get<std::string>()));
  const auto messages = read_messages(in);
  LogRegConfig probe;
  probe.epochs = cfg.at("probe_epochs");
  probe.lr = cfg.at("probe_lr");
  std::string csv = "level,accuracy,majority_rate,train,test,split_seed,ham_as_ham,ham_as_spam,spam_as_ham,spam_as_spam\n";
  for (const auto& level : parse_levels(cfg.at("level").get<std::string>())) {
    const auto r = sms_eval(ck.model, ck.vocab, messages, level, cfg.at("split_seed"), probe);
    csv += r.level + "," + fmt(r.accuracy) + "," + fmt(r.majority_rate) + "," + std::to_string(r.train_size) + "," +
           std::to_string(r.test_size) + "," + std::to_string(r.split_seed) + "," + std::to_string(r.confusion[0][0]) + "," +
           std::to_string(r.confusion[0][1]) + "," + std::to_string(r.confusion[1][0]) + "," +
           std::to_string(r.confusion[1][1]) + "\n";
    log << r.level << ": accuracy " << fmt(r.accuracy, 4) << " (majority " << fmt(r.majority_rate, 4) << ")\n";
  }
  const auto out = cfg.at("out").get<std::string>();
  write_file(out, csv);
  return out;
}

inline std::string cmd_rerank(const json& cfg, std::ostream& log) {
  const auto ck = load_checkpoint(cfg.at("ckpt").get<std::string>());
  std::istringstream in(read_file(cfg.at("nbest").get<std::string>()));
  const auto entries = read_nbest(in);
  if (entries.empty()) fail(ErrorKind::ingestion, "N-best file has no entries");
  RerankConfig rc{cfg.at("lambda").get<double>()};
  const auto choices = rerank(ck.model, ck.vocab, entries, rc);

  std::string csv = "entry,selected,s2s_score,lm_score,combined,text\n";
  std::vector<std::string> selected, beam, refs;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& c = choices[i];
    const auto& text = entries[i].candidates[c.index].text;
    csv += std::to_string(i) + "," + std::to_string(c.index) + "," + fmt(c.s2s) + "," + fmt(c.lm) + "," + fmt(c.combined) + "," +
           csv_field(text) + "\n";
    selected.push_back(text);
    beam.push_back(entries[i].candidates[beam_best(entries[i])].text);
    refs.push_back(entries[i].reference);
  }
  const auto b = corpus_bleu(selected, refs);
  const auto base = corpus_bleu(beam, refs);
  std::string summary = "lambda,entries,bleu,beam_bleu,p1,p2,p3,p4,brevity_penalty,smoothing\n";
  summary += fmt(rc.lambda) + "," + std::to_string(entries.size()) + "," + fmt(b.bleu) + "," + fmt(base.bleu);
  for (double p : b.precision) summary += "," + fmt(p);
  summary += "," + fmt(b.brevity_penalty) + ",add-epsilon-1e-9\n";

  const auto out = cfg.at("out").get<std::string>();
  write_file(out, csv);
  write_file(out + ".bleu.csv", summary);
  log << "BLEU " << fmt(b.bleu, 4) << " (beam 1-best " << fmt(base.bleu, 4) << ")\n";
  return out;
}

inline std::string cmd_bench(const json& cfg, std::ostream& log) {
  std::vector<Checkpoint> cks;
  for (const auto& path : split_list(cfg.at("ckpts").get<std::string>())) cks.push_back(load_checkpoint(path));
  if (cks.empty()) fail(ErrorKind::config, "no checkpoints given");
  std::vector<const Model<float>*> models;
  for (const auto& ck : cks) models.push_back(&ck.model);
  const auto rows = runtime_bench(models, parse_list<std::size_t>(cfg.at("lengths").get<std::string>(), "lengths"),
                                  cfg.at("trials"), cfg.at("seed"));
  std::string csv = "regime,n,mean_ms,passes\n";
  for (const auto& r : rows) {
    csv += std::string(to_string(r.regime)) + "," + std::to_string(r.n) + "," + fmt(r.mean_ms, 4) + "," +
           std::to_string(r.passes) + "\n";
    log << to_string(r.regime) << " n=" << r.n << ": " << fmt(r.mean_ms, 3) << " ms, " << r.passes << " passes\n";
  }
  const auto out = cfg.at("out").get<std::string>();
  write_file(out, csv);
  return out;
}

inline std::string dispatch(const std::string& command, const json& cfg, std::ostream& log) {
  if (command == "build-vocab") return cmd_build_vocab(cfg, log);
  if (command == "train") return cmd_train(cfg, log);
  if (command == "eval-sts") return cmd_eval_sts(cfg, log);
  if (command == "eval-sms") return cmd_eval_sms(cfg, log);
  if (command == "rerank") return cmd_rerank(cfg, log);
  if (command == "bench") return cmd_bench(cfg, log);
  fail(ErrorKind::config, "unknown command '" + command + "'");
}

// Runs one command and writes its manifest.
inline void run_command(const std::string& command, const json& cfg, std::ostream& log) {
  json manifest;
  manifest["command"] = command;
  manifest["config"] = cfg;
  manifest["inputs"] = input_hashes(command, cfg);
  manifest["seed"] = cfg.contains("seed") ? cfg.at("seed") : json(nullptr);
  manifest["version"] = kVersion;
  manifest["started_at"] = utc_now();
  const auto out = dispatch(command, cfg, log);
  manifest["finished_at"] = utc_now();
  write_file(manifest_path(out), manifest.dump(2) + "\n");
}

inline void replay(const std::string& path, std::ostream& log) {
  json m;
  try {
    m = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::ingestion, "manifest " + path + " is not valid JSON (" + e.what() + ")");
  }
  try {
    const auto command = m.at("command").get<std::string>();
    const auto& cfg = m.at("config");
    const auto now = input_hashes(command, cfg);
    if (now != m.at("inputs")) fail(ErrorKind::ingestion, "inputs listed in " + path + " have changed since the recorded run");
    run_command(command, cfg, log);
  } catch (const json::exception& e) {
    fail(ErrorKind::ingestion, "manifest " + path + " is malformed (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Window-masked transformer language models: training, evaluation and benchmarking"};
  app.require_subcommand(0, 1);
  app.set_version_flag("--version", std::string(kVersion));
  std::string manifest;
  app.add_option("--manifest", manifest, "Replay the run recorded in a manifest file");

  json cfg;

  auto* bv = app.add_subcommand("build-vocab", "Build a word-level vocabulary from a corpus");
  std::string bv_corpus, bv_out;
  std::size_t max_size = 10000, min_freq = 2;
  bv->add_option("--corpus", bv_corpus, "Corpus, one sentence per line")->required();
  bv->add_option("--out", bv_out, "Vocabulary file to write")->required();
  bv->add_option("--max-size", max_size, "Maximum vocabulary size including specials")->capture_default_str();
  bv->add_option("--min-freq", min_freq, "Minimum token count")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint and loss log");
  const ModelConfig md;
  const TrainConfig td;
  std::string tr_corpus, tr_vocab, tr_out, tr_log, regime = to_string(td.regime);
  std::size_t steps = td.steps, batch = td.batch_size, seed = td.seed, log_every = td.log_every;
  std::size_t layers = md.num_layers, dim = md.model_dim, heads = md.num_heads, ffn = md.ffn_dim, max_len = md.max_len;
  double lr = td.lr, dropout = md.dropout_rate, mlm_prob = md.mlm_prob;
  tr->add_option("--corpus", tr_corpus, "Training corpus, one sentence per line")->required();
  tr->add_option("--vocab", tr_vocab, "Vocabulary file")->required();
  tr->add_option("--regime", regime, "Attention regime")->check(CLI::IsMember({"causal", "window", "mlm"}))->capture_default_str();
  tr->add_option("--steps", steps)->capture_default_str();
  tr->add_option("--batch", batch)->capture_default_str();
  tr->add_option("--lr", lr)->capture_default_str();
  tr->add_option("--seed", seed)->capture_default_str();
  tr->add_option("--out", tr_out, "Checkpoint to write")->required();
  tr->add_option("--log", tr_log, "Loss log CSV (default: <out>.loss.csv)");
  tr->add_option("--log-every", log_every)->capture_default_str();
  tr->add_option("--layers", layers)->capture_default_str();
  tr->add_option("--dim", dim)->capture_default_str();
  tr->add_option("--heads", heads)->capture_default_str();
  tr->add_option("--ffn", ffn)->capture_default_str();
  tr->add_option("--max-len", max_len)->capture_default_str();
  tr->add_option("--dropout", dropout)->capture_default_str();
  tr->add_option("--mlm-prob", mlm_prob)->capture_default_str();

  std::string ckpt, level = "context", ev_out;
  auto* sts = app.add_subcommand("eval-sts", "Pearson correlation of cosine similarity against gold scores");
  std::string pairs;
  sts->add_option("--ckpt", ckpt)->required();
  sts->add_option("--pairs", pairs, "TSV: gold, sentence_a, sentence_b")->required();
  sts->add_option("--level", level, "Comma-separated levels: embed, context, context:k, output")->capture_default_str();
  sts->add_option("--out", ev_out, "Summary CSV; per-pair rows go to <out>.pairs.csv")->required();

  auto* sms = app.add_subcommand("eval-sms", "Logistic-regression probe on ham/spam messages");
  std::string data;
  std::size_t split_seed = 0, probe_epochs = LogRegConfig{}.epochs;
  double probe_lr = LogRegConfig{}.lr;
  sms->add_option("--ckpt", ckpt)->required();
  sms->add_option("--data", data, "TSV: label, text")->required();
  sms->add_option("--level", level)->capture_default_str();
  sms->add_option("--split-seed", split_seed)->capture_default_str();
  sms->add_option("--probe-epochs", probe_epochs)->capture_default_str();
  sms->add_option("--probe-lr", probe_lr)->capture_default_str();
  sms->add_option("--out", ev_out)->required();

  auto* rr = app.add_subcommand("rerank", "Rerank N-best lists and report corpus BLEU");
  std::string nbest;
  double lambda = RerankConfig{}.lambda;
  rr->add_option("--ckpt", ckpt)->required();
  rr->add_option("--nbest", nbest, "JSON lines with source, reference, candidates")->required();
  rr->add_option("--lambda", lambda, "Weight of the LM score")->capture_default_str();
  rr->add_option("--out", ev_out, "Selections CSV; BLEU goes to <out>.bleu.csv")->required();

  auto* bn = app.add_subcommand("bench", "Time sentence scoring per regime and length");
  std::string ckpts, lengths = "5,10,20,40";
  std::size_t trials = 10, bench_seed = 0;
  bn->add_option("--ckpts", ckpts, "Comma-separated checkpoints")->required();
  bn->add_option("--lengths", lengths)->capture_default_str();
  bn->add_option("--trials", trials)->capture_default_str();
  bn->add_option("--seed", bench_seed)->capture_default_str();
  bn->add_option("--out", ev_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (!manifest.empty()) {
      if (!app.get_subcommands().empty()) fail(ErrorKind::config, "--manifest cannot be combined with a subcommand");
      replay(manifest, err);
      return kExitOk;
    }
    std::string command;
    if (bv->parsed()) {
      command = "build-vocab";
      cfg = {{"corpus", bv_corpus}, {"out", bv_out}, {"max_size", max_size}, {"min_freq", min_freq}};
    } else if (tr->parsed()) {
      command = "train";
      cfg = {{"corpus", tr_corpus}, {"vocab", tr_vocab}, {"regime", regime}, {"steps", steps}, {"batch", batch},
             {"lr", lr}, {"seed", seed}, {"out", tr_out}, {"log", tr_log.empty() ? tr_out + ".loss.csv" : tr_log},
             {"log_every", log_every}, {"layers", layers}, {"dim", dim}, {"heads", heads}, {"ffn", ffn},
             {"max_len", max_len}, {"dropout", dropout}, {"mlm_prob", mlm_prob}};
    } else if (sts->parsed()) {
      command = "eval-sts";
      cfg = {{"ckpt", ckpt}, {"pairs", pairs}, {"level", level}, {"out", ev_out}};
    } else if (sms->parsed()) {
      command = "eval-sms";
      cfg = {{"ckpt", ckpt}, {"data", data}, {"level", level}, {"split_seed", split_seed},
             {"probe_epochs", probe_epochs}, {"probe_lr", probe_lr}, {"out", ev_out}};
    } else if (rr->parsed()) {
      command = "rerank";
      cfg = {{"ckpt", ckpt}, {"nbest", nbest}, {"lambda", lambda}, {"out", ev_out}};
    } else if (bn->parsed()) {
      command = "bench";
      cfg = {{"ckpts", ckpts}, {"lengths", lengths}, {"trials", trials}, {"seed", bench_seed}, {"out", ev_out}};
    } else {
      err << app.help();
      return kExitUsage;
    }
    // Fail on unknown levels before touching any file.
    if (cfg.contains("level")) (void)parse_levels(level);
    run_command(command, cfg, err);
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::numeric ? kExitNumeric : kExitUsage;
  }
}

}  // namespace wlm::cli
