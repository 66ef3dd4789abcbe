#pragma once

// Readers for the evaluation inputs and a small CSV helper.
//
//   pairs TSV     gold<TAB>sentence_a<TAB>sentence_b
//   messages TSV  label<TAB>text      label is literally "ham" or "spam"
//   N-best JSONL  {"source": ..., "reference": ..., "candidates": [{"text": ..., "s2s_score": ...}, ...]}

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wlm/error.hpp"

namespace wlm {

struct ScoredPair {
  std::string sentence_a;
  std::string sentence_b;
  double gold = 0.0;
};

enum class SmsLabel : int { ham = 0, spam = 1 };

struct LabeledMessage {
  SmsLabel label = SmsLabel::ham;
  std::string text;
};

struct Candidate {
  std::string text;
  double s2s_score = 0.0;
};

inline constexpr std::size_t kMaxCandidates = 20;

struct NBestEntry {
  std::string source;
  std::string reference;
  std::vector<Candidate> candidates;
};

namespace formats_detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

inline bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

inline double parse_double(std::string_view s, std::size_t lineno) {
  try {
    std::size_t used = 0;
    const std::string str(s);
    const double v = std::stod(str, &used);
    if (used != str.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::ingestion, "line " + std::to_string(lineno) + ": '" + std::string(s) + "' is not a number");
  }
}

}  // namespace formats_detail

// Gold scores must lie in [0, 5], the union of the STSb (0–5) and SICK (1–5)
// ranges. Blank lines are ignored.
inline std::vector<ScoredPair> read_scored_pairs(std::istream& in) {
  std::vector<ScoredPair> out;
  std::string line;
  for (std::size_t lineno = 1; formats_detail::next_line(in, line); ++lineno) {
    if (line.empty()) continue;
    const auto cols = formats_detail::split_tabs(line);
    if (cols.size() != 3)
      fail(ErrorKind::ingestion, "line " + std::to_string(lineno) + ": expected 3 tab-separated columns, found " +
                                     std::to_string(cols.size()));
    const double gold = formats_detail::parse_double(cols[0], lineno);
    if (!(gold >= 0.0 && gold <= 5.0))
      fail(ErrorKind::ingestion, "line " + std::to_string(lineno) + ": gold score outside [0, 5]");
    out.push_back({std::string(cols[1]), std::string(cols[2]), gold});
  }
  return out;
}

inline std::vector<LabeledMessage> read_messages(std::istream& in) {
  std::vector<LabeledMessage> out;
  std::string line;
  for (std::size_t lineno = 1; formats_detail::next_line(in, line); ++lineno) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) fail(ErrorKind::ingestion, "line " + std::to_string(lineno) + ": missing tab");
    const std::string_view label(line.data(), tab);
    LabeledMessage msg;
    if (label == "ham") msg.label = SmsLabel::ham;
    else if (label == "spam") msg.label = SmsLabel::spam;
    else fail(ErrorKind::ingestion, "line " + std::to_string(lineno) + ": label must be ham or spam, got '" + std::string(label) + "'");
    msg.text = line.substr(tab + 1);
    out.push_back(std::move(msg));
  }
  return out;
}

inline std::vector<NBestEntry> read_nbest(std::istream& in) {
  std::vector<NBestEntry> out;
  std::string line;
  for (std::size_t lineno = 1; formats_detail::next_line(in, line); ++lineno) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto where = "line " + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::ingestion, where + "invalid JSON (" + e.what() + ")");
    }
    try {
      NBestEntry e;
      e.source = j.at("source").get<std::string>();
      e.reference = j.at("reference").get<std::string>();
      for (const auto& c : j.at("candidates")) e.candidates.push_back({c.at("text").get<std::string>(), c.at("s2s_score").get<double>()});
      if (e.candidates.empty()) fail(ErrorKind::ingestion, where + "candidate list is empty");
      if (e.candidates.size() > kMaxCandidates)
        fail(ErrorKind::ingestion, where + "more than " + std::to_string(kMaxCandidates) + " candidates");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ingestion, where + "missing or mistyped field (" + e.what() + ")");
    }
  }
  return out;
}

inline std::string nbest_to_json_line(const NBestEntry& e) {
  nlohmann::json j;
  j["source"] = e.source;
  j["reference"] = e.reference;
  j["candidates"] = nlohmann::json::array();
  for (const auto& c : e.candidates) j["candidates"].push_back({{"text", c.text}, {"s2s_score", c.s2s_score}});
  return j.dump();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(ErrorKind::io, "short write to " + path.string());
}

// RFC 4180 quoting when needed.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

// Fixed-precision formatting so reports are byte-stable.
inline std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace wlm
