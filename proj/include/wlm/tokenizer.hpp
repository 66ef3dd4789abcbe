#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wlm/error.hpp"
#include "wlm/hash.hpp"
#include "wlm/tensor.hpp"

namespace wlm {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kStart = 2;
inline constexpr TokenId kEnd = 3;
inline constexpr TokenId kMask = 4;
inline constexpr std::size_t kNumSpecials = 5;

inline constexpr std::array<std::string_view, kNumSpecials> kSpecialTokens = {"<pad>", "<unk>", "<start>", "<end>",
                                                                               "<mask>"};

inline bool is_special(TokenId id) noexcept { return id < kNumSpecials; }

// Lowercased split on whitespace; every ASCII punctuation character becomes a
// token of its own. Bytes >= 0x80 are kept verbatim so UTF-8 passes through.
// The literal "<unk>" stays whole so decoded text re-encodes to the same ids.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  const std::string_view unk = kSpecialTokens[kUnk];
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    const auto c = static_cast<unsigned char>(ch);
    if (text.substr(i, unk.size()) == unk) {
      flush();
      out.emplace_back(unk);
      i += unk.size() - 1;
    } else if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

struct EncodedSentence {
  std::vector<TokenId> ids;

  std::size_t size() const noexcept { return ids.size(); }
  bool operator==(const EncodedSentence&) const = default;
};

class Vocabulary {
 public:
  Vocabulary() {
    for (auto s : kSpecialTokens) push(std::string(s));
  }

  std::size_t size() const noexcept { return id_to_token_.size(); }

  TokenId id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const { return token_to_id_.count(std::string(token)) != 0; }

  const std::string& token(TokenId id) const {
    if (id >= size())
      fail(ErrorKind::range, "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
    return id_to_token_[id];
  }

  // Frequency-ranked, ties broken lexicographically; keeps at most
  // max_size − 5 ordinary tokens seen at least min_freq times.
  static Vocabulary build(std::istream& corpus, std::size_t max_size, std::size_t min_freq) {
    if (max_size <= kNumSpecials)
      fail(ErrorKind::config, "vocabulary max_size must exceed " + std::to_string(kNumSpecials));
    std::unordered_map<std::string, std::size_t> counts;
    std::string line;
    std::size_t total = 0;
    while (std::getline(corpus, line)) {
      for (auto& tok : tokenize(line)) {
        ++counts[tok];
        ++total;
      }
    }
    if (total == 0) fail(ErrorKind::ingestion, "corpus contains no tokens");
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [tok, freq] : ranked) {
      if (vocab.size() >= max_size || freq < min_freq) break;
      if (!vocab.contains(tok)) vocab.push(tok);
    }
    return vocab;
  }

  static Vocabulary build(std::string_view corpus, std::size_t max_size, std::size_t min_freq) {
    std::istringstream in{std::string(corpus)};
    return build(in, max_size, min_freq);
  }

  // START + ids + END, truncating the token span so the result fits max_len.
  EncodedSentence encode(std::string_view text, std::size_t max_len) const {
    if (max_len < 3) fail(ErrorKind::config, "max_len must leave room for at least one token");
    const auto toks = tokenize(text);
    if (toks.empty()) fail(ErrorKind::empty_sentence, "text has no tokens: \"" + std::string(text) + "\"");
    EncodedSentence out;
    const std::size_t keep = std::min(toks.size(), max_len - 2);
    out.ids.reserve(keep + 2);
    out.ids.push_back(kStart);
    for (std::size_t i = 0; i < keep; ++i) out.ids.push_back(id(toks[i]));
    out.ids.push_back(kEnd);
    return out;
  }

  // Space-joined tokens; markers and padding are dropped, UNK shows as <unk>.
  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId i : ids) {
      const auto& tok = token(i);
      if (i == kPad || i == kStart || i == kEnd || i == kMask) continue;
      if (!out.empty()) out.push_back(' ');
      out += tok;
    }
    return out;
  }

  // One token per line; the first five lines are the special tokens, so the
  // line number of a token equals its id.
  void save(std::ostream& os) const {
    for (const auto& tok : id_to_token_) os << tok << '\n';
  }

  std::string serialize() const {
    std::ostringstream os;
    save(os);
    return os.str();
  }

  static Vocabulary load(std::istream& is) {
    Vocabulary vocab;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno < kNumSpecials) {
        if (line != kSpecialTokens[lineno])
          fail(ErrorKind::ingestion, "vocabulary header line " + std::to_string(lineno + 1) + " should be " +
                                         std::string(kSpecialTokens[lineno]) + ", found '" + line + "'");
      } else {
        if (line.empty()) fail(ErrorKind::ingestion, "empty token on vocabulary line " + std::to_string(lineno + 1));
        if (vocab.contains(line))
          fail(ErrorKind::ingestion, "duplicate token '" + line + "' on vocabulary line " + std::to_string(lineno + 1));
        vocab.push(line);
      }
      ++lineno;
    }
    if (lineno < kNumSpecials) fail(ErrorKind::ingestion, "vocabulary file is missing its special-token header");
    return vocab;
  }

  static Vocabulary parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    return load(in);
  }

  std::uint64_t content_hash() const { return fnv1a(serialize()); }

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  void push(std::string tok) {
    token_to_id_.emplace(tok, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(std::move(tok));
  }

  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

}  // namespace wlm
