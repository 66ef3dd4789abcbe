#pragma once

// Binary checkpoint, little-endian throughout:
//
//   "WLM1"  u32 format_version
//   section*            tag[4]  u64 payload_length  payload
//   u64 checksum        FNV-1a over every preceding byte
//
// Sections: CONF (ModelConfig), TRCF (TrainConfig + completed steps),
// VOCB (vocabulary hash + text), PARM (named parameters with Adam state).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "wlm/hash.hpp"
#include "wlm/model.hpp"
#include "wlm/tokenizer.hpp"

namespace wlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'W', 'L', 'M', '1'};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t steps = 5000;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  MaskRegime regime = MaskRegime::window;
  std::size_t log_every = 100;

  void validate() const {
    if (batch_size < 1) fail(ErrorKind::config, "batch_size must be at least 1");
    if (steps < 1) fail(ErrorKind::config, "steps must be at least 1");
    if (!(lr > 0.0)) fail(ErrorKind::config, "lr must be positive");
    if (log_every < 1) fail(ErrorKind::config, "log_every must be at least 1");
  }

  bool operator==(const TrainConfig&) const = default;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  Vocabulary vocab;
  TrainConfig train;
  std::uint64_t completed_steps = 0;
  Model<float> model;

  const ModelConfig& config() const { return model.config(); }
};

namespace ckpt_detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void section(const char tag[4], const Writer& payload) {
    bytes(tag, 4);
    u64(payload.buf_.size());
    bytes(payload.buf_.data(), payload.buf_.size());
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t begin, std::size_t end) : buf_(buf), pos_(begin), end_(end) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ >= end_; }

  void need(std::size_t n) const {
    if (n > end_ - pos_)
      fail(ErrorKind::corruption, "checkpoint truncated at offset " + std::to_string(pos_) + " (needed " +
                                      std::to_string(n) + " bytes, " + std::to_string(end_ - pos_) + " available)");
  }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  Reader sub(std::size_t n) {
    need(n);
    Reader r(buf_, pos_, pos_ + n);
    pos_ += n;
    return r;
  }

 private:
  const std::vector<char>& buf_;
  std::size_t pos_;
  std::size_t end_;
};

inline void write_tensor(Writer& w, const std::vector<float>& v) {
  for (float x : v) w.f32(x);
}

inline void read_tensor(Reader& r, std::vector<float>& v) {
  r.need(v.size() * 4);
  for (auto& x : v) x = r.f32();
}

inline MaskRegime read_regime(Reader& r) {
  const auto code = r.u8();
  if (code > 2) fail(ErrorKind::corruption, "unknown regime code " + std::to_string(code) + " in checkpoint");
  return static_cast<MaskRegime>(code);
}

}  // namespace ckpt_detail

inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
  using ckpt_detail::Writer;
  Writer out;
  out.bytes(kCheckpointMagic, 4);
  out.u32(ck.format_version);

  const auto& mc = ck.config();
  Writer conf;
  for (auto v : {mc.num_layers, mc.model_dim, mc.num_heads, mc.ffn_dim, mc.vocab_size, mc.max_len}) conf.u64(v);
  conf.f64(mc.dropout_rate);
  conf.u8(static_cast<std::uint8_t>(mc.regime));
  conf.f64(mc.mlm_prob);
  out.section("CONF", conf);

  Writer trcf;
  trcf.u64(ck.train.batch_size);
  trcf.u64(ck.train.steps);
  trcf.f64(ck.train.lr);
  trcf.u64(ck.train.seed);
  trcf.u8(static_cast<std::uint8_t>(ck.train.regime));
  trcf.u64(ck.train.log_every);
  trcf.u64(ck.completed_steps);
  out.section("TRCF", trcf);

  Writer vocb;
  const auto text = ck.vocab.serialize();
  vocb.u64(fnv1a(text));
  vocb.str(text);
  out.section("VOCB", vocb);

  Writer parm;
  parm.u64(ck.model.parameters().size());
  for (const auto& p : ck.model.parameters()) {
    parm.str(p.name);
    parm.u64(p.shape().size());
    for (auto d : p.shape()) parm.u64(d);
    parm.u64(p.step_count);
    ckpt_detail::write_tensor(parm, p.value->data);
    ckpt_detail::write_tensor(parm, p.adam_m.data);
    ckpt_detail::write_tensor(parm, p.adam_v.data);
  }
  out.section("PARM", parm);

  Fnv1a sum;
  sum.update(out.buffer().data(), out.buffer().size());
  out.u64(sum.digest());
  return std::move(out.buffer());
}

inline Checkpoint deserialize_checkpoint(const std::vector<char>& buf) {
  using ckpt_detail::Reader;
  Reader head(buf, 0, buf.size());
  char magic[4];
  head.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) fail(ErrorKind::corruption, "bad checkpoint magic at offset 0");
  const auto version = head.u32();
  if (version != kCheckpointVersion)
    fail(ErrorKind::incompatible, "checkpoint format version " + std::to_string(version) + " is not supported (this build reads version " +
                                      std::to_string(kCheckpointVersion) + ")");
  if (buf.size() < 16) fail(ErrorKind::corruption, "checkpoint truncated at offset " + std::to_string(buf.size()));

  Reader body(buf, 8, buf.size() - 8);
  std::optional<ModelConfig> mc;
  std::optional<Vocabulary> vocab;
  TrainConfig tc;
  std::uint64_t completed = 0;
  bool have_train = false;
  std::optional<Reader> params;
  while (!body.done()) {
    char tag[4];
    const auto at = body.offset();
    body.bytes(tag, 4);
    const auto len = body.u64();
    Reader sec = body.sub(len);
    const std::string name(tag, 4);
    if (name == "CONF") {
      ModelConfig c;
      c.num_layers = sec.u64();
      c.model_dim = sec.u64();
      c.num_heads = sec.u64();
      c.ffn_dim = sec.u64();
      c.vocab_size = sec.u64();
      c.max_len = sec.u64();
      c.dropout_rate = sec.f64();
      c.regime = ckpt_detail::read_regime(sec);
      c.mlm_prob = sec.f64();
      mc = c;
    } else if (name == "TRCF") {
      tc.batch_size = sec.u64();
      tc.steps = sec.u64();
      tc.lr = sec.f64();
      tc.seed = sec.u64();
      tc.regime = ckpt_detail::read_regime(sec);
      tc.log_every = sec.u64();
      completed = sec.u64();
      have_train = true;
    } else if (name == "VOCB") {
      const auto hash = sec.u64();
      const auto text = sec.str();
      if (fnv1a(text) != hash) fail(ErrorKind::corruption, "vocabulary hash mismatch in section at offset " + std::to_string(at));
      vocab = Vocabulary::parse(text);
    } else if (name == "PARM") {
      params.emplace(sec);
    } else {
      fail(ErrorKind::corruption, "unknown checkpoint section '" + name + "' at offset " + std::to_string(at));
    }
  }
  if (!mc || !vocab || !have_train || !params)
    fail(ErrorKind::corruption, "checkpoint is missing a required section");

  Reader trailer(buf, buf.size() - 8, buf.size());
  Fnv1a sum;
  sum.update(buf.data(), buf.size() - 8);
  if (trailer.u64() != sum.digest())
    fail(ErrorKind::corruption, "checkpoint checksum mismatch at offset " + std::to_string(buf.size() - 8));
  if (vocab->size() != mc->vocab_size) fail(ErrorKind::corruption, "vocabulary size disagrees with model config");

  Model<float> model(*mc, Rng(0));
  auto& list = model.parameters();
  Reader& pr = *params;
  const auto count = pr.u64();
  if (count != list.size())
    fail(ErrorKind::corruption, "checkpoint has " + std::to_string(count) + " parameters, config implies " +
                                    std::to_string(list.size()));
  for (auto& p : list) {
    const auto at = pr.offset();
    const auto name = pr.str();
    const auto rank = pr.u64();
    if (rank > 4) fail(ErrorKind::corruption, "implausible parameter rank at offset " + std::to_string(at));
    Shape shape(rank);
    for (auto& d : shape) d = pr.u64();
    if (name != p.name || shape != p.shape())
      fail(ErrorKind::corruption, "parameter '" + name + "' " + shape_str(shape) + " at offset " + std::to_string(at) +
                                      " does not match expected '" + p.name + "' " + shape_str(p.shape()));
    p.step_count = pr.u64();
    ckpt_detail::read_tensor(pr, p.value->data);
    ckpt_detail::read_tensor(pr, p.adam_m.data);
    ckpt_detail::read_tensor(pr, p.adam_v.data);
  }
  return Checkpoint{version, std::move(*vocab), tc, completed, std::move(model)};
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "short write to checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace wlm
