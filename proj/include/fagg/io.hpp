#pragma once

// On-disk formats. All multi-byte values are little-endian.
//
// Embedding-set file (.fagg):
//   "FAGG" | version u16 | dim u32 | set_count u32 | prng_tag char[16]
//   per set: id_len u32 | id bytes (UTF-8) | label u32 | frame_count u32 |
//            frame_count * dim f32
//
// Parameter file (.fagp):
//   "FAGP" | version u16 | dim u32 | num_classes u32 | mode u8
//   q1 | b1 | q2 | b2 | class_weights   as f64, row-major
//   (q2 is dim x dim and b2 has dim entries, except in frame mode where
//    they are 1 x dim and 1)
//
// Checkpoint file (.fagc):
//   "FAGC" | version u16 | parameter block (a complete .fagp image) |
//   margin f64 | scale f64 | epoch u64 | running_loss f64 |
//   rng s[4] u64 | has_spare u8 | spare f64 |
//   velocity q1 | b1 | q2 | b2 | class_weights   as f64 |
//   label_count u32 | labels u32
//
// Readers fail closed: nothing is returned unless the whole file parses and
// every byte is accounted for.

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fagg/eval.hpp"
#include "fagg/grad.hpp"
#include "fagg/synth.hpp"
#include "fagg/trainer.hpp"

namespace fagg {

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr char kCorpusMagic[4] = {'F', 'A', 'G', 'G'};
inline constexpr char kParamsMagic[4] = {'F', 'A', 'G', 'P'};
inline constexpr char kCheckpointMagic[4] = {'F', 'A', 'G', 'C'};
inline constexpr std::size_t kPrngTagBytes = 16;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    buf_.append(raw, sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) { buf_.append(static_cast<const char*>(data), n); }
  void put_f64s(std::span<const double> v) {
    for (double x : v) put(x);
  }
  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  template <class T>
  T get() {
    need(sizeof(T));
    char raw[sizeof(T)];
    std::memcpy(raw, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  void get_f64s(std::span<double> out) {
    need(out.size() * sizeof(double));
    for (double& x : out) x = get<double>();
  }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n)
      throw Error(ErrorCode::Truncated, "needed " + std::to_string(n) + " bytes at offset " +
                                            std::to_string(pos_) + ", " + std::to_string(remaining()) +
                                            " available");
  }
  void expect_end() const {
    if (remaining() != 0)
      throw Error(ErrorCode::CountMismatch,
                  "declared counts leave " + std::to_string(remaining()) + " unaccounted bytes");
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::Io, "read failure on '" + path + "'");
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failure on '" + path + "'");
}

namespace detail {

inline void check_magic(ByteReader& r, const char (&magic)[4]) {
  const auto got = r.get_bytes(4);
  if (std::memcmp(got.data(), magic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "expected '" + std::string(magic, 4) + "'");
  const auto version = r.get<std::uint16_t>();
  if (version != kFormatVersion)
    throw Error(ErrorCode::VersionMismatch, "unsupported version " + std::to_string(version));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// embedding sets

inline std::string encode_corpus(const LabeledCorpus& corpus, std::string_view prng_tag = kPrngTag) {
  const std::size_t dim = corpus.dim();
  ByteWriter w;
  w.put_bytes(kCorpusMagic, 4);
  w.put(kFormatVersion);
  w.put(static_cast<std::uint32_t>(dim));
  w.put(static_cast<std::uint32_t>(corpus.sets.size()));
  char tag[kPrngTagBytes] = {};
  std::memcpy(tag, prng_tag.data(), std::min(prng_tag.size(), kPrngTagBytes));
  w.put_bytes(tag, kPrngTagBytes);
  for (const auto& s : corpus.sets) {
    if (s.dim() != dim) throw Error(ErrorCode::DimensionMismatch, "all sets in a file must share one dimension");
    if (s.size() == 0) throw Error(ErrorCode::EmptyInput, "set '" + s.set_id + "' has no frames");
    w.put(static_cast<std::uint32_t>(s.set_id.size()));
    w.put_bytes(s.set_id.data(), s.set_id.size());
    w.put(s.label);
    w.put(static_cast<std::uint32_t>(s.size()));
    for (double x : s.frames.data()) w.put(static_cast<float>(x));
  }
  return w.bytes();
}

struct CorpusFile {
  LabeledCorpus corpus;
  std::string prng_tag;
};

inline CorpusFile decode_corpus(std::string_view bytes) {
  ByteReader r(bytes);
  detail::check_magic(r, kCorpusMagic);
  const auto dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  const auto tag = r.get_bytes(kPrngTagBytes);
  if (dim == 0) throw Error(ErrorCode::CountMismatch, "header declares zero dimension");

  CorpusFile out;
  out.prng_tag.assign(tag.data(), strnlen(tag.data(), kPrngTagBytes));
  out.corpus.sets.reserve(std::min<std::size_t>(count, r.remaining() / 12));
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureSet s;
    const auto id_len = r.get<std::uint32_t>();
    s.set_id = std::string(r.get_bytes(id_len));
    s.label = r.get<std::uint32_t>();
    const auto frames = r.get<std::uint32_t>();
    if (frames == 0) throw Error(ErrorCode::CountMismatch, "set '" + s.set_id + "' declares zero frames");
    const std::size_t values = static_cast<std::size_t>(frames) * dim;
    r.need(values * sizeof(float));
    s.frames = Matrix(frames, dim);
    for (double& x : s.frames.data()) {
      x = static_cast<double>(r.get<float>());
      if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, "set '" + s.set_id + "' has a non-finite value");
    }
    out.corpus.sets.push_back(std::move(s));
  }
  r.expect_end();
  return out;
}

inline void write_corpus(const std::string& path, const LabeledCorpus& corpus,
                         std::string_view prng_tag = kPrngTag) {
  write_file(path, encode_corpus(corpus, prng_tag));
}

inline LabeledCorpus read_corpus(const std::string& path) { return decode_corpus(read_file(path)).corpus; }

// ---------------------------------------------------------------------------
// parameters

inline void encode_params_into(ByteWriter& w, const AttentionParams& p, const MarginHead& head) {
  validate(p);
  if (head.num_classes() > 0 && head.dim() != p.dim())
    throw Error(ErrorCode::DimensionMismatch, "head and attention parameters disagree on dimension");
  w.put_bytes(kParamsMagic, 4);
  w.put(kFormatVersion);
  w.put(static_cast<std::uint32_t>(p.dim()));
  w.put(static_cast<std::uint32_t>(head.num_classes()));
  w.put(static_cast<std::uint8_t>(p.mode));
  w.put_f64s(p.q1.data());
  w.put_f64s(p.b1);
  w.put_f64s(p.q2.data());
  w.put_f64s(p.b2);
  w.put_f64s(head.class_weights.data());
}

struct ParamsFile {
  AttentionParams params;
  MarginHead head;  // margin and scale are not stored; defaults apply
};

inline ParamsFile decode_params_from(ByteReader& r) {
  detail::check_magic(r, kParamsMagic);
  const auto dim = r.get<std::uint32_t>();
  const auto classes = r.get<std::uint32_t>();
  const auto tag = r.get<std::uint8_t>();
  if (tag > static_cast<std::uint8_t>(AttentionMode::FrameTanh))
    throw Error(ErrorCode::CountMismatch, "unknown mode tag " + std::to_string(tag));
  if (dim == 0) throw Error(ErrorCode::CountMismatch, "header declares zero dimension");
  ParamsFile out;
  out.params = AttentionParams::zeros(dim, static_cast<AttentionMode>(tag));
  out.head.class_weights = Matrix(classes, dim);
  const std::size_t total = out.params.q1.size() + out.params.b1.size() + out.params.q2.size() +
                            out.params.b2.size() + out.head.class_weights.size();
  r.need(total * sizeof(double));
  r.get_f64s(out.params.q1.data());
  r.get_f64s(out.params.b1);
  r.get_f64s(out.params.q2.data());
  r.get_f64s(out.params.b2);
  r.get_f64s(out.head.class_weights.data());
  validate(out.params);
  if (!all_finite(out.head.class_weights.data()))
    throw Error(ErrorCode::NonFinite, "class weights contain non-finite values");
  return out;
}

inline std::string encode_params(const AttentionParams& p, const MarginHead& head) {
  ByteWriter w;
  encode_params_into(w, p, head);
  return w.bytes();
}

inline ParamsFile decode_params(std::string_view bytes) {
  ByteReader r(bytes);
  ParamsFile out = decode_params_from(r);
  r.expect_end();
  return out;
}

inline void write_params(const std::string& path, const AttentionParams& p, const MarginHead& head) {
  write_file(path, encode_params(p, head));
}

inline ParamsFile read_params(const std::string& path) { return decode_params(read_file(path)); }

// ---------------------------------------------------------------------------
// checkpoints

inline std::string encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put(kFormatVersion);
  encode_params_into(w, c.params, c.head);
  w.put(c.head.margin);
  w.put(c.head.scale);
  w.put(static_cast<std::uint64_t>(c.epoch));
  w.put(c.running_loss);
  for (std::uint64_t word : c.rng.s) w.put(word);
  w.put(static_cast<std::uint8_t>(c.rng.has_spare ? 1 : 0));
  w.put(c.rng.spare);
  const auto& v = c.velocity;
  if (v.d_q1.size() != c.params.q1.size() || v.d_b1.size() != c.params.b1.size() ||
      v.d_q2.size() != c.params.q2.size() || v.d_b2.size() != c.params.b2.size() ||
      v.d_class_weights.size() != c.head.class_weights.size())
    throw Error(ErrorCode::DimensionMismatch, "velocity buffers do not match the parameters");
  w.put_f64s(v.d_q1.data());
  w.put_f64s(v.d_b1);
  w.put_f64s(v.d_q2.data());
  w.put_f64s(v.d_b2);
  w.put_f64s(v.d_class_weights.data());
  if (c.class_labels.size() != c.head.num_classes())
    throw Error(ErrorCode::CountMismatch, "label list does not match the head");
  w.put(static_cast<std::uint32_t>(c.class_labels.size()));
  for (auto l : c.class_labels) w.put(l);
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  detail::check_magic(r, kCheckpointMagic);
  auto pf = decode_params_from(r);
  Checkpoint c;
  c.params = std::move(pf.params);
  c.head = std::move(pf.head);
  c.head.margin = r.get<double>();
  c.head.scale = r.get<double>();
  c.epoch = static_cast<std::size_t>(r.get<std::uint64_t>());
  c.running_loss = r.get<double>();
  for (auto& word : c.rng.s) word = r.get<std::uint64_t>();
  const auto spare_flag = r.get<std::uint8_t>();
  if (spare_flag > 1) throw Error(ErrorCode::CountMismatch, "bad rng spare flag");
  c.rng.has_spare = spare_flag == 1;
  c.rng.spare = r.get<double>();
  c.velocity = GradientBundle::zeros_like(c.params, c.head);
  r.get_f64s(c.velocity.d_q1.data());
  r.get_f64s(c.velocity.d_b1);
  r.get_f64s(c.velocity.d_q2.data());
  r.get_f64s(c.velocity.d_b2);
  r.get_f64s(c.velocity.d_class_weights.data());
  const auto n = r.get<std::uint32_t>();
  if (n != c.head.num_classes())
    throw Error(ErrorCode::CountMismatch, "label count " + std::to_string(n) + " does not match " +
                                              std::to_string(c.head.num_classes()) + " head rows");
  r.need(std::size_t{n} * sizeof(std::uint32_t));
  c.class_labels.resize(n);
  for (auto& l : c.class_labels) l = r.get<std::uint32_t>();
  r.expect_end();
  validate(c.head);
  return c;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& c) { write_file(path, encode_checkpoint(c)); }

inline Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// pairs: set_id_a <TAB> set_id_b <TAB> {0|1}

inline PairList parse_pairs(std::string_view text) {
  PairList out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos)
      throw Error(ErrorCode::InvalidArgument, "pairs line " + std::to_string(line_no) + ": expected three tab-separated fields");
    const auto flag = line.substr(t2 + 1);
    if (flag != "0" && flag != "1")
      throw Error(ErrorCode::InvalidArgument, "pairs line " + std::to_string(line_no) + ": label must be 0 or 1");
    out.pairs.push_back({std::string(line.substr(0, t1)), std::string(line.substr(t1 + 1, t2 - t1 - 1)), flag == "1"});
  }
  return out;
}

inline std::string format_pairs(const PairList& pairs) {
  std::string out;
  for (const auto& p : pairs.pairs) out += p.a + '\t' + p.b + '\t' + (p.same ? '1' : '0') + '\n';
  return out;
}

inline PairList read_pairs(const std::string& path) { return parse_pairs(read_file(path)); }

}  // namespace fagg
