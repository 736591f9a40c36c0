#pragma once

// AFMT attention-trace format. All integers and floats are little-endian.
//
//   header : "AFMT" | version u16 | S u16 | record_count u32
//            | model_len u16 | model bytes | sampler_len u16 | sampler bytes
//            | flags u16
//   record : step u16 | tau i32 | block u8 | layer u16 | head u16 | pass u8
//            | H u16 | W u16 | T u16 | H*W*T f32 (query-major, token-minor)
//
// Records are strictly ordered by (step, block, layer, head, pass).

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "afm/attention.hpp"
#include "afm/block.hpp"
#include "afm/error.hpp"

namespace afm {

inline constexpr std::array<char, 4> kTraceMagic{'A', 'F', 'M', 'T'};
inline constexpr std::uint16_t kTraceVersion = 1;

inline constexpr std::uint16_t kFlagPerHead = 1u << 0;
inline constexpr std::uint16_t kFlagPassLabels = 1u << 1;

inline constexpr std::size_t kRecordPrefixBytes = 2 + 4 + 1 + 2 + 2 + 1 + 2 + 2 + 2;

struct TraceHeader {
  std::uint16_t version = kTraceVersion;
  std::uint16_t steps = 0;
  std::uint32_t record_count = 0;
  std::string model;
  std::string sampler;
  std::uint16_t flags = 0;

  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct StepRecord {
  std::uint16_t step = 0;
  std::int32_t tau = -1;
  Block block = Block::Encoder;
  std::uint16_t layer = 0;
  std::uint16_t head = kHeadAveraged;
  Pass pass = Pass::Cond;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint16_t tokens = 0;
  std::vector<float> payload;

  auto key() const { return std::make_tuple(step, block, layer, head, pass); }

  friend bool operator==(const StepRecord& a, const StepRecord& b) {
    if (a.key() != b.key() || a.tau != b.tau || a.height != b.height || a.width != b.width || a.tokens != b.tokens ||
        a.payload.size() != b.payload.size()) {
      return false;
    }
    // bitwise: NaN-free payloads, but -0.0 and 0.0 must still differ
    return std::memcmp(a.payload.data(), b.payload.data(), a.payload.size() * sizeof(float)) == 0;
  }
};

/// In-memory trace: header plus records in file order.
struct AttentionTrace {
  TraceHeader header;
  std::vector<StepRecord> records;
};

/// Widen a record's payload into an analysis tensor.
inline LogitTensor to_logits(const StepRecord& rec) {
  std::vector<double> values(rec.payload.begin(), rec.payload.end());
  return LogitTensor(rec.height, rec.width, rec.tokens, std::move(values));
}

/// Copy of `meta` whose payload is `logits` narrowed to f32.
inline StepRecord with_logits(const StepRecord& meta, const LogitTensor& logits) {
  if (logits.height() != meta.height || logits.width() != meta.width || logits.tokens() != meta.tokens) {
    throw Error(Errc::InvalidInput, "logit tensor shape does not match the record");
  }
  StepRecord out = meta;
  out.payload.resize(logits.values().size());
  for (std::size_t i = 0; i < out.payload.size(); ++i) out.payload[i] = static_cast<float>(logits.values().flat()[i]);
  return out;
}

namespace detail {

class ByteSink {
 public:
  explicit ByteSink(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw Error(Errc::Io, "trace write failed");
    count_ += n;
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                               static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    bytes(b, 4);
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void tag(const std::string& s) {
    if (s.size() > 0xFFFF) throw Error(Errc::InvalidInput, "trace tag longer than 65535 bytes");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::uint64_t count() const noexcept { return count_; }

 private:
  std::ostream& out_;
  std::uint64_t count_ = 0;
};

class ByteSource {
 public:
  explicit ByteSource(std::istream& in) : in_(in) {}

  void bytes(void* data, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw Error(Errc::TruncatedTrace, std::string("stream ended while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v = 0;
    bytes(&v, 1, what);
    return v;
  }
  std::uint16_t u16(const char* what) {
    std::uint8_t b[2];
    bytes(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    std::uint8_t b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::string tag(const char* what) {
    const std::uint16_t n = u16(what);
    std::string s(n, '\0');
    if (n) bytes(s.data(), n, what);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
};

inline void validate_record(const StepRecord& rec, const TraceHeader& header) {
  if (rec.height == 0 || rec.width == 0 || rec.tokens == 0) {
    throw Error(Errc::InvalidInput, "record has a zero dimension");
  }
  if (rec.step >= header.steps) {
    throw Error(Errc::InvalidInput, "record step " + std::to_string(rec.step) + " >= S=" + std::to_string(header.steps));
  }
  if (static_cast<int>(rec.block) > 2) throw Error(Errc::InvalidInput, "record has an unknown block id");
  if (static_cast<int>(rec.pass) > 2) throw Error(Errc::InvalidInput, "record has an unknown pass label");
}

}  // namespace detail

/// Streaming writer. The header's record_count is written up front and
/// enforced by finish().
class TraceWriter {
 public:
  TraceWriter(std::ostream& out, TraceHeader header) : sink_(out), header_(std::move(header)) {
    sink_.bytes(kTraceMagic.data(), kTraceMagic.size());
    sink_.u16(header_.version);
    sink_.u16(header_.steps);
    sink_.u32(header_.record_count);
    sink_.tag(header_.model);
    sink_.tag(header_.sampler);
    sink_.u16(header_.flags);
  }

  void write(const StepRecord& rec) {
    detail::validate_record(rec, header_);
    if (written_ == header_.record_count) throw Error(Errc::InvalidInput, "more records than the header declares");
    if (last_key_ && !(*last_key_ < rec.key())) {
      throw Error(Errc::InvalidInput, "records must be strictly ordered by (step, block, layer, head, pass)");
    }
    const std::size_t expected = std::size_t{rec.height} * rec.width * rec.tokens;
    if (rec.payload.size() != expected) throw Error(Errc::InvalidInput, "record payload length does not match H*W*T");
    for (float v : rec.payload) {
      if (!std::isfinite(v)) throw Error(Errc::NonFinitePayload, "refusing to write a non-finite payload value");
    }
    sink_.u16(rec.step);
    sink_.i32(rec.tau);
    sink_.u8(static_cast<std::uint8_t>(rec.block));
    sink_.u16(rec.layer);
    sink_.u16(rec.head);
    sink_.u8(static_cast<std::uint8_t>(rec.pass));
    sink_.u16(rec.height);
    sink_.u16(rec.width);
    sink_.u16(rec.tokens);
    for (float v : rec.payload) sink_.f32(v);
    last_key_ = rec.key();
    ++written_;
  }

  /// Returns total bytes written.
  std::uint64_t finish() {
    if (written_ != header_.record_count) {
      throw Error(Errc::InvalidInput, "wrote " + std::to_string(written_) + " records, header declares " +
                                          std::to_string(header_.record_count));
    }
    return sink_.count();
  }

 private:
  detail::ByteSink sink_;
  TraceHeader header_;
  std::uint32_t written_ = 0;
  std::optional<decltype(StepRecord{}.key())> last_key_;
};

/// Serializes `records` to `out`; header.record_count is taken from the list.
inline std::uint64_t write_trace(const std::vector<StepRecord>& records, TraceHeader header, std::ostream& out) {
  header.record_count = static_cast<std::uint32_t>(records.size());
  TraceWriter writer(out, header);
  for (const auto& rec : records) writer.write(rec);
  return writer.finish();
}

/// Streaming reader: holds at most one record at a time.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in) : src_(in) {
    std::array<char, 4> magic{};
    src_.bytes(magic.data(), magic.size(), "magic");
    if (magic != kTraceMagic) throw Error(Errc::BadMagic, "not an AFMT trace");
    header_.version = src_.u16("version");
    if (header_.version != kTraceVersion) {
      throw Error(Errc::UnsupportedVersion, "trace version " + std::to_string(header_.version) + " is not supported");
    }
    header_.steps = src_.u16("step count");
    header_.record_count = src_.u32("record count");
    header_.model = src_.tag("model tag");
    header_.sampler = src_.tag("sampler tag");
    header_.flags = src_.u16("flags");
    if (header_.record_count == 0) expect_end();
  }

  const TraceHeader& header() const noexcept { return header_; }

  /// Reads the next record into `rec`; false once all declared records are read.
  bool next(StepRecord& rec) {
    if (read_ == header_.record_count) return false;
    rec.step = src_.u16("record step");
    rec.tau = static_cast<std::int32_t>(src_.u32("record tau"));
    const std::uint8_t block = src_.u8("record block");
    rec.layer = src_.u16("record layer");
    rec.head = src_.u16("record head");
    const std::uint8_t pass = src_.u8("record pass");
    rec.height = src_.u16("record height");
    rec.width = src_.u16("record width");
    rec.tokens = src_.u16("record tokens");
    if (block > 2) throw Error(Errc::InvalidInput, "record has an unknown block id " + std::to_string(block));
    if (pass > 2) throw Error(Errc::InvalidInput, "record has an unknown pass label " + std::to_string(pass));
    rec.block = static_cast<Block>(block);
    rec.pass = static_cast<Pass>(pass);
    detail::validate_record(rec, header_);
    if (last_key_ && !(*last_key_ < rec.key())) {
      throw Error(Errc::InvalidInput, "records are not strictly ordered by (step, block, layer, head, pass)");
    }
    rec.payload.resize(std::size_t{rec.height} * rec.width * rec.tokens);
    buffer_.resize(rec.payload.size() * 4);
    src_.bytes(buffer_.data(), buffer_.size(), "record payload");
    for (std::size_t i = 0; i < rec.payload.size(); ++i) {
      const std::uint8_t* b = buffer_.data() + 4 * i;
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      rec.payload[i] = std::bit_cast<float>(bits);
    }
    for (float v : rec.payload) {
      if (!std::isfinite(v)) throw Error(Errc::NonFinitePayload, "record payload contains a non-finite value");
    }
    last_key_ = rec.key();
    if (++read_ == header_.record_count) expect_end();
    return true;
  }

 private:
  void expect_end() {
    if (!src_.at_end()) throw Error(Errc::InvalidInput, "trailing bytes after the last declared record");
  }

  detail::ByteSource src_;
  TraceHeader header_;
  std::uint32_t read_ = 0;
  std::optional<decltype(StepRecord{}.key())> last_key_;
  std::vector<std::uint8_t> buffer_;
};

inline AttentionTrace read_trace(std::istream& in) {
  TraceReader reader(in);
  AttentionTrace trace;
  StepRecord rec;
  while (reader.next(rec)) trace.records.push_back(rec);
  trace.header = reader.header();
  return trace;
}

inline std::uint64_t write_trace(const AttentionTrace& trace, std::ostream& out) {
  return write_trace(trace.records, trace.header, out);
}

}  // namespace afm
