#pragma once

// Wire protocol, fan-out server and episode container.
//
// Message layout (little-endian):
//
//   off  size  field
//     0     4  magic "PLYT"
//     4     1  version (1)
//     5     1  msg_type
//     6     1  flags
//     7     1  reserved (0)
//     8     8  timestamp_us
//    16     4  seq (per msg_type)
//    20     4  payload_len
//    24     n  payload
//  24+n     4  CRC-32 (zlib) over bytes [0, 24+n)

#include "tactwin/core.hpp"

#include <zlib.h>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace tactwin::streamproto {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::array<std::uint8_t, 4> kMagic{0x50, 0x4C, 0x59, 0x54};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::size_t kCrcSize = 4;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MsgType : std::uint8_t { Video = 0, Audio = 1, Proprio = 2, Metadata = 3, Heartbeat = 4 };
inline constexpr std::size_t kMsgTypeCount = 5;

[[nodiscard]] inline const char* to_string(MsgType t) {
  switch (t) {
    case MsgType::Video: return "video";
    case MsgType::Audio: return "audio";
    case MsgType::Proprio: return "proprio";
    case MsgType::Metadata: return "metadata";
    case MsgType::Heartbeat: return "heartbeat";
  }
  return "unknown";
}

struct Message {
  MsgType type = MsgType::Heartbeat;
  std::uint8_t flags = 0;
  std::uint64_t timestamp_us = 0;
  std::uint32_t seq = 0;
  Bytes payload;

  friend bool operator==(const Message&, const Message&) = default;
};

// ---------------------------------------------------------------------------
// Little-endian helpers

namespace le {

inline void put_u16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(Bytes& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) | (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint64_t get_u64(const std::uint8_t* p) {
  return static_cast<std::uint64_t>(get_u32(p)) | (static_cast<std::uint64_t>(get_u32(p + 4)) << 32);
}

}  // namespace le

[[nodiscard]] inline std::uint32_t crc32(std::span<const std::uint8_t> data) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    c = ::crc32(c, data.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

// ---------------------------------------------------------------------------
// Codec

[[nodiscard]] inline Bytes encode_message(const Message& m) {
  if (m.payload.size() > kMaxPayload) throw std::length_error("encode_message: payload too large");
  Bytes out(kHeaderSize + m.payload.size() + kCrcSize);
  std::uint8_t* p = out.data();
  std::copy(kMagic.begin(), kMagic.end(), p);
  p[4] = kVersion;
  p[5] = static_cast<std::uint8_t>(m.type);
  p[6] = m.flags;
  p[7] = 0;
  for (int i = 0; i < 8; ++i) p[8 + i] = static_cast<std::uint8_t>(m.timestamp_us >> (8 * i));
  for (int i = 0; i < 4; ++i) p[16 + i] = static_cast<std::uint8_t>(m.seq >> (8 * i));
  const auto len = static_cast<std::uint32_t>(m.payload.size());
  for (int i = 0; i < 4; ++i) p[20 + i] = static_cast<std::uint8_t>(len >> (8 * i));
  std::copy(m.payload.begin(), m.payload.end(), p + kHeaderSize);
  const std::size_t body = kHeaderSize + m.payload.size();
  const std::uint32_t c = crc32(std::span<const std::uint8_t>(out.data(), body));
  for (int i = 0; i < 4; ++i) out[body + i] = static_cast<std::uint8_t>(c >> (8 * i));
  return out;
}

enum class DecodeStatus { Ok, NeedMore, BadMagic, BadVersion, BadType, BadLength, CrcMismatch };

[[nodiscard]] inline const char* to_string(DecodeStatus s) {
  switch (s) {
    case DecodeStatus::Ok: return "ok";
    case DecodeStatus::NeedMore: return "need-more";
    case DecodeStatus::BadMagic: return "bad-magic";
    case DecodeStatus::BadVersion: return "bad-version";
    case DecodeStatus::BadType: return "bad-type";
    case DecodeStatus::BadLength: return "bad-length";
    case DecodeStatus::CrcMismatch: return "crc-mismatch";
  }
  return "unknown";
}

struct DecodeResult {
  DecodeStatus status = DecodeStatus::NeedMore;
  Message message;
  std::size_t consumed = 0;  // bytes of the complete frame (Ok or CrcMismatch)
};

/// Decodes one message from the front of `data`.
[[nodiscard]] inline DecodeResult decode_message(std::span<const std::uint8_t> data) {
  DecodeResult r;
  const std::size_t have_magic = std::min(data.size(), kMagic.size());
  if (!std::equal(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(have_magic), kMagic.begin())) {
    r.status = DecodeStatus::BadMagic;
    return r;
  }
  if (data.size() >= 5 && data[4] != kVersion) {
    r.status = DecodeStatus::BadVersion;
    return r;
  }
  if (data.size() >= 6 && data[5] >= kMsgTypeCount) {
    r.status = DecodeStatus::BadType;
    return r;
  }
  if (data.size() < kHeaderSize) return r;
  const std::uint32_t len = le::get_u32(data.data() + 20);
  if (len > kMaxPayload) {
    r.status = DecodeStatus::BadLength;
    return r;
  }
  const std::size_t total = kHeaderSize + len + kCrcSize;
  if (data.size() < total) return r;
  r.consumed = total;
  const std::uint32_t want = le::get_u32(data.data() + kHeaderSize + len);
  if (crc32(data.subspan(0, kHeaderSize + len)) != want) {
    r.status = DecodeStatus::CrcMismatch;
    return r;
  }
  r.status = DecodeStatus::Ok;
  r.message.type = static_cast<MsgType>(data[5]);
  r.message.flags = data[6];
  r.message.timestamp_us = le::get_u64(data.data() + 8);
  r.message.seq = le::get_u32(data.data() + 16);
  r.message.payload.assign(data.begin() + kHeaderSize, data.begin() + static_cast<std::ptrdiff_t>(kHeaderSize + len));
  return r;
}

/// Incremental decoder for a byte stream. Corrupt frames are dropped and
/// counted; framing errors resynchronize on the next magic.
class StreamDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  std::optional<Message> next() {
    while (true) {
      const std::span<const std::uint8_t> view(buf_.data() + pos_, buf_.size() - pos_);
      if (view.empty()) {
        compact();
        return std::nullopt;
      }
      DecodeResult r = decode_message(view);
      switch (r.status) {
        case DecodeStatus::Ok:
          pos_ += r.consumed;
          ++decoded_;
          compact();
          return std::move(r.message);
        case DecodeStatus::NeedMore:
          compact();
          return std::nullopt;
        case DecodeStatus::CrcMismatch:
          pos_ += r.consumed;
          ++crc_errors_;
          break;
        default:
          ++framing_errors_;
          resync();
          break;
      }
    }
  }

  [[nodiscard]] std::size_t decoded() const { return decoded_; }
  [[nodiscard]] std::size_t crc_errors() const { return crc_errors_; }
  [[nodiscard]] std::size_t framing_errors() const { return framing_errors_; }
  [[nodiscard]] std::size_t skipped_bytes() const { return skipped_; }
  [[nodiscard]] std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  void resync() {
    const auto begin = buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + 1);
    auto it = std::search(begin, buf_.end(), kMagic.begin(), kMagic.end());
    if (it == buf_.end()) {
      // Keep a possible magic prefix at the tail.
      const std::size_t keep = std::min<std::size_t>(3, buf_.size() - pos_ - 1);
      it = buf_.end() - static_cast<std::ptrdiff_t>(keep);
    }
    const auto next = static_cast<std::size_t>(it - buf_.begin());
    skipped_ += next - pos_;
    pos_ = next;
  }

  void compact() {
    if (pos_ > (1u << 20) || pos_ == buf_.size()) {
      buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
      pos_ = 0;
    }
  }

  Bytes buf_;
  std::size_t pos_ = 0;
  std::size_t decoded_ = 0, crc_errors_ = 0, framing_errors_ = 0, skipped_ = 0;
};

// ---------------------------------------------------------------------------
// Payloads

enum class PixelFormat : std::uint8_t { Raw = 0, Rle = 1 };

struct VideoFrame {
  std::uint16_t width = 0, height = 0;
  Bytes rgb;  // width * height * 3

  friend bool operator==(const VideoFrame&, const VideoFrame&) = default;
};

[[nodiscard]] inline VideoFrame to_video_frame(const RgbImage& img) {
  if (img.width() > 0xffff || img.height() > 0xffff) throw std::length_error("to_video_frame: image too large");
  VideoFrame f{static_cast<std::uint16_t>(img.width()), static_cast<std::uint16_t>(img.height()), {}};
  f.rgb.resize(img.width() * img.height() * 3);
  const auto& d = img.data();
  for (std::size_t k = 0; k < d.size(); ++k) f.rgb[k] = to_byte(d[k]);
  return f;
}

/// u16 width | u16 height | u8 format | data. RLE data is a sequence of
/// (u8 run length 1..255, r, g, b).
[[nodiscard]] inline Bytes encode_video(const VideoFrame& f, PixelFormat fmt = PixelFormat::Raw) {
  if (f.rgb.size() != static_cast<std::size_t>(f.width) * f.height * 3) throw std::invalid_argument("encode_video: size mismatch");
  Bytes out;
  le::put_u16(out, f.width);
  le::put_u16(out, f.height);
  out.push_back(static_cast<std::uint8_t>(fmt));
  if (fmt == PixelFormat::Raw) {
    out.insert(out.end(), f.rgb.begin(), f.rgb.end());
    return out;
  }
  const std::size_t n = f.rgb.size() / 3;
  std::size_t i = 0;
  while (i < n) {
    std::size_t run = 1;
    while (i + run < n && run < 255 && std::equal(f.rgb.begin() + 3 * i, f.rgb.begin() + 3 * i + 3, f.rgb.begin() + 3 * (i + run))) ++run;
    out.push_back(static_cast<std::uint8_t>(run));
    out.insert(out.end(), f.rgb.begin() + 3 * i, f.rgb.begin() + 3 * i + 3);
    i += run;
  }
  return out;
}

[[nodiscard]] inline VideoFrame decode_video(std::span<const std::uint8_t> p) {
  if (p.size() < 5) throw std::runtime_error("video payload: truncated header");
  VideoFrame f{le::get_u16(p.data()), le::get_u16(p.data() + 2), {}};
  const std::size_t want = static_cast<std::size_t>(f.width) * f.height * 3;
  const auto fmt = static_cast<PixelFormat>(p[4]);
  const auto data = p.subspan(5);
  if (fmt == PixelFormat::Raw) {
    if (data.size() != want) throw std::runtime_error("video payload: raw size mismatch");
    f.rgb.assign(data.begin(), data.end());
  } else if (fmt == PixelFormat::Rle) {
    if (data.size() % 4 != 0) throw std::runtime_error("video payload: malformed RLE");
    f.rgb.reserve(want);
    for (std::size_t k = 0; k < data.size(); k += 4) {
      if (data[k] == 0) throw std::runtime_error("video payload: zero-length run");
      for (int r = 0; r < data[k]; ++r) f.rgb.insert(f.rgb.end(), data.begin() + static_cast<std::ptrdiff_t>(k + 1), data.begin() + static_cast<std::ptrdiff_t>(k + 4));
      if (f.rgb.size() > want) throw std::runtime_error("video payload: RLE overruns frame");
    }
    if (f.rgb.size() != want) throw std::runtime_error("video payload: RLE size mismatch");
  } else {
    throw std::runtime_error("video payload: unknown pixel format");
  }
  return f;
}

struct AudioPayload {
  std::uint32_t sample_rate = 48000;
  std::vector<std::int16_t> samples;

  friend bool operator==(const AudioPayload&, const AudioPayload&) = default;
};

/// u32 sample_rate | u32 count | count x i16.
[[nodiscard]] inline Bytes encode_audio(const AudioPayload& a) {
  Bytes out;
  out.reserve(8 + a.samples.size() * 2);
  le::put_u32(out, a.sample_rate);
  le::put_u32(out, static_cast<std::uint32_t>(a.samples.size()));
  for (std::int16_t s : a.samples) le::put_u16(out, static_cast<std::uint16_t>(s));
  return out;
}

[[nodiscard]] inline AudioPayload decode_audio(std::span<const std::uint8_t> p) {
  if (p.size() < 8) throw std::runtime_error("audio payload: truncated header");
  AudioPayload a{le::get_u32(p.data()), {}};
  const std::uint32_t n = le::get_u32(p.data() + 4);
  if (p.size() != 8 + static_cast<std::size_t>(n) * 2) throw std::runtime_error("audio payload: size mismatch");
  a.samples.resize(n);
  for (std::uint32_t k = 0; k < n; ++k) a.samples[k] = static_cast<std::int16_t>(le::get_u16(p.data() + 8 + 2 * k));
  return a;
}

[[nodiscard]] inline std::uint64_t audio_duration_us(const AudioPayload& a) {
  if (a.sample_rate == 0) throw std::runtime_error("audio payload: zero sample rate");
  return static_cast<std::uint64_t>(a.samples.size()) * 1000000ULL / a.sample_rate;
}

/// Proprio payload: u32 count | count x f64.
[[nodiscard]] inline Bytes encode_proprio(std::span<const double> v) {
  Bytes out;
  le::put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    le::put_u64(out, bits);
  }
  return out;
}

[[nodiscard]] inline std::vector<double> decode_proprio(std::span<const std::uint8_t> p) {
  if (p.size() < 4) throw std::runtime_error("proprio payload: truncated");
  const std::uint32_t n = le::get_u32(p.data());
  if (p.size() != 4 + static_cast<std::size_t>(n) * 8) throw std::runtime_error("proprio payload: size mismatch");
  std::vector<double> v(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint64_t bits = le::get_u64(p.data() + 4 + 8 * k);
    std::memcpy(&v[k], &bits, 8);
  }
  return v;
}

/// Assigns per-type sequence numbers.
class Sequencer {
 public:
  Message make(MsgType t, std::uint64_t ts, Bytes payload, std::uint8_t flags = 0) {
    return Message{t, flags, ts, next_[static_cast<std::size_t>(t)]++, std::move(payload)};
  }

 private:
  std::array<std::uint32_t, kMsgTypeCount> next_{};
};

// ---------------------------------------------------------------------------
// Synchronization

/// Largest |video_ts - audio_end| seen at video messages, where audio_end is
/// the end time of the most recent audio chunk received before that frame.
/// Frames that arrive before any audio are not scored.
[[nodiscard]] inline std::uint64_t sync_check(std::span<const Message> log) {
  bool any_video = false, any_audio = false;
  std::optional<std::uint64_t> audio_end;
  std::uint64_t max_drift = 0;
  for (const auto& m : log) {
    if (m.type == MsgType::Audio) {
      any_audio = true;
      audio_end = m.timestamp_us + audio_duration_us(decode_audio(m.payload));
    } else if (m.type == MsgType::Video) {
      any_video = true;
      if (audio_end) {
        const std::uint64_t v = m.timestamp_us;
        max_drift = std::max(max_drift, v > *audio_end ? v - *audio_end : *audio_end - v);
      }
    }
  }
  if (!any_video || !any_audio) throw std::domain_error("sync_check: log needs both video and audio messages");
  return max_drift;
}

/// Running drift tracker for live sessions.
class SyncState {
 public:
  void observe(const Message& m) {
    if (m.type == MsgType::Audio) {
      audio_end_ = m.timestamp_us + audio_duration_us(decode_audio(m.payload));
    } else if (m.type == MsgType::Video && audio_end_) {
      const std::uint64_t v = m.timestamp_us;
      drift_ = v > *audio_end_ ? v - *audio_end_ : *audio_end_ - v;
      max_drift_ = std::max(max_drift_, drift_);
      last_video_ = v;
    }
  }
  [[nodiscard]] std::uint64_t drift() const { return drift_; }
  [[nodiscard]] std::uint64_t max_drift() const { return max_drift_; }
  [[nodiscard]] std::uint64_t last_video() const { return last_video_; }

 private:
  std::optional<std::uint64_t> audio_end_;
  std::uint64_t drift_ = 0, max_drift_ = 0, last_video_ = 0;
};

// ---------------------------------------------------------------------------
// Episode container
//
//   "PLYTEPI1" | u32 version | u32 reserved | u64 wallclock_us | u64 session_id
//   | u64 config_hash | u32 inventory_len | inventory (JSON text)
//   messages (wire encoding, arrival order)
//   "PLYTIDX1" | u64 count | count x (u8 type, u64 offset, u64 timestamp_us, u32 seq)
//   u64 index_offset | "PLYTEND1"

inline constexpr char kEpisodeMagic[] = "PLYTEPI1";
inline constexpr char kIndexMagic[] = "PLYTIDX1";
inline constexpr char kEndMagic[] = "PLYTEND1";
inline constexpr std::uint32_t kEpisodeVersion = 1;
inline constexpr std::size_t kWallclockOffset = 16;  // u64, excluded from determinism comparisons

struct EpisodeHeader {
  std::uint64_t wallclock_us = 0;
  std::uint64_t session_id = 0;
  std::uint64_t config_hash = 0;
  std::string inventory;
};

[[nodiscard]] inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class EpisodeWriter {
 public:
  EpisodeWriter(const std::string& path, const EpisodeHeader& header) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error(path + ": cannot open episode for writing");
    Bytes h;
    h.insert(h.end(), kEpisodeMagic, kEpisodeMagic + 8);
    le::put_u32(h, kEpisodeVersion);
    le::put_u32(h, 0);
    le::put_u64(h, header.wallclock_us);
    le::put_u64(h, header.session_id);
    le::put_u64(h, header.config_hash);
    le::put_u32(h, static_cast<std::uint32_t>(header.inventory.size()));
    h.insert(h.end(), header.inventory.begin(), header.inventory.end());
    write(h);
  }

  EpisodeWriter(const EpisodeWriter&) = delete;
  EpisodeWriter& operator=(const EpisodeWriter&) = delete;
  ~EpisodeWriter() {
    try {
      close();
    } catch (...) {
    }
  }

  void append(const Message& m) { append_encoded(m, encode_message(m)); }

  /// `wire` must be encode_message(m).
  void append_encoded(const Message& m, std::span<const std::uint8_t> wire) {
    if (closed_) throw std::logic_error("EpisodeWriter: append after close");
    index_.push_back({m.type, offset_, m.timestamp_us, m.seq});
    write(wire);
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    const std::uint64_t index_offset = offset_;
    Bytes b;
    b.insert(b.end(), kIndexMagic, kIndexMagic + 8);
    le::put_u64(b, index_.size());
    for (const auto& e : index_) {
      b.push_back(static_cast<std::uint8_t>(e.type));
      le::put_u64(b, e.offset);
      le::put_u64(b, e.timestamp_us);
      le::put_u32(b, e.seq);
    }
    le::put_u64(b, index_offset);
    b.insert(b.end(), kEndMagic, kEndMagic + 8);
    write(b);
    out_.close();
    if (!out_) throw std::runtime_error(path_ + ": failed to finalize episode");
  }

  [[nodiscard]] std::size_t messages() const { return index_.size(); }

 private:
  struct IndexEntry {
    MsgType type;
    std::uint64_t offset;
    std::uint64_t timestamp_us;
    std::uint32_t seq;
  };

  void write(std::span<const std::uint8_t> b) {
    out_.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!out_) throw std::runtime_error(path_ + ": write failed");
    offset_ += b.size();
  }

  std::string path_;
  std::ofstream out_;
  std::uint64_t offset_ = 0;
  std::vector<IndexEntry> index_;
  bool closed_ = false;
};

class EpisodeReader {
 public:
  explicit EpisodeReader(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(path + ": cannot open episode");
    data_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    parse(path);
  }

  static EpisodeReader from_bytes(Bytes bytes) {
    EpisodeReader r;
    r.data_ = std::move(bytes);
    r.parse("<memory>");
    return r;
  }

  [[nodiscard]] const EpisodeHeader& header() const { return header_; }
  /// True when the footer was missing or unusable and messages were found by scanning.
  [[nodiscard]] bool recovered() const { return recovered_; }
  [[nodiscard]] std::size_t crc_errors() const { return crc_errors_; }

  /// Messages in arrival order.
  [[nodiscard]] const std::vector<Message>& arrival_order() const { return messages_; }

  /// Messages sorted by timestamp (stable, so ties keep arrival order).
  [[nodiscard]] std::vector<Message> timestamp_order() const {
    std::vector<Message> v = messages_;
    std::stable_sort(v.begin(), v.end(), [](const Message& a, const Message& b) { return a.timestamp_us < b.timestamp_us; });
    return v;
  }

  [[nodiscard]] std::size_t count(MsgType t) const { return by_type_[static_cast<std::size_t>(t)].size(); }

  /// k-th message of a type in arrival order.
  [[nodiscard]] const Message& nth(MsgType t, std::size_t k) const {
    const auto& v = by_type_[static_cast<std::size_t>(t)];
    if (k >= v.size()) throw std::out_of_range("EpisodeReader::nth: index out of range");
    return messages_[v[k]];
  }

 private:
  EpisodeReader() = default;

  void parse(const std::string& name) {
    constexpr std::size_t kFixed = 8 + 4 + 4 + 8 + 8 + 8 + 4;
    if (data_.size() < kFixed || !std::equal(kEpisodeMagic, kEpisodeMagic + 8, data_.begin())) {
      throw std::runtime_error(name + ": not an episode container");
    }
    const std::uint32_t version = le::get_u32(&data_[8]);
    if (version != kEpisodeVersion) throw std::runtime_error(name + ": unsupported episode version " + std::to_string(version));
    header_.wallclock_us = le::get_u64(&data_[16]);
    header_.session_id = le::get_u64(&data_[24]);
    header_.config_hash = le::get_u64(&data_[32]);
    const std::uint32_t inv = le::get_u32(&data_[40]);
    if (data_.size() < kFixed + inv) throw std::runtime_error(name + ": truncated header");
    header_.inventory.assign(data_.begin() + kFixed, data_.begin() + static_cast<std::ptrdiff_t>(kFixed + inv));
    body_ = kFixed + inv;
    if (!read_indexed()) {
      recovered_ = true;
      messages_.clear();
      crc_errors_ = 0;
      scan();
    }
    for (std::size_t k = 0; k < messages_.size(); ++k) by_type_[static_cast<std::size_t>(messages_[k].type)].push_back(k);
  }

  bool read_indexed() {
    if (data_.size() < body_ + 16 + 16) return false;
    const std::size_t n = data_.size();
    if (!std::equal(kEndMagic, kEndMagic + 8, data_.begin() + static_cast<std::ptrdiff_t>(n - 8))) return false;
    const std::uint64_t idx = le::get_u64(&data_[n - 16]);
    if (idx < body_ || idx + 16 > n - 16 || !std::equal(kIndexMagic, kIndexMagic + 8, data_.begin() + static_cast<std::ptrdiff_t>(idx))) return false;
    const std::uint64_t count = le::get_u64(&data_[idx + 8]);
    constexpr std::size_t kEntry = 1 + 8 + 8 + 4;
    if (idx + 16 + count * kEntry != n - 16) return false;
    for (std::uint64_t k = 0; k < count; ++k) {
      const std::uint8_t* e = &data_[idx + 16 + k * kEntry];
      const std::uint64_t off = le::get_u64(e + 1);
      if (off < body_ || off >= idx) return false;
      const DecodeResult r = decode_message(std::span(data_).subspan(off, idx - off));
      if (r.status == DecodeStatus::CrcMismatch) {
        ++crc_errors_;
        continue;
      }
      if (r.status != DecodeStatus::Ok || static_cast<std::uint8_t>(r.message.type) != e[0]) return false;
      messages_.push_back(r.message);
    }
    return true;
  }

  void scan() {
    StreamDecoder dec;
    std::size_t end = data_.size();
    // Stop before a (possibly partial) index block.
    const auto it = std::search(data_.begin() + static_cast<std::ptrdiff_t>(body_), data_.end(), kIndexMagic, kIndexMagic + 8);
    if (it != data_.end()) end = static_cast<std::size_t>(it - data_.begin());
    dec.feed(std::span(data_).subspan(body_, end - body_));
    while (auto m = dec.next()) messages_.push_back(std::move(*m));
    crc_errors_ = dec.crc_errors();
  }

  Bytes data_;
  std::size_t body_ = 0;
  EpisodeHeader header_;
  bool recovered_ = false;
  std::size_t crc_errors_ = 0;
  std::vector<Message> messages_;
  std::array<std::vector<std::size_t>, kMsgTypeCount> by_type_;
};

// ---------------------------------------------------------------------------
// Fan-out and TCP server

/// Destination for published frames. `write` blocks until the bytes are
/// delivered and returns false on a broken connection.
class Sink {
 public:
  virtual ~Sink() = default;
  virtual bool write(std::span<const std::uint8_t> bytes) = 0;
  /// Unblocks a pending write; called when the sink is dropped.
  virtual void abort() {}
  [[nodiscard]] virtual std::string name() const = 0;
};

struct FanoutStats {
  std::size_t clients_attached = 0;
  std::size_t clients_disconnected = 0;
  std::size_t backlog_disconnects = 0;
  std::size_t messages_published = 0;
};

/// Broadcasts immutable encoded messages to independent per-sink queues,
/// each drained by its own thread. A sink whose backlog exceeds its limit is
/// dropped instead of stalling the producer.
class Fanout {
 public:
  using Frame = std::shared_ptr<const Bytes>;

  explicit Fanout(std::size_t default_backlog = 8u << 20) : default_backlog_(default_backlog) {}
  Fanout(const Fanout&) = delete;
  Fanout& operator=(const Fanout&) = delete;
  ~Fanout() { shutdown(); }

  /// `backlog_limit` = 0 means unbounded (used for the recorder).
  void attach(std::unique_ptr<Sink> sink, std::optional<std::size_t> backlog_limit = std::nullopt) {
    auto c = std::make_shared<Client>();
    c->sink = std::move(sink);
    c->limit = backlog_limit.value_or(default_backlog_);
    Client* raw = c.get();
    c->thread = std::thread([this, raw] { drain(*raw); });
    std::lock_guard lock(mu_);
    clients_.push_back(std::move(c));
    ++stats_.clients_attached;
  }

  void publish(Frame frame) {
    std::lock_guard lock(mu_);
    ++stats_.messages_published;
    for (auto& c : clients_) {
      std::lock_guard cl(c->mu);
      if (c->dead) continue;
      if (c->limit != 0 && c->backlog + frame->size() > c->limit) {
        c->dead = true;
        c->overflow = true;
        c->queue.clear();
        c->sink->abort();
        c->cv.notify_all();
        continue;
      }
      c->backlog += frame->size();
      c->queue.push_back(frame);
      c->cv.notify_all();
    }
  }

  /// Blocks until every live sink has written everything queued so far.
  void flush() {
    std::vector<std::shared_ptr<Client>> snapshot;
    {
      std::lock_guard lock(mu_);
      snapshot = clients_;
    }
    for (auto& c : snapshot) {
      std::unique_lock cl(c->mu);
      c->cv.wait(cl, [&] { return c->dead || (c->queue.empty() && !c->writing); });
    }
  }

  /// Flushes and stops every sink thread.
  void shutdown() {
    flush();
    std::vector<std::shared_ptr<Client>> snapshot;
    {
      std::lock_guard lock(mu_);
      snapshot = clients_;
    }
    for (auto& c : snapshot) {
      {
        std::lock_guard cl(c->mu);
        c->stop = true;
        c->cv.notify_all();
      }
      if (c->thread.joinable()) c->thread.join();
    }
    std::lock_guard lock(mu_);
    for (auto& c : clients_) account(*c);
    clients_.clear();
  }

  [[nodiscard]] std::size_t live_clients() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& c : clients_) {
      std::lock_guard cl(c->mu);
      n += c->dead ? 0 : 1;
    }
    return n;
  }

  [[nodiscard]] FanoutStats stats() const {
    std::lock_guard lock(mu_);
    FanoutStats s = stats_;
    for (const auto& c : clients_) {
      std::lock_guard cl(c->mu);
      if (c->dead && !c->accounted) {
        ++s.clients_disconnected;
        if (c->overflow) ++s.backlog_disconnects;
      }
    }
    return s;
  }

  [[nodiscard]] std::size_t default_backlog() const { return default_backlog_; }

 private:
  struct Client {
    std::unique_ptr<Sink> sink;
    std::size_t limit = 0;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Frame> queue;
    std::size_t backlog = 0;
    bool writing = false, dead = false, overflow = false, stop = false, accounted = false;
    std::thread thread;
  };

  void account(Client& c) {
    if (c.dead && !c.accounted) {
      c.accounted = true;
      ++stats_.clients_disconnected;
      if (c.overflow) ++stats_.backlog_disconnects;
    }
  }

  static void drain(Client& c) {
    while (true) {
      Frame f;
      {
        std::unique_lock lock(c.mu);
        c.cv.wait(lock, [&] { return c.stop || c.dead || !c.queue.empty(); });
        if (c.dead || c.queue.empty()) return;
        f = c.queue.front();
        c.queue.pop_front();
        c.writing = true;
      }
      const bool ok = c.sink->write(*f);
      std::lock_guard lock(c.mu);
      c.writing = false;
      c.backlog -= std::min(c.backlog, f->size());
      if (!ok) {
        c.dead = true;
        c.queue.clear();
      }
      c.cv.notify_all();
    }
  }

  std::size_t default_backlog_;
  mutable std::mutex mu_;
  std::vector<std::shared_ptr<Client>> clients_;
  FanoutStats stats_;
};

class SocketSink : public Sink {
 public:
  SocketSink(int fd, std::string peer) : fd_(fd), peer_(std::move(peer)) {}
  ~SocketSink() override {
    if (fd_ >= 0) ::close(fd_);
  }

  bool write(std::span<const std::uint8_t> bytes) override {
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  void abort() override { ::shutdown(fd_, SHUT_RDWR); }
  [[nodiscard]] std::string name() const override { return peer_; }

 private:
  int fd_;
  std::string peer_;
};

/// Writes every frame into an episode container; never dropped.
class RecorderSink : public Sink {
 public:
  explicit RecorderSink(std::shared_ptr<EpisodeWriter> w) : writer_(std::move(w)) {}
  bool write(std::span<const std::uint8_t> bytes) override {
    const DecodeResult r = decode_message(bytes);
    if (r.status != DecodeStatus::Ok) return false;
    writer_->append_encoded(r.message, bytes);
    return true;
  }
  [[nodiscard]] std::string name() const override { return "recorder"; }

 private:
  std::shared_ptr<EpisodeWriter> writer_;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

[[nodiscard]] inline Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ConfigError("endpoint '" + s + "': expected host:port");
  Endpoint e;
  e.host = s.substr(0, colon);
  try {
    const long p = std::stol(s.substr(colon + 1));
    if (p < 0 || p > 65535) throw std::out_of_range("port");
    e.port = static_cast<std::uint16_t>(p);
  } catch (const std::exception&) {
    throw ConfigError("endpoint '" + s + "': invalid port");
  }
  if (e.host.empty()) e.host = "0.0.0.0";
  return e;
}

/// Accepts TCP clients in the background and attaches each to a Fanout.
class TcpListener {
 public:
  TcpListener(Fanout& fanout, const Endpoint& ep) : fanout_(fanout) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(ep.port);
    if (::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr) {
      throw std::runtime_error("listen: cannot resolve " + ep.host);
    }
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd_ < 0) {
      ::freeaddrinfo(res);
      throw std::runtime_error("listen: socket() failed");
    }
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd_, 16) != 0) {
      ::freeaddrinfo(res);
      ::close(fd_);
      throw std::runtime_error("listen: cannot bind " + ep.host + ":" + port + ": " + std::strerror(errno));
    }
    ::freeaddrinfo(res);
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::thread([this] { loop(); });
  }

  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() { stop(); }

  void stop() {
    if (stopping_.exchange(true)) return;
    if (thread_.joinable()) thread_.join();
    ::close(fd_);
  }

  [[nodiscard]] std::uint16_t port() const { return port_; }
  [[nodiscard]] std::size_t accepted() const { return accepted_.load(); }

  /// Waits until `n` clients have connected or the timeout expires.
  bool wait_for_clients(std::size_t n, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (accepted_.load() < n) {
      if (std::chrono::steady_clock::now() > deadline) return false;
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return true;
  }

 private:
  void loop() {
    while (!stopping_.load()) {
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, 20) <= 0) continue;
      sockaddr_in peer{};
      socklen_t len = sizeof peer;
      const int c = ::accept(fd_, reinterpret_cast<sockaddr*>(&peer), &len);
      if (c < 0) continue;
      const int one = 1;
      ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      char host[INET_ADDRSTRLEN] = {};
      ::inet_ntop(AF_INET, &peer.sin_addr, host, sizeof host);
      fanout_.attach(std::make_unique<SocketSink>(c, std::string(host) + ":" + std::to_string(ntohs(peer.sin_port))));
      ++accepted_;
    }
  }

  Fanout& fanout_;
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> accepted_{0};
  std::thread thread_;
};

/// Blocking TCP client that decodes the message stream.
class TcpClient {
 public:
  explicit TcpClient(const Endpoint& ep) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(ep.port);
    if (::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr) {
      throw std::runtime_error("connect: cannot resolve " + ep.host);
    }
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int rc = fd_ < 0 ? -1 : ::connect(fd_, res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc != 0) {
      if (fd_ >= 0) ::close(fd_);
      throw std::runtime_error("connect: " + ep.host + ":" + port + " refused");
    }
  }
  TcpClient(const TcpClient&) = delete;
  TcpClient& operator=(const TcpClient&) = delete;
  ~TcpClient() {
    if (fd_ >= 0) ::close(fd_);
  }

  /// Next decoded message, or nullopt once the server closes the stream.
  std::optional<Message> next() {
    while (true) {
      if (auto m = decoder_.next()) return m;
      std::uint8_t buf[1 << 16];
      const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return std::nullopt;
      decoder_.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
    }
  }

  /// Reads raw bytes (for byte-level comparisons); returns 0 at end of stream.
  std::size_t read_raw(std::span<std::uint8_t> out) {
    while (true) {
      const ssize_t n = ::recv(fd_, out.data(), out.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      return n <= 0 ? 0 : static_cast<std::size_t>(n);
    }
  }

  [[nodiscard]] const StreamDecoder& decoder() const { return decoder_; }

 private:
  int fd_ = -1;
  StreamDecoder decoder_;
};

// ---------------------------------------------------------------------------
// Session

/// Publish order of a 30 fps video stream and 20 ms audio chunks on the
/// session clock. Audio chunk j covers [j, j+1) * 20 ms and is published when
/// it is complete; video frame k is published at its own timestamp. At equal
/// publish times audio goes first.
class AvSchedule {
 public:
  struct Event {
    MsgType type;
    std::size_t index;         // frame or chunk number
    std::uint64_t publish_us;  // session time at which the message exists
    std::uint64_t timestamp_us;
  };

  AvSchedule(double fps, std::uint64_t chunk_us, std::uint64_t duration_us)
      : fps_(fps), chunk_us_(chunk_us), duration_us_(duration_us) {
    if (!(fps > 0.0) || chunk_us == 0) throw std::invalid_argument("AvSchedule: fps and chunk length must be positive");
  }

  [[nodiscard]] std::uint64_t video_ts(std::size_t k) const {
    return static_cast<std::uint64_t>(std::llround(static_cast<double>(k) * 1e6 / fps_));
  }

  std::optional<Event> next() {
    const std::uint64_t v = video_ts(video_);
    const std::uint64_t a = (audio_ + 1) * chunk_us_;
    const bool video_ok = v < duration_us_;
    const bool audio_ok = a <= duration_us_;
    if (!video_ok && !audio_ok) return std::nullopt;
    if (audio_ok && (!video_ok || a <= v)) return Event{MsgType::Audio, audio_++, a, a - chunk_us_};
    return Event{MsgType::Video, video_++, v, v};
  }

 private:
  double fps_;
  std::uint64_t chunk_us_, duration_us_;
  std::size_t video_ = 0, audio_ = 0;
};

struct SessionOptions {
  std::optional<Endpoint> listen;
  std::size_t min_clients = 0;
  std::chrono::milliseconds client_wait{10000};
  bool realtime = false;  // pace publishing to the session clock
  std::size_t backlog_limit = 8u << 20;
  std::string record_path;  // empty = no recording
  EpisodeHeader header;
};

struct SessionStats {
  std::array<std::size_t, kMsgTypeCount> sent{};
  std::size_t clients_accepted = 0;
  std::size_t clients_disconnected = 0;
  std::size_t backlog_disconnects = 0;
  std::uint64_t max_drift_us = 0;
  // Drift is a sawtooth over the frame/chunk beat, so growth is judged on
  // window maxima: the first second against the last second of the session.
  std::uint64_t first_second_drift_us = 0;
  std::uint64_t last_second_drift_us = 0;
  std::uint64_t session_us = 0;  // timestamp of the last message
  double wall_seconds = 0.0;
  std::uint16_t port = 0;

  [[nodiscard]] std::size_t count(MsgType t) const { return sent[static_cast<std::size_t>(t)]; }
};

/// Pulls messages (already in publish order) from `source` until it returns
/// nullopt and broadcasts them to TCP clients and the recorder. `on_listening`
/// is called with the bound port before any client is awaited.
inline SessionStats serve_session(const std::function<std::optional<Message>()>& source, const SessionOptions& opt,
                                  const std::function<void(std::uint16_t)>& on_listening = {}) {
  SessionStats st;
  Fanout fanout(opt.backlog_limit);
  std::shared_ptr<EpisodeWriter> writer;
  if (!opt.record_path.empty()) {
    writer = std::make_shared<EpisodeWriter>(opt.record_path, opt.header);
    fanout.attach(std::make_unique<RecorderSink>(writer), 0);
  }
  std::unique_ptr<TcpListener> listener;
  if (opt.listen) {
    listener = std::make_unique<TcpListener>(fanout, *opt.listen);
    st.port = listener->port();
    if (on_listening) on_listening(st.port);
    if (opt.min_clients > 0 && !listener->wait_for_clients(opt.min_clients, opt.client_wait)) {
      throw std::runtime_error("serve_session: timed out waiting for " + std::to_string(opt.min_clients) + " client(s)");
    }
  }
  // The session clock starts once the awaited clients are connected.
  const auto start = std::chrono::steady_clock::now();
  SyncState sync;
  std::deque<std::pair<std::uint64_t, std::uint64_t>> recent;  // (video ts, drift) over the last second
  auto finish = [&] {
    if (listener) listener->stop();
    fanout.shutdown();
    if (writer) writer->close();
  };
  try {
    while (auto m = source()) {
      if (opt.realtime) {
        // An audio chunk exists only once its last sample has been captured.
        const std::uint64_t due = m->type == MsgType::Audio ? m->timestamp_us + audio_duration_us(decode_audio(m->payload)) : m->timestamp_us;
        std::this_thread::sleep_until(start + std::chrono::microseconds(due));
      }
      sync.observe(*m);
      if (m->type == MsgType::Video && sync.last_video() == m->timestamp_us) {
        if (m->timestamp_us <= 1000000) st.first_second_drift_us = std::max(st.first_second_drift_us, sync.drift());
        recent.emplace_back(m->timestamp_us, sync.drift());
        while (recent.front().first + 1000000 < m->timestamp_us) recent.pop_front();
      }
      ++st.sent[static_cast<std::size_t>(m->type)];
      st.session_us = std::max(st.session_us, m->timestamp_us);
      fanout.publish(std::make_shared<const Bytes>(encode_message(*m)));
    }
  } catch (...) {
    finish();
    throw;
  }
  finish();
  const FanoutStats fs = fanout.stats();
  st.clients_accepted = listener ? listener->accepted() : 0;
  st.clients_disconnected = fs.clients_disconnected;
  st.backlog_disconnects = fs.backlog_disconnects;
  st.max_drift_us = sync.max_drift();
  for (const auto& r : recent) st.last_second_drift_us = std::max(st.last_second_drift_us, r.second);
  st.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return st;
}

}  // namespace tactwin::streamproto
