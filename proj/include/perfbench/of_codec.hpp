#pragma once

// OpenFlow 1.0 wire codec for the message set exercised by the benchmark.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <variant>
#include <vector>

namespace perfbench::of {

inline constexpr uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 8;
inline constexpr std::size_t kMaxMessageSize = 0xffff;

inline constexpr uint32_t kNoBuffer = 0xffffffff;
inline constexpr uint16_t kPortNone = 0xffff;  // OFPP_NONE, "all ports" in port stats
inline constexpr uint16_t kPortController = 0xfffd;
inline constexpr uint16_t kStatsTypePort = 4;  // OFPST_PORT
inline constexpr uint8_t kReasonNoMatch = 0;
inline constexpr uint16_t kActionOutput = 0;

enum class MsgType : uint8_t {
  kHello = 0,
  kError = 1,
  kEchoRequest = 2,
  kEchoReply = 3,
  kVendor = 4,
  kFeaturesRequest = 5,
  kFeaturesReply = 6,
  kPacketIn = 10,
  kPacketOut = 13,
  kStatsRequest = 16,
  kStatsReply = 17,
};

std::string_view to_string(MsgType t);

struct OfHeader {
  uint8_t version = kVersion;
  uint8_t msg_type = 0;
  uint16_t length = 0;
  uint32_t xid = 0;

  bool operator==(const OfHeader&) const = default;
};

struct Hello {
  bool operator==(const Hello&) const = default;
};

struct EchoRequest {
  std::vector<uint8_t> payload;
  bool operator==(const EchoRequest&) const = default;
};

struct EchoReply {
  std::vector<uint8_t> payload;
  bool operator==(const EchoReply&) const = default;
};

struct FeaturesRequest {
  bool operator==(const FeaturesRequest&) const = default;
};

// Port descriptions are not modelled; a reply always carries zero ports.
struct FeaturesReply {
  uint64_t datapath_id = 0;
  uint32_t n_buffers = 0;
  uint8_t n_tables = 1;
  uint32_t capabilities = 0;
  uint32_t actions = 1;  // OFPAT_OUTPUT supported
  bool operator==(const FeaturesReply&) const = default;
};

struct PacketIn {
  uint32_t buffer_id = kNoBuffer;
  uint16_t total_len = 0;
  uint16_t in_port = 0;
  uint8_t reason = kReasonNoMatch;
  std::vector<uint8_t> data;
  bool operator==(const PacketIn&) const = default;
};

struct OutputAction {
  uint16_t port = 0;
  uint16_t max_len = 0;
  bool operator==(const OutputAction&) const = default;
};

// Any non-output action, kept opaque. `body` excludes the 4-byte type/len
// prefix and must be a multiple of 8 bytes minus 4.
struct RawAction {
  uint16_t type = 0;
  std::vector<uint8_t> body;
  bool operator==(const RawAction&) const = default;
};

using Action = std::variant<OutputAction, RawAction>;

struct PacketOut {
  uint32_t buffer_id = kNoBuffer;
  uint16_t in_port = kPortNone;
  std::vector<Action> actions;
  std::vector<uint8_t> data;
  bool operator==(const PacketOut&) const = default;
};

struct PortStatsRequest {
  uint16_t port_no = kPortNone;
  uint16_t flags = 0;
  bool operator==(const PortStatsRequest&) const = default;
};

struct PortCounters {
  uint16_t port_no = 0;
  uint64_t rx_packets = 0;
  uint64_t tx_packets = 0;
  uint64_t rx_bytes = 0;
  uint64_t tx_bytes = 0;
  uint64_t rx_dropped = 0;
  uint64_t tx_dropped = 0;
  uint64_t rx_errors = 0;
  uint64_t tx_errors = 0;
  uint64_t rx_frame_err = 0;
  uint64_t rx_over_err = 0;
  uint64_t rx_crc_err = 0;
  uint64_t collisions = 0;
  bool operator==(const PortCounters&) const = default;
};

struct PortStatsReply {
  uint16_t flags = 0;
  std::vector<PortCounters> ports;
  bool operator==(const PortStatsReply&) const = default;
};

using Body = std::variant<Hello, EchoRequest, EchoReply, FeaturesRequest,
                          FeaturesReply, PacketIn, PacketOut, PortStatsRequest,
                          PortStatsReply>;

struct OfMessage {
  uint32_t xid = 0;
  Body body;

  MsgType type() const;
  // Header as it would be emitted by encode(); length is the encoded size.
  OfHeader header() const;

  template <typename T>
  bool is() const { return std::holds_alternative<T>(body); }
  template <typename T>
  const T& as() const { return std::get<T>(body); }
  template <typename T>
  T& as() { return std::get<T>(body); }

  bool operator==(const OfMessage&) const = default;
};

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown by encode() when the message does not fit the 16-bit length field.
class OversizeBody : public CodecError {
 public:
  using CodecError::CodecError;
};

std::size_t encoded_size(const OfMessage& msg);
std::vector<uint8_t> encode(const OfMessage& msg);
// Appends the encoding to `out`; returns the number of bytes appended.
std::size_t encode_into(const OfMessage& msg, std::vector<uint8_t>& out);

enum class DecodeStatus { kOk, kTruncated, kUnknownType, kMalformedBody };

std::string_view to_string(DecodeStatus s);

struct DecodeResult {
  DecodeStatus status = DecodeStatus::kTruncated;
  std::optional<OfMessage> message;
  // Bytes to drop from the front of the input. Zero when truncated; the
  // header's length for unknown or malformed messages so they can be skipped.
  std::size_t consumed = 0;
  std::optional<OfHeader> header;
};

std::optional<OfHeader> peek_header(std::span<const uint8_t> bytes);
DecodeResult decode(std::span<const uint8_t> bytes);

// Thrown when a stream is unrecoverable (length field smaller than a header
// or wrong version); the connection carrying it has to be dropped.
class StreamCorrupt : public CodecError {
 public:
  using CodecError::CodecError;
};

// A complete message in the stream, not yet decoded. `bytes` stays valid
// until the next feed()/next() call on the framer that produced it.
struct RawFrame {
  OfHeader header;
  std::span<const uint8_t> bytes;
};

// Reassembles OpenFlow messages from arbitrary TCP read boundaries.
class StreamFramer {
 public:
  void feed(std::span<const uint8_t> chunk);
  std::optional<RawFrame> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::vector<uint8_t> buf_;
  std::size_t pos_ = 0;
};

struct FrameStats {
  uint64_t unknown = 0;
  uint64_t malformed = 0;
};

// Extracts every complete message from `buffer`, erasing what was consumed
// and leaving any trailing partial message in place. Unknown or malformed
// messages are skipped and counted in `stats`.
std::vector<OfMessage> frame_stream(std::vector<uint8_t>& buffer,
                                    FrameStats* stats = nullptr);

// Convenience constructors.
OfMessage make_hello(uint32_t xid);
OfMessage make_echo_request(uint32_t xid, std::vector<uint8_t> payload = {});
OfMessage make_packet_out(uint32_t xid, std::vector<uint8_t> frame,
                          uint16_t out_port);
OfMessage make_port_stats_request(uint32_t xid, uint16_t port_no = kPortNone);

}  // namespace perfbench::of
