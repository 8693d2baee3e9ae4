#include "perfbench/of_codec.hpp"

#include <algorithm>
#include <cstring>

#include "perfbench/bytes.hpp"

namespace perfbench::of {

namespace {

constexpr std::size_t kFeaturesBody = 24;
constexpr std::size_t kPortDescSize = 48;
constexpr std::size_t kPacketInFixed = 10;
constexpr std::size_t kPacketOutFixed = 8;
constexpr std::size_t kStatsFixed = 4;
constexpr std::size_t kPortStatsRequestBody = 8;
constexpr std::size_t kPortCountersSize = 104;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t action_size(const Action& a) {
  return std::visit(overloaded{[](const OutputAction&) -> std::size_t { return 8; },
                               [](const RawAction& r) { return 4 + r.body.size(); }},
                    a);
}

std::size_t actions_size(const std::vector<Action>& actions) {
  std::size_t n = 0;
  for (const auto& a : actions) n += action_size(a);
  return n;
}

std::size_t body_size(const Body& body) {
  return std::visit(
      overloaded{
          [](const Hello&) -> std::size_t { return 0; },
          [](const EchoRequest& m) { return m.payload.size(); },
          [](const EchoReply& m) { return m.payload.size(); },
          [](const FeaturesRequest&) -> std::size_t { return 0; },
          [](const FeaturesReply&) { return kFeaturesBody; },
          [](const PacketIn& m) { return kPacketInFixed + m.data.size(); },
          [](const PacketOut& m) {
            return kPacketOutFixed + actions_size(m.actions) + m.data.size();
          },
          [](const PortStatsRequest&) { return kStatsFixed + kPortStatsRequestBody; },
          [](const PortStatsReply& m) {
            return kStatsFixed + kPortCountersSize * m.ports.size();
          },
      },
      body);
}

void put_counters(std::vector<uint8_t>& out, const PortCounters& c) {
  put_be16(out, c.port_no);
  put_zeros(out, 6);
  for (uint64_t v : {c.rx_packets, c.tx_packets, c.rx_bytes, c.tx_bytes,
                     c.rx_dropped, c.tx_dropped, c.rx_errors, c.tx_errors,
                     c.rx_frame_err, c.rx_over_err, c.rx_crc_err, c.collisions}) {
    put_be64(out, v);
  }
}

PortCounters get_counters(std::span<const uint8_t> b, std::size_t off) {
  PortCounters c;
  c.port_no = get_be16(b, off);
  off += 8;
  uint64_t* fields[] = {&c.rx_packets, &c.tx_packets, &c.rx_bytes,
                        &c.tx_bytes, &c.rx_dropped, &c.tx_dropped,
                        &c.rx_errors, &c.tx_errors, &c.rx_frame_err,
                        &c.rx_over_err, &c.rx_crc_err, &c.collisions};
  for (uint64_t* f : fields) {
    *f = get_be64(b, off);
    off += 8;
  }
  return c;
}

void encode_body(const Body& body, std::vector<uint8_t>& out) {
  std::visit(
      overloaded{
          [](const Hello&) {},
          [&](const EchoRequest& m) {
            out.insert(out.end(), m.payload.begin(), m.payload.end());
          },
          [&](const EchoReply& m) {
            out.insert(out.end(), m.payload.begin(), m.payload.end());
          },
          [](const FeaturesRequest&) {},
          [&](const FeaturesReply& m) {
            put_be64(out, m.datapath_id);
            put_be32(out, m.n_buffers);
            put_u8(out, m.n_tables);
            put_zeros(out, 3);
            put_be32(out, m.capabilities);
            put_be32(out, m.actions);
          },
          [&](const PacketIn& m) {
            put_be32(out, m.buffer_id);
            put_be16(out, m.total_len);
            put_be16(out, m.in_port);
            put_u8(out, m.reason);
            put_u8(out, 0);
            out.insert(out.end(), m.data.begin(), m.data.end());
          },
          [&](const PacketOut& m) {
            put_be32(out, m.buffer_id);
            put_be16(out, m.in_port);
            put_be16(out, static_cast<uint16_t>(actions_size(m.actions)));
            for (const auto& a : m.actions) {
              std::visit(overloaded{[&](const OutputAction& o) {
                                      put_be16(out, kActionOutput);
                                      put_be16(out, 8);
                                      put_be16(out, o.port);
                                      put_be16(out, o.max_len);
                                    },
                                    [&](const RawAction& r) {
                                      put_be16(out, r.type);
                                      put_be16(out, static_cast<uint16_t>(4 + r.body.size()));
                                      out.insert(out.end(), r.body.begin(), r.body.end());
                                    }},
                         a);
            }
            out.insert(out.end(), m.data.begin(), m.data.end());
          },
          [&](const PortStatsRequest& m) {
            put_be16(out, kStatsTypePort);
            put_be16(out, m.flags);
            put_be16(out, m.port_no);
            put_zeros(out, 6);
          },
          [&](const PortStatsReply& m) {
            put_be16(out, kStatsTypePort);
            put_be16(out, m.flags);
            for (const auto& c : m.ports) put_counters(out, c);
          },
      },
      body);
}

DecodeResult malformed(const OfHeader& h) {
  DecodeResult r;
  r.status = DecodeStatus::kMalformedBody;
  r.consumed = h.length;
  r.header = h;
  return r;
}

}  // namespace

std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::kHello: return "HELLO";
    case MsgType::kError: return "ERROR";
    case MsgType::kEchoRequest: return "ECHO_REQUEST";
    case MsgType::kEchoReply: return "ECHO_REPLY";
    case MsgType::kVendor: return "VENDOR";
    case MsgType::kFeaturesRequest: return "FEATURES_REQUEST";
    case MsgType::kFeaturesReply: return "FEATURES_REPLY";
    case MsgType::kPacketIn: return "PACKET_IN";
    case MsgType::kPacketOut: return "PACKET_OUT";
    case MsgType::kStatsRequest: return "STATS_REQUEST";
    case MsgType::kStatsReply: return "STATS_REPLY";
  }
  return "UNKNOWN";
}

std::string_view to_string(DecodeStatus s) {
  switch (s) {
    case DecodeStatus::kOk: return "ok";
    case DecodeStatus::kTruncated: return "truncated";
    case DecodeStatus::kUnknownType: return "unknown type";
    case DecodeStatus::kMalformedBody: return "malformed body";
  }
  return "?";
}

MsgType OfMessage::type() const {
  static constexpr MsgType kTypes[] = {
      MsgType::kHello,         MsgType::kEchoRequest,  MsgType::kEchoReply,
      MsgType::kFeaturesRequest, MsgType::kFeaturesReply, MsgType::kPacketIn,
      MsgType::kPacketOut,     MsgType::kStatsRequest, MsgType::kStatsReply,
  };
  return kTypes[body.index()];
}

OfHeader OfMessage::header() const {
  const std::size_t size = kHeaderSize + body_size(body);
  return OfHeader{kVersion, static_cast<uint8_t>(type()),
                  static_cast<uint16_t>(std::min(size, kMaxMessageSize)), xid};
}

std::size_t encoded_size(const OfMessage& msg) {
  return kHeaderSize + body_size(msg.body);
}

std::size_t encode_into(const OfMessage& msg, std::vector<uint8_t>& out) {
  const std::size_t size = encoded_size(msg);
  if (size > kMaxMessageSize) {
    throw OversizeBody("encoded " + std::string(to_string(msg.type())) +
                       " would be " + std::to_string(size) +
                       " bytes, above the 16-bit length field");
  }
  if (const auto* po = std::get_if<PacketOut>(&msg.body)) {
    for (const auto& a : po->actions) {
      if (action_size(a) % 8 != 0) {
        throw CodecError("action length must be a multiple of 8");
      }
    }
  }
  const std::size_t start = out.size();
  out.reserve(start + size);
  put_u8(out, kVersion);
  put_u8(out, static_cast<uint8_t>(msg.type()));
  put_be16(out, static_cast<uint16_t>(size));
  put_be32(out, msg.xid);
  encode_body(msg.body, out);
  return out.size() - start;
}

std::vector<uint8_t> encode(const OfMessage& msg) {
  std::vector<uint8_t> out;
  encode_into(msg, out);
  return out;
}

std::optional<OfHeader> peek_header(std::span<const uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) return std::nullopt;
  return OfHeader{bytes[0], bytes[1], get_be16(bytes, 2), get_be32(bytes, 4)};
}

DecodeResult decode(std::span<const uint8_t> bytes) {
  DecodeResult r;
  const auto h = peek_header(bytes);
  if (!h) return r;
  r.header = h;
  if (h->length < kHeaderSize || h->version != kVersion) {
    r.status = DecodeStatus::kMalformedBody;
    r.consumed = std::max<std::size_t>(h->length, kHeaderSize);
    return r;
  }
  if (bytes.size() < h->length) return r;

  const auto msg = bytes.first(h->length);
  const auto body = msg.subspan(kHeaderSize);
  OfMessage out;
  out.xid = h->xid;

  switch (static_cast<MsgType>(h->msg_type)) {
    case MsgType::kHello:
      out.body = Hello{};
      break;
    case MsgType::kEchoRequest:
      out.body = EchoRequest{{body.begin(), body.end()}};
      break;
    case MsgType::kEchoReply:
      out.body = EchoReply{{body.begin(), body.end()}};
      break;
    case MsgType::kFeaturesRequest:
      if (!body.empty()) return malformed(*h);
      out.body = FeaturesRequest{};
      break;
    case MsgType::kFeaturesReply: {
      if (body.size() < kFeaturesBody ||
          (body.size() - kFeaturesBody) % kPortDescSize != 0) {
        return malformed(*h);
      }
      FeaturesReply f;
      f.datapath_id = get_be64(body, 0);
      f.n_buffers = get_be32(body, 8);
      f.n_tables = body[12];
      f.capabilities = get_be32(body, 16);
      f.actions = get_be32(body, 20);
      out.body = f;
      break;
    }
    case MsgType::kPacketIn: {
      if (body.size() < kPacketInFixed) return malformed(*h);
      PacketIn p;
      p.buffer_id = get_be32(body, 0);
      p.total_len = get_be16(body, 4);
      p.in_port = get_be16(body, 6);
      p.reason = body[8];
      p.data.assign(body.begin() + kPacketInFixed, body.end());
      out.body = std::move(p);
      break;
    }
    case MsgType::kPacketOut: {
      if (body.size() < kPacketOutFixed) return malformed(*h);
      PacketOut p;
      p.buffer_id = get_be32(body, 0);
      p.in_port = get_be16(body, 4);
      const std::size_t actions_len = get_be16(body, 6);
      if (kPacketOutFixed + actions_len > body.size()) return malformed(*h);
      std::size_t off = kPacketOutFixed;
      const std::size_t end = kPacketOutFixed + actions_len;
      while (off < end) {
        if (end - off < 4) return malformed(*h);
        const uint16_t type = get_be16(body, off);
        const uint16_t len = get_be16(body, off + 2);
        if (len < 8 || len % 8 != 0 || off + len > end) return malformed(*h);
        if (type == kActionOutput && len == 8) {
          p.actions.emplace_back(
              OutputAction{get_be16(body, off + 4), get_be16(body, off + 6)});
        } else {
          RawAction raw{type, {body.begin() + off + 4, body.begin() + off + len}};
          p.actions.emplace_back(std::move(raw));
        }
        off += len;
      }
      p.data.assign(body.begin() + end, body.end());
      out.body = std::move(p);
      break;
    }
    case MsgType::kStatsRequest: {
      if (body.size() < kStatsFixed) return malformed(*h);
      if (get_be16(body, 0) != kStatsTypePort) {
        r.status = DecodeStatus::kUnknownType;
        r.consumed = h->length;
        return r;
      }
      if (body.size() != kStatsFixed + kPortStatsRequestBody) return malformed(*h);
      out.body = PortStatsRequest{get_be16(body, 4), get_be16(body, 2)};
      break;
    }
    case MsgType::kStatsReply: {
      if (body.size() < kStatsFixed) return malformed(*h);
      if (get_be16(body, 0) != kStatsTypePort) {
        r.status = DecodeStatus::kUnknownType;
        r.consumed = h->length;
        return r;
      }
      if ((body.size() - kStatsFixed) % kPortCountersSize != 0) return malformed(*h);
      PortStatsReply s;
      s.flags = get_be16(body, 2);
      for (std::size_t off = kStatsFixed; off < body.size(); off += kPortCountersSize) {
        s.ports.push_back(get_counters(body, off));
      }
      out.body = std::move(s);
      break;
    }
    default:
      r.status = DecodeStatus::kUnknownType;
      r.consumed = h->length;
      return r;
  }
  r.status = DecodeStatus::kOk;
  r.consumed = h->length;
  r.message = std::move(out);
  return r;
}

void StreamFramer::feed(std::span<const uint8_t> chunk) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  } else if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), chunk.begin(), chunk.end());
}

std::optional<RawFrame> StreamFramer::next() {
  const std::span<const uint8_t> avail{buf_.data() + pos_, buf_.size() - pos_};
  const auto h = peek_header(avail);
  if (!h) return std::nullopt;
  if (h->length < kHeaderSize || h->version != kVersion) {
    throw StreamCorrupt("bad OpenFlow header (version " +
                        std::to_string(h->version) + ", length " +
                        std::to_string(h->length) + ")");
  }
  if (avail.size() < h->length) return std::nullopt;
  pos_ += h->length;
  return RawFrame{*h, avail.first(h->length)};
}

std::vector<OfMessage> frame_stream(std::vector<uint8_t>& buffer, FrameStats* stats) {
  std::vector<OfMessage> out;
  std::size_t off = 0;
  while (true) {
    const std::span<const uint8_t> rest{buffer.data() + off, buffer.size() - off};
    auto r = decode(rest);
    if (r.status == DecodeStatus::kTruncated) break;
    if (r.header && r.header->length < kHeaderSize) {
      throw StreamCorrupt("OpenFlow length field below header size");
    }
    if (r.status == DecodeStatus::kOk) {
      out.push_back(std::move(*r.message));
    } else if (stats != nullptr) {
      (r.status == DecodeStatus::kUnknownType ? stats->unknown : stats->malformed)++;
    }
    if (r.consumed > rest.size()) break;  // malformed header, wait for the rest
    off += r.consumed;
  }
  buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(off));
  return out;
}

OfMessage make_hello(uint32_t xid) { return OfMessage{xid, Hello{}}; }

OfMessage make_echo_request(uint32_t xid, std::vector<uint8_t> payload) {
  return OfMessage{xid, EchoRequest{std::move(payload)}};
}

OfMessage make_packet_out(uint32_t xid, std::vector<uint8_t> frame, uint16_t out_port) {
  PacketOut p;
  p.actions.emplace_back(OutputAction{out_port, 0});
  p.data = std::move(frame);
  return OfMessage{xid, std::move(p)};
}

OfMessage make_port_stats_request(uint32_t xid, uint16_t port_no) {
  return OfMessage{xid, PortStatsRequest{port_no, 0}};
}

}  // namespace perfbench::of
