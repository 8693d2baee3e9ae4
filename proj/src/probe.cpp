#include "perfbench/probe.hpp"

#include <algorithm>
#include <stdexcept>

#include "perfbench/bytes.hpp"

namespace perfbench {

namespace {

constexpr std::size_t kTagOffset = kUdpFrameOverhead;

}  // namespace

std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::kPacketIn: return "PACKET_IN";
    case MessageKind::kPacketOut: return "PACKET_OUT";
    case MessageKind::kEchoRequest: return "ECHO_REQUEST";
    case MessageKind::kFeaturesRequest: return "FEATURES_REQUEST";
    case MessageKind::kPortStats: return "PORT_STATS";
  }
  return "?";
}

std::optional<MessageKind> parse_message_kind(std::string_view s) {
  for (auto k : {MessageKind::kPacketIn, MessageKind::kPacketOut,
                 MessageKind::kEchoRequest, MessageKind::kFeaturesRequest,
                 MessageKind::kPortStats}) {
    if (s == to_string(k)) return k;
  }
  if (s == "OFPT_PACKET_IN") return MessageKind::kPacketIn;
  if (s == "OFPT_PACKET_OUT") return MessageKind::kPacketOut;
  if (s == "OFPT_ECHO_REQUEST") return MessageKind::kEchoRequest;
  if (s == "OFPT_FEATURES_REQUEST") return MessageKind::kFeaturesRequest;
  if (s == "OFPC_PORT_STATS") return MessageKind::kPortStats;
  return std::nullopt;
}

void encode_tag(const ProbeTag& tag, std::span<uint8_t> out) {
  set_be32(out, 0, kProbeMagic);
  set_be16(out, 4, tag.tenant_id);
  set_be64(out, 6, tag.seq);
  set_be64(out, 14, tag.send_ts);
}

std::optional<ProbeTag> decode_tag(std::span<const uint8_t> bytes) {
  if (bytes.size() < kProbeTagSize || get_be32(bytes, 0) != kProbeMagic) {
    return std::nullopt;
  }
  return ProbeTag{get_be16(bytes, 4), get_be64(bytes, 6), get_be64(bytes, 14)};
}

std::vector<uint8_t> build_probe_frame(const UdpEndpoints& ep, const ProbeTag& tag,
                                       std::size_t frame_size) {
  if (frame_size < kMinProbeSize) {
    throw std::invalid_argument("probe frame size must be at least " +
                                std::to_string(kMinProbeSize) + " bytes");
  }
  std::array<uint8_t, kProbeTagSize> payload{};
  encode_tag(tag, payload);
  return build_udp_frame(ep, payload, frame_size);
}

void restamp_probe_frame(std::span<uint8_t> frame, const ProbeTag& tag) {
  encode_tag(tag, frame.subspan(kTagOffset, kProbeTagSize));
  refresh_checksums(frame);
}

std::optional<ProbeTag> extract_probe(std::span<const uint8_t> frame) {
  const auto view = parse_udp_frame(frame);
  if (!view) return std::nullopt;
  return decode_tag(view->payload);
}

PendingTable::PendingTable(std::size_t capacity)
    : storage_(std::make_unique<std::atomic<uint64_t>[]>(capacity)),
      slots_(storage_.get(), capacity) {}

bool PendingTable::insert(uint64_t key, uint64_t send_ts) {
  if (key >= slots_.size()) return false;
  uint64_t expected = kEmpty;
  // Stored as send_ts + 1 so that a zero timestamp is distinguishable.
  if (!slots_[key].compare_exchange_strong(expected, send_ts + 1,
                                           std::memory_order_release,
                                           std::memory_order_relaxed)) {
    return false;
  }
  inserted_.fetch_add(1, std::memory_order_relaxed);
  uint64_t hw = high_water_.load(std::memory_order_relaxed);
  while (hw < key + 1 &&
         !high_water_.compare_exchange_weak(hw, key + 1, std::memory_order_relaxed)) {
  }
  return true;
}

MatchResult PendingTable::match(uint64_t key) {
  if (key >= slots_.size()) return {MatchOutcome::kUnmatched, 0};
  uint64_t v = slots_[key].load(std::memory_order_acquire);
  while (true) {
    if (v == kEmpty) return {MatchOutcome::kUnmatched, 0};
    if (v == kMatchedMark) return {MatchOutcome::kDuplicate, 0};
    if (v == kExpiredMark) return {MatchOutcome::kLate, 0};
    if (slots_[key].compare_exchange_weak(v, kMatchedMark, std::memory_order_acq_rel,
                                          std::memory_order_acquire)) {
      matched_.fetch_add(1, std::memory_order_relaxed);
      return {MatchOutcome::kMatched, v - 1};
    }
  }
}

std::size_t PendingTable::expire(uint64_t now, uint64_t older_than) {
  std::size_t count = 0;
  const uint64_t end = high_water_.load(std::memory_order_acquire);
  bool prefix_resolved = true;
  for (uint64_t k = expire_cursor_; k < end; ++k) {
    uint64_t v = slots_[k].load(std::memory_order_acquire);
    while (v != kEmpty && v != kMatchedMark && v != kExpiredMark) {
      if ((v - 1) + older_than > now) break;
      if (slots_[k].compare_exchange_weak(v, kExpiredMark, std::memory_order_acq_rel,
                                          std::memory_order_acquire)) {
        v = kExpiredMark;
        ++count;
      }
    }
    if (prefix_resolved && (v == kMatchedMark || v == kExpiredMark)) {
      expire_cursor_ = k + 1;
    } else {
      prefix_resolved = false;
    }
  }
  expired_.fetch_add(count, std::memory_order_relaxed);
  return count;
}

TenantLedger::TenantLedger(uint32_t run_id, uint16_t tenant_id, MessageKind kind,
                           std::size_t capacity)
    : run_id_(run_id), tenant_id_(tenant_id), kind_(kind), table_(capacity) {}

ProbeTag TenantLedger::stamp(uint64_t send_ts) {
  ProbeTag tag{tenant_id_, next_seq_++, send_ts};
  if (!table_.insert(tag.seq, send_ts)) {
    throw std::length_error("pending table capacity exhausted");
  }
  return tag;
}

uint64_t TenantLedger::record_request(uint32_t xid, uint64_t send_ts) {
  if (!first_xid_) first_xid_ = xid;
  const uint64_t key = static_cast<uint32_t>(xid - *first_xid_);
  if (key != next_seq_) {
    throw std::logic_error("request xids must be consecutive");
  }
  if (!table_.insert(key, send_ts)) {
    throw std::length_error("pending table capacity exhausted");
  }
  ++next_seq_;
  return key;
}

std::optional<LatencySample> TenantLedger::resolve(uint64_t key, uint64_t recv_ts) {
  const auto r = table_.match(key);
  switch (r.outcome) {
    case MatchOutcome::kMatched:
      return LatencySample{run_id_, tenant_id_, key, kind_, r.send_ts,
                           std::max(recv_ts, r.send_ts)};
    case MatchOutcome::kDuplicate:
      duplicate_.fetch_add(1, std::memory_order_relaxed);
      break;
    case MatchOutcome::kLate:
      late_.fetch_add(1, std::memory_order_relaxed);
      break;
    case MatchOutcome::kUnmatched:
      unmatched_.fetch_add(1, std::memory_order_relaxed);
      break;
  }
  return std::nullopt;
}

std::optional<LatencySample> TenantLedger::correlate_sync(uint32_t reply_xid,
                                                          uint64_t recv_ts) {
  if (!first_xid_) {
    unmatched_.fetch_add(1, std::memory_order_relaxed);
    return std::nullopt;
  }
  return resolve(static_cast<uint32_t>(reply_xid - *first_xid_), recv_ts);
}

std::optional<LatencySample> TenantLedger::correlate_tag(const ProbeTag& tag,
                                                         uint64_t recv_ts) {
  auto s = resolve(tag.seq, recv_ts);
  // The tag's own timestamp is authoritative for one-way latency.
  if (s) {
    s->send_ts_ns = tag.send_ts;
    s->recv_ts_ns = std::max(recv_ts, tag.send_ts);
  }
  return s;
}

LedgerCounts TenantLedger::counts() const {
  LedgerCounts c;
  c.sent = table_.inserted();
  c.matched = table_.matched();
  c.expired = table_.expired();
  c.outstanding = table_.outstanding();
  c.unmatched = unmatched_.load(std::memory_order_relaxed);
  c.duplicate = duplicate_.load(std::memory_order_relaxed);
  c.late = late_.load(std::memory_order_relaxed);
  c.malformed = malformed_.load(std::memory_order_relaxed);
  c.foreign = foreign_.load(std::memory_order_relaxed);
  return c;
}

void LedgerSet::add(std::unique_ptr<TenantLedger> ledger) {
  const uint16_t id = ledger->tenant_id();
  if (by_id_.size() <= id) by_id_.resize(std::size_t{id} + 1, nullptr);
  if (by_id_[id] != nullptr) throw std::invalid_argument("duplicate tenant ledger");
  by_id_[id] = ledger.get();
  ledgers_.push_back(std::move(ledger));
}

TenantLedger* LedgerSet::find(uint16_t tenant_id) const {
  return tenant_id < by_id_.size() ? by_id_[tenant_id] : nullptr;
}

std::optional<LatencySample> correlate_packet_in(TenantLedger& own,
                                                 const of::PacketIn& packet_in,
                                                 uint64_t recv_ts) {
  const auto tag = extract_probe(packet_in.data);
  if (!tag) {
    own.count_malformed();
    return std::nullopt;
  }
  if (tag->tenant_id != own.tenant_id()) {
    own.count_foreign();
    return std::nullopt;
  }
  return own.correlate_tag(*tag, recv_ts);
}

std::optional<LatencySample> correlate_packet_out(LedgerSet& ledgers,
                                                  std::span<const uint8_t> data_packet,
                                                  uint64_t recv_ts) {
  const auto tag = extract_probe(data_packet);
  if (!tag) {
    ledgers.count_orphan_malformed();
    return std::nullopt;
  }
  TenantLedger* ledger = ledgers.find(tag->tenant_id);
  if (ledger == nullptr) {
    ledgers.count_orphan_malformed();
    return std::nullopt;
  }
  return ledger->correlate_tag(*tag, recv_ts);
}

}  // namespace perfbench
