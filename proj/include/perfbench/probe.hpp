#pragma once

// Probe tags carried in data packets, and the request/reply bookkeeping that
// turns send and receive events into latency samples.

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "perfbench/frame.hpp"
#include "perfbench/of_codec.hpp"

namespace perfbench {

// The five benchmarked message kinds.
enum class MessageKind : uint8_t {
  kPacketIn,
  kPacketOut,
  kEchoRequest,
  kFeaturesRequest,
  kPortStats,
};

std::string_view to_string(MessageKind k);
std::optional<MessageKind> parse_message_kind(std::string_view s);
inline bool is_synchronous(MessageKind k) {
  return k != MessageKind::kPacketIn && k != MessageKind::kPacketOut;
}

inline constexpr uint32_t kProbeMagic = 0x50464228;
inline constexpr std::size_t kProbeTagSize = 22;
inline constexpr std::size_t kDefaultProbeSize = 64;
inline constexpr std::size_t kMinProbeSize = kUdpFrameOverhead + kProbeTagSize;

struct ProbeTag {
  uint16_t tenant_id = 0;
  uint64_t seq = 0;
  uint64_t send_ts = 0;  // ns since run epoch

  bool operator==(const ProbeTag&) const = default;
};

void encode_tag(const ProbeTag& tag, std::span<uint8_t> out);
std::optional<ProbeTag> decode_tag(std::span<const uint8_t> bytes);

std::vector<uint8_t> build_probe_frame(const UdpEndpoints& ep, const ProbeTag& tag,
                                       std::size_t frame_size = kDefaultProbeSize);
// Overwrites the tag of a frame built by build_probe_frame and refreshes its
// checksums.
void restamp_probe_frame(std::span<uint8_t> frame, const ProbeTag& tag);
std::optional<ProbeTag> extract_probe(std::span<const uint8_t> frame);

struct LatencySample {
  uint32_t run_id = 0;
  uint16_t tenant_id = 0;
  uint64_t seq = 0;
  MessageKind kind = MessageKind::kPacketIn;
  uint64_t send_ts_ns = 0;
  uint64_t recv_ts_ns = 0;

  uint64_t latency_ns() const { return recv_ts_ns - send_ts_ns; }
  bool operator==(const LatencySample&) const = default;
};

enum class MatchOutcome { kMatched, kDuplicate, kUnmatched, kLate };

struct MatchResult {
  MatchOutcome outcome = MatchOutcome::kUnmatched;
  uint64_t send_ts = 0;
};

// Outstanding requests keyed by a dense index (sequence number, or xid
// offset). One thread may insert while another matches; each slot moves
// pending -> matched|expired exactly once.
class PendingTable {
 public:
  explicit PendingTable(std::size_t capacity);

  bool insert(uint64_t key, uint64_t send_ts);
  MatchResult match(uint64_t key);
  // Expires entries with send_ts + older_than <= now; returns how many.
  std::size_t expire(uint64_t now, uint64_t older_than);

  std::size_t capacity() const { return slots_.size(); }
  uint64_t inserted() const { return inserted_.load(std::memory_order_relaxed); }
  uint64_t matched() const { return matched_.load(std::memory_order_relaxed); }
  uint64_t expired() const { return expired_.load(std::memory_order_relaxed); }
  uint64_t outstanding() const { return inserted() - matched() - expired(); }

 private:
  static constexpr uint64_t kEmpty = 0;
  static constexpr uint64_t kMatchedMark = ~uint64_t{0};
  static constexpr uint64_t kExpiredMark = ~uint64_t{0} - 1;

  std::unique_ptr<std::atomic<uint64_t>[]> storage_;
  std::span<std::atomic<uint64_t>> slots_;
  std::atomic<uint64_t> inserted_{0};
  std::atomic<uint64_t> matched_{0};
  std::atomic<uint64_t> expired_{0};
  std::atomic<uint64_t> high_water_{0};
  uint64_t expire_cursor_ = 0;  // only touched by expire()
};

struct LedgerCounts {
  uint64_t sent = 0;
  uint64_t matched = 0;
  uint64_t expired = 0;
  uint64_t outstanding = 0;
  uint64_t unmatched = 0;   // replies/probes with an unknown key
  uint64_t duplicate = 0;
  uint64_t late = 0;        // arrived after expiry
  uint64_t malformed = 0;   // probe magic or frame mismatch
  uint64_t foreign = 0;     // probes owned by another tenant
};

// Per-tenant correlation state for one run.
class TenantLedger {
 public:
  TenantLedger(uint32_t run_id, uint16_t tenant_id, MessageKind kind,
               std::size_t capacity);

  uint16_t tenant_id() const { return tenant_id_; }
  MessageKind kind() const { return kind_; }

  // Asynchronous kinds: allocate the next sequence number and register it.
  ProbeTag stamp(uint64_t send_ts);
  // Synchronous kinds: register a request. xids must be consecutive.
  uint64_t record_request(uint32_t xid, uint64_t send_ts);

  std::optional<LatencySample> correlate_sync(uint32_t reply_xid, uint64_t recv_ts);
  // Correlates a tag recovered from a PacketIn payload or a data packet.
  std::optional<LatencySample> correlate_tag(const ProbeTag& tag, uint64_t recv_ts);

  void count_malformed() { malformed_.fetch_add(1, std::memory_order_relaxed); }
  void count_foreign() { foreign_.fetch_add(1, std::memory_order_relaxed); }
  std::size_t expire(uint64_t now, uint64_t older_than) {
    return table_.expire(now, older_than);
  }
  LedgerCounts counts() const;

 private:
  std::optional<LatencySample> resolve(uint64_t key, uint64_t recv_ts);

  uint32_t run_id_;
  uint16_t tenant_id_;
  MessageKind kind_;
  PendingTable table_;
  uint64_t next_seq_ = 0;
  std::optional<uint32_t> first_xid_;
  std::atomic<uint64_t> unmatched_{0};
  std::atomic<uint64_t> duplicate_{0};
  std::atomic<uint64_t> late_{0};
  std::atomic<uint64_t> malformed_{0};
  std::atomic<uint64_t> foreign_{0};
};

class LedgerSet {
 public:
  LedgerSet() = default;
  void add(std::unique_ptr<TenantLedger> ledger);
  TenantLedger* find(uint16_t tenant_id) const;
  std::span<const std::unique_ptr<TenantLedger>> ledgers() const { return ledgers_; }

  void count_orphan_malformed() { malformed_.fetch_add(1, std::memory_order_relaxed); }
  uint64_t orphan_malformed() const { return malformed_.load(std::memory_order_relaxed); }

 private:
  std::vector<std::unique_ptr<TenantLedger>> ledgers_;
  std::vector<TenantLedger*> by_id_;
  std::atomic<uint64_t> malformed_{0};
};

// Latency from probe injection to PacketIn arrival at `own`'s controller.
// Probes owned by other tenants (a switch broadcasting to every controller)
// are counted as foreign and produce no sample.
std::optional<LatencySample> correlate_packet_in(TenantLedger& own,
                                                 const of::PacketIn& packet_in,
                                                 uint64_t recv_ts);

// Latency from PacketOut emission to arrival of its data packet. Tags whose
// tenant is unknown are counted on the set.
std::optional<LatencySample> correlate_packet_out(LedgerSet& ledgers,
                                                  std::span<const uint8_t> data_packet,
                                                  uint64_t recv_ts);

}  // namespace perfbench
