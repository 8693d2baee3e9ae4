#pragma once

// Tenant controllers. Each tenant is a thread owning one TCP connection, its
// pacing and its ledger; samples stay with the actor until it finishes.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "perfbench/identity.hpp"
#include "perfbench/net.hpp"
#include "perfbench/probe.hpp"
#include "perfbench/scheduler.hpp"

namespace perfbench {

struct TenantConfig {
  uint16_t tenant_id = 1;
  net::Endpoint endpoint;
  uint32_t rate = 1000;
  MessageKind kind = MessageKind::kPacketOut;
  bool nodelay = true;
  TenantIdentity identity;  // source of PacketOut probe packets
  std::size_t probe_size = kDefaultProbeSize;
  uint16_t out_port = 1;
};

// Per-tenant share of `total`; the remainder goes to the lowest tenant ids.
std::vector<uint32_t> split_rate(uint32_t total, uint16_t tenants);

class WriteFailed : public net::NetError {
 public:
  using net::NetError::NetError;
};

// Builds the wire bytes of the messages a tenant sends. PacketOuts are
// produced from a pre-encoded template whose xid and probe tag are patched.
class RequestFactory {
 public:
  explicit RequestFactory(const TenantConfig& cfg);

  std::span<const uint8_t> packet_out(uint32_t xid, const ProbeTag& tag);
  std::vector<uint8_t> request(MessageKind kind, uint32_t xid) const;

 private:
  std::vector<uint8_t> packet_out_;
  std::size_t data_offset_ = 0;
};

struct TenantResult {
  uint16_t tenant_id = 0;
  bool nodelay = false;
  AchievedRate achieved;
  std::vector<LatencySample> samples;
  uint64_t echo_answered = 0;
  uint64_t unknown_messages = 0;
  uint64_t bytes_out = 0;
  uint64_t bytes_in = 0;
  uint64_t writes = 0;
  std::string error;  // empty unless the tenant terminated early
};

class TenantActor {
 public:
  TenantActor(TenantConfig cfg, TenantLedger& ledger, uint32_t run_id, uint32_t duration_s);
  ~TenantActor();

  // Dials, exchanges HELLO and applies TCP_NODELAY iff configured. Throws
  // net::ConnectFailed or net::HandshakeTimeout.
  void connect(std::chrono::milliseconds timeout);
  // Emission starts at the clock's epoch; the actor keeps receiving for
  // `drain_ns` after its last emission (or after `duration` when it only
  // receives).
  void start(RunClock clock, uint64_t drain_ns);
  void request_stop();
  void join();
  bool finished() const { return finished_.load(); }

  const TenantConfig& config() const { return cfg_; }
  bool nodelay_applied() const;
  // Valid after join().
  TenantResult& result() { return result_; }

  // Steps of the actor loop, exposed for tests. `now` is run-relative.
  void emit_packet_out(uint64_t now);
  void emit_request(uint64_t now);
  void on_message(const of::OfMessage& msg, uint64_t now);
  net::OfConnection& connection() { return conn_; }

 private:
  void loop(RunClock clock, uint64_t drain_ns);
  void write(std::span<const uint8_t> bytes);

  TenantConfig cfg_;
  TenantLedger& ledger_;
  uint32_t run_id_;
  uint32_t duration_s_;
  RequestFactory factory_;
  net::OfConnection conn_;
  net::EventFd stop_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> finished_{false};
  uint32_t next_xid_ = 1;
  TenantResult result_;
  std::thread thread_;
};

// All tenants of one run.
class ControllerEmulator {
 public:
  ControllerEmulator(std::vector<TenantConfig> tenants, LedgerSet& ledgers, uint32_t run_id,
                     uint32_t duration_s);

  // Connects tenants in id order; the first failure propagates.
  void connect_all(std::chrono::milliseconds timeout);
  void start(RunClock clock, uint64_t drain_ns);
  void join();
  void request_stop();

  std::vector<std::unique_ptr<TenantActor>>& actors() { return actors_; }

 private:
  std::vector<std::unique_ptr<TenantActor>> actors_;
};

}  // namespace perfbench
