#pragma once

// Data-plane side of the benchmark: per-tenant probe injectors that trigger
// PacketIns at the switch, and one receiver for packets emitted by PacketOuts.

#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

#include "perfbench/identity.hpp"
#include "perfbench/net.hpp"
#include "perfbench/probe.hpp"
#include "perfbench/scheduler.hpp"

namespace perfbench {

class SendFailed : public net::NetError {
 public:
  using net::NetError::NetError;
};

struct InjectorConfig {
  uint16_t tenant_id = 1;
  uint32_t rate = 1000;
  TenantIdentity identity;
  std::size_t probe_size = kDefaultProbeSize;
  net::Endpoint target;  // the switch's data port
};

class ProbeInjector {
 public:
  ProbeInjector(InjectorConfig cfg, TenantLedger& ledger, uint32_t duration_s);
  ~ProbeInjector();

  void start(RunClock clock);
  void request_stop();
  void join();

  // Stamps and sends `n` probes in one batch. Throws SendFailed.
  void inject(uint64_t now, uint64_t n);

  const AchievedRate& achieved() const { return achieved_; }
  uint64_t sent() const { return sent_; }
  const std::string& error() const { return error_; }

 private:
  InjectorConfig cfg_;
  TenantLedger& ledger_;
  uint32_t duration_s_;
  net::Fd sock_;
  sockaddr_in target_{};
  std::vector<std::vector<uint8_t>> frames_;
  std::atomic<bool> stopping_{false};
  net::EventFd stop_;
  AchievedRate achieved_;
  uint64_t sent_ = 0;
  std::string error_;
  std::thread thread_;
};

struct ReceiverCounts {
  uint64_t datagrams = 0;
  uint64_t samples = 0;
  uint64_t non_probe = 0;
};

class DataReceiver {
 public:
  // `socket` is a bound UDP socket (the switch's PacketOut destination).
  DataReceiver(net::Fd socket, LedgerSet& ledgers, uint32_t run_id);
  ~DataReceiver();

  void start(RunClock clock);
  void request_stop();
  void join();

  void on_data_packet(std::span<const uint8_t> bytes, uint64_t recv_ts);

  // Stable after join().
  std::vector<LatencySample>& samples() { return samples_; }
  const ReceiverCounts& counts() const { return counts_; }

 private:
  void loop(RunClock clock);

  net::Fd sock_;
  LedgerSet& ledgers_;
  uint32_t run_id_;
  net::EventFd stop_;
  std::atomic<bool> stopping_{false};
  std::vector<LatencySample> samples_;
  ReceiverCounts counts_;
  std::thread thread_;
};

}  // namespace perfbench
