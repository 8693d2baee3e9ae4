#pragma once

// The hypervisor process: one upstream connection to the switch and one
// listener per tenant. fv runs everything on a single event loop; ovx runs a
// switch-side actor, one actor per tenant and a stats poller.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "perfbench/hypervisor.hpp"
#include "perfbench/net.hpp"

namespace perfbench {

struct ProxyConfig {
  HypervisorMode mode = HypervisorMode::kFv;
  net::Endpoint switch_endpoint;
  Flowspace flowspace;                  // fv
  std::vector<VirtualMapping> mappings; // ovx
  double poll_rate = 1.0;               // ovx stats polls per second
  std::chrono::milliseconds connect_timeout{3000};
};

struct TenantListener {
  uint16_t tenant_id = 0;
  net::Fd fd;
};

struct ProxyCounters {
  std::atomic<uint64_t> up_forwarded{0};
  std::atomic<uint64_t> down_forwarded{0};
  std::atomic<uint64_t> no_matching_slice{0};
  std::atomic<uint64_t> no_matching_tenant{0};
  std::atomic<uint64_t> tenant_offline{0};
  std::atomic<uint64_t> unknown_virtual_address{0};
  std::atomic<uint64_t> unmatched_replies{0};
  std::atomic<uint64_t> xid_remapped{0};
  std::atomic<uint64_t> stats_from_cache{0};
  std::atomic<uint64_t> cache_cold{0};
  std::atomic<uint64_t> polls_sent{0};
  std::atomic<uint64_t> poll_replies{0};
  std::atomic<uint64_t> answered_locally{0};
  std::atomic<uint64_t> tenant_connects{0};
  std::atomic<uint64_t> tenant_disconnects{0};
  std::atomic<uint64_t> protocol_errors{0};

  std::string to_json() const;
};

class HypervisorProxy {
 public:
  // Connects to the switch lazily in run(). Listeners must already be bound.
  HypervisorProxy(ProxyConfig config, std::vector<TenantListener> listeners);
  ~HypervisorProxy();

  // Blocks until request_stop(). Throws net::ConnectFailed if the switch is
  // unreachable.
  void run();
  // Async-signal-safe.
  void request_stop();

  const ProxyCounters& counters() const { return counters_; }

 private:
  class FvLoop;
  class OvxRuntime;

  ProxyConfig config_;
  std::vector<TenantListener> listeners_;
  net::EventFd stop_;
  std::atomic<bool> stopping_{false};
  ProxyCounters counters_;
};

// Connects to the switch, completes HELLO and a FEATURES exchange, and
// returns the connection with any bytes that arrived early still buffered.
net::OfConnection connect_upstream(const net::Endpoint& ep, std::chrono::milliseconds timeout,
                                   uint64_t* datapath_id = nullptr);

}  // namespace perfbench
