#pragma once

// Minimal OpenFlow 1.0 switch: one data port, PacketIn for every datagram
// received on it, PacketOut emitted on it, and a port-stats service with a
// fixed per-request processing cost.

#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "perfbench/net.hpp"
#include "perfbench/of_codec.hpp"

namespace perfbench {

inline constexpr double kDefaultStatsCapacity = 7500.0;

struct SwitchConfig {
  net::Endpoint listen;
  uint64_t datapath_id = 0x0000000000000001;
  net::Endpoint data_bind;
  // Destination of packets emitted by PacketOut (the data-plane receiver).
  net::Endpoint data_peer;
  uint16_t data_port_no = 1;
  double stats_capacity = kDefaultStatsCapacity;  // requests per second
  std::size_t stats_queue_limit = 1'000'000;

  uint64_t stats_service_cost_ns() const;
  void validate() const;  // throws std::invalid_argument
};

struct StatsJob {
  uint64_t connection = 0;
  uint32_t xid = 0;
  uint16_t port_no = of::kPortNone;
  uint64_t arrival_ns = 0;
  uint64_t completion_ns = 0;
};

// FIFO single-server queue with deterministic service time: a request
// arriving at a completes at max(a, previous completion) + cost.
class StatsService {
 public:
  StatsService(uint64_t cost_ns, std::size_t limit);

  // False (and counted as dropped) when the queue is full.
  bool enqueue(uint64_t connection, uint32_t xid, uint16_t port_no, uint64_t now_ns);
  std::vector<StatsJob> pop_completed(uint64_t now_ns);
  std::optional<uint64_t> next_completion() const;

  std::size_t queue_length() const { return queue_.size(); }
  std::size_t max_queue_length() const { return max_queue_; }
  uint64_t dropped() const { return dropped_; }
  uint64_t served() const { return served_; }

 private:
  uint64_t cost_ns_;
  std::size_t limit_;
  std::deque<StatsJob> queue_;
  uint64_t last_completion_ = 0;
  std::size_t max_queue_ = 0;
  uint64_t dropped_ = 0;
  uint64_t served_ = 0;
};

struct SwitchCounters {
  uint64_t connections = 0;
  uint64_t packet_in_sent = 0;
  uint64_t data_rx = 0;
  uint64_t data_rx_dropped = 0;  // no controller connected
  uint64_t packet_out_rx = 0;
  uint64_t data_tx = 0;
  uint64_t stats_requests = 0;
  uint64_t stats_replies = 0;
  uint64_t stats_dropped = 0;
  uint64_t stats_max_queue = 0;
  uint64_t features_requests = 0;
  uint64_t echo_requests = 0;
  uint64_t unknown_messages = 0;
  uint64_t protocol_errors = 0;
  // Stats request arrivals per CLOCK_MONOTONIC second.
  std::map<uint64_t, uint64_t> stats_arrivals_per_second;

  uint64_t max_stats_arrivals_in_a_second() const;
  std::string to_json() const;
  static SwitchCounters from_json(const std::string& text);
};

class SwitchEmulator {
 public:
  // `control_listener` and `data_socket` may be pre-bound by the caller (so
  // ports are known before the emulator runs in a child process); invalid
  // descriptors are bound from the config.
  SwitchEmulator(SwitchConfig config, net::Fd control_listener = {},
                 net::Fd data_socket = {});
  ~SwitchEmulator();

  uint16_t control_port() const;
  uint16_t data_port() const;

  // Event loop; returns after request_stop(). Async-signal-safe stop.
  void run();
  void request_stop();

  // Counters are only stable after run() returned.
  const SwitchCounters& counters() const { return counters_; }

 private:
  struct Control;

  void accept_connections();
  void on_control_readable(uint64_t id);
  void handle_message(Control& c, const of::RawFrame& frame, uint64_t now);
  void on_data_readable();
  void on_stats_timer();
  void rearm_stats_timer();
  void flush_all();
  void send_data(std::span<const uint8_t> frame);
  void flush_data();
  of::PortStatsReply make_stats_reply(uint16_t port_no) const;

  SwitchConfig config_;
  net::Fd listener_;
  net::Fd data_;
  sockaddr_in data_peer_{};
  net::Epoll epoll_;
  net::EventFd stop_;
  net::TimerFd stats_timer_;
  StatsService stats_;
  std::map<uint64_t, std::unique_ptr<Control>> controls_;
  uint64_t next_id_ = 16;
  std::vector<std::vector<uint8_t>> data_out_;
  uint64_t rx_bytes_ = 0;
  uint64_t tx_bytes_ = 0;
  std::atomic<bool> stopping_{false};
  SwitchCounters counters_;
};

}  // namespace perfbench
