#pragma once

// Thin RAII layer over POSIX sockets and epoll.

#include <netinet/in.h>
#include <sys/epoll.h>

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "perfbench/of_codec.hpp"

namespace perfbench::net {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConnectFailed : public NetError {
 public:
  using NetError::NetError;
};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() { return std::exchange(fd_, -1); }
  void reset();

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  uint16_t port = 0;

  std::string to_string() const { return host + ":" + std::to_string(port); }
  bool operator==(const Endpoint&) const = default;
};

// Parses "host:port".
Endpoint parse_endpoint(const std::string& s);
sockaddr_in to_sockaddr(const Endpoint& ep);

Fd tcp_listen(const Endpoint& ep, int backlog = 64);
Fd tcp_accept(int listen_fd);
// Blocking connect bounded by `timeout`; throws ConnectFailed.
Fd tcp_connect(const Endpoint& ep, std::chrono::milliseconds timeout);
Fd udp_bind(const Endpoint& ep);
uint16_t local_port(int fd);

void set_nonblocking(int fd, bool on = true);
void set_nodelay(int fd, bool on);
bool nodelay_enabled(int fd);
void set_buffer_sizes(int fd, int bytes);

// Writes all of `data` to a blocking socket. Throws NetError on failure.
void write_all(int fd, std::span<const uint8_t> data);

class Epoll {
 public:
  Epoll();
  void add(int fd, uint32_t events, uint64_t token);
  void modify(int fd, uint32_t events, uint64_t token);
  void remove(int fd);
  // Waits up to `timeout_ms` (-1 blocks). Returns the number of ready events.
  int wait(std::span<epoll_event> events, int timeout_ms);

 private:
  Fd fd_;
};

class EventFd {
 public:
  EventFd();
  int fd() const { return fd_.get(); }
  void notify();
  void drain();

 private:
  Fd fd_;
};

// Periodic or one-shot CLOCK_MONOTONIC timer usable from epoll.
class TimerFd {
 public:
  TimerFd();
  int fd() const { return fd_.get(); }
  // Absolute first expiry (monotonic ns) and interval (0 = one shot).
  void arm(uint64_t first_abs_ns, uint64_t interval_ns);
  void disarm();
  uint64_t drain();

 private:
  Fd fd_;
};

// One OpenFlow connection over a nonblocking TCP socket: reassembles
// incoming messages and buffers outgoing bytes until the socket accepts them.
class OfConnection {
 public:
  OfConnection() = default;
  explicit OfConnection(Fd fd);
  // Takes over a framer that may already hold bytes read during a handshake.
  OfConnection(Fd fd, of::StreamFramer framer);

  int fd() const { return fd_.get(); }
  bool open() const { return fd_.valid() && !closed_; }

  // Reads whatever is available. Returns false on EOF or error.
  bool read_available();
  std::optional<of::RawFrame> next_frame() { return framer_.next(); }

  void queue(std::span<const uint8_t> bytes);
  void queue(const of::OfMessage& msg);
  // Attempts to write queued bytes; returns false on error.
  bool flush();
  bool has_pending_output() const { return out_pos_ < out_.size(); }
  std::size_t pending_output() const { return out_.size() - out_pos_; }

  void close();
  uint64_t bytes_in() const { return bytes_in_; }
  uint64_t bytes_out() const { return bytes_out_; }
  uint64_t reads() const { return reads_; }

 private:
  Fd fd_;
  of::StreamFramer framer_;
  std::vector<uint8_t> out_;
  std::size_t out_pos_ = 0;
  bool closed_ = false;
  uint64_t bytes_in_ = 0;
  uint64_t bytes_out_ = 0;
  uint64_t reads_ = 0;
};

// Blocking HELLO exchange on a fresh connection: sends our HELLO, waits for
// the peer's. Anything received after the peer's HELLO stays in `framer`.
void hello_exchange(int fd, of::StreamFramer& framer, uint32_t xid,
                    std::chrono::milliseconds timeout);

class HandshakeTimeout : public NetError {
 public:
  using NetError::NetError;
};

// Blocking read of the next full message within `timeout`.
std::optional<of::OfMessage> read_message(int fd, of::StreamFramer& framer,
                                          std::chrono::milliseconds timeout);

}  // namespace perfbench::net
