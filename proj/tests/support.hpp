#pragma once

// Blocking OpenFlow peers for driving the proxy and switch from tests.

#include <poll.h>
#include <sys/socket.h>

#include <chrono>
#include <optional>
#include <vector>

#include "perfbench/clock.hpp"
#include "perfbench/net.hpp"
#include "perfbench/of_codec.hpp"

namespace testing {

using namespace std::chrono_literals;
namespace net = perfbench::net;
namespace of = perfbench::of;

inline net::Endpoint loopback(uint16_t port = 0) { return {"127.0.0.1", port}; }

struct Peer {
  net::Fd fd;
  of::StreamFramer framer;

  // Next whole message as raw bytes.
  std::optional<std::vector<uint8_t>> next_raw(std::chrono::milliseconds timeout = 2000ms) {
    const uint64_t deadline =
        perfbench::monotonic_ns() + static_cast<uint64_t>(timeout.count()) * 1'000'000;
    while (true) {
      if (auto f = framer.next()) return std::vector<uint8_t>(f->bytes.begin(), f->bytes.end());
      const uint64_t now = perfbench::monotonic_ns();
      if (now >= deadline) return std::nullopt;
      pollfd p{fd.get(), POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>((deadline - now) / 1'000'000) + 1) <= 0) continue;
      std::array<uint8_t, 65536> buf;
      const ssize_t n = ::recv(fd.get(), buf.data(), buf.size(), MSG_DONTWAIT);
      if (n <= 0) {
        if (n < 0 && errno == EAGAIN) continue;
        return std::nullopt;
      }
      framer.feed({buf.data(), static_cast<std::size_t>(n)});
    }
  }

  std::optional<of::OfMessage> next(std::chrono::milliseconds timeout = 2000ms) {
    auto raw = next_raw(timeout);
    if (!raw) return std::nullopt;
    auto r = of::decode(*raw);
    return r.message;
  }

  // Skips messages of other types.
  std::optional<of::OfMessage> next_of(of::MsgType t,
                                       std::chrono::milliseconds timeout = 2000ms) {
    while (auto m = next(timeout)) {
      if (m->type() == t) return m;
    }
    return std::nullopt;
  }

  void send(std::span<const uint8_t> bytes) { net::write_all(fd.get(), bytes); }
  void send(const of::OfMessage& m) { send(of::encode(m)); }
};

inline Peer dial(uint16_t port) {
  Peer p;
  p.fd = net::tcp_connect(loopback(port), 2000ms);
  net::hello_exchange(p.fd.get(), p.framer, 0, 2000ms);
  return p;
}

// Accepts one connection and answers the HELLO and FEATURES handshake the
// way a switch would.
class FakeSwitch {
 public:
  FakeSwitch() : listener_(net::tcp_listen(loopback())) {}
  uint16_t port() const { return net::local_port(listener_.get()); }

  Peer accept(uint64_t dpid = 0x42) {
    pollfd p{listener_.get(), POLLIN, 0};
    ::poll(&p, 1, 3000);
    Peer peer;
    peer.fd = net::tcp_accept(listener_.get());
    net::hello_exchange(peer.fd.get(), peer.framer, 0, 2000ms);
    auto req = peer.next_of(of::MsgType::kFeaturesRequest);
    of::FeaturesReply f;
    f.datapath_id = dpid;
    peer.send(of::OfMessage{req ? req->xid : 0, f});
    return peer;
  }

 private:
  net::Fd listener_;
};

}  // namespace testing
