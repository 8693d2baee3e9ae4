#include "perfbench/proxy.hpp"

#include <poll.h>

#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "perfbench/bytes.hpp"
#include "perfbench/clock.hpp"

namespace perfbench {

namespace {

constexpr uint64_t kTokenStop = 1;
constexpr uint64_t kTokenSwitch = 2;
constexpr uint64_t kTokenInbox = 3;
constexpr uint64_t kTokenListenerBase = 1 << 16;
constexpr uint64_t kTokenTenantBase = 1 << 20;
constexpr uint32_t kPollXidBase = 0xc0000000;
constexpr uint32_t kHandshakeXid = 0xd0000000;

void bump(std::atomic<uint64_t>& c, uint64_t n = 1) { c.fetch_add(n, std::memory_order_relaxed); }

of::OfMessage features_reply(uint32_t xid, uint64_t dpid) {
  of::FeaturesReply f;
  f.datapath_id = dpid;
  return of::OfMessage{xid, f};
}

// Byte queue between two threads. The eventfd fires only on the
// empty -> non-empty transition.
class Mailbox {
 public:
  int fd() const { return ev_.fd(); }

  void post(std::span<const uint8_t> bytes) {
    if (bytes.empty()) return;
    bool was_empty = false;
    {
      std::lock_guard lock(mu_);
      was_empty = bytes_.empty();
      bytes_.insert(bytes_.end(), bytes.begin(), bytes.end());
    }
    if (was_empty) ev_.notify();
  }

  // Swaps the pending bytes into `out` (which should be empty).
  void take(std::vector<uint8_t>& out) {
    ev_.drain();
    std::lock_guard lock(mu_);
    out.swap(bytes_);
  }

 private:
  std::mutex mu_;
  std::vector<uint8_t> bytes_;
  net::EventFd ev_;
};

// Ensures EPOLLOUT is only requested while output is stuck in user space.
struct Downstream {
  std::unique_ptr<net::OfConnection> conn;
  bool want_out = false;

  bool online() const { return conn && conn->open(); }
};

bool flush_downstream(net::Epoll& ep, Downstream& d, uint64_t token) {
  if (!d.conn) return true;
  if (!d.conn->flush()) return false;
  const bool want = d.conn->has_pending_output();
  if (want != d.want_out) {
    d.want_out = want;
    ep.modify(d.conn->fd(), want ? (EPOLLIN | EPOLLOUT) : EPOLLIN, token);
  }
  return true;
}

std::unique_ptr<net::OfConnection> accept_tenant(int listen_fd) {
  net::Fd fd = net::tcp_accept(listen_fd);
  if (!fd.valid()) return nullptr;
  net::set_nodelay(fd.get(), true);
  auto conn = std::make_unique<net::OfConnection>(std::move(fd));
  conn->queue(of::make_hello(0));
  return conn;
}

}  // namespace

std::string ProxyCounters::to_json() const {
  nlohmann::json j;
  j["up_forwarded"] = up_forwarded.load();
  j["down_forwarded"] = down_forwarded.load();
  j["no_matching_slice"] = no_matching_slice.load();
  j["no_matching_tenant"] = no_matching_tenant.load();
  j["tenant_offline"] = tenant_offline.load();
  j["unknown_virtual_address"] = unknown_virtual_address.load();
  j["unmatched_replies"] = unmatched_replies.load();
  j["xid_remapped"] = xid_remapped.load();
  j["stats_from_cache"] = stats_from_cache.load();
  j["cache_cold"] = cache_cold.load();
  j["polls_sent"] = polls_sent.load();
  j["poll_replies"] = poll_replies.load();
  j["answered_locally"] = answered_locally.load();
  j["tenant_connects"] = tenant_connects.load();
  j["tenant_disconnects"] = tenant_disconnects.load();
  j["protocol_errors"] = protocol_errors.load();
  return j.dump(2);
}

net::OfConnection connect_upstream(const net::Endpoint& ep, std::chrono::milliseconds timeout,
                                   uint64_t* datapath_id) {
  net::Fd fd = net::tcp_connect(ep, timeout);
  net::set_nodelay(fd.get(), true);
  of::StreamFramer framer;
  net::hello_exchange(fd.get(), framer, kHandshakeXid, timeout);
  net::write_all(fd.get(), of::encode(of::OfMessage{kHandshakeXid + 1, of::FeaturesRequest{}}));
  const uint64_t deadline = monotonic_ns() + static_cast<uint64_t>(timeout.count()) * kNsPerMs;
  while (true) {
    const uint64_t now = monotonic_ns();
    if (now >= deadline) throw net::HandshakeTimeout("switch sent no FEATURES_REPLY");
    auto msg = net::read_message(fd.get(), framer,
                                 std::chrono::milliseconds((deadline - now) / kNsPerMs + 1));
    if (msg && msg->is<of::FeaturesReply>()) {
      if (datapath_id != nullptr) *datapath_id = msg->as<of::FeaturesReply>().datapath_id;
      break;
    }
  }
  return net::OfConnection(std::move(fd), std::move(framer));
}

// ---------------------------------------------------------------- fv

class HypervisorProxy::FvLoop {
 public:
  FvLoop(HypervisorProxy& p) : p_(p), c_(p.counters_) {}

  void run() {
    upstream_.conn = std::make_unique<net::OfConnection>(
        connect_upstream(p_.config_.switch_endpoint, p_.config_.connect_timeout, &dpid_));
    ep_.add(upstream_.conn->fd(), EPOLLIN, kTokenSwitch);
    ep_.add(p_.stop_.fd(), EPOLLIN, kTokenStop);
    for (std::size_t i = 0; i < p_.listeners_.size(); ++i) {
      const auto& l = p_.listeners_[i];
      net::set_nonblocking(l.fd.get());
      ep_.add(l.fd.get(), EPOLLIN, kTokenListenerBase + i);
      slot_of_[l.tenant_id] = i;
    }
    tenants_.resize(p_.listeners_.size());
    spdlog::info("fv: up, {} tenant listeners", tenants_.size());

    // Bytes already read during the handshake.
    on_switch_frames();

    std::array<epoll_event, 128> events;
    while (!p_.stopping_.load(std::memory_order_relaxed)) {
      const int n = ep_.wait(events, 200);
      for (int i = 0; i < n; ++i) {
        const uint64_t token = events[i].data.u64;
        if (token == kTokenStop) continue;
        if (token == kTokenSwitch) {
          if (!upstream_.conn->read_available()) {
            spdlog::error("fv: switch connection lost");
            return;
          }
          on_switch_frames();
        } else if (token >= kTokenTenantBase) {
          on_tenant_readable(token - kTokenTenantBase);
        } else if (token >= kTokenListenerBase) {
          on_accept(token - kTokenListenerBase);
        }
      }
      flush();
    }
  }

 private:
  void on_accept(std::size_t slot) {
    while (auto conn = accept_tenant(p_.listeners_[slot].fd.get())) {
      drop_tenant(slot);
      ep_.add(conn->fd(), EPOLLIN, kTokenTenantBase + slot);
      tenants_[slot].conn = std::move(conn);
      bump(c_.tenant_connects);
    }
  }

  void drop_tenant(std::size_t slot) {
    auto& d = tenants_[slot];
    if (!d.conn) return;
    if (d.conn->fd() >= 0) ep_.remove(d.conn->fd());
    d.conn.reset();
    d.want_out = false;
    bump(c_.tenant_disconnects);
  }

  void on_switch_frames() {
    auto& up = *upstream_.conn;
    try {
      while (auto f = up.next_frame()) route_up(f->header, f->bytes);
    } catch (const of::StreamCorrupt& e) {
      spdlog::error("fv: corrupt stream from switch: {}", e.what());
      bump(c_.protocol_errors);
      up.close();
    }
  }

  void route_up(const of::OfHeader& h, std::span<const uint8_t> bytes) {
    switch (static_cast<of::MsgType>(h.msg_type)) {
      case of::MsgType::kPacketIn: {
        const auto tenant = fv_route_up(p_.config_.flowspace, bytes);
        if (!tenant) {
          bump(c_.no_matching_slice);
          return;
        }
        deliver(*tenant, bytes);
        return;
      }
      case of::MsgType::kEchoRequest: {
        // Keepalive on the proxy's own session.
        std::vector<uint8_t> reply(bytes.begin(), bytes.end());
        reply[1] = static_cast<uint8_t>(of::MsgType::kEchoReply);
        upstream_.conn->queue(reply);
        bump(c_.answered_locally);
        return;
      }
      case of::MsgType::kHello:
        return;
      default: {
        const auto owner = xids_.inbound(h.xid);
        if (!owner) {
          bump(c_.unmatched_replies);
          return;
        }
        if (owner->second == h.xid) {
          deliver(owner->first, bytes);
        } else {
          std::vector<uint8_t> restored(bytes.begin(), bytes.end());
          set_be32(restored, 4, owner->second);
          deliver(owner->first, restored);
        }
      }
    }
  }

  void deliver(uint16_t tenant, std::span<const uint8_t> bytes) {
    const auto it = slot_of_.find(tenant);
    if (it == slot_of_.end() || !tenants_[it->second].online()) {
      bump(c_.tenant_offline);
      return;
    }
    tenants_[it->second].conn->queue(bytes);
    bump(c_.up_forwarded);
  }

  void on_tenant_readable(std::size_t slot) {
    auto& d = tenants_[slot];
    if (!d.conn) return;
    const uint16_t tenant = p_.listeners_[slot].tenant_id;
    const bool alive = d.conn->read_available();
    try {
      while (auto f = d.conn->next_frame()) route_down(tenant, f->header, f->bytes);
    } catch (const of::StreamCorrupt& e) {
      spdlog::warn("fv: tenant {} sent a corrupt stream: {}", tenant, e.what());
      bump(c_.protocol_errors);
      d.conn->close();
    }
    if (!alive || !d.conn->open()) drop_tenant(slot);
  }

  void route_down(uint16_t tenant, const of::OfHeader& h, std::span<const uint8_t> bytes) {
    const auto type = static_cast<of::MsgType>(h.msg_type);
    if (type == of::MsgType::kHello) return;
    const bool expects_reply = type == of::MsgType::kEchoRequest ||
                               type == of::MsgType::kFeaturesRequest ||
                               type == of::MsgType::kStatsRequest;
    const auto out = fv_forward_down(bytes);
    if (expects_reply) {
      const uint32_t upstream_xid = xids_.outbound(tenant, h.xid);
      if (upstream_xid != h.xid) {
        bump(c_.xid_remapped);
        std::vector<uint8_t> remapped(out.begin(), out.end());
        set_be32(remapped, 4, upstream_xid);
        upstream_.conn->queue(remapped);
        bump(c_.down_forwarded);
        return;
      }
    }
    upstream_.conn->queue(out);
    bump(c_.down_forwarded);
  }

  void flush() {
    if (!flush_downstream(ep_, upstream_, kTokenSwitch)) {
      spdlog::error("fv: write to switch failed");
      p_.stopping_.store(true);
    }
    for (std::size_t i = 0; i < tenants_.size(); ++i) {
      if (!flush_downstream(ep_, tenants_[i], kTokenTenantBase + i)) drop_tenant(i);
    }
  }

  HypervisorProxy& p_;
  ProxyCounters& c_;
  net::Epoll ep_;
  Downstream upstream_;
  std::vector<Downstream> tenants_;
  std::map<uint16_t, std::size_t> slot_of_;
  XidRouter xids_;
  uint64_t dpid_ = 0;
};

// ---------------------------------------------------------------- ovx

class HypervisorProxy::OvxRuntime {
 public:
  explicit OvxRuntime(HypervisorProxy& p) : p_(p), c_(p.counters_) {
    for (const auto& m : p_.config_.mappings) mapper_.add(m);
    for (std::size_t i = 0; i < p_.listeners_.size(); ++i) {
      const uint16_t t = p_.listeners_[i].tenant_id;
      if (mapper_.for_tenant(t) == nullptr) {
        throw SliceError("ovx: tenant " + std::to_string(t) + " has no virtual mapping");
      }
      inbox_index_[t] = i;
    }
    inboxes_.reserve(p_.listeners_.size());
    for (std::size_t i = 0; i < p_.listeners_.size(); ++i) {
      inboxes_.push_back(std::make_unique<Mailbox>());
    }
  }

  void run() {
    upstream_ = connect_upstream(p_.config_.switch_endpoint, p_.config_.connect_timeout, &dpid_);
    spdlog::info("ovx: up, {} tenant actors, poll rate {}/s", p_.listeners_.size(),
                 p_.config_.poll_rate);
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < p_.listeners_.size(); ++i) {
      threads.emplace_back([this, i] { guarded("tenant actor", [&] { tenant_actor(i); }); });
    }
    threads.emplace_back([this] { guarded("poller", [&] { poller(); }); });
    guarded("switch actor", [&] { switch_actor(); });
    p_.stopping_.store(true);
    p_.stop_.notify();
  }

 private:
  template <typename F>
  void guarded(const char* what, F&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      spdlog::error("ovx: {} failed: {}", what, e.what());
      bump(c_.protocol_errors);
    }
  }

  void switch_actor() {
    net::Epoll ep;
    ep.add(upstream_.fd(), EPOLLIN, kTokenSwitch);
    ep.add(outbox_.fd(), EPOLLIN, kTokenInbox);
    ep.add(p_.stop_.fd(), EPOLLIN, kTokenStop);
    Downstream up;
    up.conn = std::make_unique<net::OfConnection>(std::move(upstream_));
    std::vector<std::vector<uint8_t>> per_tenant(inboxes_.size());
    std::vector<uint8_t> pending;
    std::array<epoll_event, 8> events;

    auto drain_switch = [&] {
      while (auto f = up.conn->next_frame()) {
        on_switch_message(*up.conn, f->header, f->bytes, per_tenant);
      }
      for (std::size_t i = 0; i < per_tenant.size(); ++i) {
        if (per_tenant[i].empty()) continue;
        inboxes_[i]->post(per_tenant[i]);
        per_tenant[i].clear();
      }
    };
    drain_switch();

    while (!p_.stopping_.load(std::memory_order_relaxed)) {
      const int n = ep.wait(events, 200);
      for (int i = 0; i < n; ++i) {
        const uint64_t token = events[i].data.u64;
        if (token == kTokenSwitch) {
          if (!up.conn->read_available()) {
            spdlog::error("ovx: switch connection lost");
            return;
          }
          drain_switch();
        } else if (token == kTokenInbox) {
          outbox_.take(pending);
          up.conn->queue(pending);
          pending.clear();
        }
      }
      if (!flush_downstream(ep, up, kTokenSwitch)) {
        spdlog::error("ovx: write to switch failed");
        return;
      }
    }
  }

  void on_switch_message(net::OfConnection& up, const of::OfHeader& h,
                         std::span<const uint8_t> bytes,
                         std::vector<std::vector<uint8_t>>& per_tenant) {
    const auto type = static_cast<of::MsgType>(h.msg_type);
    if (type == of::MsgType::kPacketIn) {
      auto routed = ovx_translate_up(mapper_, bytes);
      if (!routed) {
        bump(c_.no_matching_tenant);
        return;
      }
      const auto it = inbox_index_.find(routed->tenant_id);
      if (it == inbox_index_.end()) {
        bump(c_.no_matching_tenant);
        return;
      }
      auto& out = per_tenant[it->second];
      out.insert(out.end(), routed->bytes.begin(), routed->bytes.end());
      return;
    }
    if (type == of::MsgType::kEchoRequest) {
      std::vector<uint8_t> reply(bytes.begin(), bytes.end());
      reply[1] = static_cast<uint8_t>(of::MsgType::kEchoReply);
      up.queue(reply);
      return;
    }
    if (type == of::MsgType::kStatsReply && h.xid >= kPollXidBase && h.xid < kHandshakeXid) {
      auto r = of::decode(bytes);
      if (r.status == of::DecodeStatus::kOk && r.message->is<of::PortStatsReply>()) {
        cache_.update(std::move(r.message->as<of::PortStatsReply>()), monotonic_ns());
        bump(c_.poll_replies);
        return;
      }
    }
    if (type != of::MsgType::kHello) bump(c_.unmatched_replies);
  }

  void tenant_actor(std::size_t slot) {
    const uint16_t tenant = p_.listeners_[slot].tenant_id;
    const int listen_fd = p_.listeners_[slot].fd.get();
    Mailbox& inbox = *inboxes_[slot];
    net::Epoll ep;
    net::set_nonblocking(listen_fd);
    ep.add(listen_fd, EPOLLIN, kTokenListenerBase);
    ep.add(inbox.fd(), EPOLLIN, kTokenInbox);
    ep.add(p_.stop_.fd(), EPOLLIN, kTokenStop);
    Downstream d;
    std::vector<uint8_t> incoming;
    std::vector<uint8_t> to_switch;
    std::array<epoll_event, 8> events;

    auto drop = [&] {
      if (!d.conn) return;
      if (d.conn->fd() >= 0) ep.remove(d.conn->fd());
      d.conn.reset();
      d.want_out = false;
      bump(c_.tenant_disconnects);
    };

    while (!p_.stopping_.load(std::memory_order_relaxed)) {
      const int n = ep.wait(events, 200);
      for (int i = 0; i < n; ++i) {
        const uint64_t token = events[i].data.u64;
        if (token == kTokenListenerBase) {
          while (auto conn = accept_tenant(listen_fd)) {
            drop();
            ep.add(conn->fd(), EPOLLIN, kTokenTenantBase);
            d.conn = std::move(conn);
            bump(c_.tenant_connects);
          }
        } else if (token == kTokenInbox) {
          inbox.take(incoming);
          if (d.online()) {
            d.conn->queue(incoming);
            bump(c_.up_forwarded, count_messages(incoming));
          } else {
            bump(c_.tenant_offline, count_messages(incoming));
          }
          incoming.clear();
        } else if (token == kTokenTenantBase && d.conn) {
          const bool alive = d.conn->read_available();
          try {
            while (auto f = d.conn->next_frame()) {
              on_tenant_message(tenant, *d.conn, f->bytes, to_switch);
            }
          } catch (const of::StreamCorrupt& e) {
            spdlog::warn("ovx: tenant {} sent a corrupt stream: {}", tenant, e.what());
            bump(c_.protocol_errors);
            d.conn->close();
          }
          if (!alive || !d.conn->open()) drop();
        }
      }
      if (!to_switch.empty()) {
        outbox_.post(to_switch);
        to_switch.clear();
      }
      if (!flush_downstream(ep, d, kTokenTenantBase)) drop();
    }
  }

  static uint64_t count_messages(std::span<const uint8_t> stream) {
    uint64_t n = 0;
    for (std::size_t off = 0; off + of::kHeaderSize <= stream.size(); ++n) {
      off += get_be16(stream, off + 2);
    }
    return n;
  }

  // Every tenant message is fully parsed, as a translating hypervisor must.
  void on_tenant_message(uint16_t tenant, net::OfConnection& conn,
                         std::span<const uint8_t> bytes, std::vector<uint8_t>& to_switch) {
    auto r = of::decode(bytes);
    if (r.status != of::DecodeStatus::kOk) {
      bump(c_.protocol_errors);
      return;
    }
    const of::OfMessage& msg = *r.message;
    if (msg.is<of::Hello>()) return;
    if (msg.is<of::PacketOut>()) {
      try {
        const auto out = ovx_translate_down(mapper_, tenant, bytes);
        to_switch.insert(to_switch.end(), out.begin(), out.end());
        bump(c_.down_forwarded);
      } catch (const UnknownVirtualAddress& e) {
        bump(c_.unknown_virtual_address);
        spdlog::debug("ovx: {}", e.what());
      }
    } else if (msg.is<of::PortStatsRequest>()) {
      bool cold = false;
      conn.queue(cache_.answer(msg.xid, msg.as<of::PortStatsRequest>().port_no, &cold));
      bump(c_.stats_from_cache);
      if (cold) bump(c_.cache_cold);
    } else if (msg.is<of::EchoRequest>()) {
      conn.queue(of::OfMessage{msg.xid, of::EchoReply{msg.as<of::EchoRequest>().payload}});
      bump(c_.answered_locally);
    } else if (msg.is<of::FeaturesRequest>()) {
      conn.queue(features_reply(msg.xid, dpid_));
      bump(c_.answered_locally);
    } else {
      to_switch.insert(to_switch.end(), bytes.begin(), bytes.end());
      bump(c_.down_forwarded);
    }
  }

  void poller() {
    const double rate = p_.config_.poll_rate;
    if (!(rate > 0)) return;
    const auto period = static_cast<uint64_t>(std::llround(1e9 / rate));
    uint32_t xid = kPollXidBase;
    uint64_t next = monotonic_ns();
    while (!p_.stopping_.load(std::memory_order_relaxed)) {
      const uint64_t now = monotonic_ns();
      if (now >= next) {
        outbox_.post(of::encode(of::make_port_stats_request(xid++)));
        bump(c_.polls_sent);
        next += period;
        continue;
      }
      pollfd pfd{p_.stop_.fd(), POLLIN, 0};
      ::poll(&pfd, 1, static_cast<int>((next - now) / kNsPerMs) + 1);
    }
  }

  HypervisorProxy& p_;
  ProxyCounters& c_;
  AddressMapper mapper_;
  StatsCache cache_;
  Mailbox outbox_;
  std::vector<std::unique_ptr<Mailbox>> inboxes_;
  std::map<uint16_t, std::size_t> inbox_index_;
  net::OfConnection upstream_;
  uint64_t dpid_ = 0;
};

// ---------------------------------------------------------------- facade

HypervisorProxy::HypervisorProxy(ProxyConfig config, std::vector<TenantListener> listeners)
    : config_(std::move(config)), listeners_(std::move(listeners)) {
  if (config_.mode == HypervisorMode::kNone) {
    throw std::invalid_argument("a proxy needs mode fv or ovx");
  }
}

HypervisorProxy::~HypervisorProxy() = default;

void HypervisorProxy::request_stop() {
  stopping_.store(true, std::memory_order_relaxed);
  stop_.notify();
}

void HypervisorProxy::run() {
  if (config_.mode == HypervisorMode::kFv) {
    FvLoop(*this).run();
  } else {
    OvxRuntime(*this).run();
  }
}

}  // namespace perfbench
