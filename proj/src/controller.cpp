#include "perfbench/controller.hpp"

#include <array>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "perfbench/bytes.hpp"

namespace perfbench {

namespace {

constexpr uint64_t kTokenConn = 1;
constexpr uint64_t kTokenTimer = 2;
constexpr uint64_t kTokenStop = 3;

}  // namespace

std::vector<uint32_t> split_rate(uint32_t total, uint16_t tenants) {
  if (tenants == 0) throw std::invalid_argument("need at least one tenant");
  std::vector<uint32_t> rates(tenants, total / tenants);
  for (uint32_t i = 0; i < total % tenants; ++i) ++rates[i];
  return rates;
}

RequestFactory::RequestFactory(const TenantConfig& cfg) {
  const auto frame =
      build_probe_frame(probe_endpoints(cfg.identity), ProbeTag{cfg.tenant_id, 0, 0},
                        cfg.probe_size);
  packet_out_ = of::encode(of::make_packet_out(0, frame, cfg.out_port));
  data_offset_ = packet_out_.size() - frame.size();
}

std::span<const uint8_t> RequestFactory::packet_out(uint32_t xid, const ProbeTag& tag) {
  set_be32(packet_out_, 4, xid);
  restamp_probe_frame(std::span<uint8_t>(packet_out_).subspan(data_offset_), tag);
  return packet_out_;
}

std::vector<uint8_t> RequestFactory::request(MessageKind kind, uint32_t xid) const {
  switch (kind) {
    case MessageKind::kEchoRequest:
      return of::encode(of::make_echo_request(xid));
    case MessageKind::kFeaturesRequest:
      return of::encode(of::OfMessage{xid, of::FeaturesRequest{}});
    case MessageKind::kPortStats:
      return of::encode(of::make_port_stats_request(xid));
    default:
      throw std::invalid_argument(std::string(to_string(kind)) + " is not a request");
  }
}

TenantActor::TenantActor(TenantConfig cfg, TenantLedger& ledger, uint32_t run_id,
                         uint32_t duration_s)
    : cfg_(std::move(cfg)),
      ledger_(ledger),
      run_id_(run_id),
      duration_s_(duration_s),
      factory_(cfg_) {
  result_.tenant_id = cfg_.tenant_id;
  result_.nodelay = cfg_.nodelay;
}

TenantActor::~TenantActor() {
  request_stop();
  join();
}

void TenantActor::connect(std::chrono::milliseconds timeout) {
  net::Fd fd = net::tcp_connect(cfg_.endpoint, timeout);
  net::set_nodelay(fd.get(), cfg_.nodelay);
  of::StreamFramer framer;
  net::hello_exchange(fd.get(), framer, 0, timeout);
  conn_ = net::OfConnection(std::move(fd), std::move(framer));
}

bool TenantActor::nodelay_applied() const { return net::nodelay_enabled(conn_.fd()); }

void TenantActor::start(RunClock clock, uint64_t drain_ns) {
  if (!conn_.open()) throw std::logic_error("tenant started before connect()");
  thread_ = std::thread([this, clock, drain_ns] {
    try {
      loop(clock, drain_ns);
    } catch (const std::exception& e) {
      result_.error = e.what();
      spdlog::error("tenant {}: {}", cfg_.tenant_id, e.what());
    }
    finished_.store(true);
  });
}

void TenantActor::request_stop() {
  stopping_.store(true);
  stop_.notify();
}

void TenantActor::join() {
  if (thread_.joinable()) thread_.join();
}

void TenantActor::write(std::span<const uint8_t> bytes) {
  // One send per message; with Nagle enabled the kernel may still coalesce.
  conn_.queue(bytes);
  if (!conn_.flush()) throw WriteFailed("write to " + cfg_.endpoint.to_string() + " failed");
  ++result_.writes;
}

void TenantActor::emit_packet_out(uint64_t now) {
  const ProbeTag tag = ledger_.stamp(now);
  write(factory_.packet_out(static_cast<uint32_t>(tag.seq + 1), tag));
}

void TenantActor::emit_request(uint64_t now) {
  const uint32_t xid = next_xid_++;
  const auto bytes = factory_.request(cfg_.kind, xid);
  ledger_.record_request(xid, now);
  write(bytes);
}

void TenantActor::on_message(const of::OfMessage& msg, uint64_t now) {
  std::optional<LatencySample> s;
  if (msg.is<of::PacketIn>()) {
    s = correlate_packet_in(ledger_, msg.as<of::PacketIn>(), now);
  } else if (msg.is<of::PortStatsReply>() || msg.is<of::EchoReply>() ||
             msg.is<of::FeaturesReply>()) {
    if (is_synchronous(cfg_.kind)) {
      s = ledger_.correlate_sync(msg.xid, now);
    } else {
      ++result_.unknown_messages;
    }
  } else if (msg.is<of::EchoRequest>()) {
    conn_.queue(of::OfMessage{msg.xid, of::EchoReply{msg.as<of::EchoRequest>().payload}});
    ++result_.echo_answered;
  } else if (!msg.is<of::Hello>()) {
    ++result_.unknown_messages;
  }
  if (s) {
    s->run_id = run_id_;
    result_.samples.push_back(*s);
  }
}

void TenantActor::loop(RunClock clock, uint64_t drain_ns) {
  const bool emits = cfg_.kind != MessageKind::kPacketIn;
  std::optional<PacedEmitter> pacer;
  if (emits) {
    pacer.emplace(plan(cfg_.rate, duration_s_));
    result_.samples.reserve(uint64_t{cfg_.rate} * duration_s_);
  }
  net::Epoll ep;
  net::TimerFd timer;
  ep.add(conn_.fd(), EPOLLIN, kTokenConn);
  ep.add(timer.fd(), EPOLLIN, kTokenTimer);
  ep.add(stop_.fd(), EPOLLIN, kTokenStop);

  uint64_t end_at = emits ? 0 : uint64_t{duration_s_} * kNsPerSec + drain_ns;
  timer.arm(clock.absolute(emits ? 0 : end_at), 0);
  bool want_out = false;
  std::array<epoll_event, 4> events;

  while (!stopping_.load(std::memory_order_relaxed)) {
    const int n = ep.wait(events, 200);
    for (int i = 0; i < n; ++i) {
      const uint64_t token = events[i].data.u64;
      if (token == kTokenTimer) {
        timer.drain();
        const uint64_t now = clock.now();
        if (pacer && !pacer->done()) {
          const uint64_t due = pacer->take_due(now);
          for (uint64_t k = 0; k < due; ++k) {
            if (cfg_.kind == MessageKind::kPacketOut) {
              emit_packet_out(clock.now());
            } else {
              emit_request(clock.now());
            }
          }
          if (!pacer->done()) {
            timer.arm(clock.absolute(pacer->next_deadline()), 0);
          } else {
            end_at = clock.now() + drain_ns;
            timer.arm(clock.absolute(end_at), 0);
          }
        } else if (now >= end_at) {
          result_.achieved = pacer ? pacer->achieved() : AchievedRate{};
          result_.bytes_in = conn_.bytes_in();
          result_.bytes_out = conn_.bytes_out();
          return;
        } else {
          timer.arm(clock.absolute(end_at), 0);
        }
      } else if (token == kTokenConn) {
        const bool alive = conn_.read_available();
        const uint64_t now = clock.now();
        while (auto f = conn_.next_frame()) {
          auto r = of::decode(f->bytes);
          if (r.status == of::DecodeStatus::kOk) {
            on_message(*r.message, now);
          } else {
            ++result_.unknown_messages;
          }
        }
        if (!alive) throw net::NetError("connection closed by peer");
        if (!conn_.flush()) throw WriteFailed("write failed");
      }
    }
    if (conn_.has_pending_output() != want_out) {
      want_out = conn_.has_pending_output();
      ep.modify(conn_.fd(), want_out ? (EPOLLIN | EPOLLOUT) : EPOLLIN, kTokenConn);
    }
  }
  result_.achieved = pacer ? pacer->achieved() : AchievedRate{};
  result_.bytes_in = conn_.bytes_in();
  result_.bytes_out = conn_.bytes_out();
}

ControllerEmulator::ControllerEmulator(std::vector<TenantConfig> tenants, LedgerSet& ledgers,
                                       uint32_t run_id, uint32_t duration_s) {
  for (auto& cfg : tenants) {
    TenantLedger* ledger = ledgers.find(cfg.tenant_id);
    if (ledger == nullptr) {
      throw std::invalid_argument("no ledger for tenant " + std::to_string(cfg.tenant_id));
    }
    actors_.push_back(std::make_unique<TenantActor>(std::move(cfg), *ledger, run_id, duration_s));
  }
}

void ControllerEmulator::connect_all(std::chrono::milliseconds timeout) {
  for (auto& a : actors_) a->connect(timeout);
}

void ControllerEmulator::start(RunClock clock, uint64_t drain_ns) {
  for (auto& a : actors_) a->start(clock, drain_ns);
}

void ControllerEmulator::join() {
  for (auto& a : actors_) a->join();
}

void ControllerEmulator::request_stop() {
  for (auto& a : actors_) a->request_stop();
}

}  // namespace perfbench
