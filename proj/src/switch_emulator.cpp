#include "perfbench/switch_emulator.hpp"

#include <netinet/tcp.h>
#include <sys/socket.h>

#include <array>
#include <cerrno>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "perfbench/clock.hpp"

namespace perfbench {

namespace {

constexpr uint64_t kTokenListener = 1;
constexpr uint64_t kTokenData = 2;
constexpr uint64_t kTokenStop = 3;
constexpr uint64_t kTokenStatsTimer = 4;
constexpr std::size_t kDataBatch = 64;
constexpr std::size_t kMaxDatagram = 2048;

}  // namespace

struct SwitchEmulator::Control {
  Control(uint64_t id_, net::Fd fd) : id(id_), conn(std::move(fd)) {}
  uint64_t id;
  net::OfConnection conn;
  bool hello_done = false;
  bool want_out = false;
};

uint64_t SwitchConfig::stats_service_cost_ns() const {
  return static_cast<uint64_t>(std::llround(1e9 / stats_capacity));
}

void SwitchConfig::validate() const {
  if (!(stats_capacity > 0)) throw std::invalid_argument("stats_capacity must be > 0");
  if (stats_queue_limit == 0) throw std::invalid_argument("stats queue limit must be > 0");
}

StatsService::StatsService(uint64_t cost_ns, std::size_t limit)
    : cost_ns_(cost_ns), limit_(limit) {}

bool StatsService::enqueue(uint64_t connection, uint32_t xid, uint16_t port_no,
                           uint64_t now_ns) {
  if (queue_.size() >= limit_) {
    ++dropped_;
    return false;
  }
  const uint64_t start = std::max(now_ns, last_completion_);
  last_completion_ = start + cost_ns_;
  queue_.push_back(StatsJob{connection, xid, port_no, now_ns, last_completion_});
  max_queue_ = std::max(max_queue_, queue_.size());
  return true;
}

std::vector<StatsJob> StatsService::pop_completed(uint64_t now_ns) {
  std::vector<StatsJob> done;
  while (!queue_.empty() && queue_.front().completion_ns <= now_ns) {
    done.push_back(queue_.front());
    queue_.pop_front();
  }
  served_ += done.size();
  return done;
}

std::optional<uint64_t> StatsService::next_completion() const {
  if (queue_.empty()) return std::nullopt;
  return queue_.front().completion_ns;
}

uint64_t SwitchCounters::max_stats_arrivals_in_a_second() const {
  uint64_t m = 0;
  for (const auto& [sec, n] : stats_arrivals_per_second) m = std::max(m, n);
  return m;
}

std::string SwitchCounters::to_json() const {
  nlohmann::json j;
  j["connections"] = connections;
  j["packet_in_sent"] = packet_in_sent;
  j["data_rx"] = data_rx;
  j["data_rx_dropped"] = data_rx_dropped;
  j["packet_out_rx"] = packet_out_rx;
  j["data_tx"] = data_tx;
  j["stats_requests"] = stats_requests;
  j["stats_replies"] = stats_replies;
  j["stats_dropped"] = stats_dropped;
  j["stats_max_queue"] = stats_max_queue;
  j["features_requests"] = features_requests;
  j["echo_requests"] = echo_requests;
  j["unknown_messages"] = unknown_messages;
  j["protocol_errors"] = protocol_errors;
  auto& per_sec = j["stats_arrivals_per_second"] = nlohmann::json::array();
  for (const auto& [sec, n] : stats_arrivals_per_second) per_sec.push_back({sec, n});
  return j.dump(2);
}

SwitchCounters SwitchCounters::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SwitchCounters c;
  c.connections = j.at("connections");
  c.packet_in_sent = j.at("packet_in_sent");
  c.data_rx = j.at("data_rx");
  c.data_rx_dropped = j.at("data_rx_dropped");
  c.packet_out_rx = j.at("packet_out_rx");
  c.data_tx = j.at("data_tx");
  c.stats_requests = j.at("stats_requests");
  c.stats_replies = j.at("stats_replies");
  c.stats_dropped = j.at("stats_dropped");
  c.stats_max_queue = j.at("stats_max_queue");
  c.features_requests = j.at("features_requests");
  c.echo_requests = j.at("echo_requests");
  c.unknown_messages = j.at("unknown_messages");
  c.protocol_errors = j.at("protocol_errors");
  for (const auto& e : j.at("stats_arrivals_per_second")) {
    c.stats_arrivals_per_second[e.at(0).get<uint64_t>()] = e.at(1).get<uint64_t>();
  }
  return c;
}

SwitchEmulator::SwitchEmulator(SwitchConfig config, net::Fd control_listener,
                               net::Fd data_socket)
    : config_(std::move(config)),
      listener_(std::move(control_listener)),
      data_(std::move(data_socket)),
      stats_(config_.stats_service_cost_ns(), config_.stats_queue_limit) {
  config_.validate();
  if (!listener_.valid()) listener_ = net::tcp_listen(config_.listen);
  if (!data_.valid()) data_ = net::udp_bind(config_.data_bind);
  net::set_nonblocking(listener_.get());
  net::set_nonblocking(data_.get());
  net::set_buffer_sizes(data_.get(), 4 << 20);
  data_peer_ = net::to_sockaddr(config_.data_peer);
  epoll_.add(listener_.get(), EPOLLIN, kTokenListener);
  epoll_.add(data_.get(), EPOLLIN, kTokenData);
  epoll_.add(stop_.fd(), EPOLLIN, kTokenStop);
  epoll_.add(stats_timer_.fd(), EPOLLIN, kTokenStatsTimer);
}

SwitchEmulator::~SwitchEmulator() = default;

uint16_t SwitchEmulator::control_port() const { return net::local_port(listener_.get()); }
uint16_t SwitchEmulator::data_port() const { return net::local_port(data_.get()); }

void SwitchEmulator::request_stop() {
  stopping_.store(true, std::memory_order_relaxed);
  stop_.notify();
}

void SwitchEmulator::run() {
  std::array<epoll_event, 64> events;
  while (!stopping_.load(std::memory_order_relaxed)) {
    const int n = epoll_.wait(events, 200);
    for (int i = 0; i < n; ++i) {
      const uint64_t token = events[i].data.u64;
      if (token == kTokenListener) {
        accept_connections();
      } else if (token == kTokenData) {
        on_data_readable();
      } else if (token == kTokenStop) {
        stop_.drain();
      } else if (token == kTokenStatsTimer) {
        stats_timer_.drain();
        on_stats_timer();
      } else {
        on_control_readable(token);
      }
    }
    flush_all();
  }
  counters_.stats_dropped = stats_.dropped();
  counters_.stats_max_queue = stats_.max_queue_length();
}

void SwitchEmulator::accept_connections() {
  while (true) {
    net::Fd fd = net::tcp_accept(listener_.get());
    if (!fd.valid()) return;
    net::set_nodelay(fd.get(), true);
    const uint64_t id = next_id_++;
    auto c = std::make_unique<Control>(id, std::move(fd));
    epoll_.add(c->conn.fd(), EPOLLIN, id);
    c->conn.queue(of::make_hello(0));
    controls_[id] = std::move(c);
    ++counters_.connections;
    spdlog::debug("switch: controller connection {}", id);
  }
}

void SwitchEmulator::on_control_readable(uint64_t id) {
  const auto it = controls_.find(id);
  if (it == controls_.end()) return;
  Control& c = *it->second;
  const bool alive = c.conn.read_available();
  const uint64_t now = monotonic_ns();
  try {
    while (auto frame = c.conn.next_frame()) handle_message(c, *frame, now);
  } catch (const of::StreamCorrupt& e) {
    spdlog::warn("switch: closing connection {}: {}", id, e.what());
    ++counters_.protocol_errors;
    c.conn.close();
  }
  if (!alive || !c.conn.open()) {
    if (c.conn.fd() >= 0) epoll_.remove(c.conn.fd());
    controls_.erase(it);
  }
}

void SwitchEmulator::handle_message(Control& c, const of::RawFrame& frame, uint64_t now) {
  auto r = of::decode(frame.bytes);
  if (r.status != of::DecodeStatus::kOk) {
    ++(r.status == of::DecodeStatus::kUnknownType ? counters_.unknown_messages
                                                    : counters_.protocol_errors);
    return;
  }
  of::OfMessage& msg = *r.message;
  if (msg.is<of::Hello>()) {
    c.hello_done = true;
  } else if (msg.is<of::EchoRequest>()) {
    ++counters_.echo_requests;
    c.conn.queue(of::OfMessage{msg.xid, of::EchoReply{msg.as<of::EchoRequest>().payload}});
  } else if (msg.is<of::FeaturesRequest>()) {
    ++counters_.features_requests;
    of::FeaturesReply f;
    f.datapath_id = config_.datapath_id;
    c.conn.queue(of::OfMessage{msg.xid, f});
  } else if (msg.is<of::PortStatsRequest>()) {
    ++counters_.stats_requests;
    ++counters_.stats_arrivals_per_second[now / kNsPerSec];
    const bool was_idle = !stats_.next_completion().has_value();
    if (stats_.enqueue(c.id, msg.xid, msg.as<of::PortStatsRequest>().port_no, now) &&
        was_idle) {
      rearm_stats_timer();
    }
  } else if (msg.is<of::PacketOut>()) {
    ++counters_.packet_out_rx;
    send_data(msg.as<of::PacketOut>().data);
  } else if (!msg.is<of::EchoReply>()) {
    ++counters_.unknown_messages;
  }
}

void SwitchEmulator::on_data_readable() {
  std::array<std::array<uint8_t, kMaxDatagram>, kDataBatch> bufs;
  std::array<iovec, kDataBatch> iov;
  std::array<mmsghdr, kDataBatch> msgs{};
  for (std::size_t i = 0; i < kDataBatch; ++i) {
    iov[i] = {bufs[i].data(), bufs[i].size()};
    msgs[i].msg_hdr.msg_iov = &iov[i];
    msgs[i].msg_hdr.msg_iovlen = 1;
  }
  while (true) {
    const int n = ::recvmmsg(data_.get(), msgs.data(), kDataBatch, MSG_DONTWAIT, nullptr);
    if (n <= 0) return;
    for (int i = 0; i < n; ++i) {
      const std::size_t len = msgs[i].msg_len;
      ++counters_.data_rx;
      rx_bytes_ += len;
      bool delivered = false;
      of::OfMessage pin{0, of::PacketIn{of::kNoBuffer, static_cast<uint16_t>(len),
                                        config_.data_port_no, of::kReasonNoMatch,
                                        {bufs[i].begin(), bufs[i].begin() + static_cast<std::ptrdiff_t>(len)}}};
      for (auto& [id, c] : controls_) {
        if (!c->hello_done || !c->conn.open()) continue;
        c->conn.queue(pin);
        ++counters_.packet_in_sent;
        delivered = true;
      }
      if (!delivered) ++counters_.data_rx_dropped;
    }
    if (static_cast<std::size_t>(n) < kDataBatch) return;
  }
}

of::PortStatsReply SwitchEmulator::make_stats_reply(uint16_t port_no) const {
  of::PortStatsReply reply;
  if (port_no == of::kPortNone || port_no == config_.data_port_no) {
    of::PortCounters pc;
    pc.port_no = config_.data_port_no;
    pc.rx_packets = counters_.data_rx;
    pc.tx_packets = counters_.data_tx;
    pc.rx_bytes = rx_bytes_;
    pc.tx_bytes = tx_bytes_;
    reply.ports.push_back(pc);
  }
  return reply;
}

void SwitchEmulator::on_stats_timer() {
  for (const auto& job : stats_.pop_completed(monotonic_ns())) {
    const auto it = controls_.find(job.connection);
    if (it == controls_.end()) continue;
    it->second->conn.queue(of::OfMessage{job.xid, make_stats_reply(job.port_no)});
    ++counters_.stats_replies;
  }
  rearm_stats_timer();
}

void SwitchEmulator::rearm_stats_timer() {
  if (const auto next = stats_.next_completion()) {
    stats_timer_.arm(*next, 0);
  } else {
    stats_timer_.disarm();
  }
}

void SwitchEmulator::send_data(std::span<const uint8_t> frame) {
  data_out_.emplace_back(frame.begin(), frame.end());
  if (data_out_.size() >= kDataBatch) flush_data();
}

void SwitchEmulator::flush_data() {
  std::size_t off = 0;
  while (off < data_out_.size()) {
    const std::size_t batch = std::min(kDataBatch, data_out_.size() - off);
    std::array<iovec, kDataBatch> iov;
    std::array<mmsghdr, kDataBatch> msgs{};
    for (std::size_t i = 0; i < batch; ++i) {
      auto& f = data_out_[off + i];
      iov[i] = {f.data(), f.size()};
      msgs[i].msg_hdr.msg_iov = &iov[i];
      msgs[i].msg_hdr.msg_iovlen = 1;
      msgs[i].msg_hdr.msg_name = &data_peer_;
      msgs[i].msg_hdr.msg_namelen = sizeof(data_peer_);
    }
    const int n = ::sendmmsg(data_.get(), msgs.data(), static_cast<unsigned>(batch), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      spdlog::warn("switch: data port send failed: {}", std::strerror(errno));
      break;
    }
    for (int i = 0; i < n; ++i) {
      ++counters_.data_tx;
      tx_bytes_ += data_out_[off + static_cast<std::size_t>(i)].size();
    }
    off += static_cast<std::size_t>(n);
  }
  data_out_.clear();
}

void SwitchEmulator::flush_all() {
  flush_data();
  for (auto it = controls_.begin(); it != controls_.end();) {
    Control& c = *it->second;
    if (!c.conn.flush()) {
      epoll_.remove(c.conn.fd());
      it = controls_.erase(it);
      continue;
    }
    // Only ask for EPOLLOUT while bytes are stuck in user space.
    const bool want_out = c.conn.has_pending_output();
    if (want_out != c.want_out) {
      c.want_out = want_out;
      epoll_.modify(c.conn.fd(), want_out ? (EPOLLIN | EPOLLOUT) : EPOLLIN, c.id);
    }
    ++it;
  }
}

}  // namespace perfbench
