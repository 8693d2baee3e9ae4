#include "perfbench/dataplane.hpp"

#include <sys/socket.h>

#include <array>
#include <cerrno>
#include <cstring>

#include <spdlog/spdlog.h>

namespace perfbench {

namespace {

constexpr std::size_t kBatch = 64;
constexpr std::size_t kMaxDatagram = 2048;
constexpr uint64_t kTokenTimer = 1;
constexpr uint64_t kTokenStop = 2;
constexpr uint64_t kTokenSock = 3;

}  // namespace

ProbeInjector::ProbeInjector(InjectorConfig cfg, TenantLedger& ledger, uint32_t duration_s)
    : cfg_(std::move(cfg)),
      ledger_(ledger),
      duration_s_(duration_s),
      sock_(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0)) {
  if (!sock_.valid()) throw SendFailed(std::string("socket: ") + std::strerror(errno));
  net::set_buffer_sizes(sock_.get(), 1 << 20);
  target_ = net::to_sockaddr(cfg_.target);
  const auto frame = build_probe_frame(probe_endpoints(cfg_.identity),
                                       ProbeTag{cfg_.tenant_id, 0, 0}, cfg_.probe_size);
  frames_.assign(kBatch, frame);
}

ProbeInjector::~ProbeInjector() {
  request_stop();
  join();
}

void ProbeInjector::inject(uint64_t now, uint64_t n) {
  while (n > 0) {
    const std::size_t batch = std::min<uint64_t>(n, kBatch);
    std::array<iovec, kBatch> iov;
    std::array<mmsghdr, kBatch> msgs{};
    for (std::size_t i = 0; i < batch; ++i) {
      restamp_probe_frame(frames_[i], ledger_.stamp(now));
      iov[i] = {frames_[i].data(), frames_[i].size()};
      msgs[i].msg_hdr.msg_iov = &iov[i];
      msgs[i].msg_hdr.msg_iovlen = 1;
      msgs[i].msg_hdr.msg_name = &target_;
      msgs[i].msg_hdr.msg_namelen = sizeof(target_);
    }
    std::size_t off = 0;
    while (off < batch) {
      const int r = ::sendmmsg(sock_.get(), msgs.data() + off, static_cast<unsigned>(batch - off), 0);
      if (r < 0) {
        if (errno == EINTR) continue;
        throw SendFailed(std::string("sendmmsg: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(r);
    }
    sent_ += batch;
    n -= batch;
  }
}

void ProbeInjector::start(RunClock clock) {
  thread_ = std::thread([this, clock] {
    try {
      PacedEmitter pacer(plan(cfg_.rate, duration_s_));
      net::Epoll ep;
      net::TimerFd timer;
      ep.add(timer.fd(), EPOLLIN, kTokenTimer);
      ep.add(stop_.fd(), EPOLLIN, kTokenStop);
      timer.arm(clock.absolute(0), 0);
      std::array<epoll_event, 2> events;
      while (!pacer.done() && !stopping_.load(std::memory_order_relaxed)) {
        const int n = ep.wait(events, 200);
        for (int i = 0; i < n; ++i) {
          if (events[i].data.u64 != kTokenTimer) continue;
          timer.drain();
          const uint64_t now = clock.now();
          inject(now, pacer.take_due(now));
          if (!pacer.done()) timer.arm(clock.absolute(pacer.next_deadline()), 0);
        }
      }
      achieved_ = pacer.achieved();
    } catch (const std::exception& e) {
      error_ = e.what();
      spdlog::error("injector {}: {}", cfg_.tenant_id, e.what());
    }
  });
}

void ProbeInjector::request_stop() {
  stopping_.store(true);
  stop_.notify();
}

void ProbeInjector::join() {
  if (thread_.joinable()) thread_.join();
}

DataReceiver::DataReceiver(net::Fd socket, LedgerSet& ledgers, uint32_t run_id)
    : sock_(std::move(socket)), ledgers_(ledgers), run_id_(run_id) {
  net::set_nonblocking(sock_.get());
  net::set_buffer_sizes(sock_.get(), 4 << 20);
}

DataReceiver::~DataReceiver() {
  request_stop();
  join();
}

void DataReceiver::on_data_packet(std::span<const uint8_t> bytes, uint64_t recv_ts) {
  ++counts_.datagrams;
  const uint64_t malformed_before = ledgers_.orphan_malformed();
  auto s = correlate_packet_out(ledgers_, bytes, recv_ts);
  if (s) {
    s->run_id = run_id_;
    samples_.push_back(*s);
    ++counts_.samples;
  } else if (ledgers_.orphan_malformed() != malformed_before) {
    ++counts_.non_probe;
  }
}

void DataReceiver::start(RunClock clock) {
  thread_ = std::thread([this, clock] {
    try {
      loop(clock);
    } catch (const std::exception& e) {
      spdlog::error("data receiver: {}", e.what());
    }
  });
}

void DataReceiver::loop(RunClock clock) {
  net::Epoll ep;
  ep.add(sock_.get(), EPOLLIN, kTokenSock);
  ep.add(stop_.fd(), EPOLLIN, kTokenStop);
  std::vector<std::array<uint8_t, kMaxDatagram>> bufs(kBatch);
  std::array<iovec, kBatch> iov;
  std::array<mmsghdr, kBatch> msgs{};
  std::array<epoll_event, 2> events;
  while (!stopping_.load(std::memory_order_relaxed)) {
    if (ep.wait(events, 200) <= 0) continue;
    while (true) {
      for (std::size_t i = 0; i < kBatch; ++i) {
        iov[i] = {bufs[i].data(), bufs[i].size()};
        msgs[i].msg_hdr.msg_iov = &iov[i];
        msgs[i].msg_hdr.msg_iovlen = 1;
      }
      const int n = ::recvmmsg(sock_.get(), msgs.data(), kBatch, MSG_DONTWAIT, nullptr);
      if (n <= 0) break;
      const uint64_t now = clock.now();
      for (int i = 0; i < n; ++i) {
        on_data_packet({bufs[i].data(), msgs[i].msg_len}, now);
      }
      if (static_cast<std::size_t>(n) < kBatch) break;
    }
  }
}

void DataReceiver::request_stop() {
  stopping_.store(true);
  stop_.notify();
}

void DataReceiver::join() {
  if (thread_.joinable()) thread_.join();
}

}  // namespace perfbench
