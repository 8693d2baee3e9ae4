#include "perfbench/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <sys/timerfd.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

#include "perfbench/clock.hpp"

namespace perfbench::net {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw NetError(what + ": " + std::strerror(errno));
}

}  // namespace

void Fd::reset() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw NetError("endpoint '" + s + "' lacks ':port'");
  Endpoint ep;
  ep.host = s.substr(0, colon);
  if (ep.host.empty()) ep.host = "127.0.0.1";
  const int port = std::stoi(s.substr(colon + 1));
  if (port < 0 || port > 65535) throw NetError("port out of range in '" + s + "'");
  ep.port = static_cast<uint16_t>(port);
  return ep;
}

sockaddr_in to_sockaddr(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  const std::string host = ep.host == "localhost" ? "127.0.0.1" : ep.host;
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw NetError("not an IPv4 address: " + ep.host);
  }
  return addr;
}

Fd tcp_listen(const Endpoint& ep, int backlog) {
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw_errno("socket");
  const int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const sockaddr_in addr = to_sockaddr(ep);
  if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw_errno("bind " + ep.to_string());
  }
  if (::listen(fd.get(), backlog) != 0) throw_errno("listen");
  return fd;
}

Fd tcp_accept(int listen_fd) {
  const int fd = ::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) {
    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return Fd{};
    throw_errno("accept");
  }
  return Fd(fd);
}

Fd tcp_connect(const Endpoint& ep, std::chrono::milliseconds timeout) {
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!fd.valid()) throw_errno("socket");
  const sockaddr_in addr = to_sockaddr(ep);
  if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    if (errno != EINPROGRESS) {
      throw ConnectFailed("connect " + ep.to_string() + ": " + std::strerror(errno));
    }
    pollfd p{fd.get(), POLLOUT, 0};
    const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (r == 0) throw ConnectFailed("connect " + ep.to_string() + ": timed out");
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (r < 0 || err != 0) {
      throw ConnectFailed("connect " + ep.to_string() + ": " +
                          std::strerror(err != 0 ? err : errno));
    }
  }
  set_nonblocking(fd.get(), false);
  return fd;
}

Fd udp_bind(const Endpoint& ep) {
  Fd fd(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw_errno("socket");
  const sockaddr_in addr = to_sockaddr(ep);
  if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw_errno("bind udp " + ep.to_string());
  }
  return fd;
}

uint16_t local_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    throw_errno("getsockname");
  }
  return ntohs(addr.sin_port);
}

void set_nonblocking(int fd, bool on) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK));
}

void set_nodelay(int fd, bool on) {
  const int v = on ? 1 : 0;
  if (::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &v, sizeof(v)) != 0) {
    throw_errno("setsockopt TCP_NODELAY");
  }
}

bool nodelay_enabled(int fd) {
  int v = 0;
  socklen_t len = sizeof(v);
  ::getsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &v, &len);
  return v != 0;
}

void set_buffer_sizes(int fd, int bytes) {
  ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &bytes, sizeof(bytes));
  ::setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &bytes, sizeof(bytes));
}

void write_all(int fd, std::span<const uint8_t> data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        pollfd p{fd, POLLOUT, 0};
        ::poll(&p, 1, 100);
        continue;
      }
      throw_errno("write");
    }
    data = data.subspan(static_cast<std::size_t>(n));
  }
}

Epoll::Epoll() : fd_(::epoll_create1(EPOLL_CLOEXEC)) {
  if (!fd_.valid()) throw_errno("epoll_create1");
}

void Epoll::add(int fd, uint32_t events, uint64_t token) {
  epoll_event ev{};
  ev.events = events;
  ev.data.u64 = token;
  if (::epoll_ctl(fd_.get(), EPOLL_CTL_ADD, fd, &ev) != 0) throw_errno("epoll_ctl add");
}

void Epoll::modify(int fd, uint32_t events, uint64_t token) {
  epoll_event ev{};
  ev.events = events;
  ev.data.u64 = token;
  if (::epoll_ctl(fd_.get(), EPOLL_CTL_MOD, fd, &ev) != 0) throw_errno("epoll_ctl mod");
}

void Epoll::remove(int fd) { ::epoll_ctl(fd_.get(), EPOLL_CTL_DEL, fd, nullptr); }

int Epoll::wait(std::span<epoll_event> events, int timeout_ms) {
  const int n = ::epoll_wait(fd_.get(), events.data(), static_cast<int>(events.size()),
                             timeout_ms);
  if (n < 0) {
    if (errno == EINTR) return 0;
    throw_errno("epoll_wait");
  }
  return n;
}

EventFd::EventFd() : fd_(::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK)) {
  if (!fd_.valid()) throw_errno("eventfd");
}

void EventFd::notify() {
  const uint64_t one = 1;
  [[maybe_unused]] const ssize_t n = ::write(fd_.get(), &one, sizeof(one));
}

void EventFd::drain() {
  uint64_t v = 0;
  [[maybe_unused]] const ssize_t n = ::read(fd_.get(), &v, sizeof(v));
}

TimerFd::TimerFd() : fd_(::timerfd_create(CLOCK_MONOTONIC, TFD_CLOEXEC | TFD_NONBLOCK)) {
  if (!fd_.valid()) throw_errno("timerfd_create");
}

void TimerFd::arm(uint64_t first_abs_ns, uint64_t interval_ns) {
  itimerspec spec{};
  spec.it_value = to_timespec(first_abs_ns == 0 ? 1 : first_abs_ns);
  spec.it_interval = to_timespec(interval_ns);
  if (::timerfd_settime(fd_.get(), TFD_TIMER_ABSTIME, &spec, nullptr) != 0) {
    throw_errno("timerfd_settime");
  }
}

void TimerFd::disarm() {
  itimerspec spec{};
  ::timerfd_settime(fd_.get(), 0, &spec, nullptr);
}

uint64_t TimerFd::drain() {
  uint64_t expirations = 0;
  if (::read(fd_.get(), &expirations, sizeof(expirations)) != sizeof(expirations)) {
    return 0;
  }
  return expirations;
}

OfConnection::OfConnection(Fd fd) : fd_(std::move(fd)) { set_nonblocking(fd_.get()); }

OfConnection::OfConnection(Fd fd, of::StreamFramer framer)
    : fd_(std::move(fd)), framer_(std::move(framer)) {
  set_nonblocking(fd_.get());
}

bool OfConnection::read_available() {
  std::array<uint8_t, 64 * 1024> buf;
  while (true) {
    const ssize_t n = ::recv(fd_.get(), buf.data(), buf.size(), 0);
    if (n > 0) {
      ++reads_;
      bytes_in_ += static_cast<uint64_t>(n);
      framer_.feed({buf.data(), static_cast<std::size_t>(n)});
      if (static_cast<std::size_t>(n) < buf.size()) return true;
      continue;
    }
    if (n == 0) {
      closed_ = true;
      return false;
    }
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) return true;
    closed_ = true;
    return false;
  }
}

void OfConnection::queue(std::span<const uint8_t> bytes) {
  if (out_pos_ == out_.size()) {
    out_.clear();
    out_pos_ = 0;
  }
  out_.insert(out_.end(), bytes.begin(), bytes.end());
}

void OfConnection::queue(const of::OfMessage& msg) {
  if (out_pos_ == out_.size()) {
    out_.clear();
    out_pos_ = 0;
  }
  of::encode_into(msg, out_);
}

bool OfConnection::flush() {
  while (out_pos_ < out_.size()) {
    const ssize_t n = ::send(fd_.get(), out_.data() + out_pos_, out_.size() - out_pos_,
                             MSG_NOSIGNAL);
    if (n > 0) {
      out_pos_ += static_cast<std::size_t>(n);
      bytes_out_ += static_cast<uint64_t>(n);
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
    closed_ = true;
    return false;
  }
  if (out_pos_ == out_.size()) {
    out_.clear();
    out_pos_ = 0;
  } else if (out_pos_ > (1 << 20)) {
    out_.erase(out_.begin(), out_.begin() + static_cast<std::ptrdiff_t>(out_pos_));
    out_pos_ = 0;
  }
  return true;
}

void OfConnection::close() {
  closed_ = true;
  fd_.reset();
}

std::optional<of::OfMessage> read_message(int fd, of::StreamFramer& framer,
                                          std::chrono::milliseconds timeout) {
  const uint64_t deadline =
      monotonic_ns() + static_cast<uint64_t>(timeout.count()) * kNsPerMs;
  while (true) {
    while (auto frame = framer.next()) {
      auto r = of::decode(frame->bytes);
      if (r.status == of::DecodeStatus::kOk) return std::move(r.message);
    }
    const uint64_t now = monotonic_ns();
    if (now >= deadline) return std::nullopt;
    pollfd p{fd, POLLIN, 0};
    const int wait_ms = static_cast<int>((deadline - now) / kNsPerMs) + 1;
    if (::poll(&p, 1, wait_ms) <= 0) continue;
    std::array<uint8_t, 4096> buf;
    const ssize_t n = ::recv(fd, buf.data(), buf.size(), MSG_DONTWAIT);
    if (n == 0) throw NetError("peer closed during handshake");
    if (n < 0) {
      if (errno == EAGAIN || errno == EINTR) continue;
      throw_errno("recv");
    }
    framer.feed({buf.data(), static_cast<std::size_t>(n)});
  }
}

void hello_exchange(int fd, of::StreamFramer& framer, uint32_t xid,
                    std::chrono::milliseconds timeout) {
  write_all(fd, of::encode(of::make_hello(xid)));
  const uint64_t deadline =
      monotonic_ns() + static_cast<uint64_t>(timeout.count()) * kNsPerMs;
  while (true) {
    const uint64_t now = monotonic_ns();
    if (now >= deadline) throw HandshakeTimeout("no HELLO from peer");
    auto msg = read_message(
        fd, framer, std::chrono::milliseconds((deadline - now) / kNsPerMs + 1));
    if (!msg) throw HandshakeTimeout("no HELLO from peer");
    if (msg->is<of::Hello>()) return;
  }
}

}  // namespace perfbench::net
