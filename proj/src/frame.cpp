#include "perfbench/frame.hpp"

#include <algorithm>
#include <cstdio>

#include "perfbench/bytes.hpp"

namespace perfbench {

namespace {

constexpr uint16_t kEtherTypeIpv4 = 0x0800;
constexpr uint8_t kIpProtoUdp = 17;
constexpr std::size_t kIpOff = kEthHeaderSize;
constexpr std::size_t kUdpOff = kEthHeaderSize + kIpv4HeaderSize;

uint32_t checksum_add(std::span<const uint8_t> data, uint32_t sum) {
  std::size_t i = 0;
  for (; i + 1 < data.size(); i += 2) sum += (uint32_t{data[i]} << 8) | data[i + 1];
  if (i < data.size()) sum += uint32_t{data[i]} << 8;
  return sum;
}

uint16_t fold(uint32_t sum) {
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<uint16_t>(~sum);
}

// Returns the UDP length if the frame carries a plain IPv4/UDP datagram.
std::optional<std::size_t> udp_length(std::span<const uint8_t> f) {
  if (f.size() < kUdpFrameOverhead) return std::nullopt;
  if (get_be16(f, 12) != kEtherTypeIpv4) return std::nullopt;
  if (f[kIpOff] != 0x45 || f[kIpOff + 9] != kIpProtoUdp) return std::nullopt;
  const std::size_t ip_len = get_be16(f, kIpOff + 2);
  if (ip_len < kIpv4HeaderSize + kUdpHeaderSize || kIpOff + ip_len > f.size()) {
    return std::nullopt;
  }
  const std::size_t len = get_be16(f, kUdpOff + 4);
  if (len < kUdpHeaderSize || len > ip_len - kIpv4HeaderSize) return std::nullopt;
  return len;
}

uint16_t udp_checksum(std::span<const uint8_t> f, std::size_t len) {
  uint32_t sum = 0;
  sum = checksum_add(f.subspan(kIpOff + 12, 8), sum);  // src + dst address
  sum += kIpProtoUdp;
  sum += static_cast<uint32_t>(len);
  // Checksum field itself is treated as zero.
  sum = checksum_add(f.subspan(kUdpOff, 6), sum);
  sum = checksum_add(f.subspan(kUdpOff + 8, len - kUdpHeaderSize), sum);
  const uint16_t c = fold(sum);
  return c == 0 ? 0xffff : c;
}

void write_mac(std::span<uint8_t> f, std::size_t off, const MacAddr& mac) {
  std::copy(mac.bytes.begin(), mac.bytes.end(), f.begin() + static_cast<std::ptrdiff_t>(off));
}

MacAddr read_mac(std::span<const uint8_t> f, std::size_t off) {
  MacAddr m;
  std::copy_n(f.begin() + static_cast<std::ptrdiff_t>(off), 6, m.bytes.begin());
  return m;
}

}  // namespace

std::string MacAddr::to_string() const {
  char buf[18];
  std::snprintf(buf, sizeof(buf), "%02x:%02x:%02x:%02x:%02x:%02x", bytes[0],
                bytes[1], bytes[2], bytes[3], bytes[4], bytes[5]);
  return buf;
}

std::string Ipv4Addr::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%u.%u.%u.%u", (value >> 24) & 0xff,
                (value >> 16) & 0xff, (value >> 8) & 0xff, value & 0xff);
  return buf;
}

uint16_t internet_checksum(std::span<const uint8_t> data, uint32_t initial) {
  return fold(checksum_add(data, initial));
}

std::vector<uint8_t> build_udp_frame(const UdpEndpoints& ep,
                                     std::span<const uint8_t> payload,
                                     std::size_t min_frame_size) {
  const std::size_t padded =
      std::max(payload.size(), min_frame_size > kUdpFrameOverhead
                                   ? min_frame_size - kUdpFrameOverhead
                                   : std::size_t{0});
  std::vector<uint8_t> f;
  f.reserve(kUdpFrameOverhead + padded);
  f.insert(f.end(), ep.dst_mac.bytes.begin(), ep.dst_mac.bytes.end());
  f.insert(f.end(), ep.src_mac.bytes.begin(), ep.src_mac.bytes.end());
  put_be16(f, kEtherTypeIpv4);

  put_u8(f, 0x45);
  put_u8(f, 0);
  put_be16(f, static_cast<uint16_t>(kIpv4HeaderSize + kUdpHeaderSize + padded));
  put_be16(f, 0);       // identification
  put_be16(f, 0x4000);  // don't fragment
  put_u8(f, 64);
  put_u8(f, kIpProtoUdp);
  put_be16(f, 0);
  put_be32(f, ep.src_ip.value);
  put_be32(f, ep.dst_ip.value);

  put_be16(f, ep.src_port);
  put_be16(f, ep.dst_port);
  put_be16(f, static_cast<uint16_t>(kUdpHeaderSize + padded));
  put_be16(f, 0);
  f.insert(f.end(), payload.begin(), payload.end());
  put_zeros(f, padded - payload.size());

  refresh_checksums(f);
  return f;
}

std::optional<UdpFrameView> parse_udp_frame(std::span<const uint8_t> f) {
  const auto len = udp_length(f);
  if (!len) return std::nullopt;
  UdpFrameView v;
  v.endpoints.dst_mac = read_mac(f, 0);
  v.endpoints.src_mac = read_mac(f, 6);
  v.endpoints.src_ip = Ipv4Addr{get_be32(f, kIpOff + 12)};
  v.endpoints.dst_ip = Ipv4Addr{get_be32(f, kIpOff + 16)};
  v.endpoints.src_port = get_be16(f, kUdpOff);
  v.endpoints.dst_port = get_be16(f, kUdpOff + 2);
  v.payload = f.subspan(kUdpOff + kUdpHeaderSize, *len - kUdpHeaderSize);
  return v;
}

void refresh_checksums(std::span<uint8_t> f) {
  set_be16(f, kIpOff + 10, 0);
  set_be16(f, kIpOff + 10, internet_checksum(f.subspan(kIpOff, kIpv4HeaderSize)));
  const auto len = udp_length(f);
  if (len) set_be16(f, kUdpOff + 6, udp_checksum(f, *len));
}

bool checksums_valid(std::span<const uint8_t> f) {
  const auto len = udp_length(f);
  if (!len) return false;
  if (internet_checksum(f.subspan(kIpOff, kIpv4HeaderSize)) != 0) return false;
  const uint16_t stored = get_be16(f, kUdpOff + 6);
  return stored == 0 || stored == udp_checksum(f, *len);
}

bool rewrite_source(std::span<uint8_t> f, const MacAddr& mac, Ipv4Addr ip) {
  if (!udp_length(f)) return false;
  write_mac(f, 6, mac);
  set_be32(f, kIpOff + 12, ip.value);
  refresh_checksums(f);
  return true;
}

bool rewrite_destination(std::span<uint8_t> f, const MacAddr& mac, Ipv4Addr ip) {
  if (!udp_length(f)) return false;
  write_mac(f, 0, mac);
  set_be32(f, kIpOff + 16, ip.value);
  refresh_checksums(f);
  return true;
}

}  // namespace perfbench
