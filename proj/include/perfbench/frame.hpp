#pragma once

// Ethernet/IPv4/UDP frame construction, parsing and address rewriting.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace perfbench {

struct MacAddr {
  std::array<uint8_t, 6> bytes{};

  std::string to_string() const;
  auto operator<=>(const MacAddr&) const = default;
};

struct Ipv4Addr {
  uint32_t value = 0;  // host byte order

  std::string to_string() const;
  auto operator<=>(const Ipv4Addr&) const = default;
};

inline constexpr std::size_t kEthHeaderSize = 14;
inline constexpr std::size_t kIpv4HeaderSize = 20;
inline constexpr std::size_t kUdpHeaderSize = 8;
inline constexpr std::size_t kUdpFrameOverhead =
    kEthHeaderSize + kIpv4HeaderSize + kUdpHeaderSize;

struct UdpEndpoints {
  MacAddr src_mac;
  MacAddr dst_mac;
  Ipv4Addr src_ip;
  Ipv4Addr dst_ip;
  uint16_t src_port = 0;
  uint16_t dst_port = 0;

  bool operator==(const UdpEndpoints&) const = default;
};

struct UdpFrameView {
  UdpEndpoints endpoints;
  std::span<const uint8_t> payload;
};

// Builds an untagged Ethernet II / IPv4 / UDP frame with valid IPv4 and UDP
// checksums. The payload is zero-padded so the frame is at least
// `min_frame_size` bytes.
std::vector<uint8_t> build_udp_frame(const UdpEndpoints& ep,
                                     std::span<const uint8_t> payload,
                                     std::size_t min_frame_size = 0);

std::optional<UdpFrameView> parse_udp_frame(std::span<const uint8_t> frame);

// Recomputes both checksums in place. Precondition: parse_udp_frame succeeds.
void refresh_checksums(std::span<uint8_t> frame);

bool checksums_valid(std::span<const uint8_t> frame);

// In-place source/destination rewrite of an IPv4/UDP frame, with checksum
// update. Returns false if the frame is not IPv4/UDP.
bool rewrite_source(std::span<uint8_t> frame, const MacAddr& mac, Ipv4Addr ip);
bool rewrite_destination(std::span<uint8_t> frame, const MacAddr& mac, Ipv4Addr ip);

uint16_t internet_checksum(std::span<const uint8_t> data, uint32_t initial = 0);

}  // namespace perfbench
