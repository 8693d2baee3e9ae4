#include "perfbench/identity.hpp"

#include <stdexcept>

namespace perfbench {

TenantIdentity slice_identity(uint16_t tenant_id) {
  if (tenant_id == 0 || tenant_id > kMaxTenants) {
    throw std::out_of_range("tenant id must be in 1.." + std::to_string(kMaxTenants));
  }
  TenantIdentity id;
  id.mac.bytes = {0x02, 0x00, 0x00, 0x00, static_cast<uint8_t>(tenant_id >> 8),
                  static_cast<uint8_t>(tenant_id)};
  id.ip = Ipv4Addr{(10u << 24) | tenant_id};
  id.udp_port = static_cast<uint16_t>(kTenantPortBase + tenant_id);
  return id;
}

MacAddr sink_mac() { return MacAddr{{0x06, 0x00, 0x00, 0x00, 0x00, 0x01}}; }

Ipv4Addr sink_ip() { return Ipv4Addr{(10u << 24) | (255u << 16) | 1u}; }

UdpEndpoints probe_endpoints(const TenantIdentity& src) {
  UdpEndpoints ep;
  ep.src_mac = src.mac;
  ep.dst_mac = sink_mac();
  ep.src_ip = src.ip;
  ep.dst_ip = sink_ip();
  ep.src_port = src.udp_port;
  ep.dst_port = kProbeDstPort;
  return ep;
}

}  // namespace perfbench
