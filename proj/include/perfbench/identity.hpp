#pragma once

// Data-plane addressing for tenants. Tenant t (1-based) owns source UDP port
// 20000+t and source MAC 02:00:00:00:HH:LL where HHLL = t.

#include <cstdint>

#include "perfbench/frame.hpp"

namespace perfbench {

inline constexpr uint16_t kTenantPortBase = 20000;
inline constexpr uint16_t kProbeDstPort = 9000;
inline constexpr uint16_t kMaxTenants = 4096;

struct TenantIdentity {
  MacAddr mac;
  Ipv4Addr ip;
  uint16_t udp_port = 0;

  bool operator==(const TenantIdentity&) const = default;
};

TenantIdentity slice_identity(uint16_t tenant_id);

// Where every probe is addressed; the data-plane sink.
MacAddr sink_mac();
Ipv4Addr sink_ip();

UdpEndpoints probe_endpoints(const TenantIdentity& src);

}  // namespace perfbench
