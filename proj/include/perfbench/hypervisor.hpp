#pragma once

// Behavioural models of two hypervisor designs:
//  - fv:  transparent flowspace slicing. Messages pass through byte-for-byte;
//         PacketIns are demultiplexed by matching the carried packet against
//         per-tenant flowspace rules.
//  - ovx: address virtualization. Packet headers are rewritten between each
//         tenant's virtual addresses and unique physical addresses, and port
//         statistics are answered from a cache refreshed by a poller.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "perfbench/identity.hpp"
#include "perfbench/of_codec.hpp"

namespace perfbench {

enum class HypervisorMode { kNone, kFv, kOvx };

std::string_view to_string(HypervisorMode m);
std::optional<HypervisorMode> parse_hypervisor_mode(std::string_view s);

class SliceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlowspaceRule {
  uint16_t tenant_id = 0;
  uint16_t udp_src_lo = 0;
  uint16_t udp_src_hi = 0xffff;
  std::optional<MacAddr> src_mac;

  bool matches(const UdpEndpoints& ep) const;
  bool overlaps(const FlowspaceRule& other) const;
  bool operator==(const FlowspaceRule&) const = default;
};

class Flowspace {
 public:
  // One rule per tenant, disjoint from every other tenant's rule; throws
  // SliceError otherwise.
  void add(const FlowspaceRule& rule);
  // Default slicing: tenant t owns UDP source port 20000+t.
  static Flowspace by_udp_port(uint16_t tenants);

  // Owning tenant of a data packet, if any rule matches.
  std::optional<uint16_t> classify(std::span<const uint8_t> frame) const;
  std::span<const FlowspaceRule> rules() const { return rules_; }

 private:
  std::vector<FlowspaceRule> rules_;
};

class UnknownVirtualAddress : public SliceError {
 public:
  using SliceError::SliceError;
};

struct VirtualMapping {
  uint16_t tenant_id = 0;
  MacAddr virtual_mac;
  Ipv4Addr virtual_ip;
  MacAddr physical_mac;
  Ipv4Addr physical_ip;

  bool operator==(const VirtualMapping&) const = default;
};

// Virtual addresses are the tenant's slice identity; physical MACs are
// 0a:00:00:00:HH:LL and physical IPs are drawn without replacement from
// 10.128.0.0/16 by a generator seeded with `seed`.
std::vector<VirtualMapping> make_virtual_mappings(uint16_t tenants, uint64_t seed);

class AddressMapper {
 public:
  // Throws SliceError unless every virtual and physical address is unique.
  void add(const VirtualMapping& m);
  const VirtualMapping* for_tenant(uint16_t tenant_id) const;

  // Rewrites a tenant-originated frame's source from virtual to physical.
  // Throws UnknownVirtualAddress if the source is not the tenant's virtual
  // address (or the tenant has no mapping).
  void to_physical(uint16_t tenant_id, std::span<uint8_t> frame) const;
  // Demultiplexes a network-originated frame by its physical source MAC and
  // rewrites the source to the owner's virtual address.
  std::optional<uint16_t> to_virtual(std::span<uint8_t> frame) const;

 private:
  std::map<uint16_t, VirtualMapping> by_tenant_;
  std::map<MacAddr, uint16_t> by_physical_mac_;
};

struct Routed {
  uint16_t tenant_id = 0;
  std::vector<uint8_t> bytes;
};

// fv, switch -> tenant: the owning tenant of a PacketIn. The caller forwards
// the original bytes unchanged.
std::optional<uint16_t> fv_route_up(const Flowspace& fs, std::span<const uint8_t> packet_in);
// fv, tenant -> switch: identity on the wire.
std::span<const uint8_t> fv_forward_down(std::span<const uint8_t> msg);

// ovx, tenant -> switch: PacketOut payload rewritten virtual -> physical;
// anything else is returned unchanged.
std::vector<uint8_t> ovx_translate_down(const AddressMapper& mapper, uint16_t tenant_id,
                                        std::span<const uint8_t> msg);
// ovx, switch -> tenant: PacketIn demultiplexed by physical MAC and rewritten
// physical -> virtual.
std::optional<Routed> ovx_translate_up(const AddressMapper& mapper,
                                       std::span<const uint8_t> packet_in);

// Latest port counters pulled from the switch. One writer (the poller),
// many readers.
class StatsCache {
 public:
  void update(of::PortStatsReply reply, uint64_t at_ns);
  // Reply for `port_no` with the request's xid. `cold` is set when no poll
  // has completed yet; counters are then zero.
  of::OfMessage answer(uint32_t xid, uint16_t port_no, bool* cold = nullptr) const;
  uint64_t updates() const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const of::PortStatsReply> latest_;
  uint64_t updated_at_ = 0;
  uint64_t updates_ = 0;
};

// Transaction-id bookkeeping for requests forwarded on a shared upstream
// connection. xids pass through unchanged unless another tenant already has
// the same xid outstanding, in which case a fresh one is substituted.
class XidRouter {
 public:
  uint32_t outbound(uint16_t tenant_id, uint32_t xid);
  // Owning tenant and original xid of a reply; erases the entry.
  std::optional<std::pair<uint16_t, uint32_t>> inbound(uint32_t upstream_xid);
  std::size_t outstanding() const { return pending_.size(); }
  uint64_t remapped() const { return remapped_; }

 private:
  struct Entry {
    uint16_t tenant_id;
    uint32_t original_xid;
  };
  std::unordered_map<uint32_t, Entry> pending_;
  uint32_t next_private_ = 0xf0000000;
  uint64_t remapped_ = 0;
};

}  // namespace perfbench
