#include "perfbench/hypervisor.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "perfbench/bytes.hpp"
#include "perfbench/frame.hpp"

namespace perfbench {

namespace {

// PacketIn: header(8) buffer_id(4) total_len(2) in_port(2) reason(1) pad(1).
constexpr std::size_t kPacketInDataOffset = 18;
// PacketOut: header(8) buffer_id(4) in_port(2) actions_len(2).
constexpr std::size_t kPacketOutActionsOffset = 16;

bool is_type(std::span<const uint8_t> msg, of::MsgType t) {
  return msg.size() >= of::kHeaderSize && msg[1] == static_cast<uint8_t>(t);
}

}  // namespace

std::string_view to_string(HypervisorMode m) {
  switch (m) {
    case HypervisorMode::kNone: return "none";
    case HypervisorMode::kFv: return "fv";
    case HypervisorMode::kOvx: return "ovx";
  }
  return "?";
}

std::optional<HypervisorMode> parse_hypervisor_mode(std::string_view s) {
  if (s == "none" || s == "switch-only") return HypervisorMode::kNone;
  if (s == "fv" || s == "FV") return HypervisorMode::kFv;
  if (s == "ovx" || s == "OVX") return HypervisorMode::kOvx;
  return std::nullopt;
}

bool FlowspaceRule::matches(const UdpEndpoints& ep) const {
  if (ep.src_port < udp_src_lo || ep.src_port > udp_src_hi) return false;
  return !src_mac || *src_mac == ep.src_mac;
}

bool FlowspaceRule::overlaps(const FlowspaceRule& other) const {
  const bool ports = udp_src_lo <= other.udp_src_hi && other.udp_src_lo <= udp_src_hi;
  const bool macs = !src_mac || !other.src_mac || *src_mac == *other.src_mac;
  return ports && macs;
}

void Flowspace::add(const FlowspaceRule& rule) {
  if (rule.udp_src_lo > rule.udp_src_hi) {
    throw SliceError("flowspace rule for tenant " + std::to_string(rule.tenant_id) +
                     " has an empty port range");
  }
  for (const auto& r : rules_) {
    if (r.tenant_id == rule.tenant_id) {
      throw SliceError("tenant " + std::to_string(rule.tenant_id) +
                       " already has a flowspace rule");
    }
    if (r.overlaps(rule)) {
      throw SliceError("flowspace of tenant " + std::to_string(rule.tenant_id) +
                       " overlaps tenant " + std::to_string(r.tenant_id));
    }
  }
  rules_.push_back(rule);
}

Flowspace Flowspace::by_udp_port(uint16_t tenants) {
  Flowspace fs;
  for (uint16_t t = 1; t <= tenants; ++t) {
    const uint16_t port = slice_identity(t).udp_port;
    fs.add(FlowspaceRule{t, port, port, std::nullopt});
  }
  return fs;
}

std::optional<uint16_t> Flowspace::classify(std::span<const uint8_t> frame) const {
  const auto view = parse_udp_frame(frame);
  if (!view) return std::nullopt;
  for (const auto& r : rules_) {
    if (r.matches(view->endpoints)) return r.tenant_id;
  }
  return std::nullopt;
}

std::vector<VirtualMapping> make_virtual_mappings(uint16_t tenants, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::set<uint16_t> used;
  std::vector<VirtualMapping> out;
  out.reserve(tenants);
  for (uint16_t t = 1; t <= tenants; ++t) {
    uint16_t host = 0;
    // Raw engine output keeps the draw identical across standard libraries.
    do {
      host = static_cast<uint16_t>(rng() >> 48);
    } while (host == 0 || host == 0xffff || used.count(host) != 0);
    used.insert(host);

    const TenantIdentity virt = slice_identity(t);
    VirtualMapping m;
    m.tenant_id = t;
    m.virtual_mac = virt.mac;
    m.virtual_ip = virt.ip;
    m.physical_mac.bytes = {0x0a, 0x00, 0x00, 0x00, static_cast<uint8_t>(t >> 8),
                            static_cast<uint8_t>(t)};
    m.physical_ip = Ipv4Addr{(10u << 24) | (128u << 16) | host};
    out.push_back(m);
  }
  return out;
}

void AddressMapper::add(const VirtualMapping& m) {
  for (const auto& [t, other] : by_tenant_) {
    if (t == m.tenant_id) {
      throw SliceError("tenant " + std::to_string(t) + " already has a mapping");
    }
    if (other.physical_mac == m.physical_mac || other.physical_ip == m.physical_ip) {
      throw SliceError("physical address of tenant " + std::to_string(m.tenant_id) +
                       " collides with tenant " + std::to_string(t));
    }
  }
  by_tenant_[m.tenant_id] = m;
  by_physical_mac_[m.physical_mac] = m.tenant_id;
}

const VirtualMapping* AddressMapper::for_tenant(uint16_t tenant_id) const {
  const auto it = by_tenant_.find(tenant_id);
  return it == by_tenant_.end() ? nullptr : &it->second;
}

void AddressMapper::to_physical(uint16_t tenant_id, std::span<uint8_t> frame) const {
  const VirtualMapping* m = for_tenant(tenant_id);
  if (m == nullptr) {
    throw UnknownVirtualAddress("tenant " + std::to_string(tenant_id) + " has no mapping");
  }
  const auto view = parse_udp_frame(frame);
  if (!view || view->endpoints.src_mac != m->virtual_mac ||
      view->endpoints.src_ip != m->virtual_ip) {
    throw UnknownVirtualAddress(
        "tenant " + std::to_string(tenant_id) + " sent from unmapped address " +
        (view ? view->endpoints.src_mac.to_string() + "/" + view->endpoints.src_ip.to_string()
              : std::string("(not IPv4/UDP)")));
  }
  rewrite_source(frame, m->physical_mac, m->physical_ip);
}

std::optional<uint16_t> AddressMapper::to_virtual(std::span<uint8_t> frame) const {
  const auto view = parse_udp_frame(frame);
  if (!view) return std::nullopt;
  const auto it = by_physical_mac_.find(view->endpoints.src_mac);
  if (it == by_physical_mac_.end()) return std::nullopt;
  const VirtualMapping& m = by_tenant_.at(it->second);
  if (view->endpoints.src_ip != m.physical_ip) return std::nullopt;
  rewrite_source(frame, m.virtual_mac, m.virtual_ip);
  return m.tenant_id;
}

std::optional<uint16_t> fv_route_up(const Flowspace& fs, std::span<const uint8_t> packet_in) {
  if (!is_type(packet_in, of::MsgType::kPacketIn) || packet_in.size() < kPacketInDataOffset) {
    return std::nullopt;
  }
  return fs.classify(packet_in.subspan(kPacketInDataOffset));
}

std::span<const uint8_t> fv_forward_down(std::span<const uint8_t> msg) { return msg; }

std::vector<uint8_t> ovx_translate_down(const AddressMapper& mapper, uint16_t tenant_id,
                                        std::span<const uint8_t> msg) {
  std::vector<uint8_t> out(msg.begin(), msg.end());
  if (!is_type(msg, of::MsgType::kPacketOut) || msg.size() < kPacketOutActionsOffset) {
    return out;
  }
  const std::size_t data_off = kPacketOutActionsOffset + get_be16(msg, 14);
  if (data_off > out.size()) {
    throw UnknownVirtualAddress("PacketOut actions overrun the message");
  }
  mapper.to_physical(tenant_id, std::span<uint8_t>(out).subspan(data_off));
  return out;
}

std::optional<Routed> ovx_translate_up(const AddressMapper& mapper,
                                       std::span<const uint8_t> packet_in) {
  if (!is_type(packet_in, of::MsgType::kPacketIn) || packet_in.size() < kPacketInDataOffset) {
    return std::nullopt;
  }
  Routed r;
  r.bytes.assign(packet_in.begin(), packet_in.end());
  const auto tenant =
      mapper.to_virtual(std::span<uint8_t>(r.bytes).subspan(kPacketInDataOffset));
  if (!tenant) return std::nullopt;
  r.tenant_id = *tenant;
  return r;
}

void StatsCache::update(of::PortStatsReply reply, uint64_t at_ns) {
  auto fresh = std::make_shared<const of::PortStatsReply>(std::move(reply));
  std::lock_guard lock(mu_);
  latest_ = std::move(fresh);
  updated_at_ = at_ns;
  ++updates_;
}

of::OfMessage StatsCache::answer(uint32_t xid, uint16_t port_no, bool* cold) const {
  std::shared_ptr<const of::PortStatsReply> snapshot;
  {
    std::lock_guard lock(mu_);
    snapshot = latest_;
  }
  if (cold != nullptr) *cold = snapshot == nullptr;
  of::PortStatsReply reply;
  if (!snapshot) {
    of::PortCounters zero;
    zero.port_no = port_no == of::kPortNone ? 1 : port_no;
    reply.ports.push_back(zero);
  } else {
    for (const auto& p : snapshot->ports) {
      if (port_no == of::kPortNone || p.port_no == port_no) reply.ports.push_back(p);
    }
  }
  return of::OfMessage{xid, std::move(reply)};
}

uint64_t StatsCache::updates() const {
  std::lock_guard lock(mu_);
  return updates_;
}

uint32_t XidRouter::outbound(uint16_t tenant_id, uint32_t xid) {
  uint32_t upstream = xid;
  if (pending_.count(upstream) != 0) {
    do {
      upstream = next_private_++;
      if (next_private_ == 0) next_private_ = 0xf0000000;
    } while (pending_.count(upstream) != 0);
    ++remapped_;
  }
  pending_.emplace(upstream, Entry{tenant_id, xid});
  return upstream;
}

std::optional<std::pair<uint16_t, uint32_t>> XidRouter::inbound(uint32_t upstream_xid) {
  const auto it = pending_.find(upstream_xid);
  if (it == pending_.end()) return std::nullopt;
  std::pair<uint16_t, uint32_t> r{it->second.tenant_id, it->second.original_xid};
  pending_.erase(it);
  return r;
}

}  // namespace perfbench
