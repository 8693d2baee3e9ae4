#include <random>
#include <set>

#include "doctest.h"
#include "perfbench/hypervisor.hpp"
#include "perfbench/probe.hpp"

using namespace perfbench;

namespace {

std::vector<uint8_t> packet_in_bytes(std::span<const uint8_t> frame) {
  of::PacketIn p;
  p.data.assign(frame.begin(), frame.end());
  p.total_len = static_cast<uint16_t>(frame.size());
  p.in_port = 1;
  return of::encode(of::OfMessage{77, p});
}

AddressMapper mapper_for(const std::vector<VirtualMapping>& ms) {
  AddressMapper m;
  for (const auto& v : ms) m.add(v);
  return m;
}

}  // namespace

TEST_SUITE("hypervisor") {

TEST_CASE("mode names") {
  CHECK(parse_hypervisor_mode("fv") == HypervisorMode::kFv);
  CHECK(parse_hypervisor_mode("OVX") == HypervisorMode::kOvx);
  CHECK(parse_hypervisor_mode("switch-only") == HypervisorMode::kNone);
  CHECK_FALSE(parse_hypervisor_mode("flowvisor2"));
  CHECK(to_string(HypervisorMode::kOvx) == "ovx");
}

TEST_CASE("flowspace slices by source port") {
  const auto fs = Flowspace::by_udp_port(20);
  for (uint16_t t = 1; t <= 20; ++t) {
    const auto f = build_probe_frame(probe_endpoints(slice_identity(t)), ProbeTag{t, 0, 0});
    CHECK(fs.classify(f) == t);
    CHECK(fv_route_up(fs, packet_in_bytes(f)) == t);
  }
  const auto outside =
      build_probe_frame(probe_endpoints(slice_identity(21)), ProbeTag{21, 0, 0});
  CHECK_FALSE(fs.classify(outside));
  CHECK_FALSE(fv_route_up(fs, of::encode(of::make_hello(1))));
}

TEST_CASE("overlapping or duplicate rules are rejected") {
  Flowspace fs;
  fs.add(FlowspaceRule{1, 100, 200, std::nullopt});
  CHECK_THROWS_AS(fs.add(FlowspaceRule{2, 150, 300, std::nullopt}), SliceError);
  CHECK_THROWS_AS(fs.add(FlowspaceRule{1, 300, 400, std::nullopt}), SliceError);
  CHECK_THROWS_AS(fs.add(FlowspaceRule{3, 500, 400, std::nullopt}), SliceError);
  fs.add(FlowspaceRule{2, 201, 300, std::nullopt});
  MacAddr a;
  a.bytes[5] = 1;
  MacAddr b;
  b.bytes[5] = 2;
  Flowspace by_mac;
  by_mac.add(FlowspaceRule{1, 0, 0xffff, a});
  by_mac.add(FlowspaceRule{2, 0, 0xffff, b});
  CHECK_THROWS_AS(by_mac.add(FlowspaceRule{3, 0, 10, std::nullopt}), SliceError);
}

TEST_CASE("fv forwards bytes unchanged") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    std::vector<uint8_t> msg(8 + rng() % 200);
    for (auto& b : msg) b = static_cast<uint8_t>(rng());
    const auto out = fv_forward_down(msg);
    CHECK(std::equal(out.begin(), out.end(), msg.begin(), msg.end()));
  }
}

TEST_CASE("virtual mappings are unique and reproducible") {
  const auto a = make_virtual_mappings(500, 9);
  CHECK(a == make_virtual_mappings(500, 9));
  CHECK(a != make_virtual_mappings(500, 10));
  std::set<MacAddr> macs;
  std::set<Ipv4Addr> ips;
  for (const auto& m : a) {
    macs.insert(m.physical_mac);
    ips.insert(m.physical_ip);
    CHECK((m.physical_ip.value >> 16) == ((10u << 8) | 128u));
    CHECK(m.virtual_mac == slice_identity(m.tenant_id).mac);
  }
  CHECK(macs.size() == 500);
  CHECK(ips.size() == 500);
  CHECK_NOTHROW(mapper_for(a));
}

TEST_CASE("colliding physical addresses are rejected") {
  auto ms = make_virtual_mappings(2, 1);
  ms[1].physical_ip = ms[0].physical_ip;
  AddressMapper m;
  m.add(ms[0]);
  CHECK_THROWS_AS(m.add(ms[1]), SliceError);
  CHECK_THROWS_AS(m.add(ms[0]), SliceError);
}

TEST_CASE("ovx rewrite is a bijection") {
  const uint16_t n = 64;
  const auto ms = make_virtual_mappings(n, 42);
  const auto mapper = mapper_for(ms);
  std::mt19937_64 rng(8);
  std::set<std::pair<MacAddr, Ipv4Addr>> physical_seen;
  for (int i = 0; i < 5000; ++i) {
    const uint16_t t = static_cast<uint16_t>(1 + rng() % n);
    const ProbeTag tag{t, rng() % 100000, rng()};
    const auto virt = build_probe_frame(probe_endpoints(slice_identity(t)), tag,
                                        kDefaultProbeSize + rng() % 64);

    const auto po = of::encode(of::make_packet_out(static_cast<uint32_t>(i), virt, 1));
    const auto down = ovx_translate_down(mapper, t, po);
    REQUIRE(down.size() == po.size());
    CHECK(std::equal(po.begin(), po.begin() + 24, down.begin()));
    const std::span<const uint8_t> phys(down.data() + 24, down.size() - 24);
    const auto view = parse_udp_frame(phys);
    REQUIRE(view);
    CHECK(view->endpoints.src_mac == ms[t - 1].physical_mac);
    CHECK(view->endpoints.src_ip == ms[t - 1].physical_ip);
    CHECK(checksums_valid(phys));
    CHECK(extract_probe(phys) == tag);
    physical_seen.insert({view->endpoints.src_mac, view->endpoints.src_ip});

    // and back up: the switch reports the physical frame in a PacketIn
    const auto up = ovx_translate_up(mapper, packet_in_bytes(phys));
    REQUIRE(up);
    CHECK(up->tenant_id == t);
    CHECK(std::equal(up->bytes.begin() + 18, up->bytes.end(), virt.begin(), virt.end()));
  }
  CHECK(physical_seen.size() <= n);
}

TEST_CASE("ovx rejects frames from the wrong virtual address") {
  const auto mapper = mapper_for(make_virtual_mappings(3, 1));
  const auto f = build_probe_frame(probe_endpoints(slice_identity(2)), ProbeTag{2, 0, 0});
  const auto po = of::encode(of::make_packet_out(1, f, 1));
  CHECK_THROWS_AS(ovx_translate_down(mapper, 1, po), UnknownVirtualAddress);
  CHECK_THROWS_AS(ovx_translate_down(mapper, 9, po), UnknownVirtualAddress);
  const auto stats = of::encode(of::make_port_stats_request(3));
  CHECK(ovx_translate_down(mapper, 1, stats) == stats);
  // unknown physical source: not demultiplexed
  CHECK_FALSE(ovx_translate_up(mapper, packet_in_bytes(f)));
}

TEST_CASE("stats cache answers with the request xid") {
  StatsCache cache;
  bool cold = false;
  auto m = cache.answer(5, of::kPortNone, &cold);
  CHECK(cold);
  CHECK(m.xid == 5);
  REQUIRE(m.as<of::PortStatsReply>().ports.size() == 1);

  of::PortStatsReply r;
  of::PortCounters p1;
  p1.port_no = 1;
  p1.rx_packets = 10;
  of::PortCounters p2;
  p2.port_no = 2;
  p2.rx_packets = 20;
  r.ports = {p1, p2};
  cache.update(r, 100);
  CHECK(cache.updates() == 1);
  m = cache.answer(6, 2, &cold);
  CHECK_FALSE(cold);
  REQUIRE(m.as<of::PortStatsReply>().ports.size() == 1);
  CHECK(m.as<of::PortStatsReply>().ports[0].rx_packets == 20);
  CHECK(cache.answer(7, of::kPortNone).as<of::PortStatsReply>().ports.size() == 2);
}

TEST_CASE("xid router remaps only on collision") {
  XidRouter r;
  CHECK(r.outbound(1, 10) == 10);
  const uint32_t second = r.outbound(2, 10);
  CHECK(second != 10);
  CHECK(r.remapped() == 1);
  CHECK(r.outbound(2, 11) == 11);
  CHECK(r.outstanding() == 3);
  CHECK(r.inbound(second) == std::pair<uint16_t, uint32_t>{2, 10});
  CHECK(r.inbound(10) == std::pair<uint16_t, uint32_t>{1, 10});
  CHECK_FALSE(r.inbound(10));
  CHECK(r.outstanding() == 1);
}

}
