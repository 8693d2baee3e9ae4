#include <thread>

#include "doctest.h"
#include "perfbench/identity.hpp"
#include "perfbench/probe.hpp"
#include "perfbench/proxy.hpp"
#include "support.hpp"

using namespace perfbench;
using namespace testing;

namespace {

struct ProxyRig {
  FakeSwitch sw;
  std::vector<uint16_t> ports;
  std::unique_ptr<HypervisorProxy> proxy;
  std::thread thread;
  Peer up;

  ProxyRig(HypervisorMode mode, uint16_t tenants, double poll_rate = 20) {
    std::vector<TenantListener> listeners;
    for (uint16_t t = 1; t <= tenants; ++t) {
      TenantListener l{t, net::tcp_listen(loopback())};
      ports.push_back(net::local_port(l.fd.get()));
      listeners.push_back(std::move(l));
    }
    ProxyConfig cfg;
    cfg.mode = mode;
    cfg.switch_endpoint = loopback(sw.port());
    cfg.flowspace = Flowspace::by_udp_port(tenants);
    cfg.mappings = make_virtual_mappings(tenants, 1);
    cfg.poll_rate = poll_rate;
    proxy = std::make_unique<HypervisorProxy>(std::move(cfg), std::move(listeners));
    thread = std::thread([this] {
      try {
        proxy->run();
      } catch (const std::exception& e) {
        MESSAGE("proxy stopped: " << e.what());
      }
    });
    up = sw.accept();
  }

  ~ProxyRig() {
    proxy->request_stop();
    thread.join();
  }
};

std::vector<uint8_t> tenant_frame(uint16_t t, uint64_t seq) {
  return build_probe_frame(probe_endpoints(slice_identity(t)), ProbeTag{t, seq, 1000 + seq});
}

of::OfMessage packet_in(std::vector<uint8_t> frame) {
  of::PacketIn p;
  p.total_len = static_cast<uint16_t>(frame.size());
  p.in_port = 1;
  p.data = std::move(frame);
  return of::OfMessage{0, std::move(p)};
}

}  // namespace

TEST_SUITE("proxy") {

TEST_CASE("fv is byte-transparent in both directions") {
  ProxyRig rig(HypervisorMode::kFv, 2);
  Peer t1 = dial(rig.ports[0]);
  Peer t2 = dial(rig.ports[1]);

  for (uint64_t i = 0; i < 50; ++i) {
    const auto po = of::encode(of::make_packet_out(static_cast<uint32_t>(100 + i),
                                                   tenant_frame(1, i), 1));
    t1.send(po);
    auto got = rig.up.next_raw();
    REQUIRE(got);
    CHECK(*got == po);
  }

  const auto pin = of::encode(packet_in(tenant_frame(2, 7)));
  rig.up.send(pin);
  auto got = t2.next_raw();
  REQUIRE(got);
  CHECK(*got == pin);
  CHECK_FALSE(t1.next_raw(200ms));

  // a probe outside every slice goes nowhere
  rig.up.send(packet_in(tenant_frame(9, 1)));
  CHECK_FALSE(t1.next_raw(200ms));
  CHECK_FALSE(t2.next_raw(10ms));
}

TEST_CASE("fv keeps colliding xids apart") {
  ProxyRig rig(HypervisorMode::kFv, 2);
  Peer t1 = dial(rig.ports[0]);
  Peer t2 = dial(rig.ports[1]);

  const auto req = of::encode(of::make_port_stats_request(5));
  t1.send(req);
  auto first = rig.up.next_raw();
  REQUIRE(first);
  CHECK(*first == req);
  t2.send(req);
  auto second = rig.up.next();
  REQUIRE(second);
  CHECK(second->xid != 5);

  // answer out of order, tagging each reply with its owner
  auto reply = [](uint32_t xid, uint64_t rx) {
    of::PortStatsReply r;
    of::PortCounters c;
    c.port_no = 1;
    c.rx_packets = rx;
    r.ports.push_back(c);
    return of::OfMessage{xid, r};
  };
  rig.up.send(reply(second->xid, 2));
  rig.up.send(reply(5, 1));
  auto r1 = t1.next_of(of::MsgType::kStatsReply);
  auto r2 = t2.next_of(of::MsgType::kStatsReply);
  REQUIRE(r1);
  REQUIRE(r2);
  CHECK(r1->xid == 5);
  CHECK(r2->xid == 5);
  CHECK(r1->as<of::PortStatsReply>().ports[0].rx_packets == 1);
  CHECK(r2->as<of::PortStatsReply>().ports[0].rx_packets == 2);
  CHECK(encode(*r1) == encode(reply(5, 1)));
}

TEST_CASE("ovx translates addresses and serves stats from its cache") {
  ProxyRig rig(HypervisorMode::kOvx, 3);
  const auto maps = make_virtual_mappings(3, 1);

  // answer the first poll so the cache is warm
  auto poll = rig.up.next_of(of::MsgType::kStatsRequest);
  REQUIRE(poll);
  CHECK(poll->xid >= 0xc0000000u);
  of::PortStatsReply counters;
  of::PortCounters c;
  c.port_no = 1;
  c.rx_packets = 1234;
  counters.ports.push_back(c);
  rig.up.send(of::OfMessage{poll->xid, counters});

  Peer t1 = dial(rig.ports[0]);
  Peer t3 = dial(rig.ports[2]);

  // PacketOut: virtual source in, physical source out
  const auto virt = tenant_frame(1, 3);
  t1.send(of::make_packet_out(9, virt, 1));
  auto po = rig.up.next_of(of::MsgType::kPacketOut);
  REQUIRE(po);
  CHECK(po->xid == 9);
  const auto& data = po->as<of::PacketOut>().data;
  const auto view = parse_udp_frame(data);
  REQUIRE(view);
  CHECK(view->endpoints.src_mac == maps[0].physical_mac);
  CHECK(view->endpoints.src_ip == maps[0].physical_ip);
  CHECK(extract_probe(data) == extract_probe(virt));

  // PacketIn: physical source in, tenant 3 gets its virtual view
  auto phys = tenant_frame(3, 4);
  rewrite_source(phys, maps[2].physical_mac, maps[2].physical_ip);
  rig.up.send(packet_in(phys));
  auto pin = t3.next_of(of::MsgType::kPacketIn);
  REQUIRE(pin);
  CHECK(pin->as<of::PacketIn>().data == tenant_frame(3, 4));
  CHECK_FALSE(t1.next_raw(200ms));

  // stats come from the cache
  uint64_t rx = 0;
  for (int i = 0; i < 50 && rx != 1234; ++i) {
    t1.send(of::make_port_stats_request(77, 1));
    auto r = t1.next_of(of::MsgType::kStatsReply);
    REQUIRE(r);
    CHECK(r->xid == 77);
    rx = r->as<of::PortStatsReply>().ports.at(0).rx_packets;
  }
  CHECK(rx == 1234);

  // echo is answered locally
  t1.send(of::make_echo_request(31, {1, 2, 3}));
  auto echo = t1.next_of(of::MsgType::kEchoReply);
  REQUIRE(echo);
  CHECK(echo->xid == 31);
  CHECK(echo->as<of::EchoReply>().payload == std::vector<uint8_t>{1, 2, 3});

  // the switch saw only polls, never a tenant's stats or echo request
  const uint64_t until = monotonic_ns() + 300 * kNsPerMs;
  while (monotonic_ns() < until) {
    auto m = rig.up.next(100ms);
    if (!m) break;
    if (m->is<of::PortStatsRequest>()) CHECK(m->xid >= 0xc0000000u);
    CHECK_FALSE(m->is<of::EchoRequest>());
  }
  CHECK(rig.proxy->counters().stats_from_cache.load() >= 1);
}

TEST_CASE("ovx drops a PacketOut from an unmapped source") {
  ProxyRig rig(HypervisorMode::kOvx, 2, 1);
  Peer t1 = dial(rig.ports[0]);
  t1.send(of::make_packet_out(1, tenant_frame(2, 0), 1));
  t1.send(of::make_packet_out(2, tenant_frame(1, 0), 1));
  auto po = rig.up.next_of(of::MsgType::kPacketOut);
  REQUIRE(po);
  CHECK(po->xid == 2);
  CHECK(rig.proxy->counters().unknown_virtual_address.load() == 1);
}

}
