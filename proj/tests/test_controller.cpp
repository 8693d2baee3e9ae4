#include <thread>

#include "doctest.h"
#include "perfbench/controller.hpp"
#include "perfbench/dataplane.hpp"
#include "perfbench/switch_emulator.hpp"
#include "support.hpp"

using namespace perfbench;
using namespace testing;

TEST_SUITE("controller") {

TEST_CASE("rate split gives the remainder to the lowest ids") {
  CHECK(split_rate(10, 3) == std::vector<uint32_t>{4, 3, 3});
  CHECK(split_rate(60000, 20) == std::vector<uint32_t>(20, 3000));
  const auto s = split_rate(40001, 7);
  uint64_t sum = 0;
  for (auto r : s) sum += r;
  CHECK(sum == 40001);
}

TEST_CASE("packet out template equals a freshly encoded message") {
  TenantConfig cfg;
  cfg.tenant_id = 4;
  cfg.identity = slice_identity(4);
  cfg.out_port = 3;
  RequestFactory f(cfg);
  for (uint32_t i = 0; i < 100; ++i) {
    const ProbeTag tag{4, i, 1000ull * i};
    const auto got = f.packet_out(i + 1, tag);
    const auto want = of::encode(
        of::make_packet_out(i + 1, build_probe_frame(probe_endpoints(cfg.identity), tag), 3));
    CHECK(std::vector<uint8_t>(got.begin(), got.end()) == want);
  }
  CHECK(f.request(MessageKind::kPortStats, 9) == of::encode(of::make_port_stats_request(9)));
  CHECK(f.request(MessageKind::kEchoRequest, 2) == of::encode(of::make_echo_request(2)));
}

TEST_CASE("tenant answers echo requests from its peer") {
  net::Fd listener = net::tcp_listen(loopback());
  TenantLedger ledger(0, 1, MessageKind::kPacketIn, 16);
  TenantConfig cfg;
  cfg.endpoint = loopback(net::local_port(listener.get()));
  cfg.kind = MessageKind::kPacketIn;
  TenantActor actor(cfg, ledger, 0, 1);
  std::thread dial([&] { actor.connect(2000ms); });
  Peer sw;
  sw.fd = net::tcp_accept(listener.get());
  net::hello_exchange(sw.fd.get(), sw.framer, 0, 2000ms);
  dial.join();

  actor.on_message(of::make_echo_request(8, {1}), 0);
  actor.connection().flush();
  auto reply = sw.next_of(of::MsgType::kEchoReply);
  REQUIRE(reply);
  CHECK(reply->xid == 8);
  CHECK(reply->as<of::EchoReply>().payload == std::vector<uint8_t>{1});
  CHECK(actor.result().echo_answered == 1);
}

TEST_CASE("live tenants against the switch: PacketOut and port stats") {
  net::Fd sink = net::udp_bind(loopback());
  SwitchConfig scfg;
  scfg.listen = loopback();
  scfg.data_bind = loopback();
  scfg.data_peer = loopback(net::local_port(sink.get()));
  SwitchEmulator sw(scfg);
  std::thread sw_thread([&] { sw.run(); });

  LedgerSet ledgers;
  ledgers.add(std::make_unique<TenantLedger>(0, 1, MessageKind::kPacketOut, 10000));
  ledgers.add(std::make_unique<TenantLedger>(0, 2, MessageKind::kPortStats, 10000));
  std::vector<TenantConfig> cfgs(2);
  cfgs[0].tenant_id = 1;
  cfgs[0].kind = MessageKind::kPacketOut;
  cfgs[0].rate = 2000;
  cfgs[0].nodelay = false;
  cfgs[0].identity = slice_identity(1);
  cfgs[1].tenant_id = 2;
  cfgs[1].kind = MessageKind::kPortStats;
  cfgs[1].rate = 1000;
  cfgs[1].nodelay = true;
  for (auto& c : cfgs) c.endpoint = loopback(sw.control_port());

  ControllerEmulator ctl(cfgs, ledgers, 0, 2);
  ctl.connect_all(2000ms);
  CHECK_FALSE(ctl.actors()[0]->nodelay_applied());
  CHECK(ctl.actors()[1]->nodelay_applied());

  DataReceiver rx(std::move(sink), ledgers, 0);
  const RunClock clock(monotonic_ns() + 100 * kNsPerMs);
  rx.start(clock);
  ctl.start(clock, 300 * kNsPerMs);
  ctl.join();
  rx.request_stop();
  rx.join();
  sw.request_stop();
  sw_thread.join();

  auto& po = ctl.actors()[0]->result();
  CHECK(po.error.empty());
  CHECK(po.achieved.emitted == 4000);
  CHECK(rx.samples().size() == 4000);
  CHECK(rx.counts().non_probe == 0);
  for (const auto& s : rx.samples()) CHECK(s.tenant_id == 1);

  auto& ps = ctl.actors()[1]->result();
  CHECK(ps.error.empty());
  CHECK(ps.samples.size() == 2000);
  for (std::size_t i = 0; i < ps.samples.size(); ++i) {
    CHECK(ps.samples[i].kind == MessageKind::kPortStats);
  }
  CHECK(ledgers.find(2)->counts().matched == 2000);
  CHECK(sw.counters().stats_requests == 2000);
}

TEST_CASE("connect to nothing fails cleanly") {
  net::Fd l = net::tcp_listen(loopback());
  const uint16_t port = net::local_port(l.get());
  l.reset();
  TenantLedger ledger(0, 1, MessageKind::kPacketOut, 4);
  TenantConfig cfg;
  cfg.endpoint = loopback(port);
  TenantActor actor(cfg, ledger, 0, 1);
  CHECK_THROWS_AS(actor.connect(500ms), net::ConnectFailed);
}

}

TEST_SUITE("dataplane") {

TEST_CASE("injected probes come back as PacketIns") {
  SwitchConfig scfg;
  scfg.listen = loopback();
  scfg.data_bind = loopback();
  scfg.data_peer = loopback(9);
  SwitchEmulator sw(scfg);
  std::thread sw_thread([&] { sw.run(); });

  LedgerSet ledgers;
  ledgers.add(std::make_unique<TenantLedger>(0, 1, MessageKind::kPacketIn, 10000));
  TenantConfig cfg;
  cfg.tenant_id = 1;
  cfg.kind = MessageKind::kPacketIn;
  cfg.endpoint = loopback(sw.control_port());
  ControllerEmulator ctl({cfg}, ledgers, 0, 1);
  ctl.connect_all(2000ms);

  InjectorConfig icfg;
  icfg.tenant_id = 1;
  icfg.rate = 3000;
  icfg.identity = slice_identity(1);
  icfg.target = loopback(sw.data_port());
  ProbeInjector inj(icfg, *ledgers.find(1), 1);

  const RunClock clock(monotonic_ns() + 100 * kNsPerMs);
  ctl.start(clock, 300 * kNsPerMs);
  inj.start(clock);
  inj.join();
  ctl.join();
  sw.request_stop();
  sw_thread.join();

  CHECK(inj.error().empty());
  CHECK(inj.sent() == 3000);
  auto& r = ctl.actors()[0]->result();
  CHECK(r.samples.size() == 3000);
  const auto c = ledgers.find(1)->counts();
  CHECK(c.sent == 3000);
  CHECK(c.matched == 3000);
  CHECK(c.foreign == 0);
  CHECK(sw.counters().packet_in_sent == 3000);
}

TEST_CASE("receiver ignores non-probe datagrams") {
  LedgerSet ledgers;
  ledgers.add(std::make_unique<TenantLedger>(0, 1, MessageKind::kPacketOut, 4));
  DataReceiver rx(net::udp_bind(loopback()), ledgers, 0);
  const std::vector<uint8_t> junk(64, 1);
  rx.on_data_packet(junk, 5);
  const auto tag = ledgers.find(1)->stamp(1);
  rx.on_data_packet(build_probe_frame(probe_endpoints(slice_identity(1)), tag), 9);
  CHECK(rx.counts().non_probe == 1);
  REQUIRE(rx.samples().size() == 1);
  CHECK(rx.samples()[0].latency_ns() == 8);
}

}
