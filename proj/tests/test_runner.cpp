#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "perfbench/runner.hpp"

using namespace perfbench;

namespace {

RunPoint short_point(HypervisorMode h, MessageKind k, uint16_t tenants, uint32_t rate) {
  RunPoint p;
  p.scenario_id = "unit";
  p.hypervisor = h;
  p.msg_type = k;
  p.tenants = tenants;
  p.total_rate = rate;
  p.duration_s = 3;
  p.trim_s = 0.5;
  p.runs = 1;
  p.drain_ms = 300;
  p.cpu_interval_s = 0.5;
  return p;
}

void check_clean(const RunOutcome& o, const RunPoint& p) {
  const auto& r = o.report;
  CHECK(r.tenants.size() == p.tenants);
  CHECK(r.achieved_rate == doctest::Approx(p.total_rate));
  for (const auto& t : r.tenants) {
    CHECK(t.error.empty());
    CHECK(t.loss == 0);
    CHECK(t.counts.matched == t.counts.sent);
  }
  CHECK(o.samples.size() == uint64_t{p.total_rate} * p.duration_s);
  CHECK(r.aggregate.count == o.trimmed.size());
  CHECK(r.aggregate.median_ns > 0);
}

}  // namespace

TEST_SUITE("runner") {

TEST_CASE("plans are identical for identical points") {
  auto p = short_point(HypervisorMode::kOvx, MessageKind::kPacketOut, 20, 60000);
  p.duration_s = 30;
  p.seed = 5;
  const auto a = describe_point(p);
  CHECK(a == describe_point(p));
  CHECK(a.at("tenants").size() == 20);
  CHECK(a.at("csv_header") == std::string(kCsvHeader));
  auto q = p;
  q.seed = 6;
  CHECK(describe_point(q).at("tenants") != a.at("tenants"));
  q = p;
  q.total_rate = 60001;
  CHECK(describe_point(q).at("tenants")[0].at("plan_digest") !=
        a.at("tenants")[0].at("plan_digest"));
}

TEST_CASE("switch-only PACKET_IN with two tenants") {
  const auto p = short_point(HypervisorMode::kNone, MessageKind::kPacketIn, 2, 4000);
  const auto o = run_once(p, 0, {});
  check_clean(o, p);
  REQUIRE(o.report.fairness);
  CHECK(o.report.fairness->jain > 0);
  // each controller also sees the other tenant's probes
  CHECK(o.report.tenants[0].counts.foreign == 6000);
  CHECK(o.proxy_counters.is_null());
}

TEST_CASE("fv PACKET_OUT") {
  const auto p = short_point(HypervisorMode::kFv, MessageKind::kPacketOut, 3, 6000);
  const auto o = run_once(p, 1, {});
  check_clean(o, p);
  CHECK(o.proxy_counters.at("down_forwarded").get<uint64_t>() >= 18000);
  CHECK(o.report.run_id == 1);
}

TEST_CASE("ovx PACKET_IN") {
  const auto p = short_point(HypervisorMode::kOvx, MessageKind::kPacketIn, 2, 4000);
  const auto o = run_once(p, 0, {});
  check_clean(o, p);
  CHECK(o.proxy_counters.at("up_forwarded").get<uint64_t>() == 12000);
  CHECK(o.report.tenants[0].counts.foreign == 0);
}

TEST_CASE("ovx PORT_STATS served from cache, switch polled at the poll rate") {
  auto p = short_point(HypervisorMode::kOvx, MessageKind::kPortStats, 1, 3000);
  p.poll_rate = 2;
  const auto o = run_once(p, 0, {});
  check_clean(o, p);
  CHECK(o.proxy_counters.at("stats_from_cache").get<uint64_t>() == 9000);
  uint64_t max_per_sec = 0;
  for (const auto& e : o.switch_counters.at("stats_arrivals_per_second")) {
    max_per_sec = std::max(max_per_sec, e.at(1).get<uint64_t>());
  }
  CHECK(max_per_sec <= 3);
}

TEST_CASE("outputs land under out_dir") {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("perfbench_run_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  RunOptions opts;
  opts.out_dir = dir;
  auto p = short_point(HypervisorMode::kFv, MessageKind::kEchoRequest, 1, 1000);
  const auto result = run_point(p, opts);
  CHECK(result.failures.empty());
  CHECK(result.reports.size() == 1);
  const auto run_dir = dir / "unit" / p.label() / "run_00";
  CHECK(std::filesystem::exists(run_dir / "samples.csv"));
  CHECK(std::filesystem::exists(run_dir / "summary.json"));
  CHECK(std::filesystem::exists(dir / "unit" / p.label() / "point.json"));
  const auto back = read_samples_csv(run_dir / "samples.csv");
  CHECK(back.size() == 3000);
  std::filesystem::remove_all(dir);
}

}
