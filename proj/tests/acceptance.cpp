// Acceptance checks. Each criterion prints its measurements and ends with one
// "criterion N: PASS" or "criterion N: FAIL" line. Full-length runs by
// default; PERFBENCH_ACCEPT_QUICK=1 shortens durations and run counts.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "perfbench/metrics.hpp"
#include "perfbench/runner.hpp"

using namespace perfbench;

namespace {

struct Settings {
  bool quick = false;
  uint32_t duration = 30;
  double trim = 5;
  std::string unit_tests;  // path of the unit test binary
};

RunPoint point(const Settings& s, HypervisorMode h, MessageKind k, uint16_t tenants,
               uint32_t rate, bool nodelay, uint32_t runs) {
  RunPoint p;
  p.scenario_id = "acceptance";
  p.hypervisor = h;
  p.msg_type = k;
  p.tenants = tenants;
  p.total_rate = rate;
  p.nodelay = nodelay;
  p.runs = runs;
  p.duration_s = s.duration;
  p.trim_s = s.trim;
  return p;
}

void note(const std::string& line) { std::cout << "  " << line << std::endl; }

bool verdict(int n, bool ok, const std::string& why = {}) {
  std::cout << fmt::format("criterion {}: {}{}", n, ok ? "PASS" : "FAIL",
                           why.empty() ? "" : " (" + why + ")")
            << std::endl;
  return ok;
}

PointResult run(const RunPoint& p) {
  note(fmt::format("running {} x{} ({} s each)", p.label(), p.runs, p.duration_s));
  auto r = run_point(p, RunOptions{});
  for (const auto& f : r.failures) note("run failed: " + f);
  return r;
}

double ms(double ns) { return ns / 1e6; }

struct Quartiles {
  double p25 = 0, median = 0, p75 = 0;
};

// Quartiles over the per-run medians.
Quartiles run_median_quartiles(const PointResult& r) {
  std::vector<uint64_t> medians;
  for (const auto& rep : r.reports) medians.push_back(rep.aggregate.median_ns);
  std::sort(medians.begin(), medians.end());
  if (medians.empty()) return {};
  return {static_cast<double>(nearest_rank(medians, 25)),
          static_cast<double>(nearest_rank(medians, 50)),
          static_cast<double>(nearest_rank(medians, 75))};
}

double mean_of(const PointResult& r, double (*f)(const RunReport&)) {
  if (r.reports.empty()) return 0;
  double s = 0;
  for (const auto& rep : r.reports) s += f(rep);
  return s / static_cast<double>(r.reports.size());
}

double agg_mean(const RunReport& r) { return r.aggregate.mean_ns; }
double tenant_mean(const RunReport& r) { return r.mean_of_tenant_means_ns; }
double cpu(const RunReport& r) { return r.mean_cpu_percent; }

bool complete(const PointResult& r) { return r.failures.empty() && !r.reports.empty(); }

// 1: sustained throughput.
bool throughput(const Settings& s) {
  bool ok = true;
  const std::pair<MessageKind, std::pair<uint16_t, uint32_t>> cases[] = {
      {MessageKind::kPacketIn, {1, 40000}}, {MessageKind::kPacketOut, {20, 60000}}};
  for (const auto& [kind, tr] : cases) {
    auto p = point(s, HypervisorMode::kFv, kind, tr.first, tr.second, false, 1);
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run(p);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!complete(r)) {
      ok = false;
      continue;
    }
    const auto& rep = r.reports[0];
    const double dev = std::abs(rep.achieved_rate - tr.second) / tr.second;
    note(fmt::format("{}: achieved {:.1f}/s, delivered {:.1f}/s over {:.0f} s, wall {:.1f} s",
                     p.label(), rep.achieved_rate, rep.delivered_rate, rep.window.seconds(),
                     wall));
    ok = ok && dev <= 0.01 && wall < s.duration + 10;
  }
  return verdict(1, ok);
}

// 2: hypervisor overhead on PacketIn latency.
bool overhead(const Settings& s) {
  const uint32_t runs = s.quick ? 3 : 10;
  std::map<HypervisorMode, Quartiles> q;
  for (auto h : {HypervisorMode::kNone, HypervisorMode::kFv, HypervisorMode::kOvx}) {
    const auto r = run(point(s, h, MessageKind::kPacketIn, 1, 40000, false, runs));
    if (!complete(r)) return verdict(2, false, "runs failed");
    q[h] = run_median_quartiles(r);
    std::string per_run;
    for (const auto& rep : r.reports) per_run += fmt::format(" {:.3f}", ms(rep.aggregate.median_ns));
    note(fmt::format("{}: per-run medians [ms]{}", to_string(h), per_run));
    note(fmt::format("{}: median of medians {:.3f} ms, IQR [{:.3f}, {:.3f}]; pooled median "
                     "{:.3f} ms, IQR [{:.3f}, {:.3f}]",
                     to_string(h), ms(q[h].median), ms(q[h].p25), ms(q[h].p75),
                     ms(r.pooled.median_ns), ms(r.pooled.p25_ns), ms(r.pooled.p75_ns)));
  }
  auto above = [&](HypervisorMode hi, HypervisorMode lo) {
    return q[hi].median > q[lo].median && q[hi].p25 > q[lo].p75;
  };
  const bool fv_over_none = above(HypervisorMode::kFv, HypervisorMode::kNone);
  const bool ovx_over_fv = above(HypervisorMode::kOvx, HypervisorMode::kFv);
  note(fmt::format("fv > switch-only with separated IQRs: {}", fv_over_none));
  note(fmt::format("ovx > fv with separated IQRs: {}", ovx_over_fv));
  return verdict(2, fv_over_none && ovx_over_fv);
}

// 3: stats overload at the switch, shielded by the ovx cache.
bool stats_overload(const Settings& s) {
  const uint32_t runs = s.quick ? 1 : 3;
  std::map<std::pair<HypervisorMode, uint32_t>, double> mean;
  uint64_t max_arrivals = 0;
  double poll_rate = 0;
  for (auto h : {HypervisorMode::kFv, HypervisorMode::kOvx}) {
    for (uint32_t rate : {5000u, 8000u}) {
      const auto p = point(s, h, MessageKind::kPortStats, 1, rate, false, runs);
      poll_rate = p.poll_rate;
      const auto r = run(p);
      if (!complete(r)) return verdict(3, false, "runs failed");
      mean[{h, rate}] = mean_of(r, agg_mean);
      note(fmt::format("{}: mean {:.3f} ms", p.label(), ms(mean[{h, rate}])));
      if (h == HypervisorMode::kOvx) {
        for (const auto& rep : r.reports) {
          const auto& per_sec = rep.components.at("switch").at("stats_arrivals_per_second");
          for (std::size_t i = 0; i < per_sec.size(); ++i) {
            max_arrivals = std::max(max_arrivals, per_sec[i].at(1).get<uint64_t>());
          }
        }
      }
    }
  }
  const double fv_ratio = mean[{HypervisorMode::kFv, 8000}] / mean[{HypervisorMode::kFv, 5000}];
  const double ovx_ratio =
      mean[{HypervisorMode::kOvx, 8000}] / mean[{HypervisorMode::kOvx, 5000}];
  note(fmt::format("fv 8k/5k mean ratio {:.1f} (need >= 10)", fv_ratio));
  note(fmt::format("ovx 8k/5k mean ratio {:.2f} (need <= 2)", ovx_ratio));
  note(fmt::format("ovx: at most {} stats requests reached the switch in any second "
                   "(poll rate {})",
                   max_arrivals, poll_rate));
  return verdict(3, fv_ratio >= 10 && ovx_ratio <= 2 && max_arrivals <= poll_rate + 1);
}

// 4: Nagle's algorithm and tenant count.
bool nagle(const Settings& s) {
  std::vector<uint16_t> counts;
  if (s.quick) {
    counts = {2, 10, 20};
  } else {
    for (uint16_t t = 2; t <= 20; t += 2) counts.push_back(t);
  }
  std::map<std::pair<bool, uint16_t>, double> mean;
  for (bool nd : {false, true}) {
    for (uint16_t t : counts) {
      const auto p = point(s, HypervisorMode::kFv, MessageKind::kPacketOut, t, 60000, nd, 1);
      const auto r = run(p);
      if (!complete(r)) return verdict(4, false, "runs failed");
      mean[{nd, t}] = mean_of(r, tenant_mean);
      note(fmt::format("{}: per-tenant mean {:.3f} ms", p.label(), ms(mean[{nd, t}])));
    }
  }
  const double agg_growth = mean[{false, 20}] / mean[{false, 2}];
  double lo = 1e300, hi = 0;
  for (uint16_t t : counts) {
    lo = std::min(lo, mean[{true, t}]);
    hi = std::max(hi, mean[{true, t}]);
  }
  const double nd_spread = (hi - lo) / lo;
  note(fmt::format("nodelay=0: 20-tenant / 2-tenant mean {:.2f} (need >= 1.5)", agg_growth));
  note(fmt::format("nodelay=1: spread across tenant counts {:.0f}% (need <= 25%)",
                   nd_spread * 100));
  return verdict(4, agg_growth >= 1.5 && nd_spread <= 0.25);
}

// 5: proxy CPU with and without Nagle at 20 tenants.
bool cpu_trend(const Settings& s) {
  const uint32_t runs = s.quick ? 1 : 3;
  std::map<bool, double> c;
  for (bool nd : {false, true}) {
    const auto p = point(s, HypervisorMode::kFv, MessageKind::kPacketOut, 20, 60000, nd, runs);
    const auto r = run(p);
    if (!complete(r)) return verdict(5, false, "runs failed");
    c[nd] = mean_of(r, cpu);
    std::string per_run;
    for (const auto& rep : r.reports) per_run += fmt::format(" {:.1f}", rep.mean_cpu_percent);
    note(fmt::format("{}: proxy CPU [%]{}", p.label(), per_run));
  }
  note(fmt::format("proxy CPU nodelay=1 {:.1f}% vs nodelay=0 {:.1f}%", c[true], c[false]));
  return verdict(5, c[true] > c[false]);
}

// 6: fairness reporting.
bool fairness_reporting(const Settings& s) {
  bool ok = true;
  std::vector<double> fixture(17, 6.0);
  fixture.insert(fixture.end(), 3, 0.5);
  const auto f = fairness(fixture);
  note(fmt::format("fixture 17 x 6 ms + 3 x 0.5 ms: ratio {:.3f}, Jain {:.4f} (expected 12 and "
                   "0.773 +- 0.001)",
                   f.max_min_ratio, f.jain));
  const bool ratio_ok = std::abs(f.max_min_ratio - 12) < 1e-9;
  const bool jain_ok = std::abs(f.jain - 0.773) <= 0.001;
  ok = ratio_ok && jain_ok;

  const auto dir = std::filesystem::temp_directory_path() /
                   ("perfbench_accept_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  RunOptions opts;
  opts.out_dir = dir;
  auto p = point(s, HypervisorMode::kFv, MessageKind::kPacketIn, 4, 40000, false, 1);
  p.duration_s = std::min<uint32_t>(s.duration, 10);
  p.trim_s = 2;
  note("running " + p.label());
  const auto r = run_point(p, opts);
  bool emitted = complete(r);
  if (emitted) {
    const auto& rep = r.reports[0];
    emitted = rep.fairness.has_value() && rep.tenants.size() == 4;
    const auto run_dir = dir / p.scenario_id / p.label() / "run_00";
    std::ifstream summary(run_dir / "summary.json");
    const auto j = nlohmann::json::parse(summary);
    emitted = emitted && j.at("fairness").contains("jain") && j.at("tenants").size() == 4;
    for (uint16_t t = 1; t <= 4; ++t) {
      emitted = emitted &&
                std::filesystem::exists(run_dir / fmt::format("hist_tenant_{}.dat", t)) &&
                j.at("tenants")[t - 1].contains("stats");
    }
    if (rep.fairness) {
      note(fmt::format("4-tenant run: Jain {:.4f}, max/min {:.3f}", rep.fairness->jain,
                       rep.fairness->max_min_ratio));
    }
  }
  note(fmt::format("per-tenant statistics, histograms and Jain index emitted: {}", emitted));
  std::filesystem::remove_all(dir);
  std::string why;
  if (!jain_ok) why = fmt::format("fixture Jain {:.4f}, not 0.773", f.jain);
  return verdict(6, ok && emitted, why);
}

// 7: property suites, run from the unit test binary.
bool properties(const Settings& s) {
  if (s.unit_tests.empty()) return verdict(7, false, "unit test binary not given");
  const std::string suites = "of_codec,scheduler,probe,hypervisor,proxy,metrics,switch";
  note("running " + s.unit_tests + " --test-suite=" + suites);
  const pid_t pid = ::fork();
  if (pid == 0) {
    const std::string arg = "--test-suite=" + suites;
    ::execl(s.unit_tests.c_str(), s.unit_tests.c_str(), arg.c_str(), "--minimal",
            static_cast<char*>(nullptr));
    ::_exit(127);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  return verdict(7, WIFEXITED(status) && WEXITSTATUS(status) == 0);
}

// 8: determinism of plans, identities and CSV schema.
bool determinism(const Settings& s) {
  bool ok = true;
  std::size_t points = 0;
  for (const auto& preset : presets()) {
    for (const auto& p : expand(preset.scenario)) {
      ok = ok && describe_point(p) == describe_point(p);
      ++points;
    }
  }
  note(fmt::format("{} preset points describe identically twice", points));

  // Two real runs with the same seed: same tenants, keys and schema.
  auto p = point(s, HypervisorMode::kOvx, MessageKind::kPacketOut, 3, 3000, false, 1);
  p.duration_s = 3;
  p.trim_s = 0.5;
  p.seed = 99;
  std::vector<std::set<std::tuple<uint16_t, uint64_t, int>>> keys;
  std::vector<std::string> headers;
  for (int i = 0; i < 2; ++i) {
    const auto dir = std::filesystem::temp_directory_path() /
                     fmt::format("perfbench_det_{}_{}", ::getpid(), i);
    RunOptions opts;
    opts.out_dir = dir;
    const auto o = run_once(p, 0, opts);
    std::set<std::tuple<uint16_t, uint64_t, int>> k;
    for (const auto& smp : o.samples) k.insert({smp.tenant_id, smp.seq, static_cast<int>(smp.kind)});
    keys.push_back(std::move(k));
    std::ifstream csv(dir / p.scenario_id / p.label() / "run_00" / "samples.csv");
    std::string h;
    std::getline(csv, h);
    headers.push_back(h);
    std::filesystem::remove_all(dir);
  }
  note(fmt::format("two seeded runs: {} and {} sample keys, CSV headers '{}' / '{}'",
                   keys[0].size(), keys[1].size(), headers[0], headers[1]));
  ok = ok && keys[0] == keys[1] && headers[0] == headers[1] && headers[0] == kCsvHeader;
  const auto m1 = make_virtual_mappings(20, p.seed);
  ok = ok && m1 == make_virtual_mappings(20, p.seed);
  return verdict(8, ok);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perfbench acceptance checks"};
  std::vector<int> criteria;
  Settings s;
  app.add_option("--criterion", criteria, "Criteria to check (default: all)")
      ->check(CLI::Range(1, 8));
  app.add_option("--unit-tests", s.unit_tests, "Path of the unit test binary");
  CLI11_PARSE(app, argc, argv);

  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("PERFBENCH_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
  if (const char* q = std::getenv("PERFBENCH_ACCEPT_QUICK"); q != nullptr && q[0] == '1') {
    s.quick = true;
    s.duration = 8;
    s.trim = 2;
  }
  if (criteria.empty()) criteria = {1, 2, 3, 4, 5, 6, 7, 8};

  bool all = true;
  for (int c : criteria) {
    bool ok = false;
    try {
      switch (c) {
        case 1: ok = throughput(s); break;
        case 2: ok = overhead(s); break;
        case 3: ok = stats_overload(s); break;
        case 4: ok = nagle(s); break;
        case 5: ok = cpu_trend(s); break;
        case 6: ok = fairness_reporting(s); break;
        case 7: ok = properties(s); break;
        case 8: ok = determinism(s); break;
      }
    } catch (const std::exception& e) {
      ok = verdict(c, false, std::string("error: ") + e.what());
    }
    all = all && ok;
  }
  return all ? 0 : 1;
}
