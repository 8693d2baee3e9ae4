#pragma once

// Run orchestration: the switch and the hypervisor run as forked child
// processes; the controller and data-plane emulators run as threads of the
// calling process so both share one monotonic clock.

#include <chrono>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "perfbench/metrics.hpp"
#include "perfbench/scenario.hpp"

namespace perfbench {

class ComponentLaunchFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: nothing is written
  std::chrono::milliseconds connect_timeout{5000};
  uint64_t start_delay_ns = 300'000'000;  // between connect and the run epoch
};

struct RunOutcome {
  RunReport report;
  std::vector<LatencySample> samples;  // all of them, sorted by (tenant, seq)
  std::vector<LatencySample> trimmed;
  nlohmann::json switch_counters;
  nlohmann::json proxy_counters;
};

// Everything about a point that is decided before any packet is sent:
// per-tenant rates, identities, address mappings and a digest of each
// emission plan. Identical for identical points.
nlohmann::json describe_point(const RunPoint& p);

// One run. Throws ComponentLaunchFailed if a component cannot be started or
// reached; other errors propagate.
RunOutcome run_once(const RunPoint& p, uint32_t run_id, const RunOptions& opts);

struct PointResult {
  RunPoint point;
  std::vector<RunReport> reports;
  std::vector<std::string> failures;  // one entry per failed run
  LatencyStats pooled;                // all trimmed samples of all runs
  bool has_pooled = false;

  nlohmann::json to_json() const;
};

// All runs of one point; a failed run is recorded and the rest proceed.
PointResult run_point(const RunPoint& p, const RunOptions& opts);
std::vector<PointResult> run_scenario(const Scenario& s, const RunOptions& opts);
std::vector<PointResult> sweep(const Scenario& s, SweepAxis axis, const RunOptions& opts);

// Entry points for running a component in its own process.
struct SwitchConfig;
struct ProxyConfig;
int run_switch_process(SwitchConfig cfg);
int run_proxy_process(ProxyConfig cfg, uint16_t tenants, const std::string& listen_host,
                      uint16_t listen_base_port);

}  // namespace perfbench
