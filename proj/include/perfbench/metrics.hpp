#pragma once

// Steady-state trimming, latency statistics, fairness, process CPU sampling
// and report export.

#include <sys/types.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "perfbench/probe.hpp"
#include "perfbench/scheduler.hpp"

namespace perfbench {

class EmptyWindow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ZeroMean : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ProcessGone : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrimWindow {
  uint64_t begin_ns = 0;
  uint64_t end_ns = 0;

  bool contains(uint64_t t) const { return t >= begin_ns && t < end_ns; }
  double seconds() const { return static_cast<double>(end_ns - begin_ns) / 1e9; }
};

// [warmup, duration - cooldown). Throws EmptyWindow unless
// warmup + cooldown < duration.
TrimWindow trim_window(double warmup_s, double cooldown_s, double duration_s);

// Samples whose send time lies in the window, in their original order.
std::vector<LatencySample> trim(std::span<const LatencySample> samples, double warmup_s,
                                double cooldown_s, double duration_s);

struct LatencyStats {
  uint64_t count = 0;
  double mean_ns = 0;
  uint64_t min_ns = 0;
  uint64_t p25_ns = 0;
  uint64_t median_ns = 0;
  uint64_t p75_ns = 0;
  uint64_t p95_ns = 0;
  uint64_t p99_ns = 0;
  uint64_t max_ns = 0;

  bool operator==(const LatencyStats&) const = default;
};

// Nearest-rank percentile of an ascending sequence: element ceil(p/100 * n).
uint64_t nearest_rank(std::span<const uint64_t> sorted, double p);

LatencyStats summarize_latencies(std::vector<uint64_t> latencies_ns);
// Throws std::invalid_argument on an empty input.
LatencyStats summarize(std::span<const LatencySample> samples);

struct Fairness {
  double jain = 1.0;
  double max_min_ratio = 1.0;
};

// Jain index (sum x)^2 / (n * sum x^2) and max/min over per-tenant means.
// Needs at least two values; throws ZeroMean if any mean is zero.
Fairness fairness(std::span<const double> per_tenant_means);

struct CpuSample {
  double t_s = 0;  // seconds since sampling started
  double percent = 0;
};

// Total user+system CPU time of a process, all threads included.
uint64_t process_cpu_ns(pid_t pid);

// Samples Δcpu/Δwall of a process on a background thread.
class CpuSampler {
 public:
  CpuSampler(pid_t pid, double interval_s = 1.0);
  ~CpuSampler();

  void start();
  void stop();
  std::vector<CpuSample> samples() const;
  bool process_gone() const { return gone_.load(); }

 private:
  pid_t pid_;
  double interval_s_;
  std::vector<CpuSample> samples_;
  mutable std::mutex mu_;
  std::atomic<bool> gone_{false};
  std::jthread thread_;
};

struct TenantReport {
  uint16_t tenant_id = 0;
  bool nodelay = false;
  LatencyStats stats;
  double achieved_rate = 0;   // emissions per second inside the window
  double delivered_rate = 0;  // samples per second inside the window
  LedgerCounts counts;
  uint64_t loss = 0;          // expired at end of run
  std::string error;
};

struct RunReport {
  std::string scenario_id;
  uint32_t run_id = 0;
  nlohmann::json scenario;  // fully resolved, for provenance
  TrimWindow window;
  std::vector<TenantReport> tenants;
  LatencyStats aggregate;
  double mean_of_tenant_means_ns = 0;
  double achieved_rate = 0;
  double delivered_rate = 0;
  std::optional<Fairness> fairness;
  std::vector<CpuSample> cpu;
  double mean_cpu_percent = 0;
  nlohmann::json components;  // switch and proxy counters
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
};

// Per-second emission counts averaged over the whole seconds inside the window.
double windowed_rate(const AchievedRate& a, const TrimWindow& w);

// Fills the statistics of `report` from trimmed samples. Tenants listed in
// report.tenants keep their counts; per-tenant stats and fairness are derived
// here.
void fill_statistics(RunReport& report, std::span<const LatencySample> trimmed);

inline constexpr std::string_view kCsvHeader =
    "run_id,tenant_id,seq,msg_type,send_ts_ns,recv_ts_ns,latency_ns";

void write_samples_csv(const std::filesystem::path& path,
                       std::span<const LatencySample> samples);
std::vector<LatencySample> read_samples_csv(const std::filesystem::path& path);

// One "bin_start_us count" file per tenant, nonempty bins only. Bin width 0
// picks max/200 rounded up to a whole microsecond.
void write_histograms(const std::filesystem::path& dir, std::span<const LatencySample> samples,
                      uint64_t bin_width_ns = 0);

void write_summary(const std::filesystem::path& path, const RunReport& report);

// Raw samples CSV, summary and histograms of the trimmed samples under `dir`.
void export_run(const std::filesystem::path& dir, const RunReport& report,
                std::span<const LatencySample> samples, std::span<const LatencySample> trimmed);

nlohmann::json stats_to_json(const LatencyStats& s);

}  // namespace perfbench
