#include "perfbench/metrics.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "perfbench/clock.hpp"

namespace perfbench {

TrimWindow trim_window(double warmup_s, double cooldown_s, double duration_s) {
  if (warmup_s < 0 || cooldown_s < 0 || !(warmup_s + cooldown_s < duration_s)) {
    throw EmptyWindow(fmt::format("trim {}+{} s leaves nothing of a {} s run", warmup_s,
                                  cooldown_s, duration_s));
  }
  return TrimWindow{static_cast<uint64_t>(std::llround(warmup_s * 1e9)),
                    static_cast<uint64_t>(std::llround((duration_s - cooldown_s) * 1e9))};
}

std::vector<LatencySample> trim(std::span<const LatencySample> samples, double warmup_s,
                                double cooldown_s, double duration_s) {
  const TrimWindow w = trim_window(warmup_s, cooldown_s, duration_s);
  std::vector<LatencySample> kept;
  for (const auto& s : samples) {
    if (w.contains(s.send_ts_ns)) kept.push_back(s);
  }
  return kept;
}

uint64_t nearest_rank(std::span<const uint64_t> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("percentile of an empty set");
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

LatencyStats summarize_latencies(std::vector<uint64_t> v) {
  if (v.empty()) throw std::invalid_argument("summarize needs at least one sample");
  std::sort(v.begin(), v.end());
  LatencyStats s;
  s.count = v.size();
  long double sum = 0;
  for (uint64_t x : v) sum += static_cast<long double>(x);
  s.mean_ns = static_cast<double>(sum / static_cast<long double>(v.size()));
  s.min_ns = v.front();
  s.p25_ns = nearest_rank(v, 25);
  s.median_ns = nearest_rank(v, 50);
  s.p75_ns = nearest_rank(v, 75);
  s.p95_ns = nearest_rank(v, 95);
  s.p99_ns = nearest_rank(v, 99);
  s.max_ns = v.back();
  return s;
}

LatencyStats summarize(std::span<const LatencySample> samples) {
  std::vector<uint64_t> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(s.latency_ns());
  return summarize_latencies(std::move(v));
}

Fairness fairness(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("fairness needs at least two tenants");
  double sum = 0;
  double sq = 0;
  for (double v : x) {
    if (v == 0) throw ZeroMean("a tenant has a zero mean");
    sum += v;
    sq += v * v;
  }
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return Fairness{sum * sum / (static_cast<double>(x.size()) * sq), *hi / *lo};
}

uint64_t process_cpu_ns(pid_t pid) {
  std::ifstream in("/proc/" + std::to_string(pid) + "/stat");
  std::string line;
  if (!in || !std::getline(in, line)) {
    throw ProcessGone("process " + std::to_string(pid) + " is gone");
  }
  // The command name may contain spaces; fields resume after the last ')'.
  const auto close = line.rfind(')');
  if (close == std::string::npos) throw ProcessGone("unreadable stat for " + std::to_string(pid));
  std::istringstream fields(line.substr(close + 2));
  std::string f;
  uint64_t utime = 0;
  uint64_t stime = 0;
  for (int i = 3; i <= 15 && fields >> f; ++i) {
    if (i == 14) utime = std::stoull(f);
    if (i == 15) stime = std::stoull(f);
  }
  static const long ticks = ::sysconf(_SC_CLK_TCK);
  return (utime + stime) * (kNsPerSec / static_cast<uint64_t>(ticks));
}

CpuSampler::CpuSampler(pid_t pid, double interval_s) : pid_(pid), interval_s_(interval_s) {}

CpuSampler::~CpuSampler() { stop(); }

void CpuSampler::start() {
  thread_ = std::jthread([this](std::stop_token st) {
    std::mutex m;
    std::condition_variable_any cv;
    const uint64_t start = monotonic_ns();
    uint64_t prev_wall = start;
    uint64_t prev_cpu = 0;
    try {
      prev_cpu = process_cpu_ns(pid_);
    } catch (const ProcessGone&) {
      gone_.store(true);
      return;
    }
    const auto period = std::chrono::nanoseconds(static_cast<int64_t>(interval_s_ * 1e9));
    while (!st.stop_requested()) {
      {
        std::unique_lock lock(m);
        cv.wait_for(lock, st, period, [] { return false; });
      }
      const uint64_t wall = monotonic_ns();
      uint64_t cpu = 0;
      try {
        cpu = process_cpu_ns(pid_);
      } catch (const ProcessGone&) {
        gone_.store(true);
        return;
      }
      // A partial interval at stop time is too coarse for tick-based counters.
      if (st.stop_requested() && wall - prev_wall < static_cast<uint64_t>(period.count()) / 2) return;
      const double pct = 100.0 * static_cast<double>(cpu - prev_cpu) /
                         static_cast<double>(wall - prev_wall);
      {
        std::lock_guard lock(mu_);
        samples_.push_back(CpuSample{static_cast<double>(wall - start) / 1e9, pct});
      }
      prev_wall = wall;
      prev_cpu = cpu;
    }
  });
}

void CpuSampler::stop() {
  if (thread_.joinable()) {
    thread_.request_stop();
    thread_.join();
  }
}

std::vector<CpuSample> CpuSampler::samples() const {
  std::lock_guard lock(mu_);
  return samples_;
}

double windowed_rate(const AchievedRate& a, const TrimWindow& w) {
  const uint64_t first = (w.begin_ns + kNsPerSec - 1) / kNsPerSec;
  const uint64_t last = w.end_ns / kNsPerSec;  // exclusive
  if (last <= first) return 0;
  uint64_t n = 0;
  for (uint64_t s = first; s < last && s < a.per_second.size(); ++s) n += a.per_second[s];
  return static_cast<double>(n) / static_cast<double>(last - first);
}

nlohmann::json stats_to_json(const LatencyStats& s) {
  return nlohmann::json{{"count", s.count},         {"mean_ns", s.mean_ns},
                        {"min_ns", s.min_ns},       {"p25_ns", s.p25_ns},
                        {"median_ns", s.median_ns}, {"p75_ns", s.p75_ns},
                        {"p95_ns", s.p95_ns},       {"p99_ns", s.p99_ns},
                        {"max_ns", s.max_ns}};
}

void fill_statistics(RunReport& report, std::span<const LatencySample> trimmed) {
  std::map<uint16_t, std::vector<uint64_t>> by_tenant;
  for (const auto& s : trimmed) by_tenant[s.tenant_id].push_back(s.latency_ns());

  std::vector<double> means;
  for (auto& t : report.tenants) {
    auto it = by_tenant.find(t.tenant_id);
    if (it == by_tenant.end() || it->second.empty()) {
      t.stats = LatencyStats{};
      t.delivered_rate = 0;
      continue;
    }
    t.delivered_rate = static_cast<double>(it->second.size()) / report.window.seconds();
    t.stats = summarize_latencies(std::move(it->second));
    means.push_back(t.stats.mean_ns);
  }
  if (!trimmed.empty()) report.aggregate = summarize(trimmed);
  report.delivered_rate = static_cast<double>(trimmed.size()) / report.window.seconds();
  report.achieved_rate = 0;
  for (const auto& t : report.tenants) report.achieved_rate += t.achieved_rate;
  if (!means.empty()) {
    report.mean_of_tenant_means_ns =
        std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
  }
  report.fairness.reset();
  if (report.tenants.size() >= 2 && means.size() == report.tenants.size()) {
    try {
      report.fairness = fairness(means);
    } catch (const ZeroMean&) {
    }
  }
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["scenario_id"] = scenario_id;
  j["run_id"] = run_id;
  j["scenario"] = scenario;
  j["window_ns"] = {window.begin_ns, window.end_ns};
  j["aggregate"] = stats_to_json(aggregate);
  j["mean_of_tenant_means_ns"] = mean_of_tenant_means_ns;
  j["achieved_rate"] = achieved_rate;
  j["delivered_rate"] = delivered_rate;
  if (fairness) {
    j["fairness"] = {{"jain", fairness->jain}, {"max_min_ratio", fairness->max_min_ratio}};
  } else {
    j["fairness"] = nullptr;
  }
  auto& ts = j["tenants"] = nlohmann::json::array();
  for (const auto& t : tenants) {
    ts.push_back({{"tenant_id", t.tenant_id},
                  {"nodelay", t.nodelay},
                  {"stats", stats_to_json(t.stats)},
                  {"achieved_rate", t.achieved_rate},
                  {"delivered_rate", t.delivered_rate},
                  {"sent", t.counts.sent},
                  {"matched", t.counts.matched},
                  {"expired", t.counts.expired},
                  {"outstanding", t.counts.outstanding},
                  {"unmatched", t.counts.unmatched},
                  {"duplicate", t.counts.duplicate},
                  {"late", t.counts.late},
                  {"malformed", t.counts.malformed},
                  {"foreign", t.counts.foreign},
                  {"loss", t.loss},
                  {"error", t.error}});
  }
  auto& c = j["cpu"] = nlohmann::json::array();
  for (const auto& s : cpu) c.push_back({s.t_s, s.percent});
  j["mean_cpu_percent"] = mean_cpu_percent;
  j["components"] = components;
  j["notes"] = notes;
  return j;
}

void write_samples_csv(const std::filesystem::path& path,
                       std::span<const LatencySample> samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kCsvHeader << '\n';
  std::string line;
  for (const auto& s : samples) {
    line.clear();
    fmt::format_to(std::back_inserter(line), "{},{},{},{},{},{},{}\n", s.run_id, s.tenant_id,
                   s.seq, to_string(s.kind), s.send_ts_ns, s.recv_ts_ns, s.latency_ns());
    out << line;
  }
  if (!out) throw IoError("write to " + path.string() + " failed");
}

namespace {

template <typename T>
T parse_field(std::string_view f, const std::string& where) {
  T v{};
  const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size()) {
    throw IoError("bad number '" + std::string(f) + "' in " + where);
  }
  return v;
}

}  // namespace

std::vector<LatencySample> read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw IoError(path.string() + " does not start with the sample header");
  }
  std::vector<LatencySample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest = line;
    while (true) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 7) throw IoError("expected 7 fields at " + where);
    LatencySample s;
    s.run_id = parse_field<uint32_t>(f[0], where);
    s.tenant_id = parse_field<uint16_t>(f[1], where);
    s.seq = parse_field<uint64_t>(f[2], where);
    const auto kind = parse_message_kind(f[3]);
    if (!kind) throw IoError("unknown message type at " + where);
    s.kind = *kind;
    s.send_ts_ns = parse_field<uint64_t>(f[4], where);
    s.recv_ts_ns = parse_field<uint64_t>(f[5], where);
    if (parse_field<uint64_t>(f[6], where) != s.latency_ns()) {
      throw IoError("latency column disagrees with timestamps at " + where);
    }
    out.push_back(s);
  }
  return out;
}

void write_histograms(const std::filesystem::path& dir, std::span<const LatencySample> samples,
                      uint64_t bin_width_ns) {
  std::map<uint16_t, std::vector<uint64_t>> by_tenant;
  uint64_t max_latency = 0;
  for (const auto& s : samples) {
    by_tenant[s.tenant_id].push_back(s.latency_ns());
    max_latency = std::max(max_latency, s.latency_ns());
  }
  if (bin_width_ns == 0) {
    const uint64_t us = std::max<uint64_t>(1, (max_latency / 200 + 999) / 1000);
    bin_width_ns = us * 1000;
  }
  for (const auto& [tenant, lat] : by_tenant) {
    std::map<uint64_t, uint64_t> bins;
    for (uint64_t l : lat) ++bins[l / bin_width_ns];
    const auto path = dir / fmt::format("hist_tenant_{}.dat", tenant);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "# bin_start_us count\n";
    for (const auto& [bin, n] : bins) {
      out << fmt::format("{:.3f} {}\n", static_cast<double>(bin * bin_width_ns) / 1000.0, n);
    }
  }
}

void write_summary(const std::filesystem::path& path, const RunReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << report.to_json().dump(2) << '\n';
  if (!out) throw IoError("write to " + path.string() + " failed");
}

void export_run(const std::filesystem::path& dir, const RunReport& report,
                std::span<const LatencySample> samples, std::span<const LatencySample> trimmed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_samples_csv(dir / "samples.csv", samples);
  write_summary(dir / "summary.json", report);
  write_histograms(dir, trimmed);
}

}  // namespace perfbench
