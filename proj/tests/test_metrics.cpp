#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "doctest.h"
#include "perfbench/metrics.hpp"

using namespace perfbench;

namespace {

// Smallest observed value with at least p% of the samples at or below it.
uint64_t brute_percentile(const std::vector<uint64_t>& v, uint64_t p) {
  uint64_t best = UINT64_MAX;
  for (uint64_t x : v) {
    uint64_t at_or_below = 0;
    for (uint64_t y : v) at_or_below += y <= x ? 1 : 0;
    if (at_or_below * 100 >= p * v.size()) best = std::min(best, x);
  }
  return best;
}

std::vector<LatencySample> samples_at(std::initializer_list<uint64_t> send_times) {
  std::vector<LatencySample> out;
  uint64_t seq = 0;
  for (uint64_t t : send_times) out.push_back({0, 1, seq++, MessageKind::kPacketIn, t, t + 10});
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() /
           ("perfbench_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("summarize agrees with a brute-force oracle") {
  std::mt19937_64 rng(21);
  for (int round = 0; round < 400; ++round) {
    const std::size_t n = 1 + rng() % 300;
    std::vector<uint64_t> v(n);
    const uint64_t spread = rng() % 2 ? 10 : 1'000'000;  // many ties, or few
    for (auto& x : v) x = 1000 + rng() % spread;
    const auto s = summarize_latencies(v);
    CHECK(s.count == n);
    CHECK(s.min_ns == *std::min_element(v.begin(), v.end()));
    CHECK(s.max_ns == *std::max_element(v.begin(), v.end()));
    CHECK(s.p25_ns == brute_percentile(v, 25));
    CHECK(s.median_ns == brute_percentile(v, 50));
    CHECK(s.p75_ns == brute_percentile(v, 75));
    CHECK(s.p95_ns == brute_percentile(v, 95));
    CHECK(s.p99_ns == brute_percentile(v, 99));
    long double sum = 0;
    for (auto x : v) sum += x;
    CHECK(s.mean_ns == doctest::Approx(static_cast<double>(sum / n)));
  }
}

TEST_CASE("percentiles at exact multiples of n") {
  std::vector<uint64_t> v(100);
  for (uint64_t i = 0; i < 100; ++i) v[i] = i + 1;
  const auto s = summarize_latencies(v);
  CHECK(s.p25_ns == 25);
  CHECK(s.median_ns == 50);
  CHECK(s.p95_ns == 95);
  CHECK(s.p99_ns == 99);
  CHECK(summarize_latencies({7}).p99_ns == 7);
}

TEST_CASE("summarize rejects empty input") {
  CHECK_THROWS_AS(summarize_latencies({}), std::invalid_argument);
  CHECK_THROWS_AS(summarize(std::span<const LatencySample>{}), std::invalid_argument);
}

TEST_CASE("trim keeps [warmup, duration - cooldown)") {
  const uint64_t s = kNsPerSec;
  const auto all = samples_at({0, 5 * s - 1, 5 * s, 15 * s, 25 * s - 1, 25 * s, 30 * s - 1});
  const auto kept = trim(all, 5, 5, 30);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].send_ts_ns == 5 * s);
  CHECK(kept[1].send_ts_ns == 15 * s);
  CHECK(kept[2].send_ts_ns == 25 * s - 1);
  CHECK(trim_window(5, 5, 30).seconds() == doctest::Approx(20));
}

TEST_CASE("trim boundary cases") {
  CHECK_THROWS_AS(trim_window(5, 5, 10), EmptyWindow);
  CHECK_THROWS_AS(trim_window(10, 0, 10), EmptyWindow);
  CHECK_NOTHROW(trim_window(0, 0, 1));
  CHECK(trim(samples_at({}), 1, 1, 5).empty());
  const auto w = trim_window(0.5, 0.25, 2);
  CHECK(w.begin_ns == 500'000'000);
  CHECK(w.end_ns == 1'750'000'000);
  CHECK(w.contains(500'000'000));
  CHECK_FALSE(w.contains(1'750'000'000));
}

TEST_CASE("jain index") {
  const std::vector<double> two{1, 3};
  CHECK(fairness(two).jain == doctest::Approx(0.8));
  CHECK(fairness(two).max_min_ratio == doctest::Approx(3));
  const std::vector<double> equal(20, 4.2);
  CHECK(fairness(equal).jain == doctest::Approx(1.0));
  const std::vector<double> one{1};
  CHECK_THROWS_AS(fairness(one), std::invalid_argument);
  const std::vector<double> zero{1, 0};
  CHECK_THROWS_AS(fairness(zero), ZeroMean);
}

TEST_CASE("seventeen slow tenants and three fast ones") {
  std::vector<double> means(17, 6.0);
  means.insert(means.end(), 3, 0.5);
  const auto f = fairness(means);
  CHECK(f.max_min_ratio == doctest::Approx(12));
  // (17*6 + 3*0.5)^2 / (20 * (17*36 + 3*0.25))
  CHECK(f.jain == doctest::Approx(103.5 * 103.5 / (20 * 612.75)));
}

TEST_CASE("windowed rate counts whole seconds inside the window") {
  AchievedRate a;
  a.per_second = {10, 100, 100, 100, 10};
  CHECK(windowed_rate(a, trim_window(1, 1, 5)) == doctest::Approx(100));
  CHECK(windowed_rate(a, trim_window(0.5, 0.5, 5)) == doctest::Approx(100));
  CHECK(windowed_rate(a, trim_window(0, 0, 5)) == doctest::Approx(64));
}

TEST_CASE("fill_statistics derives per-tenant stats and fairness") {
  RunReport r;
  r.tenants.push_back(TenantReport{1});
  r.tenants.push_back(TenantReport{2});
  std::vector<LatencySample> s;
  for (uint64_t i = 0; i < 10; ++i) {
    s.push_back({0, 1, i, MessageKind::kPacketIn, i, i + 100});
    s.push_back({0, 2, i, MessageKind::kPacketIn, i, i + 300});
  }
  fill_statistics(r, s);
  CHECK(r.tenants[0].stats.mean_ns == doctest::Approx(100));
  CHECK(r.tenants[1].stats.mean_ns == doctest::Approx(300));
  CHECK(r.aggregate.count == 20);
  CHECK(r.mean_of_tenant_means_ns == doctest::Approx(200));
  REQUIRE(r.fairness);
  CHECK(r.fairness->jain == doctest::Approx(0.8));
  const auto j = r.to_json();
  CHECK(j.at("tenants").size() == 2);
  CHECK(j.at("fairness").at("jain").get<double>() == doctest::Approx(0.8));
}

TEST_CASE("csv round trip") {
  const auto dir = temp_dir("csv");
  std::mt19937_64 rng(4);
  std::vector<LatencySample> v;
  for (uint64_t i = 0; i < 1000; ++i) {
    const uint64_t send = rng() >> 8;
    v.push_back({3, static_cast<uint16_t>(1 + rng() % 20), i,
                 static_cast<MessageKind>(rng() % 5), send, send + rng() % 1'000'000});
  }
  write_samples_csv(dir / "s.csv", v);
  std::ifstream in(dir / "s.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == kCsvHeader);
  CHECK(read_samples_csv(dir / "s.csv") == v);
  std::ofstream(dir / "bad.csv") << "nope\n";
  CHECK_THROWS_AS(read_samples_csv(dir / "bad.csv"), IoError);
  CHECK_THROWS_AS(read_samples_csv(dir / "missing.csv"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("export writes samples, summary and histograms") {
  const auto dir = temp_dir("export");
  RunReport r;
  r.scenario_id = "x";
  r.tenants.push_back(TenantReport{1});
  r.tenants.push_back(TenantReport{2});
  std::vector<LatencySample> s;
  for (uint64_t i = 0; i < 100; ++i) {
    s.push_back({0, 1, i, MessageKind::kPacketOut, 0, 1000 * (i + 1)});
    s.push_back({0, 2, i, MessageKind::kPacketOut, 0, 2000});
  }
  fill_statistics(r, s);
  export_run(dir, r, s, s);
  CHECK(std::filesystem::exists(dir / "samples.csv"));
  CHECK(std::filesystem::exists(dir / "summary.json"));
  std::ifstream h(dir / "hist_tenant_1.dat");
  std::string first;
  std::getline(h, first);
  CHECK(first.rfind("# bin_start_us count", 0) == 0);
  uint64_t total = 0;
  double start = 0;
  uint64_t count = 0;
  while (h >> start >> count) total += count;
  CHECK(total == 100);
  CHECK(std::filesystem::exists(dir / "hist_tenant_2.dat"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("cpu sampler sees a busy thread") {
  std::atomic<bool> spin{true};
  std::thread busy([&] {
    volatile uint64_t x = 0;
    while (spin.load(std::memory_order_relaxed)) x = x + 1;
  });
  CpuSampler sampler(::getpid(), 0.2);
  sampler.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(1100));
  sampler.stop();
  spin = false;
  busy.join();
  const auto s = sampler.samples();
  REQUIRE(s.size() >= 4);
  double sum = 0;
  for (const auto& x : s) sum += x.percent;
  CHECK(sum / static_cast<double>(s.size()) > 40.0);
  CHECK_FALSE(sampler.process_gone());
}

TEST_CASE("cpu of a missing process") {
  CHECK_THROWS_AS(process_cpu_ns(0x3ffffff), ProcessGone);
}

}
