#pragma once

#include <time.h>

#include <cstdint>

namespace perfbench {

inline constexpr uint64_t kNsPerMs = 1'000'000;
inline constexpr uint64_t kNsPerSec = 1'000'000'000;

// CLOCK_MONOTONIC in nanoseconds. Shared by every process on the host, which
// is what makes one-way latencies between the control and data plane valid.
inline uint64_t monotonic_ns() {
  timespec ts{};
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<uint64_t>(ts.tv_sec) * kNsPerSec + static_cast<uint64_t>(ts.tv_nsec);
}

inline timespec to_timespec(uint64_t ns) {
  return timespec{static_cast<time_t>(ns / kNsPerSec), static_cast<long>(ns % kNsPerSec)};
}

inline void sleep_until_ns(uint64_t deadline) {
  const timespec ts = to_timespec(deadline);
  while (clock_nanosleep(CLOCK_MONOTONIC, TIMER_ABSTIME, &ts, nullptr) != 0) {
  }
}

// Timestamps relative to a run's epoch (absolute CLOCK_MONOTONIC origin).
class RunClock {
 public:
  RunClock() = default;
  explicit RunClock(uint64_t epoch_ns) : epoch_(epoch_ns) {}

  uint64_t epoch() const { return epoch_; }
  uint64_t now() const {
    const uint64_t t = monotonic_ns();
    return t > epoch_ ? t - epoch_ : 0;
  }
  uint64_t absolute(uint64_t relative_ns) const { return epoch_ + relative_ns; }

 private:
  uint64_t epoch_ = 0;
};

}  // namespace perfbench
