#pragma once

// Constant-rate emission at millisecond granularity.

#include <cstdint>
#include <functional>
#include <stop_token>
#include <vector>

#include "perfbench/clock.hpp"

namespace perfbench {

// Per-millisecond emission counts for a whole run. Bucket i holds
// floor((i+1)*rate/1000) - floor(i*rate/1000), so every second sums to the
// rate and buckets within a second differ by at most one.
struct RatePlan {
  uint32_t total_rate = 0;  // messages per second
  uint32_t duration_s = 0;
  std::vector<uint32_t> buckets;

  uint64_t total() const { return uint64_t{total_rate} * duration_s; }
  bool operator==(const RatePlan&) const = default;
};

// Throws std::invalid_argument if rate or duration is zero.
RatePlan plan(uint32_t rate, uint32_t duration_s);

struct AchievedRate {
  uint64_t emitted = 0;
  // Emissions counted by the second in which they actually happened.
  std::vector<uint64_t> per_second;
  uint64_t max_lag_ns = 0;
  uint64_t overruns = 0;  // batches that lagged their boundary by more than the threshold
};

// Tracks which messages are due at a point in time. Emission that falls
// behind is caught up on the next call instead of being dropped.
class PacedEmitter {
 public:
  PacedEmitter(const RatePlan& plan, uint64_t overrun_threshold_ns = 10 * kNsPerMs);

  // Number of messages to emit now (`now` is ns since the run epoch), and
  // records the emission in the achieved-rate bookkeeping.
  uint64_t take_due(uint64_t now);
  // Run-relative time of the next millisecond boundary with a nonzero bucket;
  // UINT64_MAX once the plan is exhausted.
  uint64_t next_deadline() const;
  bool done() const { return emitted_ == total_; }

  const AchievedRate& achieved() const { return achieved_; }

 private:
  std::vector<uint64_t> cumulative_;  // cumulative_[i] = sum of buckets[0..i)
  uint64_t total_;
  uint64_t emitted_ = 0;
  uint64_t overrun_threshold_ns_;
  AchievedRate achieved_;
};

struct ClockedOptions {
  RunClock clock;
  uint64_t overrun_threshold_ns = 10 * kNsPerMs;
  std::stop_token stop;
};

// Sleeps to each millisecond boundary and calls `emit(n)` with the number of
// messages due. Returns once the whole plan has been emitted or stop is
// requested.
AchievedRate run_clocked(const RatePlan& plan, const std::function<void(uint64_t)>& emit,
                         const ClockedOptions& options);

}  // namespace perfbench
