#include "perfbench/scheduler.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace perfbench {

RatePlan plan(uint32_t rate, uint32_t duration_s) {
  if (rate < 1) throw std::invalid_argument("rate must be at least 1 msg/s");
  if (duration_s < 1) throw std::invalid_argument("duration must be at least 1 s");
  RatePlan p;
  p.total_rate = rate;
  p.duration_s = duration_s;
  p.buckets.resize(std::size_t{duration_s} * 1000);
  for (std::size_t i = 0; i < p.buckets.size(); ++i) {
    const uint64_t ms = i % 1000;
    p.buckets[i] = static_cast<uint32_t>((ms + 1) * rate / 1000 - ms * rate / 1000);
  }
  return p;
}

PacedEmitter::PacedEmitter(const RatePlan& plan, uint64_t overrun_threshold_ns)
    : total_(0), overrun_threshold_ns_(overrun_threshold_ns) {
  cumulative_.reserve(plan.buckets.size() + 1);
  cumulative_.push_back(0);
  for (uint32_t b : plan.buckets) {
    total_ += b;
    cumulative_.push_back(total_);
  }
  achieved_.per_second.assign(plan.duration_s, 0);
}

uint64_t PacedEmitter::take_due(uint64_t now) {
  // Bucket k fires at the boundary k ms after the epoch.
  const uint64_t buckets_reached =
      std::min<uint64_t>(now / kNsPerMs + 1, cumulative_.size() - 1);
  const uint64_t due_total = cumulative_[buckets_reached];
  if (due_total <= emitted_) return 0;
  const uint64_t n = due_total - emitted_;

  // The oldest message in this batch belongs to the first bucket whose
  // cumulative count exceeds what was already emitted.
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), emitted_);
  const uint64_t oldest_bucket = static_cast<uint64_t>(it - cumulative_.begin()) - 1;
  const uint64_t lag = now - std::min(now, oldest_bucket * kNsPerMs);
  achieved_.max_lag_ns = std::max(achieved_.max_lag_ns, lag);
  if (lag > overrun_threshold_ns_) ++achieved_.overruns;

  const uint64_t second = now / kNsPerSec;
  if (second >= achieved_.per_second.size()) achieved_.per_second.resize(second + 1, 0);
  achieved_.per_second[second] += n;
  achieved_.emitted += n;
  emitted_ = due_total;
  return n;
}

uint64_t PacedEmitter::next_deadline() const {
  if (emitted_ == total_) return std::numeric_limits<uint64_t>::max();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), emitted_);
  const uint64_t bucket = static_cast<uint64_t>(it - cumulative_.begin()) - 1;
  return bucket * kNsPerMs;
}

AchievedRate run_clocked(const RatePlan& plan, const std::function<void(uint64_t)>& emit,
                         const ClockedOptions& options) {
  PacedEmitter pacer(plan, options.overrun_threshold_ns);
  uint64_t warned = 0;
  while (!pacer.done() && !options.stop.stop_requested()) {
    sleep_until_ns(options.clock.absolute(pacer.next_deadline()));
    const uint64_t n = pacer.take_due(options.clock.now());
    if (n > 0) emit(n);
    if (pacer.achieved().overruns > warned) {
      warned = pacer.achieved().overruns;
      if (warned == 1 || warned % 1000 == 0) {
        spdlog::warn("emission lagging its schedule by {:.1f} ms ({} overruns so far)",
                     static_cast<double>(pacer.achieved().max_lag_ns) / kNsPerMs, warned);
      }
    }
  }
  return pacer.achieved();
}

}  // namespace perfbench
