#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"

namespace fcplan {

// A partition of the first `total_ticks()` ticks into consecutive intervals.
struct IntervalPlan {
  double tick = 1.0;
  std::vector<int> start;
  std::vector<int> length;

  int count() const { return static_cast<int>(start.size()); }
  int total_ticks() const { return start.empty() ? 0 : start.back() + length.back(); }
  double duration(int t) const { return length[t] * tick; }
  double total_duration() const { return total_ticks() * tick; }

  // Interval containing tick k, or -1 past the end.
  int interval_of(int k) const {
    for (int t = 0; t < count(); ++t)
      if (k >= start[t] && k < start[t] + length[t]) return t;
    return -1;
  }

  std::vector<double> durations() const {
    std::vector<double> d;
    for (int t = 0; t < count(); ++t) d.push_back(duration(t));
    return d;
  }
};

inline IntervalPlan make_intervals(const std::vector<double>& durations, double tick, int available_ticks) {
  require(tick > 0.0, ErrorKind::invalid_parameter, "tick must be positive");
  require(!durations.empty(), ErrorKind::invalid_parameter, "interval list is empty");
  IntervalPlan p;
  p.tick = tick;
  int at = 0;
  for (double d : durations) {
    const double ticks = d / tick;
    const long r = std::lround(ticks);
    require(d > 0.0 && std::abs(ticks - static_cast<double>(r)) < 1e-9 && r > 0,
            ErrorKind::invalid_parameter,
            "interval duration " + std::to_string(d) + " s is not a positive multiple of the tick");
    p.start.push_back(at);
    p.length.push_back(static_cast<int>(r));
    at += static_cast<int>(r);
  }
  require(at <= available_ticks, ErrorKind::range,
          "intervals cover " + std::to_string(at) + " ticks but the trajectories span only " +
              std::to_string(available_ticks));
  return p;
}

// Splits each interval of `p` into windows of `window` seconds (the last
// window of an interval may be shorter). Window w maps to parent interval
// parent[w].
struct WindowPlan {
  IntervalPlan windows;
  std::vector<int> parent;
};

inline WindowPlan split_windows(const IntervalPlan& p, double window) {
  require(window > 0.0, ErrorKind::invalid_parameter, "window must be positive");
  const int wt = std::max(1, static_cast<int>(std::lround(window / p.tick)));
  WindowPlan out;
  out.windows.tick = p.tick;
  for (int t = 0; t < p.count(); ++t)
    for (int k = 0; k < p.length[t]; k += wt) {
      out.windows.start.push_back(p.start[t] + k);
      out.windows.length.push_back(std::min(wt, p.length[t] - k));
      out.parent.push_back(t);
    }
  return out;
}

}  // namespace fcplan
