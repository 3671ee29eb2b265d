#pragma once

#include <vector>

#include "../error.hpp"

namespace fcplan {

struct BinaryCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;

  double precision() const { return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0; }
};

inline BinaryCounts confusion(const std::vector<int>& pred, const std::vector<int>& truth) {
  require(pred.size() == truth.size(), ErrorKind::shape, "label sequences differ in length");
  BinaryCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// F1 of the positive class; 0 when precision + recall is 0.
inline double f_score(const std::vector<int>& pred, const std::vector<int>& truth) {
  const auto c = confusion(pred, truth);
  const double p = c.precision(), r = c.recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

// Share of emitted strategies whose simulated outcome missed the target.
inline double rejection_probability(const std::vector<bool>& verified_feasible) {
  if (verified_feasible.empty()) return 0.0;
  long bad = 0;
  for (bool ok : verified_feasible) bad += ok ? 0 : 1;
  return static_cast<double>(bad) / verified_feasible.size();
}

}  // namespace fcplan
