#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "error.hpp"
#include "roadnet.hpp"
#include "scheme.hpp"

namespace fcplan {

struct BoxStats {
  int n = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  double lo_whisker = 0, hi_whisker = 0;  // most extreme samples inside Q -/+ 1.5 IQR
  int outliers = 0;
};

// Linear-interpolated quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double q) {
  require(!s.empty(), ErrorKind::data, "quantile of an empty sample");
  const double pos = q * (s.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double f = pos - i;
  return i + 1 < s.size() ? s[i] + f * (s[i + 1] - s[i]) : s[i];
}

inline BoxStats box_stats(std::vector<double> x) {
  require(!x.empty(), ErrorKind::data, "box plot of an empty sample");
  std::sort(x.begin(), x.end());
  BoxStats b;
  b.n = static_cast<int>(x.size());
  b.min = x.front();
  b.max = x.back();
  b.q1 = quantile_sorted(x, 0.25);
  b.median = quantile_sorted(x, 0.5);
  b.q3 = quantile_sorted(x, 0.75);
  const double iqr = b.q3 - b.q1, lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.lo_whisker = b.q3;
  b.hi_whisker = b.q1;
  for (double v : x) {
    if (v < lo || v > hi) {
      ++b.outliers;
      continue;
    }
    b.lo_whisker = std::min(b.lo_whisker, v);
    b.hi_whisker = std::max(b.hi_whisker, v);
  }
  return b;
}

// White to dark blue.
inline std::string heat_colour(double v) {
  v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 - v * (255 - 8)));
  const int g = static_cast<int>(std::lround(255 - v * (255 - 48)));
  const int b = static_cast<int>(std::lround(255 - v * (255 - 107)));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

// Links drawn as thick strokes coloured by value in [0, 1], ZOI outlined.
// Without `deterministic` a generation timestamp is embedded as a comment.
inline void write_heatmap_svg(std::ostream& os, const RoadGrid& g, const std::vector<double>& value,
                              const std::string& title, const std::vector<LinkId>& zoi, bool deterministic) {
  require(static_cast<int>(value.size()) == g.num_links(), ErrorKind::shape, "one value per link expected");
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& l : g.links)
    for (auto p : l.endpoints) {
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
  const double pad = 20, scale = 600.0 / std::max({x1 - x0, y1 - y0, 1.0});
  const double w = (x1 - x0) * scale + 2 * pad, h = (y1 - y0) * scale + 2 * pad + 50;
  auto X = [&](double x) { return pad + (x - x0) * scale; };
  auto Y = [&](double y) { return pad + 30 + (y1 - y) * scale; };  // north up
  char buf[256];
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                w, h, w, h);
  os << buf;
  if (!deterministic) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char ts[32];
    std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    os << "<!-- generated " << ts << " -->\n";
  }
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#f4f4f4\"/>\n";
  os << "<text x=\"" << pad << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
  for (const auto& l : g.links) {
    const bool in_zoi = std::find(zoi.begin(), zoi.end(), l.id) != zoi.end();
    if (in_zoi) {
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#d62728\" stroke-width=\"18\"/>\n",
                    X(l.endpoints[0].x), Y(l.endpoints[0].y), X(l.endpoints[1].x), Y(l.endpoints[1].y));
      os << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"12\">"
                  "<title>link %d: %.3f</title></line>\n",
                  X(l.endpoints[0].x), Y(l.endpoints[0].y), X(l.endpoints[1].x), Y(l.endpoints[1].y),
                  heat_colour(value[l.id]).c_str(), l.id, value[l.id]);
    os << buf;
  }
  // colour bar
  for (int i = 0; i <= 10; ++i) {
    std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"20\" height=\"10\" fill=\"%s\" stroke=\"#999\"/>\n",
                  pad + i * 20.0, h - 18, heat_colour(i / 10.0).c_str());
    os << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\">0</text>"
                "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\">1</text>\n",
                pad - 10, h - 9, pad + 226, h - 9);
  os << buf;
  os << "</svg>\n";
}

// One evaluated strategy: cost and success ratios per seed.
struct StrategyRuns {
  std::string name;
  std::vector<double> cost;                              // per seed
  std::vector<std::vector<std::optional<double>>> alpha;  // [seed][t]
  std::vector<bool> feasible;                            // per seed

  double mean_cost() const {
    double s = 0.0;
    for (double c : cost) s += c;
    return cost.empty() ? 0.0 : s / cost.size();
  }
  double feasible_fraction() const {
    return feasible.empty() ? 0.0 : static_cast<double>(std::count(feasible.begin(), feasible.end(), true)) /
                                        feasible.size();
  }
};

struct SavingsRow {
  std::string baseline;
  double baseline_cost = 0.0;  // mean, rejected runs charged at the all-on cost
  double plan_cost = 0.0;
  double savings = 0.0;        // (baseline - plan) / baseline
  double baseline_feasible = 0.0;
};

// Savings of `plan` against each other strategy. A run that misses the
// target is charged the all-on cost of the same seed.
inline std::vector<SavingsRow> savings_table(const StrategyRuns& plan, const std::vector<StrategyRuns>& baselines,
                                             const StrategyRuns& all_on_runs) {
  auto charged = [&](const StrategyRuns& s) {
    double tot = 0.0;
    for (std::size_t i = 0; i < s.cost.size(); ++i) tot += s.feasible[i] ? s.cost[i] : all_on_runs.cost.at(i);
    return s.cost.empty() ? 0.0 : tot / s.cost.size();
  };
  const double p = charged(plan);
  std::vector<SavingsRow> rows;
  for (const auto& b : baselines) {
    SavingsRow r;
    r.baseline = b.name;
    r.baseline_cost = charged(b);
    r.plan_cost = p;
    r.savings = r.baseline_cost > 0 ? (r.baseline_cost - p) / r.baseline_cost : 0.0;
    r.baseline_feasible = b.feasible_fraction();
    rows.push_back(r);
  }
  return rows;
}

inline void write_savings_csv(std::ostream& os, const std::vector<SavingsRow>& rows) {
  char buf[256];
  os << "baseline,baseline_cost,plan_cost,savings,baseline_feasible\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g\n", r.baseline.c_str(), r.baseline_cost, r.plan_cost,
                  r.savings, r.baseline_feasible);
    os << buf;
  }
}

inline void write_box_csv_header(std::ostream& os) {
  os << "strategy,t,n,min,lo_whisker,q1,median,q3,hi_whisker,max,outliers\n";
}

inline void write_box_csv_row(std::ostream& os, const std::string& name, int t, const BoxStats& b) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%s,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", name.c_str(), t, b.n,
                b.min, b.lo_whisker, b.q1, b.median, b.q3, b.hi_whisker, b.max, b.outliers);
  os << buf;
}

}  // namespace fcplan
