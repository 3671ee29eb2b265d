#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "error.hpp"
#include "outcome.hpp"
#include "roadnet.hpp"

namespace fcplan {

// Replication (a), caching (b) and seeding (s) probabilities per link and
// interval, stored interval-major: [t * L + l].
class FcScheme {
 public:
  FcScheme() = default;
  FcScheme(int L, int T, double a = 0.0, double b = 0.0, double s = 0.0) : L_(L), T_(T) {
    require(L >= 1 && T >= 1, ErrorKind::shape, "scheme dimensions must be positive");
    check(a, "a");
    check(b, "b");
    check(s, "s");
    a_.assign(size(), a);
    b_.assign(size(), b);
    s_.assign(size(), s);
  }

  int links() const { return L_; }
  int intervals() const { return T_; }
  std::size_t size() const { return static_cast<std::size_t>(L_) * T_; }
  std::size_t idx(LinkId l, int t) const { return static_cast<std::size_t>(t) * L_ + l; }

  double a(LinkId l, int t) const { return a_[idx(l, t)]; }
  double b(LinkId l, int t) const { return b_[idx(l, t)]; }
  double s(LinkId l, int t) const { return s_[idx(l, t)]; }

  void set(LinkId l, int t, double a, double b, double s) {
    check(a, "a");
    check(b, "b");
    check(s, "s");
    a_[idx(l, t)] = a;
    b_[idx(l, t)] = b;
    s_[idx(l, t)] = s;
  }

  // Raw planes for bulk readers (the surrogate input, serializers).
  const std::vector<double>& a_plane() const { return a_; }
  const std::vector<double>& b_plane() const { return b_; }
  const std::vector<double>& s_plane() const { return s_; }

  // Columns [t0, T) as a new scheme.
  FcScheme tail(int t0) const {
    require(t0 >= 0 && t0 < T_, ErrorKind::range, "tail start out of range");
    FcScheme out(L_, T_ - t0);
    for (int t = t0; t < T_; ++t)
      for (LinkId l = 0; l < L_; ++l) out.set(l, t - t0, a(l, t), b(l, t), s(l, t));
    return out;
  }

  // This scheme for t < t0 followed by `rest` for t >= t0.
  FcScheme spliced(int t0, const FcScheme& rest) const {
    require(rest.L_ == L_ && rest.T_ == T_ - t0, ErrorKind::shape, "splice dimension mismatch");
    FcScheme out = *this;
    for (int t = t0; t < T_; ++t)
      for (LinkId l = 0; l < L_; ++l) out.set(l, t, rest.a(l, t - t0), rest.b(l, t - t0), rest.s(l, t - t0));
    return out;
  }

  // Every entry of *this is >= the matching entry of `o`.
  bool dominates(const FcScheme& o) const {
    if (o.L_ != L_ || o.T_ != T_) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (a_[i] < o.a_[i] || b_[i] < o.b_[i] || s_[i] < o.s_[i]) return false;
    return true;
  }

  friend bool operator==(const FcScheme&, const FcScheme&) = default;

 private:
  static void check(double v, const char* name) {
    require(v >= 0.0 && v <= 1.0, ErrorKind::invalid_parameter,
            std::string("scheme entry ") + name + " = " + std::to_string(v) + " outside [0, 1]");
  }

  int L_ = 0;
  int T_ = 0;
  std::vector<double> a_, b_, s_;
};

inline FcScheme all_on(int L, int T) { return FcScheme(L, T, 1.0, 1.0, 1.0); }
inline FcScheme all_zero(int L, int T) { return FcScheme(L, T, 0.0, 0.0, 0.0); }

struct CostWeights {
  double beta = 1.0;
  double delta = 1.0;
  int technologies = 1;
  std::vector<double> theta;  // [(t * L + l) * U + u]; empty means all ones
  double content_bits = 8.0 * 8.0 * 1024 * 1024;  // D = 8 MB

  double theta_at(std::size_t cell, int u) const {
    return theta.empty() ? 1.0 : theta[cell * technologies + u];
  }
};

struct ServiceRequest {
  std::vector<LinkId> zoi;
  double alpha0 = 0.9;
  std::vector<double> period;  // interval durations d_t (s)

  void validate(int num_links) const {
    require(!zoi.empty(), ErrorKind::invalid_parameter, "ZOI is empty");
    for (LinkId l : zoi)
      require(l >= 0 && l < num_links, ErrorKind::invalid_parameter,
              "ZOI link " + std::to_string(l) + " not in grid");
    require(alpha0 > 0.0 && alpha0 <= 1.0, ErrorKind::invalid_parameter, "alpha0 must be in (0, 1]");
  }
};

struct CostBreakdown {
  double storage = 0.0;
  double communication = 0.0;
  double seeding = 0.0;
  double total() const { return storage + communication + seeding; }
};

// Resource cost of `scheme` given the measured (or predicted) outcome,
// restricted to intervals [t0, T). The storage and communication terms are
// weighted by d_t over the total duration of the range; the seeding term is
// not duration-weighted.
inline CostBreakdown scheme_cost_breakdown(const SimOutcome& out, const FcScheme& scheme, const CostWeights& w,
                                           int t0 = 0) {
  require(out.L == scheme.links() && out.T == scheme.intervals(), ErrorKind::shape,
          "outcome and scheme dimensions differ");
  require(static_cast<int>(out.durations.size()) == out.T, ErrorKind::shape, "outcome lacks durations");
  require(t0 >= 0 && t0 < out.T, ErrorKind::range, "cost start interval out of range");
  require(w.theta.empty() || w.theta.size() == scheme.size() * w.technologies, ErrorKind::shape,
          "theta dimensions differ from the scheme");
  require(w.technologies == out.U, ErrorKind::shape, "technology count mismatch");
  double total_d = 0.0;
  for (int t = t0; t < out.T; ++t) total_d += out.durations[t];
  require(total_d > 0.0, ErrorKind::invalid_parameter, "interval durations must be positive");

  CostBreakdown c;
  const double D = w.content_bits;
  for (int t = t0; t < out.T; ++t)
    for (LinkId l = 0; l < out.L; ++l) {
      const std::size_t cell = out.idx(l, t);
      double comm = 0.0;
      for (int u = 0; u < out.U; ++u) comm += w.theta_at(cell, u) * out.gamma_at(l, t, u);
      c.storage += out.durations[t] * D * out.n_c[cell] / total_d;
      c.communication += out.durations[t] * D * w.beta * comm / total_d;
      c.seeding += w.delta * D * std::max(scheme.s(l, t) - out.v[cell], 0.0);
    }
  return c;
}

inline double scheme_cost(const SimOutcome& out, const FcScheme& scheme, const CostWeights& w, int t0 = 0) {
  return scheme_cost_breakdown(out, scheme, w, t0).total();
}

// Success ratio over the ZOI for interval t; throws undefined_ratio when no
// node visited the ZOI during the interval.
inline double success_ratio(const SimOutcome& out, const std::vector<LinkId>& zoi, int t) {
  require(t >= 0 && t < out.T, ErrorKind::range, "interval out of range");
  double num = 0.0, den = 0.0;
  for (LinkId l : zoi) {
    require(l >= 0 && l < out.L, ErrorKind::invalid_parameter, "ZOI link outside outcome");
    num += out.n_c[out.idx(l, t)];
    den += out.n[out.idx(l, t)];
  }
  require(den > 0.0, ErrorKind::undefined_ratio,
          "ZOI empty during interval " + std::to_string(t));
  return num / den;
}

inline std::vector<std::optional<double>> success_ratios(const SimOutcome& out, const std::vector<LinkId>& zoi,
                                                         int t0 = 0) {
  std::vector<std::optional<double>> a;
  for (int t = t0; t < out.T; ++t) {
    try {
      a.push_back(success_ratio(out, zoi, t));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::undefined_ratio) throw;
      a.push_back(std::nullopt);
    }
  }
  return a;
}

inline bool is_feasible(const std::vector<std::optional<double>>& alpha, double alpha0) {
  return std::all_of(alpha.begin(), alpha.end(), [&](const auto& a) { return a && *a >= alpha0; });
}

inline bool is_feasible(const SimOutcome& out, const ServiceRequest& req, int t0 = 0) {
  return is_feasible(success_ratios(out, req.zoi, t0), req.alpha0);
}

inline void write_scheme_csv(std::ostream& os, const FcScheme& s) {
  char buf[128];
  os << "link_id,t,a,b,s\n";
  for (int t = 0; t < s.intervals(); ++t)
    for (LinkId l = 0; l < s.links(); ++l) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g\n", l, t, s.a(l, t), s.b(l, t), s.s(l, t));
      os << buf;
    }
}

inline FcScheme read_scheme_csv(std::istream& is) {
  struct Row {
    int l, t;
    double a, b, s;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  int L = 0, T = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line.rfind("link_id", 0) == 0) continue;
    Row r{};
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf", &r.l, &r.t, &r.a, &r.b, &r.s) != 5 || r.l < 0 || r.t < 0)
      throw Error(ErrorKind::parse, "scheme csv line " + std::to_string(lineno) + ": malformed row");
    L = std::max(L, r.l + 1);
    T = std::max(T, r.t + 1);
    rows.push_back(r);
  }
  require(!rows.empty(), ErrorKind::parse, "scheme csv has no rows");
  require(rows.size() == static_cast<std::size_t>(L) * T, ErrorKind::shape,
          "scheme csv does not cover every (link, interval)");
  FcScheme s(L, T);
  for (const auto& r : rows) s.set(r.l, r.t, r.a, r.b, r.s);
  return s;
}

inline FcScheme load_scheme(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open scheme file " + path);
  return read_scheme_csv(in);
}

}  // namespace fcplan
