#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <vector>

namespace fcplan {

// Time-averaged per (interval, link) measurements of one FC run, stored
// interval-major ([t * L + l]); gamma carries a trailing technology index.
struct SimOutcome {
  int L = 0;
  int T = 0;
  int U = 1;
  double tick = 1.0;
  std::uint64_t seed = 0;
  std::vector<double> durations;  // d_t (s)
  std::vector<double> n, n_c, v;
  std::vector<double> gamma;      // [(t * L + l) * U + u]
  std::vector<long> seeded, dropped;
  std::vector<std::optional<double>> alpha;  // per interval, when a ZOI was supplied

  std::size_t idx(int l, int t) const { return static_cast<std::size_t>(t) * L + l; }
  double gamma_at(int l, int t, int u = 0) const { return gamma[idx(l, t) * U + u]; }

  void resize(int links, int intervals, int techs = 1) {
    L = links;
    T = intervals;
    U = techs;
    const std::size_t sz = static_cast<std::size_t>(L) * T;
    n.assign(sz, 0.0);
    n_c.assign(sz, 0.0);
    v.assign(sz, 0.0);
    gamma.assign(sz * U, 0.0);
    seeded.assign(sz, 0);
    dropped.assign(sz, 0);
  }

  long total_seeded() const {
    long s = 0;
    for (long x : seeded) s += x;
    return s;
  }
};

inline void write_outcome_csv(std::ostream& os, const SimOutcome& o) {
  char buf[256];
  os << "link_id,t,n,n_c,gamma,v,seeded,dropped\n";
  for (int t = 0; t < o.T; ++t)
    for (int l = 0; l < o.L; ++l) {
      double g = 0.0;
      for (int u = 0; u < o.U; ++u) g += o.gamma_at(l, t, u);
      const auto c = o.idx(l, t);
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g,%ld,%ld\n", l, t, o.n[c], o.n_c[c], g, o.v[c],
                    o.seeded[c], o.dropped[c]);
      os << buf;
    }
}

inline void write_alpha_csv(std::ostream& os, const SimOutcome& o) {
  char buf[64];
  os << "t,alpha\n";
  for (int t = 0; t < static_cast<int>(o.alpha.size()); ++t) {
    if (o.alpha[t])
      std::snprintf(buf, sizeof buf, "%d,%.17g\n", t, *o.alpha[t]);
    else
      std::snprintf(buf, sizeof buf, "%d,nan\n", t);
    os << buf;
  }
}

}  // namespace fcplan
