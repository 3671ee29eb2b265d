#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "geometry.hpp"
#include "intervals.hpp"
#include "rng.hpp"
#include "roadnet.hpp"

namespace fcplan {

inline constexpr double kmh(double v) { return v / 3.6; }

struct Sample {
  Point pos;
  double speed = 0.0;  // m/s
  LinkId link = -1;
};

// One contiguous presence of a node. Traces with gaps are split into several
// tracks sharing the same label.
struct NodeTrack {
  long label = 0;
  int enter_tick = 0;
  std::vector<Sample> samples;

  int exit_tick() const { return enter_tick + static_cast<int>(samples.size()) - 1; }
  bool present(int k) const { return k >= enter_tick && k <= exit_tick(); }
  const Sample& at(int k) const { return samples[k - enter_tick]; }
};

struct TrajectorySet {
  double tick = 1.0;
  int num_ticks = 0;
  std::vector<NodeTrack> nodes;
  std::size_t dropped_samples = 0;  // trace samples farther than the snap tolerance

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  double duration() const { return num_ticks * tick; }
};

// Tick-major view: nodes present at tick k are ids[offset[k] .. offset[k+1]),
// in increasing id order.
struct Frames {
  std::vector<int> offset;
  std::vector<int> ids;

  explicit Frames(const TrajectorySet& tr) {
    offset.assign(static_cast<std::size_t>(tr.num_ticks) + 1, 0);
    for (const auto& n : tr.nodes)
      for (int k = n.enter_tick; k <= n.exit_tick(); ++k) ++offset[k + 1];
    for (int k = 0; k < tr.num_ticks; ++k) offset[k + 1] += offset[k];
    ids.resize(offset.back());
    std::vector<int> fill(offset.begin(), offset.end() - 1);
    for (int i = 0; i < tr.num_nodes(); ++i)
      for (int k = tr.nodes[i].enter_tick; k <= tr.nodes[i].exit_tick(); ++k) ids[fill[k]++] = i;
  }

  std::span<const int> at(int k) const {
    return {ids.data() + offset[k], static_cast<std::size_t>(offset[k + 1] - offset[k])};
  }
};

struct SpeedModel {
  double lo = kmh(30.0);
  double hi = kmh(30.0);

  static SpeedModel constant(double v) { return {v, v}; }
  static SpeedModel uniform(double lo, double hi) { return {lo, hi}; }
  double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

struct Arrival {
  double time = 0.0;
  LinkId stub = -1;
};

// Independent Poisson arrival streams, one per border stub, over
// [-warmup, duration). Sorted by (time, stub).
inline std::vector<Arrival> manhattan_arrivals(const RoadGrid& g, double rate, double duration,
                                               std::uint64_t seed, double warmup = 0.0) {
  require(rate >= 0.0, ErrorKind::invalid_parameter, "arrival_rate must be >= 0");
  require(duration > 0.0, ErrorKind::invalid_parameter, "duration must be > 0");
  std::vector<Arrival> out;
  if (rate == 0.0) return out;
  const Rng base(seed);
  for (LinkId s : g.border_stubs()) {
    Rng rng = base.split(static_cast<std::uint64_t>(s));
    for (double t = -warmup + rng.exponential(rate); t < duration; t += rng.exponential(rate))
      out.push_back({t, s});
  }
  std::sort(out.begin(), out.end(), [](const Arrival& a, const Arrival& b) {
    return a.time != b.time ? a.time < b.time : a.stub < b.stub;
  });
  return out;
}

namespace detail {

struct Route {
  std::vector<LinkId> links;
  std::vector<Point> points;  // links.size() + 1 vertices
  std::vector<double> cum;    // cumulative length at each vertex
  bool closed = false;        // reached a border exit
};

inline void extend_route(const RoadGrid& g, Route& r, Rng& rng) {
  const Link& last = g.links[r.links.back()];
  const Point end = r.points.back();
  const int e = distance(last.endpoints[0], end) < distance(last.endpoints[1], end) ? 0 : 1;
  const int node = last.ends[e];
  if (node < 0) {
    r.closed = true;
    return;
  }
  std::vector<LinkId> options;
  for (LinkId l : g.adjacency[node])
    if (l != last.id) options.push_back(l);
  const LinkId next = options.empty() ? last.id : options[rng.below(options.size())];
  const Link& nl = g.links[next];
  const Point far = nl.ends[0] == node ? nl.endpoints[1] : nl.endpoints[0];
  r.links.push_back(next);
  r.points.push_back(far);
  r.cum.push_back(r.cum.back() + nl.length);
}

}  // namespace detail

// Synthetic Manhattan mobility: Poisson arrivals at every border stub, constant
// per-node speed, uniform choice among the non-U-turn continuations at each
// intersection, exit on reaching a border. Tick 0 corresponds to time 0.
inline TrajectorySet simulate_manhattan(const RoadGrid& g, double arrival_rate, SpeedModel speed,
                                        double duration, std::uint64_t seed, double tick = 1.0,
                                        double warmup = 0.0) {
  require(speed.lo > 0.0 && speed.hi >= speed.lo, ErrorKind::invalid_parameter,
          "speed model must be positive");
  require(tick > 0.0, ErrorKind::invalid_parameter, "tick must be positive");
  TrajectorySet tr;
  tr.tick = tick;
  tr.num_ticks = static_cast<int>(std::floor(duration / tick + 1e-9));
  const auto arrivals = manhattan_arrivals(g, arrival_rate, duration, seed, warmup);
  const Rng base(hash_key({seed, 0x6d6f62ULL}));

  for (std::size_t a = 0; a < arrivals.size(); ++a) {
    Rng rng = base.split(a);
    const double v = speed.draw(rng);
    const Link& stub = g.links[arrivals[a].stub];
    const int border = stub.ends[0] < 0 ? 0 : 1;
    detail::Route route;
    route.links = {stub.id};
    route.points = {stub.endpoints[border], stub.endpoints[1 - border]};
    route.cum = {0.0, stub.length};

    NodeTrack node;
    node.label = static_cast<long>(a);
    const int first = std::max(0, static_cast<int>(std::ceil(arrivals[a].time / tick - 1e-12)));
    node.enter_tick = first;
    std::size_t seg = 0;
    for (int k = first; k < tr.num_ticks; ++k) {
      const double travelled = v * (k * tick - arrivals[a].time);
      while (!route.closed && travelled >= route.cum.back()) detail::extend_route(g, route, rng);
      if (travelled > route.cum.back()) break;  // left the grid
      while (seg + 1 < route.links.size() && travelled >= route.cum[seg + 1]) ++seg;
      const double f = (travelled - route.cum[seg]) / (route.cum[seg + 1] - route.cum[seg]);
      node.samples.push_back({lerp(route.points[seg], route.points[seg + 1], f), v, route.links[seg]});
    }
    if (!node.samples.empty()) tr.nodes.push_back(std::move(node));
  }
  return tr;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_number(const std::string& s, std::size_t line, const char* what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v))
    throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": invalid " + what + " '" + s + "'");
  return v;
}

}  // namespace detail

// Trace CSV with header `t,node_id,x,y[,speed]`. Positions are resampled onto
// the tick grid by linear interpolation and snapped to links; samples farther
// than `snap` from every link are dropped (counted in dropped_samples).
inline TrajectorySet load_traces(std::istream& in, const RoadGrid& g, double tick = 1.0,
                                 double snap = kDefaultSnap) {
  require(tick > 0.0, ErrorKind::invalid_parameter, "tick must be positive");
  struct Row {
    double t, x, y, speed;
  };
  std::string line;
  std::size_t lineno = 0;
  bool have_speed = false;
  std::map<long, std::vector<Row>> rows;
  std::map<long, std::size_t> last_line;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv(line);
    if (lineno == 1 && !f.empty() && f[0] == "t") {
      if (f.size() < 4 || f[1] != "node_id" || f[2] != "x" || f[3] != "y" ||
          (f.size() == 5 && f[4] != "speed") || f.size() > 5)
        throw Error(ErrorKind::parse, "line 1: expected header t,node_id,x,y[,speed]");
      have_speed = f.size() == 5;
      continue;
    }
    if (f.size() != (have_speed ? 5u : 4u))
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": expected " +
                                        std::to_string(have_speed ? 5 : 4) + " fields");
    Row r{};
    r.t = detail::parse_number(f[0], lineno, "t");
    const double id = detail::parse_number(f[1], lineno, "node_id");
    r.x = detail::parse_number(f[2], lineno, "x");
    r.y = detail::parse_number(f[3], lineno, "y");
    r.speed = have_speed ? detail::parse_number(f[4], lineno, "speed") : -1.0;
    if (r.t < 0.0) throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": negative t");
    if (have_speed && r.speed < 0.0)
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": negative speed");
    auto& v = rows[static_cast<long>(id)];
    if (!v.empty() && r.t < v.back().t)
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) +
                                        ": timestamps decrease for node " + f[1]);
    v.push_back(r);
    last_line[static_cast<long>(id)] = lineno;
  }
  require(!rows.empty(), ErrorKind::empty_trace, "trace contains no samples");

  TrajectorySet tr;
  tr.tick = tick;
  for (const auto& [label, v] : rows) {
    const int k0 = static_cast<int>(std::ceil(v.front().t / tick - 1e-9));
    const int k1 = static_cast<int>(std::floor(v.back().t / tick + 1e-9));
    std::vector<std::pair<int, Sample>> resampled;
    std::size_t seg = 0;
    for (int k = k0; k <= k1; ++k) {
      const double t = k * tick;
      while (seg + 1 < v.size() && v[seg + 1].t <= t) ++seg;
      Sample s;
      if (seg + 1 < v.size() && v[seg + 1].t > v[seg].t) {
        const double f = (t - v[seg].t) / (v[seg + 1].t - v[seg].t);
        s.pos = lerp({v[seg].x, v[seg].y}, {v[seg + 1].x, v[seg + 1].y}, f);
        s.speed = v[seg].speed + f * (v[seg + 1].speed - v[seg].speed);
      } else {
        s.pos = {v[seg].x, v[seg].y};
        s.speed = v[seg].speed;
      }
      resampled.push_back({k, s});
    }
    if (!have_speed) {
      for (std::size_t i = 0; i < resampled.size(); ++i) {
        if (resampled.size() == 1) {
          resampled[i].second.speed = 0.0;
        } else {
          const std::size_t a = i + 1 < resampled.size() ? i : i - 1;
          resampled[i].second.speed = distance(resampled[a].second.pos, resampled[a + 1].second.pos) / tick;
        }
      }
    }
    NodeTrack cur;
    cur.label = label;
    for (auto& [k, s] : resampled) {
      try {
        s.link = link_of(g, s.pos, snap);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::off_grid) throw;
        ++tr.dropped_samples;
        if (!cur.samples.empty()) tr.nodes.push_back(std::move(cur));
        cur = NodeTrack{};
        cur.label = label;
        continue;
      }
      if (cur.samples.empty()) cur.enter_tick = k;
      cur.samples.push_back(s);
      tr.num_ticks = std::max(tr.num_ticks, k + 1);
    }
    if (!cur.samples.empty()) tr.nodes.push_back(std::move(cur));
  }
  require(!tr.nodes.empty(), ErrorKind::empty_trace, "no trace sample lies on the grid");
  return tr;
}

inline TrajectorySet load_traces(const std::string& path, const RoadGrid& g, double tick = 1.0,
                                 double snap = kDefaultSnap) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open trace file " + path);
  return load_traces(in, g, tick, snap);
}

inline void write_traces(std::ostream& out, const TrajectorySet& tr) {
  char buf[160];
  out << "t,node_id,x,y,speed\n";
  for (int i = 0; i < tr.num_nodes(); ++i) {
    const auto& n = tr.nodes[i];
    for (int k = n.enter_tick; k <= n.exit_tick(); ++k) {
      const auto& s = n.at(k);
      std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g,%.17g\n", k * tr.tick, i, s.pos.x, s.pos.y,
                    s.speed);
      out << buf;
    }
  }
}

// In-range node pairs per tick: pairs[offset[k] .. offset[k+1]), sorted by (i, j).
struct ContactIndex {
  struct Pair {
    int i = 0;
    int j = 0;
    double d = 0.0;
  };
  double radius = 0.0;
  std::vector<std::size_t> offset;
  std::vector<Pair> pairs;

  std::span<const Pair> at(int k) const {
    return {pairs.data() + offset[k], offset[k + 1] - offset[k]};
  }
};

inline ContactIndex build_contact_index(const TrajectorySet& tr, double r) {
  require(r > 0.0, ErrorKind::invalid_parameter, "contact radius must be > 0");
  ContactIndex ci;
  ci.radius = r;
  ci.offset.assign(static_cast<std::size_t>(tr.num_ticks) + 1, 0);
  if (tr.nodes.empty()) return ci;

  double inf = std::numeric_limits<double>::infinity();
  Box box{{inf, inf}, {-inf, -inf}};
  for (const auto& n : tr.nodes)
    for (const auto& s : n.samples) {
      box.lo.x = std::min(box.lo.x, s.pos.x);
      box.lo.y = std::min(box.lo.y, s.pos.y);
      box.hi.x = std::max(box.hi.x, s.pos.x);
      box.hi.y = std::max(box.hi.y, s.pos.y);
    }
  const int gx = static_cast<int>(box.width() / r) + 1;
  const int gy = static_cast<int>(box.height() / r) + 1;
  const Frames frames(tr);
  std::vector<int> head(static_cast<std::size_t>(gx) * gy, -1);
  std::vector<int> next(tr.nodes.size(), -1);
  std::vector<int> cell(tr.nodes.size(), 0);
  std::vector<ContactIndex::Pair> tick_pairs;
  for (int k = 0; k < tr.num_ticks; ++k) {
    const auto present = frames.at(k);
    for (auto it = present.rbegin(); it != present.rend(); ++it) {
      const Point p = tr.nodes[*it].at(k).pos;
      const int cx = std::min(gx - 1, static_cast<int>((p.x - box.lo.x) / r));
      const int cy = std::min(gy - 1, static_cast<int>((p.y - box.lo.y) / r));
      cell[*it] = cy * gx + cx;
      next[*it] = head[cell[*it]];
      head[cell[*it]] = *it;
    }
    tick_pairs.clear();
    for (int i : present) {
      const Point p = tr.nodes[i].at(k).pos;
      const int cx = cell[i] % gx;
      const int cy = cell[i] / gx;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = cx + dx, y = cy + dy;
          if (x < 0 || y < 0 || x >= gx || y >= gy) continue;
          for (int j = head[y * gx + x]; j >= 0; j = next[j]) {
            if (j <= i) continue;
            const double d = distance(p, tr.nodes[j].at(k).pos);
            if (d <= r) tick_pairs.push_back({i, j, d});
          }
        }
    }
    std::sort(tick_pairs.begin(), tick_pairs.end(),
              [](const auto& a, const auto& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    ci.pairs.insert(ci.pairs.end(), tick_pairs.begin(), tick_pairs.end());
    ci.offset[k + 1] = ci.pairs.size();
    for (int i : present) head[cell[i]] = -1;
  }
  return ci;
}

struct ContactEvent {
  int i = 0;  // i < j
  int j = 0;
  int start = 0;
  int end = 0;  // inclusive
  std::vector<double> distances;

  int ticks() const { return end - start + 1; }
};

// Maximal tick runs with distance <= radius, sorted by (i, j, start).
inline std::vector<ContactEvent> detect_contacts(const ContactIndex& ci) {
  std::vector<ContactEvent> events;
  std::unordered_map<std::uint64_t, std::size_t> open;
  const int ticks = static_cast<int>(ci.offset.size()) - 1;
  for (int k = 0; k < ticks; ++k) {
    for (const auto& p : ci.at(k)) {
      const std::uint64_t key = (static_cast<std::uint64_t>(p.i) << 32) | static_cast<std::uint32_t>(p.j);
      auto it = open.find(key);
      if (it != open.end() && events[it->second].end == k - 1) {
        events[it->second].end = k;
        events[it->second].distances.push_back(p.d);
      } else {
        open[key] = events.size();
        events.push_back({p.i, p.j, k, k, {p.d}});
      }
    }
  }
  std::sort(events.begin(), events.end(), [](const ContactEvent& a, const ContactEvent& b) {
    if (a.i != b.i) return a.i < b.i;
    if (a.j != b.j) return a.j < b.j;
    return a.start < b.start;
  });
  return events;
}

inline std::vector<ContactEvent> detect_contacts(const TrajectorySet& tr, double r) {
  return detect_contacts(build_contact_index(tr, r));
}

// Per (interval, link) mobility features, stored interval-major: [t * L + l].
struct MobilityFeatures {
  int L = 0;
  int T = 0;
  std::vector<double> n, lambda, tau, nu;
  std::vector<std::uint8_t> empty;  // no node sample on the link during the interval

  std::size_t idx(LinkId l, int t) const { return static_cast<std::size_t>(t) * L + l; }
  void resize(int links, int intervals) {
    L = links;
    T = intervals;
    const std::size_t sz = static_cast<std::size_t>(L) * T;
    n.assign(sz, 0.0);
    lambda.assign(sz, 0.0);
    tau.assign(sz, 0.0);
    nu.assign(sz, 0.0);
    empty.assign(sz, 1);
  }
};

inline MobilityFeatures mobility_features(const TrajectorySet& tr, const std::vector<ContactEvent>& contacts,
                                          const RoadGrid& g, const IntervalPlan& plan) {
  require(plan.total_ticks() <= tr.num_ticks, ErrorKind::range,
          "interval partition exceeds trajectory duration");
  const int L = g.num_links();
  MobilityFeatures mf;
  mf.resize(L, plan.count());

  // Concurrent contact count for every node sample.
  std::vector<std::vector<int>> degree(tr.nodes.size());
  for (std::size_t i = 0; i < tr.nodes.size(); ++i) degree[i].assign(tr.nodes[i].samples.size(), 0);
  for (const auto& e : contacts)
    for (int k = e.start; k <= e.end; ++k) {
      ++degree[e.i][k - tr.nodes[e.i].enter_tick];
      ++degree[e.j][k - tr.nodes[e.j].enter_tick];
    }

  std::vector<double> samples(mf.n.size(), 0.0);
  for (std::size_t i = 0; i < tr.nodes.size(); ++i) {
    const auto& node = tr.nodes[i];
    for (int k = node.enter_tick; k <= node.exit_tick() && k < plan.total_ticks(); ++k) {
      const int t = plan.interval_of(k);
      const auto& s = node.at(k);
      const std::size_t c = mf.idx(s.link, t);
      samples[c] += 1.0;
      mf.nu[c] += s.speed;
      mf.lambda[c] += degree[i][k - node.enter_tick];
    }
  }
  std::vector<double> tau_count(mf.n.size(), 0.0);
  for (const auto& e : contacts) {
    if (e.start >= plan.total_ticks()) continue;
    const int t = plan.interval_of(e.start);
    const double dur = e.ticks() * tr.tick;
    for (int who : {e.i, e.j}) {
      const std::size_t c = mf.idx(tr.nodes[who].at(e.start).link, t);
      mf.tau[c] += dur;
      tau_count[c] += 1.0;
    }
  }
  for (int t = 0; t < plan.count(); ++t)
    for (LinkId l = 0; l < L; ++l) {
      const std::size_t c = mf.idx(l, t);
      mf.n[c] = samples[c] / plan.length[t];
      if (samples[c] > 0.0) {
        mf.empty[c] = 0;
        mf.nu[c] /= samples[c];
        mf.lambda[c] /= samples[c];
      }
      if (tau_count[c] > 0.0) mf.tau[c] /= tau_count[c];
    }
  return mf;
}

}  // namespace fcplan
