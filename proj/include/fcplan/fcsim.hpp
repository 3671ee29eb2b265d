#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "intervals.hpp"
#include "mobility.hpp"
#include "outcome.hpp"
#include "rng.hpp"
#include "roadnet.hpp"
#include "scheme.hpp"

namespace fcplan {

enum class TransferMode { capacity, instantaneous };
enum class SeedingMode { exact, floor };

struct ChannelModel {
  double bandwidth = 1e6;     // Hz
  double sinr_edge_db = 5.0;  // SINR at d = radius
  double path_loss = 3.0;
  double radius = 100.0;      // m
  double sinr_cap_db = 30.0;
  int technology = 0;
  TransferMode mode = TransferMode::capacity;

  double sinr_edge() const { return std::pow(10.0, sinr_edge_db / 10.0); }
  double sinr_cap() const { return std::pow(10.0, sinr_cap_db / 10.0); }

  void validate() const {
    require(bandwidth > 0.0, ErrorKind::invalid_parameter, "bandwidth must be > 0");
    require(path_loss >= 2.0, ErrorKind::invalid_parameter, "path-loss exponent must be >= 2");
    require(radius > 0.0, ErrorKind::invalid_parameter, "radius must be > 0");
    require(std::isfinite(sinr_edge_db) && std::isfinite(sinr_cap_db), ErrorKind::invalid_parameter,
            "SINR values must be finite");
  }
};

namespace detail {
// Shannon rate without range checks; d <= 0 saturates at the SINR cap.
inline double shannon_rate(const ChannelModel& ch, double d) {
  const double sinr = d <= 0.0 ? ch.sinr_cap()
                               : std::min(ch.sinr_edge() * std::pow(ch.radius / d, ch.path_loss), ch.sinr_cap());
  return ch.bandwidth * std::log2(1.0 + sinr);
}
}  // namespace detail

// Link rate in bit/s at distance d: B log2(1 + SINR(d)) with
// SINR(d) = SINR_edge (r/d)^eta, capped.
inline double capacity(const ChannelModel& ch, double d) {
  require(d > 0.0, ErrorKind::invalid_parameter, "distance must be > 0");
  require(d <= ch.radius, ErrorKind::range, "distance " + std::to_string(d) + " m beyond radius");
  return detail::shannon_rate(ch, d);
}

// Everything about a mobility scenario that every FC run over it shares.
struct Scenario {
  RoadGrid grid;
  TrajectorySet traj;
  Frames frames;
  ContactIndex contacts;

  Scenario(RoadGrid g, TrajectorySet t, double radius)
      : grid(std::move(g)), traj(std::move(t)), frames(traj), contacts(build_contact_index(traj, radius)) {}
};

struct SimOptions {
  SeedingMode seeding = SeedingMode::exact;
  double content_bits = 8.0 * 8.0 * 1024 * 1024;
  std::optional<std::vector<LinkId>> zoi;
  // When positive, per-window measurements are also collected.
  double window = 0.0;
  // Throws if the per-tick holder ledger ever fails to balance.
  bool audit = false;
  // Called after every tick with the holder flag of every node.
  std::function<void(int, std::span<const std::uint8_t>)> observer;
};

struct SimRun {
  SimOutcome outcome;
  SimOutcome windows;          // populated when SimOptions::window > 0
  std::vector<int> window_parent;
};

namespace detail {
enum : std::uint64_t { kSeedTag = 1, kDropTag, kEntryTag, kPickTag, kSendTag, kKeepTag };

inline void finish_outcome(SimOutcome& o, const IntervalPlan& plan) {
  for (int t = 0; t < o.T; ++t) {
    const double len = plan.length[t];
    for (int l = 0; l < o.L; ++l) {
      const auto c = o.idx(l, t);
      o.n[c] /= len;
      o.n_c[c] /= len;
      for (int u = 0; u < o.U; ++u) o.gamma[c * o.U + u] /= len;
      if (t > 0) {
        const auto p = o.idx(l, t - 1);
        o.v[c] = o.n[p] > 0.0 ? o.n_c[p] / o.n[p] : 0.0;
      }
    }
  }
}
}  // namespace detail

inline SimRun simulate(const Scenario& sc, const FcScheme& scheme, const ChannelModel& ch, const IntervalPlan& plan,
                       std::uint64_t seed, const SimOptions& opt = {}) {
  ch.validate();
  const int L = sc.grid.num_links();
  const int T = plan.count();
  require(scheme.links() == L && scheme.intervals() == T, ErrorKind::shape,
          "scheme is " + std::to_string(scheme.links()) + "x" + std::to_string(scheme.intervals()) +
              " but the scenario needs " + std::to_string(L) + "x" + std::to_string(T));
  require(plan.total_ticks() <= sc.traj.num_ticks, ErrorKind::range, "intervals exceed trajectory horizon");
  require(sc.contacts.radius == ch.radius, ErrorKind::invalid_parameter,
          "scenario contact radius differs from channel radius");
  require(opt.content_bits > 0.0, ErrorKind::invalid_parameter, "content size must be > 0");

  const auto& tr = sc.traj;
  const int N = tr.num_nodes();
  const double dt = tr.tick;
  const bool instant = ch.mode == TransferMode::instantaneous;

  SimRun run;
  SimOutcome& out = run.outcome;
  out.resize(L, T, 1);
  out.tick = dt;
  out.seed = seed;
  out.durations = plan.durations();

  std::optional<WindowPlan> wp;
  std::vector<int> tick_window;
  if (opt.window > 0.0) {
    wp = split_windows(plan, opt.window);
    run.windows.resize(L, wp->windows.count(), 1);
    run.windows.tick = dt;
    run.windows.seed = seed;
    run.windows.durations = wp->windows.durations();
    run.window_parent = wp->parent;
    tick_window.assign(plan.total_ticks(), -1);
    for (int w = 0; w < wp->windows.count(); ++w)
      for (int k = 0; k < wp->windows.length[w]; ++k) tick_window[wp->windows.start[w] + k] = w;
  }

  std::vector<std::uint8_t> holder(N, 0), sender(N, 0);
  std::vector<int> partner(N, -1), engaged(N, -1);
  std::vector<double> bits(N, 0.0);
  std::vector<int> pending;
  std::vector<std::vector<int>> on_link(L);
  long holders = 0;

  auto abort_transfer = [&](int i) {
    const int p = partner[i];
    if (p < 0) return;
    partner[i] = partner[p] = -1;
    sender[i] = sender[p] = 0;
    bits[i] = bits[p] = 0.0;
  };
  auto link_at = [&](int i, int k) { return tr.nodes[i].at(k).link; };

  struct Cand {
    int holder;
    double key;
    int other;
    double d;
  };
  std::vector<Cand> cand;
  struct Offer {
    int receiver;
    double key;
    int sender;
  };
  std::vector<Offer> offers;

  for (int t = 0; t < T; ++t) {
    for (int k = plan.start[t]; k < plan.start[t] + plan.length[t]; ++k) {
      long departed = 0, seeded = 0, dropped = 0, entry_drops = 0, received = 0;
      const long holders_before = holders;

      if (k > 0)
        for (int i : sc.frames.at(k - 1))
          if (tr.nodes[i].exit_tick() == k - 1) {
            abort_transfer(i);
            if (holder[i]) {
              holder[i] = 0;
              ++departed;
            }
          }
      const auto present = sc.frames.at(k);

      // (1) interval-boundary seeding
      if (k == plan.start[t]) {
        for (auto& v : on_link) v.clear();
        for (int i : present) on_link[link_at(i, k)].push_back(i);
        for (LinkId l = 0; l < L; ++l) {
          auto& nodes = on_link[l];
          const long target = static_cast<long>(std::floor(scheme.s(l, t) * nodes.size() + 0.5));
          long have = 0;
          for (int i : nodes) have += holder[i];
          auto by_key = [&](std::uint64_t tag) {
            return [&, tag](int x, int y) {
              return keyed_uniform({seed, tag, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(k)}) <
                     keyed_uniform({seed, tag, static_cast<std::uint64_t>(y), static_cast<std::uint64_t>(k)});
            };
          };
          if (have < target) {
            std::vector<int> pool;
            for (int i : nodes)
              if (!holder[i]) pool.push_back(i);
            std::sort(pool.begin(), pool.end(), by_key(detail::kSeedTag));
            for (long q = 0; q < target - have; ++q) {
              abort_transfer(pool[q]);
              holder[pool[q]] = 1;
              ++out.seeded[out.idx(l, t)];
              ++seeded;
            }
          } else if (have > target && opt.seeding == SeedingMode::exact) {
            std::vector<int> pool;
            for (int i : nodes)
              if (holder[i]) pool.push_back(i);
            std::sort(pool.begin(), pool.end(), by_key(detail::kDropTag));
            for (long q = 0; q < have - target; ++q) {
              abort_transfer(pool[q]);
              holder[pool[q]] = 0;
              ++out.dropped[out.idx(l, t)];
              ++dropped;
            }
          }
        }
      }

      // (2) entering a new link with content: keep with probability b
      for (int i : present) {
        if (!holder[i] || k == tr.nodes[i].enter_tick) continue;
        const LinkId l = link_at(i, k);
        if (l == link_at(i, k - 1)) continue;
        if (keyed_uniform({seed, detail::kEntryTag, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(k)}) >=
            scheme.b(l, t)) {
          abort_transfer(i);
          holder[i] = 0;
          ++entry_drops;
        }
      }

      auto gamma_cell = [&](int i) -> double& {
        return out.gamma[out.idx(link_at(i, k), t) * out.U + ch.technology % out.U];
      };
      std::vector<int> transmitting;
      auto complete = [&](int r) {
        const bool keep = keyed_uniform({seed, detail::kKeepTag, static_cast<std::uint64_t>(r),
                                         static_cast<std::uint64_t>(k)}) < scheme.b(link_at(r, k), t);
        if (keep) pending.push_back(r);
      };

      // (3a) transfers in flight
      pending.clear();
      if (!instant) {
        for (int i : present) {
          if (!sender[i] || partner[i] < 0) continue;
          const int r = partner[i];
          const double d = distance(tr.nodes[i].at(k).pos, tr.nodes[r].at(k).pos);
          if (d > ch.radius) {
            abort_transfer(i);
            continue;
          }
          engaged[i] = engaged[r] = k;
          transmitting.push_back(i);
          bits[i] += detail::shannon_rate(ch, d) * dt;
          if (bits[i] >= opt.content_bits) {
            abort_transfer(i);
            complete(r);
          }
        }
      }

      // (3b) new transfers between exactly one holder and one non-holder
      cand.clear();
      for (const auto& p : sc.contacts.at(k)) {
        if (holder[p.i] == holder[p.j]) continue;
        const int h = holder[p.i] ? p.i : p.j;
        const int o = holder[p.i] ? p.j : p.i;
        if (!instant && (engaged[h] == k || engaged[o] == k || partner[h] >= 0 || partner[o] >= 0)) continue;
        const double key = keyed_uniform({seed, detail::kPickTag, static_cast<std::uint64_t>(p.i),
                                          static_cast<std::uint64_t>(p.j), static_cast<std::uint64_t>(k)});
        cand.push_back({h, key, o, p.d});
      }
      std::sort(cand.begin(), cand.end(),
                [](const Cand& x, const Cand& y) { return x.holder != y.holder ? x.holder < y.holder : x.key < y.key; });
      offers.clear();
      for (std::size_t q = 0; q < cand.size();) {
        const int h = cand[q].holder;
        std::size_t end = q;
        while (end < cand.size() && cand[end].holder == h) ++end;
        std::size_t pick = q;
        if (!instant)
          while (pick < end && engaged[cand[pick].other] == k) ++pick;
        if (pick < end) {
          const auto& c = cand[pick];
          const auto lo = static_cast<std::uint64_t>(std::min(h, c.other));
          const auto hi = static_cast<std::uint64_t>(std::max(h, c.other));
          const bool send = keyed_uniform({seed, detail::kSendTag, lo, hi, static_cast<std::uint64_t>(k)}) <
                            scheme.a(link_at(h, k), t);
          if (send) {
            if (instant) {
              offers.push_back({c.other, c.key, h});
            } else {
              engaged[h] = engaged[c.other] = k;
              transmitting.push_back(h);
              partner[h] = c.other;
              partner[c.other] = h;
              sender[h] = 1;
              bits[h] = detail::shannon_rate(ch, c.d) * dt;
              if (bits[h] >= opt.content_bits) {
                abort_transfer(h);
                complete(c.other);
              }
            }
          }
        }
        q = end;
      }
      if (instant) {
        std::sort(offers.begin(), offers.end(), [](const Offer& x, const Offer& y) {
          if (x.receiver != y.receiver) return x.receiver < y.receiver;
          return x.key != y.key ? x.key < y.key : x.sender < y.sender;
        });
        for (std::size_t q = 0; q < offers.size(); ++q) {
          if (q > 0 && offers[q].receiver == offers[q - 1].receiver) continue;
          transmitting.push_back(offers[q].sender);
          complete(offers[q].receiver);
        }
      }
      for (int i : transmitting) gamma_cell(i) += 1.0;

      // (4) deliveries that were kept
      for (int r : pending)
        if (!holder[r]) {
          holder[r] = 1;
          ++received;
        }

      holders = holders_before - departed + seeded - dropped - entry_drops + received;
      if (opt.audit) {
        long recount = 0;
        for (int i : present) recount += holder[i];
        require(recount == holders, ErrorKind::data,
                "holder ledger out of balance at tick " + std::to_string(k));
      }

      // (5) accumulate
      const int w = wp ? tick_window[k] : -1;
      for (int i : present) {
        const LinkId l = link_at(i, k);
        out.n[out.idx(l, t)] += 1.0;
        if (holder[i]) out.n_c[out.idx(l, t)] += 1.0;
        if (w >= 0) {
          run.windows.n[run.windows.idx(l, w)] += 1.0;
          if (holder[i]) run.windows.n_c[run.windows.idx(l, w)] += 1.0;
        }
      }
      if (w >= 0)
        for (int i : transmitting) run.windows.gamma[run.windows.idx(link_at(i, k), w)] += 1.0;
      if (opt.observer) opt.observer(k, holder);
    }
  }

  detail::finish_outcome(out, plan);
  if (wp) detail::finish_outcome(run.windows, wp->windows);
  if (opt.zoi) out.alpha = success_ratios(out, *opt.zoi);
  return run;
}

inline SimOutcome run_fc(const Scenario& sc, const FcScheme& scheme, const ChannelModel& ch, const IntervalPlan& plan,
                         std::uint64_t seed, const SimOptions& opt = {}) {
  SimOptions o = opt;
  o.window = 0.0;
  return simulate(sc, scheme, ch, plan, seed, o).outcome;
}

}  // namespace fcplan
