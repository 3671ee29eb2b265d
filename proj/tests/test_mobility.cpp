#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "fcplan/mobility.hpp"
#include "test_support.hpp"

using namespace fcplan;
using fcplan::testing::repeat;
using fcplan::testing::track;
using fcplan::testing::trajectories;

TEST(Mobility, PoissonArrivalsPerStub) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto stubs = g.border_stubs();
  std::map<LinkId, double> total;
  const int seeds = 50;
  for (int seed = 0; seed < seeds; ++seed)
    for (const auto& a : manhattan_arrivals(g, 1.5, 3600.0, seed)) total[a.stub] += 1.0;
  const double expected = 1.5 * 3600.0;  // 5400
  const double sigma_of_mean = std::sqrt(expected / seeds);
  for (LinkId s : stubs) EXPECT_NEAR(total[s] / seeds, expected, 3.0 * sigma_of_mean) << "stub " << s;
}

TEST(Mobility, ZeroRateIsEmpty) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto tr = simulate_manhattan(g, 0.0, SpeedModel::constant(kmh(30)), 600.0, 3);
  EXPECT_EQ(tr.num_nodes(), 0);
  EXPECT_EQ(tr.num_ticks, 600);
}

TEST(Mobility, UniformSpeedRange) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto tr = simulate_manhattan(g, 0.2, SpeedModel::uniform(kmh(20), kmh(30)), 900.0, 5);
  ASSERT_GT(tr.num_nodes(), 100);
  for (const auto& n : tr.nodes)
    for (const auto& s : n.samples) {
      EXPECT_GE(s.speed, 5.555);
      EXPECT_LE(s.speed, 8.334);
    }
}

TEST(Mobility, Deterministic) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto a = simulate_manhattan(g, 0.1, SpeedModel::uniform(kmh(20), kmh(30)), 600.0, 9, 1.0, 120.0);
  const auto b = simulate_manhattan(g, 0.1, SpeedModel::uniform(kmh(20), kmh(30)), 600.0, 9, 1.0, 120.0);
  ASSERT_EQ(a.num_nodes(), b.num_nodes());
  for (int i = 0; i < a.num_nodes(); ++i) {
    ASSERT_EQ(a.nodes[i].enter_tick, b.nodes[i].enter_tick);
    ASSERT_EQ(a.nodes[i].samples.size(), b.nodes[i].samples.size());
    for (std::size_t k = 0; k < a.nodes[i].samples.size(); ++k) {
      ASSERT_EQ(a.nodes[i].samples[k].pos, b.nodes[i].samples[k].pos);
      ASSERT_EQ(a.nodes[i].samples[k].link, b.nodes[i].samples[k].link);
    }
  }
  const auto c = simulate_manhattan(g, 0.1, SpeedModel::uniform(kmh(20), kmh(30)), 600.0, 10, 1.0, 120.0);
  EXPECT_NE(a.num_nodes() == c.num_nodes() && a.nodes[0].samples.size() == c.nodes[0].samples.size() &&
                a.nodes[0].samples[0].pos == c.nodes[0].samples[0].pos,
            true);
}

TEST(Mobility, KinematicsAndRouting) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto tr = simulate_manhattan(g, 0.2, SpeedModel::uniform(kmh(20), kmh(30)), 1200.0, 21);
  int straight_steps = 0;
  for (const auto& n : tr.nodes) {
    std::vector<LinkId> seq;
    for (std::size_t k = 0; k < n.samples.size(); ++k) {
      const auto& s = n.samples[k];
      ASSERT_NEAR(point_segment_distance(s.pos, g.links[s.link].endpoints[0], g.links[s.link].endpoints[1]), 0.0,
                  1e-9);
      if (seq.empty() || seq.back() != s.link) seq.push_back(s.link);
      if (k == 0) continue;
      const double step = distance(n.samples[k - 1].pos, s.pos);
      ASSERT_LE(step, s.speed * tr.tick * 1.01);
      const Point d = s.pos - n.samples[k - 1].pos;
      if (std::abs(d.x) < 1e-9 || std::abs(d.y) < 1e-9) {
        // no corner inside this tick
        ASSERT_NEAR(step, s.speed * tr.tick, 0.01 * s.speed * tr.tick);
        ++straight_steps;
      }
    }
    for (std::size_t q = 2; q < seq.size(); ++q) ASSERT_NE(seq[q], seq[q - 2]) << "U-turn";
    // Every completed trip enters and leaves through a border stub.
    if (n.enter_tick > 0 && n.exit_tick() < tr.num_ticks - 1) {
      EXPECT_TRUE(g.links[seq.front()].is_border_stub);
      EXPECT_TRUE(g.links[seq.back()].is_border_stub);
      EXPECT_GE(seq.size(), 2u);  // corner intersections join two stubs
    }
  }
  EXPECT_GT(straight_steps, 1000);
}

TEST(Mobility, TraceStationaryNode) {
  const auto g = build_manhattan(5, 4, 150.0);
  const Point m = g.links[4].midpoint();
  std::ostringstream csv;
  csv << "t,node_id,x,y\n";
  for (int t = 0; t < 10; ++t) csv << t << ",7," << m.x << "," << m.y << "\n";
  std::istringstream in(csv.str());
  const auto tr = load_traces(in, g, 1.0);
  ASSERT_EQ(tr.num_nodes(), 1);
  ASSERT_EQ(tr.nodes[0].samples.size(), 10u);
  for (const auto& s : tr.nodes[0].samples) {
    EXPECT_EQ(s.link, 4);
    EXPECT_EQ(s.speed, 0.0);
  }
  EXPECT_EQ(tr.nodes[0].label, 7);
}

TEST(Mobility, TraceInterpolation) {
  const auto g = build_manhattan(5, 4, 150.0);
  std::istringstream in("t,node_id,x,y,speed\n0,1,150,160,2\n2,1,150,180,4\n");
  const auto tr = load_traces(in, g, 1.0);
  ASSERT_EQ(tr.nodes[0].samples.size(), 3u);
  EXPECT_DOUBLE_EQ(tr.nodes[0].samples[1].pos.y, 170.0);
  EXPECT_DOUBLE_EQ(tr.nodes[0].samples[1].speed, 3.0);
}

TEST(Mobility, TraceErrors) {
  const auto g = build_manhattan(5, 4, 150.0);
  {
    std::istringstream in("t,node_id,x,y\n0,1,150,160\n1,1,abc,160\n");
    try {
      load_traces(in, g);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::parse);
      EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
  }
  {
    std::istringstream in("t,node_id,x,y\n");
    try {
      load_traces(in, g);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::empty_trace);
    }
  }
  {
    std::istringstream in("t,node_id,x,y\n5,1,150,160\n4,1,150,170\n");
    EXPECT_THROW(load_traces(in, g), Error);
  }
}

TEST(Mobility, TraceOffGridSamplesDropped) {
  const auto g = build_manhattan(5, 4, 150.0);
  // Walks off the road into a block interior and back.
  std::istringstream in("t,node_id,x,y\n0,1,150,200\n1,1,150,210\n2,1,200,210\n3,1,150,220\n4,1,150,230\n");
  const auto tr = load_traces(in, g);
  EXPECT_EQ(tr.dropped_samples, 1u);
  ASSERT_EQ(tr.num_nodes(), 2);
  EXPECT_EQ(tr.nodes[0].samples.size(), 2u);
  EXPECT_EQ(tr.nodes[1].enter_tick, 3);
  EXPECT_EQ(tr.nodes[1].label, 1);
}

TEST(Mobility, TraceRoundTrip) {
  const auto g = build_manhattan(4, 4, 150.0);
  const auto tr = simulate_manhattan(g, 0.05, SpeedModel::constant(kmh(30)), 300.0, 2);
  std::stringstream ss;
  write_traces(ss, tr);
  const auto back = load_traces(ss, g);
  ASSERT_EQ(back.num_nodes(), tr.num_nodes());
  for (int i = 0; i < tr.num_nodes(); ++i) {
    ASSERT_EQ(back.nodes[i].enter_tick, tr.nodes[i].enter_tick);
    ASSERT_EQ(back.nodes[i].samples.size(), tr.nodes[i].samples.size());
    for (std::size_t k = 0; k < tr.nodes[i].samples.size(); ++k)
      ASSERT_EQ(back.nodes[i].samples[k].link, tr.nodes[i].samples[k].link);
  }
}

TEST(Contacts, StationaryPairs) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto near = trajectories({track(g, 0, repeat({150, 200}, 30)), track(g, 5, repeat({150, 250}, 20))}, 30);
  const auto ev = detect_contacts(near, 100.0);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].start, 5);
  EXPECT_EQ(ev[0].end, 24);
  EXPECT_EQ(ev[0].distances.size(), 20u);

  const auto far = trajectories({track(g, 0, repeat({150, 200}, 30)), track(g, 0, repeat({150, 350}, 30))}, 30);
  EXPECT_TRUE(detect_contacts(far, 100.0).empty());
}

TEST(Contacts, HeadOnPassDuration) {
  // Two vehicles at 30 km/h approaching on the same line: in range while the
  // gap shrinks from r to 0 and grows back to r, i.e. 2r / (2v).
  const auto g = build_manhattan(2, 6, 1000.0);  // one long horizontal road at y = 1000
  const double v = kmh(30);
  std::vector<Point> a, b;
  for (int k = 0; k < 120; ++k) {
    a.push_back({1000.0 + 100.0 + v * k, 1000.0});
    b.push_back({1000.0 + 100.0 + 2 * v * 60 - v * k + 0.5, 1000.0});
  }
  const auto tr = trajectories({track(g, 0, a, v), track(g, 0, b, v)}, 120);
  const auto ev = detect_contacts(tr, 100.0);
  ASSERT_EQ(ev.size(), 1u);
  const double expected = 2 * 100.0 / (2 * v);  // 12 s
  EXPECT_NEAR(ev[0].ticks() * tr.tick, expected, 1.0);
}

TEST(Contacts, EventInvariantsOnSyntheticRun) {
  const auto g = build_manhattan(4, 4, 150.0);
  const auto tr = simulate_manhattan(g, 0.1, SpeedModel::uniform(kmh(20), kmh(30)), 600.0, 4);
  const double r = 100.0;
  const auto ev = detect_contacts(tr, r);
  ASSERT_FALSE(ev.empty());
  for (std::size_t e = 0; e < ev.size(); ++e) {
    const auto& c = ev[e];
    ASSERT_LT(c.i, c.j);
    ASSERT_EQ(static_cast<int>(c.distances.size()), c.ticks());
    for (int k = c.start; k <= c.end; ++k) {
      const double d = distance(tr.nodes[c.i].at(k).pos, tr.nodes[c.j].at(k).pos);
      ASSERT_LE(d, r);
      ASSERT_DOUBLE_EQ(d, c.distances[k - c.start]);
    }
    auto out_of_range = [&](int k) {
      if (!tr.nodes[c.i].present(k) || !tr.nodes[c.j].present(k)) return true;
      return distance(tr.nodes[c.i].at(k).pos, tr.nodes[c.j].at(k).pos) > r;
    };
    ASSERT_TRUE(out_of_range(c.start - 1));
    ASSERT_TRUE(out_of_range(c.end + 1));
    if (e > 0 && ev[e - 1].i == c.i && ev[e - 1].j == c.j) ASSERT_LT(ev[e - 1].end + 1, c.start);
  }
  // Every in-range pair-tick belongs to exactly one event.
  std::size_t covered = 0;
  for (const auto& c : ev) covered += c.ticks();
  std::size_t brute = 0;
  for (int k = 0; k < tr.num_ticks; ++k)
    for (int i = 0; i < tr.num_nodes(); ++i)
      for (int j = i + 1; j < tr.num_nodes(); ++j)
        if (tr.nodes[i].present(k) && tr.nodes[j].present(k) &&
            distance(tr.nodes[i].at(k).pos, tr.nodes[j].at(k).pos) <= r)
          ++brute;
  EXPECT_EQ(covered, brute);
}

TEST(Features, SingleParkedNode) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto tr = trajectories({track(g, 0, repeat(g.links[2].midpoint(), 60))}, 60);
  const auto plan = make_intervals({60.0}, 1.0, tr.num_ticks);
  const auto mf = mobility_features(tr, detect_contacts(tr, 100.0), g, plan);
  EXPECT_DOUBLE_EQ(mf.n[mf.idx(2, 0)], 1.0);
  EXPECT_DOUBLE_EQ(mf.lambda[mf.idx(2, 0)], 0.0);
  EXPECT_DOUBLE_EQ(mf.tau[mf.idx(2, 0)], 0.0);
  EXPECT_DOUBLE_EQ(mf.nu[mf.idx(2, 0)], 0.0);
  EXPECT_FALSE(mf.empty[mf.idx(2, 0)]);
  EXPECT_TRUE(mf.empty[mf.idx(3, 0)]);
}

TEST(Features, TwoParkedNodesInRange) {
  const auto g = build_manhattan(5, 4, 150.0);
  const Point m = g.links[2].midpoint();
  const Point m2 = lerp(g.links[2].endpoints[0], g.links[2].endpoints[1], 0.3);
  const auto tr = trajectories({track(g, 0, repeat(m, 100)), track(g, 0, repeat(m2, 100))}, 100);
  const auto plan = make_intervals({100.0}, 1.0, tr.num_ticks);
  const auto mf = mobility_features(tr, detect_contacts(tr, 100.0), g, plan);
  EXPECT_DOUBLE_EQ(mf.n[mf.idx(2, 0)], 2.0);
  EXPECT_DOUBLE_EQ(mf.lambda[mf.idx(2, 0)], 1.0);
  EXPECT_DOUBLE_EQ(mf.tau[mf.idx(2, 0)], 100.0);
}

TEST(Features, IntervalsBeyondTraceAreRejected) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto tr = trajectories({track(g, 0, repeat(g.links[2].midpoint(), 10))}, 10);
  EXPECT_THROW(make_intervals({20.0}, 1.0, tr.num_ticks), Error);
  IntervalPlan bad;
  bad.start = {0};
  bad.length = {20};
  EXPECT_THROW(mobility_features(tr, {}, g, bad), Error);
}

TEST(Features, MatchBruteForceRecomputation) {
  const auto g = build_manhattan(4, 4, 150.0);
  const auto tr = simulate_manhattan(g, 0.1, SpeedModel::uniform(kmh(20), kmh(30)), 600.0, 8, 1.0, 100.0);
  const double r = 100.0;
  const auto plan = make_intervals({200.0, 250.0, 150.0}, 1.0, tr.num_ticks);
  const auto mf = mobility_features(tr, detect_contacts(tr, r), g, plan);
  const int L = g.num_links();

  // Single pass over raw samples, pairwise distances recomputed from positions.
  std::vector<double> cnt(L * 3, 0), spd(L * 3, 0), deg(L * 3, 0), tsum(L * 3, 0), tcnt(L * 3, 0);
  auto in_range = [&](int i, int j, int k) {
    return tr.nodes[i].present(k) && tr.nodes[j].present(k) &&
           std::hypot(tr.nodes[i].at(k).pos.x - tr.nodes[j].at(k).pos.x,
                      tr.nodes[i].at(k).pos.y - tr.nodes[j].at(k).pos.y) <= r;
  };
  for (int k = 0; k < 600; ++k) {
    const int t = k < 200 ? 0 : (k < 450 ? 1 : 2);
    for (int i = 0; i < tr.num_nodes(); ++i) {
      if (!tr.nodes[i].present(k)) continue;
      const int c = t * L + tr.nodes[i].at(k).link;
      cnt[c] += 1;
      spd[c] += tr.nodes[i].at(k).speed;
      for (int j = 0; j < tr.nodes.size(); ++j) {
        if (j == i || !in_range(i, j, k)) continue;
        deg[c] += 1;
        if (!in_range(i, j, k - 1)) {
          int e = k;
          while (in_range(i, j, e + 1)) ++e;
          tsum[c] += e - k + 1;
          tcnt[c] += 1;
        }
      }
    }
  }
  const int lens[3] = {200, 250, 150};
  for (int t = 0; t < 3; ++t)
    for (int l = 0; l < L; ++l) {
      const int c = t * L + l;
      EXPECT_NEAR(mf.n[c], cnt[c] / lens[t], 1e-12);
      EXPECT_NEAR(mf.nu[c], cnt[c] ? spd[c] / cnt[c] : 0.0, 1e-9);
      EXPECT_NEAR(mf.lambda[c], cnt[c] ? deg[c] / cnt[c] : 0.0, 1e-12);
      EXPECT_NEAR(mf.tau[c], tcnt[c] ? tsum[c] / tcnt[c] : 0.0, 1e-9);
    }
}

TEST(Features, NodeCountConservation) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto tr = simulate_manhattan(g, 0.1, SpeedModel::constant(kmh(30)), 400.0, 1);
  const auto plan = make_intervals({100.0, 300.0}, 1.0, tr.num_ticks);
  const auto mf = mobility_features(tr, detect_contacts(tr, 100.0), g, plan);
  const Frames fr(tr);
  for (int t = 0; t < 2; ++t) {
    double samples = 0.0;
    for (int k = plan.start[t]; k < plan.start[t] + plan.length[t]; ++k) samples += fr.at(k).size();
    double acc = 0.0;
    for (LinkId l = 0; l < g.num_links(); ++l) acc += mf.n[mf.idx(l, t)] * plan.length[t];
    EXPECT_NEAR(acc, samples, 1e-9);
  }
}
