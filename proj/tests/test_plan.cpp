#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <memory>

#include "fcplan/plan.hpp"
#include "test_support.hpp"

using namespace fcplan;
using fcplan::testing::repeat;
using fcplan::testing::track;
using fcplan::testing::trajectories;

namespace {

// 4x4 grid, two 5 min intervals, surrogate trained for a few epochs.
struct World {
  RoadGrid g = build_manhattan(4, 4, 150.0);
  RasterEmbedding emb = auto_raster(g);
  Scenario sc{g, simulate_manhattan(g, 0.08, SpeedModel::uniform(kmh(20), kmh(30)), 600.0, 5, 1.0, 200.0), 200.0};
  IntervalPlan plan = make_intervals({300.0, 300.0}, 1.0, 600);
  ChannelModel ch = [] {
    ChannelModel c;
    c.radius = 200.0;
    return c;
  }();
  ScenarioFeatures forecast = scenario_features(sc, plan, 60.0);
  SurrogateModel model;
  ServiceRequest req;
  CostWeights w;

  World() {
    auto schemes = gen_random_schemes(40, g.num_links(), plan.count(), 3, SchemeStyle::mixed, &emb);
    DatasetOptions o;
    o.window = 60.0;
    const auto ds = build_dataset(sc, plan, schemes, ch, 9, o);
    std::vector<int> pool(ds.pairs.size());
    std::iota(pool.begin(), pool.end(), 0);
    TrainOptions to;
    to.epochs = 8;
    to.folds = 0;
    model = train_surrogate(ds, emb, pool, to).model;
    req.zoi = {8};  // interior; stubs stay below 0.7 even under all-on
    req.alpha0 = 0.8;
    req.period = {300.0, 300.0};
  }

  Verifier verifier() const {
    Verifier v;
    v.scenario = &sc;
    v.channel = ch;
    v.plan = plan;
    return v;
  }

  PlanOptions options() const {
    PlanOptions p;
    p.candidates = 60;
    return p;
  }
};

const World& world() {
  static const World w;
  return w;
}

}  // namespace

TEST(Plan, AllOnIsFeasibleInTestWorld) {
  const auto& W = world();
  EXPECT_TRUE(verify_scheme(W.verifier(), all_on(W.g.num_links(), 2), W.req, W.w).feasible);
}

TEST(Plan, HugeMarginFallsBackToAllOn) {
  const auto& W = world();
  auto opt = W.options();
  opt.margin = 1e3;
  const auto r = bootstrap(W.model, W.forecast, W.req, W.w, opt, W.verifier(), 1);
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.passed_filter, 0);
  EXPECT_EQ(r.scheme, all_on(W.g.num_links(), 2));
  EXPECT_EQ(r.kind, "all-on");
}

TEST(Plan, BootstrapNeverCostsMoreThanAllOn) {
  const auto& W = world();
  const auto v = W.verifier();
  const double on = verify_scheme(v, all_on(W.g.num_links(), 2), W.req, W.w).cost;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = bootstrap(W.model, W.forecast, W.req, W.w, W.options(), v, seed);
    EXPECT_LE(r.verified_cost, on);
    EXPECT_EQ(r.examined, W.options().candidates);
    ASSERT_EQ(r.alpha.size(), 2u);
    for (const auto& a : r.alpha) {
      ASSERT_TRUE(a.has_value());
      EXPECT_GE(*a, W.req.alpha0);
    }
    // the emitted scheme is what was verified
    EXPECT_DOUBLE_EQ(verify_scheme(v, r.scheme, W.req, W.w).cost, r.verified_cost);
    if (r.fallback) EXPECT_EQ(r.scheme, all_on(W.g.num_links(), 2));
  }
}

TEST(Plan, Deterministic) {
  const auto& W = world();
  const auto a = bootstrap(W.model, W.forecast, W.req, W.w, W.options(), W.verifier(), 7);
  const auto b = bootstrap(W.model, W.forecast, W.req, W.w, W.options(), W.verifier(), 7);
  EXPECT_EQ(a.scheme, b.scheme);
  EXPECT_EQ(a.predicted_cost, b.predicted_cost);
  EXPECT_EQ(a.verified_cost, b.verified_cost);
  EXPECT_EQ(plan_summary(a, false).dump(), plan_summary(b, false).dump());
}

TEST(Plan, RaisingTargetNeverLowersCost) {
  const auto& W = world();
  double prev = 0.0;
  for (double a0 : {0.3, 0.5, 0.7, 0.8}) {
    auto req = W.req;
    req.alpha0 = a0;
    const auto r = bootstrap(W.model, W.forecast, req, W.w, W.options(), W.verifier(), 4);
    EXPECT_GE(r.verified_cost, prev - 1e-9) << "alpha0 " << a0;
    prev = r.verified_cost;
  }
}

TEST(Plan, EmptyZoiMakesRequestInfeasible) {
  // Two parked nodes on link 0; the ZOI (another link) never sees anyone.
  const auto g = build_manhattan(2, 2, 100.0);
  const Point p = g.links[0].midpoint();
  Scenario sc(g, trajectories({track(g, 0, repeat(p, 20), 0.0), track(g, 0, repeat(p, 20), 0.0)}, 20, 1.0), 50.0);
  Verifier v;
  v.scenario = &sc;
  v.channel.radius = 50.0;
  v.plan = make_intervals({20.0}, 1.0, 20);
  ServiceRequest req{{2}, 0.9, {20.0}};
  const auto d = verify_scheme(v, all_on(4, 1), req, CostWeights{});
  EXPECT_FALSE(d.feasible);
  ASSERT_EQ(d.alpha.size(), 1u);
  EXPECT_FALSE(d.alpha[0].has_value());

  const auto emb = auto_raster(g);
  const auto model = make_surrogate(emb);
  const auto f = scenario_features(sc, v.plan, 0.0);
  PlanOptions opt;
  opt.candidates = 10;
  try {
    bootstrap(model, f, req, CostWeights{}, opt, v, 1);
    FAIL() << "expected problem_infeasible";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::problem_infeasible);
  }
  // ZOI on the occupied link: everyone seeded, target met.
  req.zoi = {0};
  EXPECT_TRUE(verify_scheme(v, all_on(4, 1), req, CostWeights{}).feasible);
}

TEST(Plan, ReplanNeverWorseThanFeasibleIncumbent) {
  const auto& W = world();
  const auto v = W.verifier();
  const auto boot = bootstrap(W.model, W.forecast, W.req, W.w, W.options(), v, 11);
  SimOptions so;
  so.zoi = W.req.zoi;
  const auto live = run_fc(W.sc, boot.scheme, W.ch, W.plan, 99, so);
  const auto inc = verify_scheme(v, boot.scheme, W.req, W.w, 1);
  const auto r = replan(W.model, live, W.forecast, W.req, W.w, W.options(), v, boot.scheme, 1, 12);
  EXPECT_EQ(r.t0, 1);
  EXPECT_EQ(r.scheme.intervals(), 1);
  if (inc.feasible) EXPECT_LE(r.verified_cost, inc.cost);
  // the replanned tail, spliced onto the executed head, is what was verified
  const auto full = boot.scheme.spliced(1, r.scheme);
  EXPECT_DOUBLE_EQ(verify_scheme(v, full, W.req, W.w, 1).cost, r.verified_cost);
}

TEST(Plan, ReplanIntervalOutOfRange) {
  const auto& W = world();
  const auto on = all_on(W.g.num_links(), 2);
  const auto live = run_fc(W.sc, on, W.ch, W.plan, 1);
  for (int t0 : {0, 2, -1}) {
    try {
      replan(W.model, live, W.forecast, W.req, W.w, W.options(), W.verifier(), on, t0, 1);
      FAIL() << "t0 " << t0;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::range);
    }
  }
}

TEST(Plan, FullAvailabilityMakesReseedingFree) {
  const auto& W = world();
  const int L = W.g.num_links();
  detail::Scorer sc(W.model, W.forecast, W.req, W.w, 0.0, 1, 2);
  const std::vector<double> ones(L, 1.0), zeros(L, 0.0);
  Candidate with_one{all_on(L, 2), "x"}, with_zero{all_on(L, 2), "x"};
  sc.v0 = &ones;
  sc.score(with_one);
  sc.v0 = &zeros;
  sc.score(with_zero);
  // the only difference is the [s - v]+ term at t0, D per link
  EXPECT_NEAR(with_zero.predicted_cost - with_one.predicted_cost, L * W.w.content_bits, 1e-6 * L * W.w.content_bits);
}

TEST(Plan, CircularAnchorZoneShape) {
  const auto g = build_manhattan(5, 4, 150.0);
  const std::vector<LinkId> zoi{12};
  const auto huge = circular_az(g, zoi, 1e4, 2);
  EXPECT_EQ(huge, all_on(g.num_links(), 2));
  const auto zero = circular_az(g, zoi, 0.0, 2);
  int on = 0;
  for (LinkId l = 0; l < g.num_links(); ++l)
    if (zero.a(l, 0) > 0) {
      ++on;
      EXPECT_EQ(l, 12);
    }
  EXPECT_EQ(on, 1);
  // nested in R
  const auto radii = az_radius_sweep(g, zoi, 75.0);
  EXPECT_EQ(radii.front(), 0.0);
  for (std::size_t i = 1; i < radii.size(); ++i) {
    const auto a = circular_az(g, zoi, radii[i - 1], 1), b = circular_az(g, zoi, radii[i], 1);
    for (LinkId l = 0; l < g.num_links(); ++l) EXPECT_LE(a.a(l, 0), b.a(l, 0));
  }
  EXPECT_EQ(circular_az(g, zoi, radii.back(), 1), all_on(g.num_links(), 1));
  EXPECT_THROW(circular_az(g, zoi, -1.0, 1), Error);
  EXPECT_THROW(circular_az(g, {}, 1.0, 1), Error);
}

TEST(Plan, AnchorZoneBaselinePicksSmallestFeasibleRadius) {
  const auto& W = world();
  const auto v = W.verifier();
  const auto radii = az_radius_sweep(W.g, W.req.zoi, 75.0);
  const auto r = circular_az_baseline(W.g, W.req, v, W.w, radii);
  ASSERT_TRUE(r.feasible);
  for (double R : radii) {
    if (R >= r.radius) break;
    EXPECT_FALSE(verify_scheme(v, circular_az(W.g, W.req.zoi, R, 2), W.req, W.w).feasible) << R;
  }
}

TEST(Plan, FullInfrastructureHasNoCommunication) {
  // parked nodes on the ZOI stay seeded: alpha = 1, gamma = 0
  const auto g = build_manhattan(2, 2, 100.0);
  const Point p = g.links[1].midpoint();
  Scenario sc(g, trajectories({track(g, 0, repeat(p, 30), 0.0), track(g, 0, repeat(p, 30), 0.0)}, 30, 1.0), 50.0);
  const auto plan = make_intervals({15.0, 15.0}, 1.0, 30);
  const auto fi = full_infrastructure_baseline({1}, 4, 2);
  for (LinkId l = 0; l < 4; ++l) {
    EXPECT_EQ(fi.a(l, 0), 0.0);
    EXPECT_EQ(fi.b(l, 1), 0.0);
    EXPECT_EQ(fi.s(l, 0), l == 1 ? 1.0 : 0.0);
  }
  ChannelModel ch;
  ch.radius = 50.0;
  const auto o = run_fc(sc, fi, ch, plan, 3);
  for (double gmm : o.gamma) EXPECT_EQ(gmm, 0.0);
  EXPECT_DOUBLE_EQ(success_ratio(o, {1}, 0), 1.0);
  EXPECT_DOUBLE_EQ(success_ratio(o, {1}, 1), 1.0);
  EXPECT_EQ(scheme_cost_breakdown(o, fi, CostWeights{}).communication, 0.0);
  EXPECT_THROW(full_infrastructure_baseline({4}, 4, 1), Error);
}

TEST(Plan, ExportWritesSchemeAndSummary) {
  const auto& W = world();
  const auto r = bootstrap(W.model, W.forecast, W.req, W.w, W.options(), W.verifier(), 1);
  const auto dir = std::filesystem::temp_directory_path() / "fcplan_test_plan_export";
  std::filesystem::create_directories(dir);
  export_plan(dir / "plan.csv", dir / "plan.json", r, false);
  std::ifstream c(dir / "plan.csv");
  EXPECT_EQ(read_scheme_csv(c), r.scheme);
  std::ifstream j(dir / "plan.json");
  const auto js = nlohmann::json::parse(j);
  EXPECT_EQ(js["verified_cost"].get<double>(), r.verified_cost);
  EXPECT_EQ(js["fallback"].get<bool>(), r.fallback);
  EXPECT_EQ(js["alpha"].size(), 2u);
  EXPECT_FALSE(js.contains("timings"));
  EXPECT_TRUE(plan_summary(r).contains("timings"));
  std::filesystem::remove_all(dir);
}
