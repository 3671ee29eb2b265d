#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dataset.hpp"
#include "error.hpp"
#include "fcsim.hpp"
#include "learn/surrogate.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "scheme.hpp"

namespace fcplan {

// Simulation context used to check candidates: the scenario the plan will
// run in, and the seeds a candidate has to pass under.
struct Verifier {
  const Scenario* scenario = nullptr;
  ChannelModel channel;
  IntervalPlan plan;
  SeedingMode seeding = SeedingMode::exact;
  double content_bits = 8.0 * 8.0 * 1024 * 1024;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  unsigned workers = 0;
};

struct Verdict {
  bool feasible = false;
  double cost = 0.0;                         // mean over seeds
  std::vector<std::optional<double>> alpha;  // mean over seeds per interval; nullopt if undefined in any
  std::vector<bool> feasible_per_seed;
};

// Simulates `scheme` over the whole period under every verifier seed and
// judges cost and feasibility over intervals [t0, T).
inline Verdict verify_scheme(const Verifier& v, const FcScheme& scheme, const ServiceRequest& req,
                             const CostWeights& w, int t0 = 0) {
  require(v.scenario != nullptr, ErrorKind::invalid_parameter, "verifier has no scenario");
  require(!v.seeds.empty(), ErrorKind::invalid_parameter, "verifier needs at least one seed");
  const int T = v.plan.count();
  std::vector<SimOutcome> outs(v.seeds.size());
  parallel_for(
      v.seeds.size(),
      [&](std::size_t i) {
        SimOptions so;
        so.seeding = v.seeding;
        so.content_bits = v.content_bits;
        so.zoi = req.zoi;
        outs[i] = run_fc(*v.scenario, scheme, v.channel, v.plan, v.seeds[i], so);
      },
      v.workers);
  Verdict d;
  d.feasible = true;
  d.alpha.assign(T - t0, 0.0);
  for (const auto& o : outs) {
    const bool ok = is_feasible(o, req, t0);
    d.feasible_per_seed.push_back(ok);
    d.feasible = d.feasible && ok;
    d.cost += scheme_cost(o, scheme, w, t0) / outs.size();
    for (int t = t0; t < T; ++t) {
      auto& a = d.alpha[t - t0];
      if (a && o.alpha[t])
        *a += *o.alpha[t] / outs.size();
      else
        a.reset();
    }
  }
  return d;
}

// ---- baselines --------------------------------------------------------------

inline Point zoi_centroid(const RoadGrid& g, const std::vector<LinkId>& zoi) {
  require(!zoi.empty(), ErrorKind::invalid_parameter, "ZOI is empty");
  Point c{0, 0};
  for (LinkId l : zoi) c = c + g.links.at(l).midpoint();
  return (1.0 / zoi.size()) * c;
}

// a = b = s = 1 on links whose midpoint lies within R of the ZOI centroid
// (the link nearest the centroid is always inside), 0 elsewhere.
inline FcScheme circular_az(const RoadGrid& g, const std::vector<LinkId>& zoi, double R, int T) {
  require(R >= 0.0, ErrorKind::invalid_parameter, "radius must be >= 0");
  const Point c = zoi_centroid(g, zoi);
  LinkId nearest = 0;
  for (LinkId l = 1; l < g.num_links(); ++l)
    if (distance(g.links[l].midpoint(), c) < distance(g.links[nearest].midpoint(), c)) nearest = l;
  FcScheme s(g.num_links(), T);
  for (LinkId l = 0; l < g.num_links(); ++l)
    if (l == nearest || distance(g.links[l].midpoint(), c) <= R)
      for (int t = 0; t < T; ++t) s.set(l, t, 1.0, 1.0, 1.0);
  return s;
}

// Radii from 0 up to the farthest link midpoint, `steps` apart.
inline std::vector<double> az_radius_sweep(const RoadGrid& g, const std::vector<LinkId>& zoi, double step) {
  require(step > 0.0, ErrorKind::invalid_parameter, "radius step must be > 0");
  const Point c = zoi_centroid(g, zoi);
  double far = 0.0;
  for (const auto& l : g.links) far = std::max(far, distance(l.midpoint(), c));
  std::vector<double> r;
  for (double x = 0.0; x < far + step; x += step) r.push_back(x);
  return r;
}

struct AzResult {
  FcScheme scheme;
  double radius = 0.0;
  bool feasible = false;
  Verdict verdict;
};

// Smallest radius in the sweep whose scheme verifies; otherwise the largest,
// flagged infeasible.
inline AzResult circular_az_baseline(const RoadGrid& g, const ServiceRequest& req, const Verifier& v,
                                     const CostWeights& w, std::vector<double> radii) {
  require(!radii.empty(), ErrorKind::invalid_parameter, "radius sweep is empty");
  std::sort(radii.begin(), radii.end());
  AzResult r;
  for (double R : radii) {
    r.scheme = circular_az(g, req.zoi, R, v.plan.count());
    r.radius = R;
    r.verdict = verify_scheme(v, r.scheme, req, w);
    r.feasible = r.verdict.feasible;
    if (r.feasible) break;
  }
  return r;
}

// Infrastructure only: no device-to-device replication or caching, the ZOI
// is reseeded at every interval start.
inline FcScheme full_infrastructure_baseline(const std::vector<LinkId>& zoi, int L, int T) {
  FcScheme s(L, T);
  for (LinkId l : zoi) {
    require(l >= 0 && l < L, ErrorKind::invalid_parameter, "ZOI link outside the grid");
    for (int t = 0; t < T; ++t) s.set(l, t, 0.0, 0.0, 1.0);
  }
  return s;
}

// ---- planner ----------------------------------------------------------------

struct PlanOptions {
  int candidates = 400;
  double margin = 0.05;
  int verify_top_k = 5;
  double perturb_sigma = 0.1;
  int perturb_rounds = 4;
  double perturb_share = 0.5;  // fraction of the candidate budget spent on local search
  double az_step = 75.0;
};

struct Candidate {
  FcScheme scheme;  // full period
  std::string kind;
  double predicted_cost = 0.0;
  std::vector<std::optional<double>> predicted_alpha;
  bool passes = false;
};

struct PlanResult {
  FcScheme scheme;  // A* over the planned intervals (full period for bootstrap, tail for replan)
  std::string kind;
  int t0 = 0;
  double predicted_cost = 0.0;
  double verified_cost = 0.0;
  std::vector<std::optional<double>> alpha;
  bool fallback = false;
  int examined = 0;
  int passed_filter = 0;
  int verified = 0;
  double seconds = 0.0;
  double predict_seconds = 0.0;
  double verify_seconds = 0.0;
};

namespace detail {

// Interval-level n from window features.
inline std::vector<double> forecast_n(const ScenarioFeatures& f, int T) {
  const int L = f.m.L;
  std::vector<double> n(static_cast<std::size_t>(L) * T, 0.0), len(T, 0.0);
  for (int w = 0; w < f.m.T; ++w) {
    len[f.parent[w]] += f.durations[w];
    for (LinkId l = 0; l < L; ++l) n[f.parent[w] * L + l] += f.durations[w] * f.m.n[f.m.idx(l, w)];
  }
  for (int t = 0; t < T; ++t)
    for (LinkId l = 0; l < L; ++l)
      if (len[t] > 0) n[t * L + l] /= len[t];
  return n;
}

inline FcScheme perturb(const FcScheme& s, double sigma, int t0, Rng& rng) {
  FcScheme o = s;
  auto clamp = [](double x) { return std::clamp(x, 0.0, 1.0); };
  for (int t = t0; t < s.intervals(); ++t)
    for (LinkId l = 0; l < s.links(); ++l)
      o.set(l, t, clamp(s.a(l, t) + sigma * rng.normal()), clamp(s.b(l, t) + sigma * rng.normal()),
            clamp(s.s(l, t) + sigma * rng.normal()));
  return o;
}

struct Scorer {
  const ServiceRequest& req;
  const CostWeights& w;
  double threshold;
  int t0;
  IntervalPredictor predictor;
  std::vector<double> n;                    // forecast n per (t, l)
  std::vector<double> durations;            // per interval
  const std::vector<double>* v0 = nullptr;  // availability at t0 from the live run

  Scorer(const SurrogateModel& model, const ScenarioFeatures& f, const ServiceRequest& r, const CostWeights& cw,
         double thr, int start, int T)
      : req(r), w(cw), threshold(thr), t0(start), predictor(model, f.m, f.parent, f.durations), n(forecast_n(f, T)),
        durations(T, 0.0) {
    for (int k = 0; k < f.m.T; ++k) durations[f.parent[k]] += f.durations[k];
  }

  void score(Candidate& c) const {
    const int T = c.scheme.intervals(), L = c.scheme.links();
    const auto pred = predictor(c.scheme);
    SimOutcome o;
    o.resize(L, T, 1);
    o.durations = durations;
    o.n = n;
    o.gamma = pred.gamma;
    // holders never outnumber nodes
    for (std::size_t i = 0; i < o.n_c.size(); ++i) o.n_c[i] = std::min(pred.n_c[i], n[i]);
    for (int t = 1; t < T; ++t)
      for (LinkId l = 0; l < L; ++l) {
        const auto p = o.idx(l, t - 1);
        o.v[o.idx(l, t)] = o.n[p] > 0 ? o.n_c[p] / o.n[p] : 0.0;
      }
    if (v0)
      for (LinkId l = 0; l < L; ++l) o.v[o.idx(l, t0)] = (*v0)[l];
    c.predicted_cost = scheme_cost(o, c.scheme, w, t0);
    c.predicted_alpha = success_ratios(o, req.zoi, t0);
    c.passes = std::all_of(c.predicted_alpha.begin(), c.predicted_alpha.end(),
                           [&](const auto& a) { return a && *a >= threshold; });
  }

  void score(std::vector<Candidate>& cs, std::size_t from, unsigned workers) const {
    parallel_for(cs.size() - from, [&](std::size_t i) { score(cs[from + i]); }, workers);
  }
};

}  // namespace detail

// Candidate search over the surrogate, then simulation on the cheapest
// survivors. Columns t < t0 of every candidate equal `base`; cost and
// feasibility are judged over [t0, T). `live_v` (per link, availability
// entering t0) replaces the predicted carry-over in the predicted cost.
inline PlanResult plan_search(const SurrogateModel& model, const ScenarioFeatures& forecast, const ServiceRequest& req,
                              const CostWeights& w, const PlanOptions& opt, const Verifier& verifier,
                              std::uint64_t seed, int t0, const FcScheme& base,
                              const std::vector<double>* live_v, const FcScheme* incumbent) {
  const auto start = std::chrono::steady_clock::now();
  auto since = [](auto t) { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count(); };
  const RoadGrid& g = verifier.scenario->grid;
  const int L = g.num_links(), T = verifier.plan.count();
  req.validate(L);
  require(opt.candidates >= 1 && opt.verify_top_k >= 1 && opt.margin >= 0.0, ErrorKind::invalid_parameter,
          "bad planner options");
  require(base.links() == L && base.intervals() == T, ErrorKind::shape, "base scheme does not match the scenario");
  require(forecast.m.L == L, ErrorKind::shape, "forecast does not match the grid");
  for (int t : forecast.parent) require(t >= 0 && t < T, ErrorKind::shape, "forecast windows exceed the period");

  PlanResult res;
  res.t0 = t0;
  const detail::Scorer scorer = [&] {
    detail::Scorer sc(model, forecast, req, w, req.alpha0 * (1.0 + opt.margin), t0, T);
    sc.v0 = live_v;
    return sc;
  }();

  auto with_tail = [&](const FcScheme& full) { return t0 == 0 ? full : base.spliced(t0, full.tail(t0)); };
  const FcScheme on = with_tail(all_on(L, T));

  // (1) structured candidates, then random ones
  std::vector<Candidate> cand;
  cand.push_back({on, "all-on"});
  if (incumbent) cand.push_back({*incumbent, "incumbent"});
  for (double R : az_radius_sweep(g, req.zoi, opt.az_step))
    cand.push_back({with_tail(circular_az(g, req.zoi, R, T)), "az r=" + std::to_string(static_cast<int>(R))});
  const int local = static_cast<int>(opt.perturb_share * opt.candidates);
  const int n_random = std::max(0, opt.candidates - local - static_cast<int>(cand.size()));
  if (n_random > 0) {
    RasterEmbedding emb;
    emb.H = model.arch().H;
    emb.W = model.arch().W;
    emb.cell_of.resize(L);
    for (LinkId l = 0; l < L; ++l) emb.cell_of[l] = {model.cell_of[l] / emb.W, model.cell_of[l] % emb.W};
    auto rnd = gen_random_schemes(n_random, L, T, hash_key({seed, 0x726e64}), SchemeStyle::mixed, &emb);
    rnd.resize(n_random);  // drop the appended extremes
    for (auto& s : rnd) cand.push_back({with_tail(s), "random"});
  }
  const auto tp = std::chrono::steady_clock::now();
  scorer.score(cand, 0, verifier.workers);

  // (2) local search around the cheapest predicted survivor (all-on while
  // nothing survives)
  auto incumbent_of = [&]() -> int {
    int best = 0;
    for (int i = 0; i < static_cast<int>(cand.size()); ++i)
      if (cand[i].passes && (!cand[best].passes || cand[i].predicted_cost < cand[best].predicted_cost)) best = i;
    return best;
  };
  Rng prng(hash_key({seed, 0x707274}));
  const int rounds = std::max(1, opt.perturb_rounds);
  for (int r = 0; r < rounds && local > 0; ++r) {
    const FcScheme centre = cand[incumbent_of()].scheme;
    const int per = local / rounds + (r < local % rounds ? 1 : 0);
    const std::size_t from = cand.size();
    for (int q = 0; q < per; ++q)
      cand.push_back({with_tail(detail::perturb(centre, opt.perturb_sigma, t0, prng)), "perturbed"});
    scorer.score(cand, from, verifier.workers);
  }
  res.predict_seconds = since(tp);
  res.examined = static_cast<int>(cand.size());

  // (3) rank survivors
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(cand.size()); ++i)
    if (cand[i].passes) order.push_back(i);
  res.passed_filter = static_cast<int>(order.size());
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return cand[x].predicted_cost < cand[y].predicted_cost; });
  if (static_cast<int>(order.size()) > opt.verify_top_k) order.resize(opt.verify_top_k);

  // (4) verify; all-on (and the incumbent) always join the pool
  const auto tv = std::chrono::steady_clock::now();
  const Verdict v_on = verify_scheme(verifier, on, req, w, t0);
  if (!v_on.feasible)
    throw Error(ErrorKind::problem_infeasible, "all-on misses the target success ratio; the request is infeasible");
  struct Checked {
    int idx;
    Verdict v;
  };
  std::vector<Checked> ok;
  int top_ok = 0;
  for (int i : order) {
    const Verdict d = cand[i].scheme == on ? v_on : verify_scheme(verifier, cand[i].scheme, req, w, t0);
    ++res.verified;
    if (d.feasible) {
      ok.push_back({i, d});
      ++top_ok;
    }
  }
  ok.push_back({0, v_on});
  if (incumbent) {
    const Verdict d = verify_scheme(verifier, cand[1].scheme, req, w, t0);
    if (d.feasible) ok.push_back({1, d});
  }
  res.verify_seconds = since(tv);
  const auto best = std::min_element(ok.begin(), ok.end(), [](const Checked& x, const Checked& y) {
    return x.v.cost != y.v.cost ? x.v.cost < y.v.cost : x.idx < y.idx;
  });
  const auto& c = cand[best->idx];
  res.scheme = t0 == 0 ? c.scheme : c.scheme.tail(t0);
  res.kind = c.kind;
  res.predicted_cost = c.predicted_cost;
  res.verified_cost = best->v.cost;
  res.alpha = best->v.alpha;
  res.fallback = top_ok == 0 && best->idx == 0;
  res.seconds = since(start);
  return res;
}

inline PlanResult bootstrap(const SurrogateModel& model, const ScenarioFeatures& forecast, const ServiceRequest& req,
                            const CostWeights& w, const PlanOptions& opt, const Verifier& verifier,
                            std::uint64_t seed) {
  const int L = verifier.scenario ? verifier.scenario->grid.num_links() : 0;
  return plan_search(model, forecast, req, w, opt, verifier, seed, 0, all_zero(std::max(L, 1), verifier.plan.count()),
                     nullptr, nullptr);
}

// New strategy for intervals [t0, T) given the scheme that ran so far.
// `live` is the outcome observed up to t0; its v at t0 prices reseeding.
inline PlanResult replan(const SurrogateModel& model, const SimOutcome& live, const ScenarioFeatures& forecast,
                         const ServiceRequest& req, const CostWeights& w, const PlanOptions& opt,
                         const Verifier& verifier, const FcScheme& current, int t0, std::uint64_t seed) {
  const int T = verifier.plan.count();
  require(t0 >= 1 && t0 < T, ErrorKind::range, "replan interval " + std::to_string(t0) + " outside 1.." +
                                                   std::to_string(T - 1));
  require(live.L == current.links() && live.T == T, ErrorKind::shape, "live outcome does not match the scheme");
  std::vector<double> v0(live.L);
  for (LinkId l = 0; l < live.L; ++l) v0[l] = live.v[live.idx(l, t0)];
  return plan_search(model, forecast, req, w, opt, verifier, seed, t0, current, &v0, &current);
}

// ---- export -------------------------------------------------------------------

inline nlohmann::json plan_summary(const PlanResult& r, bool with_timings = true) {
  nlohmann::json j;
  j["kind"] = r.kind;
  j["t0"] = r.t0;
  j["predicted_cost"] = r.predicted_cost;
  j["verified_cost"] = r.verified_cost;
  j["alpha"] = nlohmann::json::array();
  for (const auto& a : r.alpha) j["alpha"].push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
  j["fallback"] = r.fallback;
  j["candidates"] = {{"examined", r.examined}, {"passed_filter", r.passed_filter}, {"verified", r.verified}};
  if (with_timings)
    j["timings"] = {{"total_s", r.seconds}, {"predict_s", r.predict_seconds}, {"verify_s", r.verify_seconds}};
  return j;
}

inline void export_plan(const std::filesystem::path& csv, const std::filesystem::path& json, const PlanResult& r,
                        bool with_timings = true) {
  std::ofstream f(csv);
  require(f.good(), ErrorKind::io, "cannot write " + csv.string());
  write_scheme_csv(f, r.scheme);
  std::ofstream j(json);
  require(j.good(), ErrorKind::io, "cannot write " + json.string());
  j << plan_summary(r, with_timings).dump(2) << "\n";
}

}  // namespace fcplan
