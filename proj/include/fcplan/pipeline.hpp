#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "config.hpp"
#include "dataset.hpp"
#include "fcsim.hpp"
#include "learn/baselines.hpp"
#include "learn/metrics.hpp"
#include "learn/surrogate.hpp"
#include "parallel.hpp"
#include "plan.hpp"
#include "report.hpp"
#include "roadnet.hpp"

// Subcommands of the experiment tool. Each reads its inputs from the run
// directory and fails with a dependency error naming the subcommand that
// produces a missing input.
namespace fcplan {

namespace fs = std::filesystem;

struct RunContext {
  ExperimentConfig cfg;
  fs::path dir;
  bool deterministic_svg = false;
  std::ostream* log = &std::cerr;

  RunSeeds seeds() const { return {cfg.seed}; }
  void say(const std::string& s) const {
    if (log) *log << s << "\n" << std::flush;
  }
};

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw Error(ErrorKind::io, "run directory " + dir.string() + " is locked by another process (" +
                                     path_.string() + ")");
    std::fprintf(f, "locked\n");
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

namespace run {

inline std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void need(const RunContext& c, const fs::path& rel, const std::string& producer) {
  require(fs::exists(c.dir / rel), ErrorKind::dependency,
          "missing " + (c.dir / rel).string() + "; run the '" + producer + "' subcommand first");
}

inline std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot write " + p.string());
  return f;
}

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  require(f.good(), ErrorKind::io, "cannot read " + p.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, p.string() + ": " + e.what());
  }
}

// manifest.json: config, its hash, derived seeds and the artifacts of every
// step run so far. Nothing time-dependent goes in here.
inline void record(const RunContext& c, const std::string& step, const std::vector<std::string>& artifacts) {
  const fs::path mp = c.dir / "manifest.json";
  const std::string h = hex(config_hash(c.cfg));
  nlohmann::json m;
  if (fs::exists(mp)) {
    m = read_json(mp);
    if (m.value("config_hash", "") != h) m = nlohmann::json::object();
  }
  m["format"] = "fcplan-run-1";
  m["config_hash"] = h;
  auto cj = config_to_json(c.cfg);
  cj.erase("out");
  m["config"] = cj;
  m["seeds"] = c.seeds().to_json(c.cfg.dataset.scenarios);
  m["steps"][step] = artifacts;
  open_out(mp) << m.dump(2) << "\n";
}

inline void record_time(const RunContext& c, const std::string& step, double seconds) {
  const fs::path tp = c.dir / "timings.json";
  nlohmann::json t = fs::exists(tp) ? read_json(tp) : nlohmann::json::object();
  t[step] = seconds;
  open_out(tp) << t.dump(2) << "\n";
}

inline RoadGrid load_run_grid(const RunContext& c) {
  need(c, "grid.json", "grid");
  return grid_from_json(read_json(c.dir / "grid.json"));
}

inline std::string trace_name(int k) { return k < 0 ? "traces/deploy.csv" : "traces/train_" + std::to_string(k) + ".csv"; }

// k < 0: deployment scenario.
inline Scenario load_scenario(const RunContext& c, const RoadGrid& g, int k) {
  const std::string rel = trace_name(k);
  need(c, rel, "mobility");
  auto tr = load_traces((c.dir / rel).string(), g, c.cfg.mobility.tick);
  if (c.cfg.mobility.traces.empty()) tr.num_ticks = std::max(tr.num_ticks, period_ticks(c.cfg));
  return Scenario(g, std::move(tr), c.cfg.channel.radius);
}

inline IntervalPlan scenario_plan(const RunContext& c, const Scenario& sc) {
  require(sc.traj.num_ticks >= period_ticks(c.cfg), ErrorKind::validation,
          "mobility covers " + std::to_string(sc.traj.duration()) + " s, intervals need " +
              std::to_string(c.cfg.period()) + " s");
  return make_plan(c.cfg, sc.traj.num_ticks);
}

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- steps ----------------------------------------------------------------

inline void grid(const RunContext& c) {
  const auto g = make_grid(c.cfg);
  make_request(c.cfg, g);  // ZOI must exist in this grid
  const auto emb = auto_raster(g);
  open_out(c.dir / "grid.json") << grid_to_json(g).dump(2) << "\n";
  nlohmann::json r;
  r["H"] = emb.H;
  r["W"] = emb.W;
  r["injective"] = emb.injective();
  for (const auto& cell : emb.cell_of) r["cells"].push_back({cell.row, cell.col});
  open_out(c.dir / "raster.json") << r.dump(2) << "\n";
  c.say("grid: " + std::to_string(g.num_links()) + " links, " + std::to_string(g.intersections.size()) +
        " intersections, raster " + std::to_string(emb.H) + "x" + std::to_string(emb.W));
  record(c, "grid", {"grid.json", "raster.json"});
}

inline void mobility(const RunContext& c) {
  const auto g = load_run_grid(c);
  const auto s = c.seeds();
  std::vector<std::string> arts;
  std::ostringstream stats;
  stats << "scenario,nodes,samples,dropped_samples,mean_speed,contacts\n";
  for (int k = -1; k < c.cfg.dataset.scenarios; ++k) {
    const auto tr = make_mobility(c.cfg, g, k < 0 ? s.mobility_deploy() : s.mobility_train(k));
    const auto rel = trace_name(k);
    {
      auto f = open_out(c.dir / rel);
      write_traces(f, tr);
    }
    arts.push_back(rel);
    long samples = 0;
    double speed = 0.0;
    for (const auto& n : tr.nodes)
      for (const auto& x : n.samples) {
        ++samples;
        speed += x.speed;
      }
    const auto contacts = detect_contacts(tr, c.cfg.channel.radius);
    stats << (k < 0 ? std::string("deploy") : "train_" + std::to_string(k)) << "," << tr.num_nodes() << ","
          << samples << "," << tr.dropped_samples << "," << num(samples ? speed / samples : 0.0) << ","
          << contacts.size() << "\n";
    c.say("mobility " + rel + ": " + std::to_string(tr.num_nodes()) + " tracks, " + std::to_string(contacts.size()) +
          " contacts");
  }
  open_out(c.dir / "mobility.csv") << stats.str();
  arts.push_back("mobility.csv");
  record(c, "mobility", arts);
}

inline void write_features_csv(std::ostream& os, const ScenarioFeatures& f) {
  os << "window,interval,duration,link,n,lambda,tau,nu\n";
  for (int w = 0; w < f.m.T; ++w)
    for (LinkId l = 0; l < f.m.L; ++l) {
      const auto i = f.m.idx(l, w);
      os << w << "," << f.parent[w] << "," << num(f.durations[w]) << "," << l << "," << num(f.m.n[i]) << ","
         << num(f.m.lambda[i]) << "," << num(f.m.tau[i]) << "," << num(f.m.nu[i]) << "\n";
    }
}

inline void features(const RunContext& c) {
  const auto g = load_run_grid(c);
  const auto sc = load_scenario(c, g, -1);
  const auto f = scenario_features(sc, scenario_plan(c, sc), c.cfg.window);
  auto out = open_out(c.dir / "features.csv");
  write_features_csv(out, f);
  c.say("features: " + std::to_string(f.m.T) + " windows x " + std::to_string(f.m.L) + " links");
  record(c, "features", {"features.csv"});
}

inline void dataset(const RunContext& c) {
  const auto g = load_run_grid(c);
  const auto emb = auto_raster(g);
  const auto s = c.seeds();
  const int K = c.cfg.dataset.schemes;
  Dataset all;
  for (int k = 0; k < c.cfg.dataset.scenarios; ++k) {
    const auto sc = load_scenario(c, g, k);
    const auto plan = scenario_plan(c, sc);
    const auto schemes =
        gen_random_schemes(K, g.num_links(), plan.count(), s.schemes(k), parse_style(c.cfg.dataset.style), &emb);
    DatasetOptions o;
    o.window = c.cfg.window;
    o.seeding = c.cfg.seeding();
    o.content_bits = c.cfg.weights().content_bits;
    o.scenario_id = k;
    o.first_pair_id = k * (K + 2);
    auto ds = build_dataset(sc, plan, schemes, c.cfg.channel_model(), s.simulation(k), o);
    if (k == 0)
      all = std::move(ds);
    else
      merge_dataset(all, std::move(ds));
    c.say("dataset: scenario " + std::to_string(k) + " simulated " + std::to_string(schemes.size()) + " schemes");
  }
  all.meta["style"] = c.cfg.dataset.style;
  all.meta["config_hash"] = hex(config_hash(c.cfg));
  write_dataset(c.dir, all);
  c.say("dataset: " + std::to_string(all.pairs.size()) + " pairs, " + std::to_string(all.num_rows()) + " rows");
  record(c, "dataset", {"dataset.json", "pairs.csv"});
}

// Held-out pairs for testing, the rest for training; both sorted.
inline std::pair<std::vector<int>, std::vector<int>> split_pairs(int P, double test_fraction, std::uint64_t seed) {
  std::vector<int> order(P);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = P - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  const int n_test = std::clamp(static_cast<int>(std::lround(test_fraction * P)), 1, std::max(1, P - 1));
  std::vector<int> test(order.begin(), order.begin() + n_test), train(order.begin() + n_test, order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

inline std::vector<SampleRef> subsample(std::vector<SampleRef> s, int cap, std::uint64_t seed) {
  if (static_cast<int>(s.size()) <= cap) return s;
  Rng rng(seed);
  for (std::size_t i = s.size() - 1; i > 0; --i) std::swap(s[i], s[rng.below(i + 1)]);
  s.resize(cap);
  std::sort(s.begin(), s.end(), [](SampleRef a, SampleRef b) { return a.pair != b.pair ? a.pair < b.pair : a.window < b.window; });
  return s;
}

// Feasibility of each sample as judged through the surrogate: predicted
// holders (capped at n) over nodes on the ZOI.
inline std::vector<int> surrogate_labels(const SurrogateModel& model, const Dataset& ds,
                                         const std::vector<SampleRef>& samples, const std::vector<LinkId>& zoi,
                                         double alpha0) {
  std::vector<int> y(samples.size(), 0);
  std::map<int, CommFeatures> cache;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = samples[i];
    const auto& p = ds.pairs[r.pair];
    const auto& sf = ds.scenario_of(p);
    auto it = cache.find(r.pair);
    if (it == cache.end()) {
      if (cache.size() > 64) cache.clear();
      it = cache.emplace(r.pair, predict(model, sf.m, sf.parent, p.A)).first;
    }
    double num = 0.0, den = 0.0;
    for (LinkId l : zoi) {
      const double n = sf.m.n[sf.m.idx(l, r.window)];
      num += std::min(it->second.n_c[it->second.idx(l, r.window)], n);
      den += n;
    }
    y[i] = den > 0 && num / den >= alpha0 ? 1 : 0;
  }
  return y;
}

inline void train(const RunContext& c) {
  need(c, "pairs.csv", "dataset");
  const auto g = load_run_grid(c);
  const auto emb = auto_raster(g);
  const auto ds = read_dataset(c.dir);
  require(ds.L == g.num_links(), ErrorKind::dependency, "dataset does not match grid.json; rerun 'dataset'");
  const auto s = c.seeds();
  const auto [tr, te] = split_pairs(static_cast<int>(ds.pairs.size()), c.cfg.model.test_fraction, s.split());
  const auto opt = c.cfg.train_options();
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train_surrogate(ds, emb, tr, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_model(c.dir / "model.bin", res.model);

  {
    auto f = open_out(c.dir / "folds.csv");
    f << "fold,train_loss,val_loss,epochs\n";
    for (const auto& fl : res.folds)
      f << fl.fold << "," << num(fl.train) << "," << num(fl.val) << "," << fl.epochs << "\n";
  }
  {
    auto f = open_out(c.dir / "curve.csv");
    f << "epoch,train_loss,val_loss\n";
    const auto& fit = res.final_fit;
    for (std::size_t e = 0; e < fit.train_curve.size(); ++e)
      f << e + 1 << "," << num(fit.train_curve[e]) << ","
        << (e < fit.val_curve.size() ? num(fit.val_curve[e]) : std::string()) << "\n";
  }

  const auto train_s = all_samples(ds, tr), test_s = all_samples(ds, te);
  nlohmann::json m;
  m["dataset_rows"] = ds.num_rows();
  m["train_pairs"] = tr.size();
  m["test_pairs"] = te.size();
  m["test_samples"] = test_s.size();
  m["parameters"] = res.model.net.num_params();
  m["epochs"] = res.final_fit.epochs;
  m["best_epoch"] = res.final_fit.best_epoch;
  m["initial_val"] = res.final_fit.initial_val;
  m["best_val"] = res.final_fit.best_val;
  for (int plane = 0; plane < 2; ++plane) {
    const double mse = surrogate_mse(res.model, ds, test_s, plane);
    const double base = mean_baseline_mse(ds, train_s, test_s, plane);
    const std::string key = plane == 0 ? "n_c" : "gamma";
    m[key] = {{"mse", mse}, {"mean_baseline_mse", base}, {"gain", base > 0 ? 1.0 - mse / base : 0.0}};
  }

  // Feasibility classification for the request's ZOI and target.
  const auto req = make_request(c.cfg, g);
  const int cap = c.cfg.model.baseline_rows;
  const auto fit_s = subsample(train_s, cap, hash_key({s.split(), 1}));
  const auto eval_s = subsample(test_s, cap, hash_key({s.split(), 2}));
  const auto Xtr = feature_rows(ds, fit_s, res.model.norm), Xte = feature_rows(ds, eval_s, res.model.norm);
  const auto ytr = feasibility_labels(ds, fit_s, req.zoi, req.alpha0);
  const auto yte = feasibility_labels(ds, eval_s, req.zoi, req.alpha0);
  std::vector<std::pair<std::string, std::vector<int>>> preds;
  preds.emplace_back("DF", surrogate_labels(res.model, ds, eval_s, req.zoi, req.alpha0));
  {
    Knn knn;
    knn.fit(Xtr, ytr, std::min<int>(c.cfg.model.knn_k, static_cast<int>(Xtr.rows)));
    preds.emplace_back("KNN", knn.predict(Xte));
  }
  {
    DecisionTree dt;
    TreeOptions to;
    to.max_depth = c.cfg.model.tree_depth;
    dt.fit(Xtr, ytr, to, hash_key({s.split(), 3}));
    preds.emplace_back("DT", dt.predict(Xte));
  }
  {
    RandomForest rf;
    ForestOptions fo;
    fo.trees = c.cfg.model.forest_trees;
    fo.tree.max_depth = c.cfg.model.forest_depth;
    fo.seed = hash_key({s.split(), 4});
    rf.fit(Xtr, ytr, fo);
    preds.emplace_back("RF", rf.predict(Xte));
  }
  {
    auto f = open_out(c.dir / "fscores.csv");
    f << "model,f1,precision,recall,positives,rows\n";
    for (const auto& [name, p] : preds) {
      const auto cm = confusion(p, yte);
      f << name << "," << num(f_score(p, yte)) << "," << num(cm.precision()) << "," << num(cm.recall()) << ","
        << std::count(yte.begin(), yte.end(), 1) << "," << yte.size() << "\n";
      m["f1"][name] = f_score(p, yte);
    }
  }
  open_out(c.dir / "metrics.json") << m.dump(2) << "\n";
  record_time(c, "train_fit", secs);
  char buf[160];
  std::snprintf(buf, sizeof buf, "train: n_c held-out mse %.4g vs mean baseline %.4g (gain %.1f%%), %d epochs",
                m["n_c"]["mse"].get<double>(), m["n_c"]["mean_baseline_mse"].get<double>(),
                100 * m["n_c"]["gain"].get<double>(), res.final_fit.epochs);
  c.say(buf);
  record(c, "train", {"model.bin", "folds.csv", "curve.csv", "metrics.json", "fscores.csv"});
}

inline void bootstrap(const RunContext& c) {
  need(c, "model.bin", "train");
  const auto g = load_run_grid(c);
  const auto model = load_model(c.dir / "model.bin");
  require(model.links() == g.num_links(), ErrorKind::dependency, "model does not match grid.json; rerun 'train'");
  const auto sc = load_scenario(c, g, -1);
  const auto plan = scenario_plan(c, sc);
  const auto forecast = scenario_features(sc, plan, c.cfg.window);
  const auto req = make_request(c.cfg, g);
  const auto v = make_verifier(c.cfg, sc, plan);
  const auto r = fcplan::bootstrap(model, forecast, req, c.cfg.weights(), c.cfg.plan_options(), v, c.seeds().planner());
  export_plan(c.dir / "plan.csv", c.dir / "plan.json", r, true);
  record_time(c, "bootstrap_search", r.seconds);
  record_time(c, "bootstrap_predict", r.predict_seconds);
  record_time(c, "bootstrap_verify", r.verify_seconds);
  char buf[200];
  std::snprintf(buf, sizeof buf, "bootstrap: %s, verified cost %.4g D%s, %d/%d passed filter, %.2f s", r.kind.c_str(),
                r.verified_cost / c.cfg.weights().content_bits, r.fallback ? " (fallback)" : "", r.passed_filter,
                r.examined, r.seconds);
  c.say(buf);
  record(c, "bootstrap", {"plan.csv", "plan.json"});
}

inline StrategyRuns evaluate_scheme(const RunContext& c, const Scenario& sc, const IntervalPlan& plan,
                                    const ServiceRequest& req, const std::string& name, const FcScheme& scheme,
                                    SimOutcome* first = nullptr) {
  const int S = c.cfg.evaluate.seeds;
  std::vector<SimOutcome> outs(S);
  SimOptions so;
  so.zoi = req.zoi;
  so.seeding = c.cfg.seeding();
  so.content_bits = c.cfg.weights().content_bits;
  parallel_for(S, [&](std::size_t i) {
    outs[i] = run_fc(sc, scheme, c.cfg.channel_model(), plan, c.seeds().evaluation(static_cast<int>(i)), so);
  });
  StrategyRuns r;
  r.name = name;
  for (const auto& o : outs) {
    r.cost.push_back(scheme_cost(o, scheme, c.cfg.weights()));
    r.alpha.push_back(o.alpha);
    r.feasible.push_back(is_feasible(o, req));
  }
  if (first) *first = outs[0];
  return r;
}

inline void evaluate(const RunContext& c) {
  const auto g = load_run_grid(c);
  const auto sc = load_scenario(c, g, -1);
  const auto plan = scenario_plan(c, sc);
  const auto req = make_request(c.cfg, g);
  const int L = g.num_links(), T = plan.count();
  FcScheme main;
  std::string name = "scheme";
  if (c.cfg.evaluate.scheme.empty()) {
    need(c, "plan.csv", "bootstrap");
    main = load_scheme((c.dir / "plan.csv").string());
    name = "plan";
  } else if (c.cfg.evaluate.scheme == "all-on") {
    main = all_on(L, T);
  } else {
    main = load_scheme(c.cfg.evaluate.scheme);
  }
  require(main.links() == L && main.intervals() == T, ErrorKind::validation,
          "evaluated scheme is " + std::to_string(main.links()) + "x" + std::to_string(main.intervals()) +
              ", scenario needs " + std::to_string(L) + "x" + std::to_string(T));

  const auto v = make_verifier(c.cfg, sc, plan);
  const auto az = circular_az_baseline(g, req, v, c.cfg.weights(), az_radius_sweep(g, req.zoi, c.cfg.planner.az_step));

  SimOutcome first;
  std::vector<StrategyRuns> runs;
  runs.push_back(evaluate_scheme(c, sc, plan, req, name, main, &first));
  runs.push_back(evaluate_scheme(c, sc, plan, req, "all-on", all_on(L, T)));
  runs.push_back(evaluate_scheme(c, sc, plan, req, "az", az.scheme));
  runs.push_back(evaluate_scheme(c, sc, plan, req, "fi", full_infrastructure_baseline(req.zoi, L, T)));

  {
    auto f = open_out(c.dir / "evaluated_scheme.csv");
    write_scheme_csv(f, main);
    auto a = open_out(c.dir / "az.csv");
    write_scheme_csv(a, az.scheme);
  }
  {
    auto f = open_out(c.dir / "evaluation.csv");
    f << "strategy,seed,cost,feasible\n";
    auto a = open_out(c.dir / "alpha.csv");
    a << "strategy,seed,t,alpha\n";
    for (const auto& r : runs)
      for (std::size_t i = 0; i < r.cost.size(); ++i) {
        f << r.name << "," << i << "," << num(r.cost[i]) << "," << (r.feasible[i] ? 1 : 0) << "\n";
        for (int t = 0; t < T; ++t)
          a << r.name << "," << i << "," << t << "," << (r.alpha[i][t] ? num(*r.alpha[i][t]) : std::string()) << "\n";
      }
  }
  {
    auto f = open_out(c.dir / "outcome.csv");
    f << "link,t,n,n_c,gamma,v,seeded,dropped\n";
    for (int t = 0; t < T; ++t)
      for (LinkId l = 0; l < L; ++l) {
        const auto i = first.idx(l, t);
        f << l << "," << t << "," << num(first.n[i]) << "," << num(first.n_c[i]) << "," << num(first.gamma_at(l, t))
          << "," << num(first.v[i]) << "," << first.seeded[i] << "," << first.dropped[i] << "\n";
      }
  }
  nlohmann::json j;
  j["zoi"] = req.zoi;
  j["alpha0"] = req.alpha0;
  j["seeds"] = c.cfg.evaluate.seeds;
  j["az_radius"] = az.radius;
  j["az_feasible_in_verification"] = az.feasible;
  for (const auto& r : runs) {
    auto& s = j["strategies"][r.name];
    s["mean_cost"] = r.mean_cost();
    s["feasible_fraction"] = r.feasible_fraction();
    std::vector<bool> ok(r.feasible.begin(), r.feasible.end());
    s["rejection_probability"] = rejection_probability(ok);
  }
  j["feasible"] = runs[0].feasible_fraction() == 1.0;
  open_out(c.dir / "evaluation.json") << j.dump(2) << "\n";
  char buf[200];
  std::snprintf(buf, sizeof buf, "evaluate: %s feasible in %.0f%% of %d seeds, mean cost %.4g D (all-on %.4g, AZ r=%.0f %.4g)",
                name.c_str(), 100 * runs[0].feasible_fraction(), c.cfg.evaluate.seeds,
                runs[0].mean_cost() / c.cfg.weights().content_bits, runs[1].mean_cost() / c.cfg.weights().content_bits,
                az.radius, runs[2].mean_cost() / c.cfg.weights().content_bits);
  c.say(buf);
  record(c, "evaluate",
         {"evaluation.csv", "alpha.csv", "outcome.csv", "evaluation.json", "evaluated_scheme.csv", "az.csv"});
}

inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::ifstream f(p);
  require(f.good(), ErrorKind::io, "cannot read " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line))
    if (!line.empty()) rows.push_back(detail::split_csv(line));
  return rows;
}

inline void report(const RunContext& c) {
  need(c, "evaluation.csv", "evaluate");
  need(c, "alpha.csv", "evaluate");
  need(c, "evaluated_scheme.csv", "evaluate");
  const auto g = load_run_grid(c);
  const auto req = make_request(c.cfg, g);
  const auto scheme = load_scheme((c.dir / "evaluated_scheme.csv").string());

  std::map<std::string, StrategyRuns> runs;
  std::vector<std::string> order;
  for (const auto& r : read_csv_rows(c.dir / "evaluation.csv")) {
    require(r.size() == 4, ErrorKind::parse, "evaluation.csv: bad row");
    if (!runs.count(r[0])) order.push_back(r[0]);
    auto& s = runs[r[0]];
    s.name = r[0];
    s.cost.push_back(detail::parse_number(r[2], 0, "cost"));
    s.feasible.push_back(r[3] == "1");
  }
  std::map<std::string, std::map<int, std::vector<double>>> alpha;  // strategy -> t -> samples
  for (const auto& r : read_csv_rows(c.dir / "alpha.csv")) {
    require(r.size() == 4, ErrorKind::parse, "alpha.csv: bad row");
    if (!r[3].empty()) alpha[r[0]][std::stoi(r[2])].push_back(detail::parse_number(r[3], 0, "alpha"));
  }
  std::vector<std::string> arts;
  {
    auto f = open_out(c.dir / "report/boxplot.csv");
    write_box_csv_header(f);
    for (const auto& name : order)
      for (const auto& [t, xs] : alpha[name]) write_box_csv_row(f, name, t, box_stats(xs));
    arts.push_back("report/boxplot.csv");
  }
  require(runs.count("all-on"), ErrorKind::dependency, "evaluation.csv lacks the all-on runs; rerun 'evaluate'");
  {
    std::vector<StrategyRuns> base;
    for (const auto& name : order)
      if (name != order.front()) base.push_back(runs[name]);
    auto f = open_out(c.dir / "report/savings.csv");
    write_savings_csv(f, savings_table(runs[order.front()], base, runs["all-on"]));
    arts.push_back("report/savings.csv");
  }
  {
    auto f = open_out(c.dir / "report/strategy.csv");
    write_scheme_csv(f, scheme);
    arts.push_back("report/strategy.csv");
  }
  for (int t = 0; t < scheme.intervals(); ++t)
    for (int which = 0; which < 2; ++which) {
      std::vector<double> v(g.num_links());
      for (LinkId l = 0; l < g.num_links(); ++l) v[l] = which == 0 ? scheme.a(l, t) : scheme.b(l, t);
      const std::string rel = std::string("report/") + (which == 0 ? "replication" : "storage") + "_t" +
                              std::to_string(t) + ".svg";
      auto f = open_out(c.dir / rel);
      write_heatmap_svg(f, g, v,
                        std::string(which == 0 ? "replication a" : "storage b") + ", interval " + std::to_string(t),
                        req.zoi, c.deterministic_svg);
      arts.push_back(rel);
    }
  c.say("report: " + std::to_string(arts.size()) + " files under report/");
  record(c, "report", arts);
}

inline const std::vector<std::string>& step_names() {
  static const std::vector<std::string> n{"grid",      "mobility", "features", "dataset", "train",
                                          "bootstrap", "evaluate", "report",   "pipeline"};
  return n;
}

// Runs one subcommand (or all of them for "pipeline") under the run lock.
inline void run_step(const RunContext& c, const std::string& name) {
  RunLock lock(c.dir);
  auto timed = [&](const std::string& n, void (*fn)(const RunContext&)) {
    const auto t0 = std::chrono::steady_clock::now();
    fn(c);
    record_time(c, n, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };
  const std::vector<std::pair<std::string, void (*)(const RunContext&)>> steps{
      {"grid", grid},           {"mobility", mobility},   {"features", features}, {"dataset", dataset},
      {"train", train},         {"bootstrap", bootstrap}, {"evaluate", evaluate}, {"report", report}};
  if (name == "pipeline") {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& [n, fn] : steps) timed(n, fn);
    record_time(c, "pipeline", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    record(c, "pipeline", {"manifest.json"});
    return;
  }
  for (const auto& [n, fn] : steps)
    if (n == name) return timed(n, fn);
  throw Error(ErrorKind::validation, "unknown subcommand '" + name + "'");
}

}  // namespace run

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation: return 2;
    case ErrorKind::dependency: return 3;
    case ErrorKind::problem_infeasible: return 4;
    default: return 1;
  }
}

}  // namespace fcplan
