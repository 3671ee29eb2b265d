#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dataset.hpp"
#include "error.hpp"
#include "fcsim.hpp"
#include "learn/baselines.hpp"
#include "learn/surrogate.hpp"
#include "mobility.hpp"
#include "plan.hpp"
#include "rng.hpp"
#include "roadnet.hpp"
#include "scheme.hpp"

namespace fcplan {

// One JSON document describes a run. Missing keys take the defaults below.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "run";

  struct Grid {
    int rows = 5, cols = 4;
    double block = 150.0;
    std::string file;  // grid JSON; overrides rows/cols/block
  } grid;

  struct Mobility {
    double rate = 0.05;  // arrivals per second per border stub
    double speed_min_kmh = 30.0, speed_max_kmh = 30.0;
    double warmup = 300.0;
    double tick = 1.0;
    std::string traces;  // trace CSV; replaces synthetic mobility
  } mobility;

  struct Channel {
    double bandwidth = 1e6, sinr_db = 5.0, path_loss = 3.0, radius = 500.0, sinr_cap_db = 30.0;
    std::string mode = "capacity";
  } channel;

  std::vector<double> intervals{3600.0};
  double window = 36.0;  // dataset window (s); 0 = whole intervals

  struct Cost {
    double beta = 1.0, delta = 1.0, content_mb = 8.0;
  } cost;

  struct DatasetSpec {
    int schemes = 200;
    std::string style = "mixed";
    int scenarios = 1;
    std::string seeding = "exact";
  } dataset;

  struct Model {
    int c1 = 8, c2 = 8;
    double learning_rate = 0.01, momentum = 0.9;
    int batch = 32, epochs = 60, patience = 10, folds = 10, cv_epochs = 60;
    double validation_fraction = 0.1, test_fraction = 0.1;
    int knn_k = 5, tree_depth = 8, forest_trees = 20, forest_depth = 12;
    int baseline_rows = 20000;  // training rows for the classical baselines
  } model;

  struct Planner {
    int candidates = 400;
    double margin = 0.05;
    int verify_top_k = 5, verify_seeds = 3;
    double perturb_sigma = 0.1, perturb_share = 0.5;
    int perturb_rounds = 4;
    double az_step = 75.0;
  } planner;

  struct Request {
    std::vector<LinkId> zoi;  // empty: link nearest the grid centre
    double alpha0 = 0.9;
  } request;

  struct Evaluate {
    int seeds = 20;
    std::string scheme;  // scheme CSV or "all-on"; empty = the run's plan
  } evaluate;

  ChannelModel channel_model() const {
    ChannelModel c;
    c.bandwidth = channel.bandwidth;
    c.sinr_edge_db = channel.sinr_db;
    c.path_loss = channel.path_loss;
    c.radius = channel.radius;
    c.sinr_cap_db = channel.sinr_cap_db;
    c.mode = channel.mode == "instantaneous" ? TransferMode::instantaneous : TransferMode::capacity;
    return c;
  }
  CostWeights weights() const {
    CostWeights w;
    w.beta = cost.beta;
    w.delta = cost.delta;
    w.content_bits = cost.content_mb * 8.0 * 1024 * 1024;
    return w;
  }
  SeedingMode seeding() const { return dataset.seeding == "floor" ? SeedingMode::floor : SeedingMode::exact; }
  double period() const {
    double s = 0.0;
    for (double d : intervals) s += d;
    return s;
  }
  TrainOptions train_options() const {
    TrainOptions o;
    o.c1 = model.c1;
    o.c2 = model.c2;
    o.learning_rate = model.learning_rate;
    o.momentum = model.momentum;
    o.batch = model.batch;
    o.epochs = model.epochs;
    o.patience = model.patience;
    o.folds = model.folds;
    o.cv_epochs = model.cv_epochs;
    o.validation_fraction = model.validation_fraction;
    o.seed = hash_key({seed, 0x7472});
    return o;
  }
  PlanOptions plan_options() const {
    PlanOptions p;
    p.candidates = planner.candidates;
    p.margin = planner.margin;
    p.verify_top_k = planner.verify_top_k;
    p.perturb_sigma = planner.perturb_sigma;
    p.perturb_share = planner.perturb_share;
    p.perturb_rounds = planner.perturb_rounds;
    p.az_step = planner.az_step;
    return p;
  }
};

// Named sub-seeds, all derived from the master seed.
struct RunSeeds {
  std::uint64_t master;
  std::uint64_t mobility_train(int k) const { return hash_key({master, 0x6d6f62, static_cast<std::uint64_t>(k)}); }
  std::uint64_t mobility_deploy() const { return hash_key({master, 0x646570}); }
  std::uint64_t schemes(int k) const { return hash_key({master, 0x736368, static_cast<std::uint64_t>(k)}); }
  std::uint64_t simulation(int k) const { return hash_key({master, 0x73696d, static_cast<std::uint64_t>(k)}); }
  std::uint64_t planner() const { return hash_key({master, 0x706c6e}); }
  std::uint64_t verifier(int i) const { return hash_key({master, 0x766572, static_cast<std::uint64_t>(i)}); }
  std::uint64_t evaluation(int i) const { return hash_key({master, 0x65766c, static_cast<std::uint64_t>(i)}); }
  std::uint64_t split() const { return hash_key({master, 0x73706c}); }

  nlohmann::json to_json(int scenarios) const {
    nlohmann::json j;
    j["master"] = master;
    j["mobility_deploy"] = mobility_deploy();
    j["planner"] = planner();
    j["split"] = split();
    for (int k = 0; k < scenarios; ++k) {
      j["mobility_train"].push_back(mobility_train(k));
      j["schemes"].push_back(schemes(k));
      j["simulation"].push_back(simulation(k));
    }
    return j;
  }
};

namespace detail {

// Reads `key` into `dst` when present, noting type errors instead of throwing.
template <class T>
void read_key(const nlohmann::json& j, const char* key, T& dst, const std::string& where,
              std::vector<std::string>& errors) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    errors.push_back(where + key + ": wrong type");
  }
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key, std::vector<std::string>& errors) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) {
    errors.push_back(std::string(key) + ": expected an object");
    return empty;
  }
  return j.at(key);
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c);

// Parses and validates. Every problem found is reported in one validation
// error, one per line. Relative file paths resolve against `base`.
inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  std::vector<std::string> errs;
  ExperimentConfig c;
  if (!j.is_object()) throw Error(ErrorKind::validation, "config must be a JSON object");
  static const std::vector<std::string> known{"seed",    "out",       "grid",    "mobility", "channel",
                                              "intervals", "window",  "cost",    "dataset",  "model",
                                              "planner", "request",   "evaluate"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) errs.push_back("unknown key '" + k + "'");

  using detail::read_key;
  read_key(j, "seed", c.seed, "", errs);
  read_key(j, "out", c.out, "", errs);
  read_key(j, "intervals", c.intervals, "", errs);
  read_key(j, "window", c.window, "", errs);

  const auto& g = detail::section(j, "grid", errs);
  read_key(g, "rows", c.grid.rows, "grid.", errs);
  read_key(g, "cols", c.grid.cols, "grid.", errs);
  read_key(g, "block", c.grid.block, "grid.", errs);
  read_key(g, "file", c.grid.file, "grid.", errs);

  const auto& m = detail::section(j, "mobility", errs);
  read_key(m, "rate", c.mobility.rate, "mobility.", errs);
  read_key(m, "speed_min_kmh", c.mobility.speed_min_kmh, "mobility.", errs);
  read_key(m, "speed_max_kmh", c.mobility.speed_max_kmh, "mobility.", errs);
  read_key(m, "warmup", c.mobility.warmup, "mobility.", errs);
  read_key(m, "tick", c.mobility.tick, "mobility.", errs);
  read_key(m, "traces", c.mobility.traces, "mobility.", errs);

  const auto& ch = detail::section(j, "channel", errs);
  read_key(ch, "bandwidth", c.channel.bandwidth, "channel.", errs);
  read_key(ch, "sinr_db", c.channel.sinr_db, "channel.", errs);
  read_key(ch, "path_loss", c.channel.path_loss, "channel.", errs);
  read_key(ch, "radius", c.channel.radius, "channel.", errs);
  read_key(ch, "sinr_cap_db", c.channel.sinr_cap_db, "channel.", errs);
  read_key(ch, "mode", c.channel.mode, "channel.", errs);

  const auto& co = detail::section(j, "cost", errs);
  read_key(co, "beta", c.cost.beta, "cost.", errs);
  read_key(co, "delta", c.cost.delta, "cost.", errs);
  read_key(co, "content_mb", c.cost.content_mb, "cost.", errs);

  const auto& d = detail::section(j, "dataset", errs);
  read_key(d, "schemes", c.dataset.schemes, "dataset.", errs);
  read_key(d, "style", c.dataset.style, "dataset.", errs);
  read_key(d, "scenarios", c.dataset.scenarios, "dataset.", errs);
  read_key(d, "seeding", c.dataset.seeding, "dataset.", errs);

  const auto& md = detail::section(j, "model", errs);
  read_key(md, "c1", c.model.c1, "model.", errs);
  read_key(md, "c2", c.model.c2, "model.", errs);
  read_key(md, "learning_rate", c.model.learning_rate, "model.", errs);
  read_key(md, "momentum", c.model.momentum, "model.", errs);
  read_key(md, "batch", c.model.batch, "model.", errs);
  read_key(md, "epochs", c.model.epochs, "model.", errs);
  read_key(md, "patience", c.model.patience, "model.", errs);
  read_key(md, "folds", c.model.folds, "model.", errs);
  read_key(md, "cv_epochs", c.model.cv_epochs, "model.", errs);
  read_key(md, "validation_fraction", c.model.validation_fraction, "model.", errs);
  read_key(md, "test_fraction", c.model.test_fraction, "model.", errs);
  read_key(md, "knn_k", c.model.knn_k, "model.", errs);
  read_key(md, "tree_depth", c.model.tree_depth, "model.", errs);
  read_key(md, "forest_trees", c.model.forest_trees, "model.", errs);
  read_key(md, "forest_depth", c.model.forest_depth, "model.", errs);
  read_key(md, "baseline_rows", c.model.baseline_rows, "model.", errs);

  const auto& p = detail::section(j, "planner", errs);
  read_key(p, "candidates", c.planner.candidates, "planner.", errs);
  read_key(p, "margin", c.planner.margin, "planner.", errs);
  read_key(p, "verify_top_k", c.planner.verify_top_k, "planner.", errs);
  read_key(p, "verify_seeds", c.planner.verify_seeds, "planner.", errs);
  read_key(p, "perturb_sigma", c.planner.perturb_sigma, "planner.", errs);
  read_key(p, "perturb_share", c.planner.perturb_share, "planner.", errs);
  read_key(p, "perturb_rounds", c.planner.perturb_rounds, "planner.", errs);
  read_key(p, "az_step", c.planner.az_step, "planner.", errs);

  const auto& r = detail::section(j, "request", errs);
  read_key(r, "zoi", c.request.zoi, "request.", errs);
  read_key(r, "alpha0", c.request.alpha0, "request.", errs);

  const auto& e = detail::section(j, "evaluate", errs);
  read_key(e, "seeds", c.evaluate.seeds, "evaluate.", errs);
  read_key(e, "scheme", c.evaluate.scheme, "evaluate.", errs);

  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  auto resolve = [&](std::string& f) {
    if (!f.empty() && std::filesystem::path(f).is_relative() && !base.empty()) f = (base / f).string();
  };
  resolve(c.grid.file);
  resolve(c.mobility.traces);
  if (c.evaluate.scheme != "all-on") resolve(c.evaluate.scheme);

  if (c.grid.file.empty()) {
    check(c.grid.rows >= 2 && c.grid.cols >= 2, "grid.rows and grid.cols must be >= 2");
    check(c.grid.block > 0, "grid.block must be > 0");
  } else {
    check(std::filesystem::exists(c.grid.file), "grid.file not found: " + c.grid.file);
  }
  if (!c.mobility.traces.empty())
    check(std::filesystem::exists(c.mobility.traces), "mobility.traces not found: " + c.mobility.traces);
  check(c.mobility.rate >= 0, "mobility.rate must be >= 0");
  check(c.mobility.speed_min_kmh > 0 && c.mobility.speed_max_kmh >= c.mobility.speed_min_kmh,
        "mobility speeds must satisfy 0 < min <= max");
  check(c.mobility.warmup >= 0, "mobility.warmup must be >= 0");
  check(c.mobility.tick > 0, "mobility.tick must be > 0");
  check(c.channel.bandwidth > 0, "channel.bandwidth must be > 0");
  check(c.channel.path_loss >= 2, "channel.path_loss must be >= 2");
  check(c.channel.radius > 0, "channel.radius must be > 0");
  check(std::isfinite(c.channel.sinr_db) && std::isfinite(c.channel.sinr_cap_db), "channel SINR values must be finite");
  check(c.channel.mode == "capacity" || c.channel.mode == "instantaneous",
        "channel.mode must be 'capacity' or 'instantaneous'");
  check(!c.intervals.empty(), "intervals must not be empty");
  for (double x : c.intervals) check(x > 0, "interval durations must be > 0");
  check(c.window >= 0, "window must be >= 0");
  check(c.cost.beta >= 0 && c.cost.delta >= 0, "cost.beta and cost.delta must be >= 0");
  check(c.cost.content_mb > 0, "cost.content_mb must be > 0");
  check(c.dataset.schemes >= 1, "dataset.schemes must be >= 1");
  check(c.dataset.style == "iid" || c.dataset.style == "smoothed" || c.dataset.style == "mixed",
        "dataset.style must be iid, smoothed or mixed");
  check(c.dataset.scenarios >= 1, "dataset.scenarios must be >= 1");
  check(c.dataset.seeding == "exact" || c.dataset.seeding == "floor", "dataset.seeding must be exact or floor");
  check(c.model.c1 >= 1 && c.model.c2 >= 1, "model channel counts must be >= 1");
  check(c.model.learning_rate > 0, "model.learning_rate must be > 0");
  check(c.model.momentum >= 0 && c.model.momentum < 1, "model.momentum must be in [0, 1)");
  check(c.model.batch >= 1, "model.batch must be >= 1");
  check(c.model.epochs >= 0 && c.model.cv_epochs >= 0, "model epochs must be >= 0");
  check(c.model.patience >= 1, "model.patience must be >= 1");
  check(c.model.folds == 0 || c.model.folds >= 2, "model.folds must be 0 or >= 2");
  check(c.model.validation_fraction >= 0 && c.model.validation_fraction < 1,
        "model.validation_fraction must be in [0, 1)");
  check(c.model.test_fraction > 0 && c.model.test_fraction < 1, "model.test_fraction must be in (0, 1)");
  check(c.model.knn_k >= 1, "model.knn_k must be >= 1");
  check(c.model.tree_depth >= 0 && c.model.forest_depth >= 0, "tree depths must be >= 0");
  check(c.model.forest_trees >= 1, "model.forest_trees must be >= 1");
  check(c.model.baseline_rows >= 1, "model.baseline_rows must be >= 1");
  check(c.planner.candidates >= 1, "planner.candidates must be >= 1");
  check(c.planner.margin >= 0, "planner.margin must be >= 0");
  check(c.planner.verify_top_k >= 1 && c.planner.verify_seeds >= 1, "planner verify counts must be >= 1");
  check(c.planner.perturb_sigma >= 0, "planner.perturb_sigma must be >= 0");
  check(c.planner.perturb_share >= 0 && c.planner.perturb_share <= 1, "planner.perturb_share must be in [0, 1]");
  check(c.planner.perturb_rounds >= 1, "planner.perturb_rounds must be >= 1");
  check(c.planner.az_step > 0, "planner.az_step must be > 0");
  check(c.request.alpha0 > 0 && c.request.alpha0 <= 1, "request.alpha0 must be in (0, 1]");
  for (LinkId l : c.request.zoi) check(l >= 0, "request.zoi ids must be >= 0");
  check(c.evaluate.seeds >= 1, "evaluate.seeds must be >= 1");
  if (!c.evaluate.scheme.empty() && c.evaluate.scheme != "all-on")
    check(std::filesystem::exists(c.evaluate.scheme), "evaluate.scheme not found: " + c.evaluate.scheme);
  check(!c.out.empty(), "out must not be empty");
  {
    const auto shape = config_to_json(ExperimentConfig{});
    for (const auto& [k, v] : j.items())
      if (v.is_object() && shape.contains(k) && shape.at(k).is_object())
        for (const auto& [kk, vv] : v.items())
          if (!shape.at(k).contains(kk)) errs.push_back("unknown key '" + k + "." + kk + "'");
  }

  if (!errs.empty()) {
    std::string msg = std::to_string(errs.size()) + " problem(s) in config";
    for (const auto& s : errs) msg += "\n  " + s;
    throw Error(ErrorKind::validation, msg);
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& p) {
  std::ifstream in(p);
  require(in.good(), ErrorKind::validation, "cannot open config " + p.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::validation, p.string() + ": " + e.what());
  }
  return parse_config(j, p.parent_path());
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["grid"] = {{"rows", c.grid.rows}, {"cols", c.grid.cols}, {"block", c.grid.block}, {"file", c.grid.file}};
  j["mobility"] = {{"rate", c.mobility.rate},
                   {"speed_min_kmh", c.mobility.speed_min_kmh},
                   {"speed_max_kmh", c.mobility.speed_max_kmh},
                   {"warmup", c.mobility.warmup},
                   {"tick", c.mobility.tick},
                   {"traces", c.mobility.traces}};
  j["channel"] = {{"bandwidth", c.channel.bandwidth}, {"sinr_db", c.channel.sinr_db},
                  {"path_loss", c.channel.path_loss}, {"radius", c.channel.radius},
                  {"sinr_cap_db", c.channel.sinr_cap_db}, {"mode", c.channel.mode}};
  j["intervals"] = c.intervals;
  j["window"] = c.window;
  j["cost"] = {{"beta", c.cost.beta}, {"delta", c.cost.delta}, {"content_mb", c.cost.content_mb}};
  j["dataset"] = {{"schemes", c.dataset.schemes},
                  {"style", c.dataset.style},
                  {"scenarios", c.dataset.scenarios},
                  {"seeding", c.dataset.seeding}};
  const auto& m = c.model;
  j["model"] = {{"c1", m.c1},
                {"c2", m.c2},
                {"learning_rate", m.learning_rate},
                {"momentum", m.momentum},
                {"batch", m.batch},
                {"epochs", m.epochs},
                {"patience", m.patience},
                {"folds", m.folds},
                {"cv_epochs", m.cv_epochs},
                {"validation_fraction", m.validation_fraction},
                {"test_fraction", m.test_fraction},
                {"knn_k", m.knn_k},
                {"tree_depth", m.tree_depth},
                {"forest_trees", m.forest_trees},
                {"forest_depth", m.forest_depth},
                {"baseline_rows", m.baseline_rows}};
  const auto& p = c.planner;
  j["planner"] = {{"candidates", p.candidates},       {"margin", p.margin},
                  {"verify_top_k", p.verify_top_k},   {"verify_seeds", p.verify_seeds},
                  {"perturb_sigma", p.perturb_sigma}, {"perturb_share", p.perturb_share},
                  {"perturb_rounds", p.perturb_rounds}, {"az_step", p.az_step}};
  j["request"] = {{"zoi", c.request.zoi}, {"alpha0", c.request.alpha0}};
  j["evaluate"] = {{"seeds", c.evaluate.seeds}, {"scheme", c.evaluate.scheme}};
  return j;
}

// FNV-1a over the canonical dump; the output directory is not part of it.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  auto j = config_to_json(c);
  j.erase("out");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ULL;
  return h;
}

// ---- scenario construction ---------------------------------------------------

inline RoadGrid make_grid(const ExperimentConfig& c) {
  return c.grid.file.empty() ? build_manhattan(c.grid.rows, c.grid.cols, c.grid.block) : load_grid(c.grid.file);
}

inline int period_ticks(const ExperimentConfig& c) {
  return static_cast<int>(std::lround(c.period() / c.mobility.tick));
}

inline IntervalPlan make_plan(const ExperimentConfig& c, int available_ticks) {
  return make_intervals(c.intervals, c.mobility.tick, available_ticks);
}

inline TrajectorySet make_mobility(const ExperimentConfig& c, const RoadGrid& g, std::uint64_t seed) {
  if (!c.mobility.traces.empty()) return load_traces(c.mobility.traces, g, c.mobility.tick);
  return simulate_manhattan(g, c.mobility.rate,
                            SpeedModel::uniform(kmh(c.mobility.speed_min_kmh), kmh(c.mobility.speed_max_kmh)),
                            c.period(), seed, c.mobility.tick, c.mobility.warmup);
}

// Request ZOI, defaulting to the link whose midpoint is nearest the grid centre.
inline std::vector<LinkId> request_zoi(const ExperimentConfig& c, const RoadGrid& g) {
  if (!c.request.zoi.empty()) {
    for (LinkId l : c.request.zoi)
      require(l < g.num_links(), ErrorKind::validation,
              "request.zoi link " + std::to_string(l) + " not in the grid (" + std::to_string(g.num_links()) +
                  " links)");
    return c.request.zoi;
  }
  Point lo = g.links[0].endpoints[0], hi = lo;
  for (const auto& l : g.links)
    for (auto p : l.endpoints) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
  const Point mid = 0.5 * (lo + hi);
  LinkId best = 0;
  for (LinkId l = 1; l < g.num_links(); ++l)
    if (distance(g.links[l].midpoint(), mid) < distance(g.links[best].midpoint(), mid) - 1e-9) best = l;
  return {best};
}

inline ServiceRequest make_request(const ExperimentConfig& c, const RoadGrid& g) {
  ServiceRequest r;
  r.zoi = request_zoi(c, g);
  r.alpha0 = c.request.alpha0;
  r.period = c.intervals;
  r.validate(g.num_links());
  return r;
}

inline Verifier make_verifier(const ExperimentConfig& c, const Scenario& sc, const IntervalPlan& plan) {
  Verifier v;
  v.scenario = &sc;
  v.channel = c.channel_model();
  v.plan = plan;
  v.seeding = c.seeding();
  v.content_bits = c.weights().content_bits;
  v.seeds.clear();
  for (int i = 0; i < c.planner.verify_seeds; ++i) v.seeds.push_back(RunSeeds{c.seed}.verifier(i));
  return v;
}

}  // namespace fcplan
