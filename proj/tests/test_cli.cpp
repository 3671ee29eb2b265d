#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "fcplan/pipeline.hpp"

using namespace fcplan;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("fcplan_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

nlohmann::json small_config() {
  return nlohmann::json::parse(R"({
    "seed": 7,
    "grid": {"rows": 4, "cols": 4, "block": 150},
    "mobility": {"rate": 0.08, "speed_min_kmh": 20, "speed_max_kmh": 30, "warmup": 200},
    "channel": {"radius": 200},
    "intervals": [300, 300],
    "window": 60,
    "dataset": {"schemes": 30},
    "model": {"c1": 4, "c2": 4, "epochs": 4, "folds": 2, "cv_epochs": 1, "baseline_rows": 400},
    "planner": {"candidates": 40},
    "request": {"zoi": [8], "alpha0": 0.8},
    "evaluate": {"seeds": 4}
  })");
}

RunContext context(const nlohmann::json& j, const fs::path& dir, bool det = true) {
  RunContext c;
  c.cfg = parse_config(j);
  c.dir = dir;
  c.deterministic_svg = det;
  c.log = nullptr;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::io;
}

int cli(const std::string& args) {
  const int rc = std::system((std::string(FCPLAN_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, EmptyDocumentGivesReferenceSetup) {
  const auto c = parse_config(nlohmann::json::object());
  EXPECT_DOUBLE_EQ(c.cost.content_mb, 8.0);
  EXPECT_DOUBLE_EQ(c.channel.bandwidth, 1e6);
  EXPECT_DOUBLE_EQ(c.channel.sinr_db, 5.0);
  EXPECT_DOUBLE_EQ(c.channel.path_loss, 3.0);
  EXPECT_DOUBLE_EQ(c.request.alpha0, 0.9);
  EXPECT_DOUBLE_EQ(c.cost.beta, 1.0);
  EXPECT_DOUBLE_EQ(c.cost.delta, 1.0);
  EXPECT_EQ(c.weights().content_bits, 8.0 * 8 * 1024 * 1024);
}

TEST(Config, ListsEveryViolation) {
  auto j = nlohmann::json::parse(R"({
    "grid": {"rows": 1, "block": -2},
    "channel": {"mode": "telepathy"},
    "model": {"lr": 0.1, "epochs": "many"},
    "request": {"alpha0": 1.5},
    "mystery": true
  })");
  try {
    parse_config(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
    const std::string m = e.what();
    for (const char* s : {"grid.rows", "grid.block", "channel.mode", "model.lr", "model.epochs", "alpha0", "mystery"})
      EXPECT_NE(m.find(s), std::string::npos) << s << " missing from\n" << m;
  }
}

TEST(Config, MissingFilesAreViolations) {
  auto j = nlohmann::json::parse(R"({"grid": {"file": "nope.json"}, "mobility": {"traces": "nope.csv"}})");
  try {
    parse_config(j, "/nonexistent");
    FAIL();
  } catch (const Error& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("/nonexistent/nope.json"), std::string::npos);
    EXPECT_NE(m.find("/nonexistent/nope.csv"), std::string::npos);
  }
}

TEST(Config, RoundTripsAndHashIgnoresOutputDirectory) {
  const auto a = parse_config(small_config());
  const auto b = parse_config(config_to_json(a));
  EXPECT_EQ(config_to_json(a), config_to_json(b));
  auto c = a;
  c.out = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(c));
  c.seed = 8;
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Report, IdenticalSamplesGiveDegenerateBox) {
  const auto b = box_stats(std::vector<double>(9, 0.93));
  EXPECT_EQ(b.n, 9);
  for (double v : {b.min, b.q1, b.median, b.q3, b.max, b.lo_whisker, b.hi_whisker}) EXPECT_DOUBLE_EQ(v, 0.93);
  EXPECT_EQ(b.outliers, 0);
}

TEST(Report, OutliersLieBeyondOneAndAHalfIqr) {
  // q1 = 2, q3 = 4 (linear interpolation), fences at -1 and 7
  const auto b = box_stats({1, 2, 3, 4, 5, -3, 20, 2, 4});
  EXPECT_DOUBLE_EQ(b.q1, 2.0);
  EXPECT_DOUBLE_EQ(b.median, 3.0);
  EXPECT_DOUBLE_EQ(b.q3, 4.0);
  EXPECT_EQ(b.outliers, 2);
  EXPECT_DOUBLE_EQ(b.lo_whisker, 1.0);
  EXPECT_DOUBLE_EQ(b.hi_whisker, 5.0);
}

TEST(Report, AllOnHeatmapIsUniformAndFull) {
  const auto g = build_manhattan(3, 3, 100.0);
  const auto s = all_on(g.num_links(), 1);
  std::vector<double> a(g.num_links());
  for (LinkId l = 0; l < g.num_links(); ++l) a[l] = s.a(l, 0);
  std::ostringstream os;
  write_heatmap_svg(os, g, a, "replication", {}, true);
  const std::string svg = os.str();
  const std::regex stroke("<line[^>]*stroke=\"(#[0-9a-f]{6})\"");
  int n = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), stroke); it != std::sregex_iterator(); ++it, ++n)
    EXPECT_EQ((*it)[1].str(), heat_colour(1.0));
  EXPECT_EQ(n, g.num_links());
  EXPECT_EQ(svg.find("generated"), std::string::npos);
}

TEST(Report, RejectedRunsAreChargedTheAllOnCost) {
  StrategyRuns on{"all-on", {10, 10}, {}, {true, true}};
  StrategyRuns plan{"plan", {6, 8}, {}, {true, true}};
  StrategyRuns az{"az", {5, 7}, {}, {false, true}};
  const auto rows = savings_table(plan, {on, az}, on);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].savings, 0.3);
  EXPECT_DOUBLE_EQ(rows[1].baseline_cost, 8.5);
  EXPECT_DOUBLE_EQ(rows[1].baseline_feasible, 0.5);
}

TEST(Pipeline, RunsTwiceByteIdentical) {
  const auto root = scratch("repro");
  for (const char* d : {"a", "b"}) run::run_step(context(small_config(), root / d), "pipeline");
  for (const char* f : {"grid.json", "pairs.csv", "model.bin", "plan.csv", "report"})
    EXPECT_TRUE(fs::exists(root / "a" / f)) << f;
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    // timings are the only run-to-run difference
    const auto name = e.path().filename();
    if (!e.is_regular_file() || name == "timings.json" || name == "plan.json") continue;
    const auto rel = fs::relative(e.path(), root / "a");
    EXPECT_EQ(slurp(e.path()), slurp(root / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 20);
  const auto m = nlohmann::json::parse(slurp(root / "a" / "manifest.json"));
  EXPECT_EQ(m["config"]["seed"], 7);
  EXPECT_TRUE(m["steps"].contains("report"));
  EXPECT_TRUE(m["seeds"].contains("planner"));
  EXPECT_FALSE(fs::exists(root / "a" / ".lock"));
}

TEST(Pipeline, SvgTimestampOnlyWithoutFlag) {
  const auto root = scratch("svg");
  auto c = context(small_config(), root, true);
  for (const char* s : {"grid", "mobility", "evaluate", "report"}) {
    if (std::string(s) == "evaluate") c.cfg.evaluate.scheme = "all-on";
    run::run_step(c, s);
  }
  const auto det = slurp(root / "report/replication_t0.svg");
  c.deterministic_svg = false;
  run::run_step(c, "report");
  const auto stamped = slurp(root / "report/replication_t0.svg");
  EXPECT_EQ(det.find("generated"), std::string::npos);
  const auto pos = stamped.find("<!-- generated");
  ASSERT_NE(pos, std::string::npos);
  const auto end = stamped.find("-->\n", pos) + 4;
  EXPECT_EQ(stamped.substr(0, pos) + stamped.substr(end), det);
}

TEST(Pipeline, EvaluateAllOnWritesAlphaPerInterval) {
  const auto root = scratch("allon");
  auto j = small_config();
  j["evaluate"]["scheme"] = "all-on";
  const auto c = context(j, root);
  for (const char* s : {"grid", "mobility", "evaluate", "report"}) run::run_step(c, s);
  std::ifstream f(root / "alpha.csv");
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "strategy,seed,t,alpha");
  int rows = 0;
  while (std::getline(f, line))
    if (line.rfind("scheme,", 0) == 0) {
      const auto v = std::stod(line.substr(line.rfind(',') + 1));
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      ++rows;
    }
  EXPECT_EQ(rows, 4 * 2);
  const auto ev = nlohmann::json::parse(slurp(root / "evaluation.json"));
  EXPECT_TRUE(ev["feasible"].is_boolean());
  EXPECT_EQ(ev["strategies"]["scheme"]["mean_cost"], ev["strategies"]["all-on"]["mean_cost"]);
  // replication and storage for each of the two intervals
  for (const char* s : {"replication_t0", "replication_t1", "storage_t0", "storage_t1"})
    EXPECT_TRUE(fs::exists(root / "report" / (std::string(s) + ".svg"))) << s;
  EXPECT_FALSE(fs::exists(root / "report/replication_t2.svg"));
}

TEST(Pipeline, MissingUpstreamNamesProducer) {
  const auto root = scratch("dep");
  const auto c = context(small_config(), root);
  try {
    run::run_step(c, "train");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dependency);
    EXPECT_NE(std::string(e.what()).find("'dataset'"), std::string::npos);
  }
  EXPECT_EQ(kind_of([&] { run::run_step(c, "mobility"); }), ErrorKind::dependency);
  EXPECT_EQ(kind_of([&] { run::run_step(c, "report"); }), ErrorKind::dependency);
}

TEST(Pipeline, LockedDirectoryIsRefused) {
  const auto root = scratch("lock");
  const auto c = context(small_config(), root);
  {
    RunLock held(root);
    EXPECT_EQ(kind_of([&] { run::run_step(c, "grid"); }), ErrorKind::io);
  }
  EXPECT_NO_THROW(run::run_step(c, "grid"));
}

TEST(Cli, ExitCodes) {
  const auto root = scratch("exit");
  {
    std::ofstream(root / "bad.json") << R"({"grid": {"rows": 0}, "window": -1})";
    EXPECT_EQ(cli("--config " + (root / "bad.json").string() + " --out " + (root / "bad").string() + " pipeline"), 2);
    EXPECT_FALSE(fs::exists(root / "bad"));
  }
  auto j = small_config();
  std::ofstream(root / "ok.json") << j.dump();
  EXPECT_EQ(cli("--config " + (root / "ok.json").string() + " --out " + (root / "ok").string() + " bootstrap"), 3);
  EXPECT_EQ(cli("--config " + (root / "ok.json").string() + " --out " + (root / "ok").string() + " grid"), 0);
  EXPECT_EQ(cli("frobnicate"), 2);

  // vehicles enter without the content, so full availability is out of reach
  j["request"]["alpha0"] = 1.0;
  j["model"]["epochs"] = 1;
  std::ofstream(root / "empty.json") << j.dump();
  const std::string base = "--config " + (root / "empty.json").string() + " --out " + (root / "empty").string();
  for (const char* s : {"grid", "mobility", "dataset", "train"}) ASSERT_EQ(cli(base + " " + s), 0) << s;
  EXPECT_EQ(cli(base + " bootstrap"), 4);
}
