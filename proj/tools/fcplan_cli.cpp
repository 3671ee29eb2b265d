#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fcplan/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Floating content planning experiments"};
  app.require_subcommand(1, 1);

  std::string config_path, out;
  std::uint64_t seed = 0;
  bool det_svg = false;
  app.add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", out, "run directory (overrides config)");
  app.add_option("--seed", seed, "master seed (overrides config)");
  app.add_flag("--deterministic-svg", det_svg, "omit timestamps from SVG output");

  const std::vector<std::pair<std::string, std::string>> subs{
      {"grid", "build and serialize the road grid"},
      {"mobility", "simulate or ingest vehicle traces"},
      {"features", "mobility features of the deployment scenario"},
      {"dataset", "simulate random schemes into a training set"},
      {"train", "fit the surrogate and the baseline classifiers"},
      {"bootstrap", "plan a scheme for the configured request"},
      {"evaluate", "simulate the planned scheme and the baselines"},
      {"report", "heatmaps, box plots and savings tables"},
      {"pipeline", "all of the above in order"}};
  for (const auto& [n, d] : subs) app.add_subcommand(n, d)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    fcplan::RunContext ctx;
    if (!config_path.empty()) ctx.cfg = fcplan::load_config(config_path);
    if (app.count("--seed")) ctx.cfg.seed = seed;
    if (app.count("--out")) ctx.cfg.out = out;
    ctx.dir = ctx.cfg.out;
    ctx.deterministic_svg = det_svg;
    fcplan::run::run_step(ctx, name);
  } catch (const fcplan::Error& e) {
    std::cerr << "fcplan " << name << ": " << e.what() << "\n";
    return fcplan::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "fcplan " << name << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
