#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "error.hpp"
#include "fcsim.hpp"
#include "intervals.hpp"
#include "mobility.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "roadnet.hpp"
#include "scheme.hpp"

namespace fcplan {

enum class SchemeStyle { iid, smoothed, mixed };

inline SchemeStyle parse_style(const std::string& s) {
  if (s == "iid") return SchemeStyle::iid;
  if (s == "smoothed") return SchemeStyle::smoothed;
  if (s == "mixed") return SchemeStyle::mixed;
  throw Error(ErrorKind::invalid_parameter, "unknown scheme style '" + s + "'");
}

inline const char* to_string(SchemeStyle s) {
  switch (s) {
    case SchemeStyle::iid: return "iid";
    case SchemeStyle::smoothed: return "smoothed";
    case SchemeStyle::mixed: return "mixed";
  }
  return "?";
}

namespace detail {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Gaussian random field on the H x W raster, blurred with a random length
// scale, standardized, shifted by a random level and squashed through the
// normal CDF.
inline std::vector<double> smooth_field(const RasterEmbedding& emb, Rng& rng) {
  const int H = emb.H, W = emb.W;
  std::vector<double> z(H * W);
  for (auto& x : z) x = rng.normal();
  const double sigma = rng.uniform(0.7, 2.5);
  const int rad = static_cast<int>(std::ceil(2.5 * sigma));
  std::vector<double> ker(2 * rad + 1);
  for (int q = -rad; q <= rad; ++q) ker[q + rad] = std::exp(-0.5 * q * q / (sigma * sigma));
  auto blur = [&](const std::vector<double>& in, bool along_rows) {
    std::vector<double> out(in.size(), 0.0);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int q = -rad; q <= rad; ++q) {
          const int rr = along_rows ? r : r + q;
          const int cc = along_rows ? c + q : c;
          if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
          acc += ker[q + rad] * in[rr * W + cc];
          wsum += ker[q + rad];
        }
        out[r * W + c] = acc / wsum;
      }
    return out;
  };
  z = blur(blur(z, true), false);
  double mean = 0.0, var = 0.0;
  for (double x : z) mean += x;
  mean /= z.size();
  for (double x : z) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / z.size());
  const double level = rng.normal();
  for (auto& x : z) x = normal_cdf(level + (sd > 1e-12 ? (x - mean) / sd : 0.0));
  return z;
}

}  // namespace detail

// K random schemes followed by all-on and all-zero. `smoothed` and `mixed`
// need the raster embedding.
inline std::vector<FcScheme> gen_random_schemes(int K, int L, int T, std::uint64_t seed, SchemeStyle style,
                                                const RasterEmbedding* emb = nullptr) {
  require(K >= 1, ErrorKind::invalid_parameter, "K must be >= 1");
  require(style == SchemeStyle::iid || emb != nullptr, ErrorKind::invalid_parameter,
          "smoothed schemes need a raster embedding");
  require(!emb || static_cast<int>(emb->cell_of.size()) == L, ErrorKind::shape, "embedding does not match L");
  const Rng root(seed);
  std::vector<FcScheme> out;
  out.reserve(K + 2);
  for (int k = 0; k < K; ++k) {
    Rng rng = root.split(static_cast<std::uint64_t>(k));
    bool smooth = style == SchemeStyle::smoothed;
    if (style == SchemeStyle::mixed) smooth = rng.uniform() < 0.5;
    FcScheme s(L, T);
    if (!smooth) {
      for (int t = 0; t < T; ++t)
        for (LinkId l = 0; l < L; ++l) {
          const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
          s.set(l, t, a, b, c);
        }
    } else {
      for (int t = 0; t < T; ++t) {
        const auto fa = detail::smooth_field(*emb, rng);
        const auto fb = detail::smooth_field(*emb, rng);
        const auto fs = detail::smooth_field(*emb, rng);
        for (LinkId l = 0; l < L; ++l) {
          const int c = emb->flat(l);
          s.set(l, t, fa[c], fb[c], fs[c]);
        }
      }
    }
    out.push_back(std::move(s));
  }
  out.push_back(all_on(L, T));
  out.push_back(all_zero(L, T));
  return out;
}

struct CommFeatures {
  int L = 0;
  int T = 0;
  std::vector<double> n_c, gamma;

  std::size_t idx(LinkId l, int t) const { return static_cast<std::size_t>(t) * L + l; }
  void resize(int links, int periods) {
    L = links;
    T = periods;
    n_c.assign(static_cast<std::size_t>(L) * T, 0.0);
    gamma.assign(static_cast<std::size_t>(L) * T, 0.0);
  }
};

inline CommFeatures comm_features(const SimOutcome& o) {
  CommFeatures c;
  c.resize(o.L, o.T);
  c.n_c = o.n_c;
  for (std::size_t i = 0; i < c.gamma.size(); ++i) {
    double g = 0.0;
    for (int u = 0; u < o.U; ++u) g += o.gamma[i * o.U + u];
    c.gamma[i] = g;
  }
  return c;
}

enum class Provenance { simulated, measured };

// Mobility features of one scenario, measured per window. parent[w] is the
// interval whose scheme column applies to window w.
struct ScenarioFeatures {
  int id = 0;
  MobilityFeatures m;
  std::vector<int> parent;
  std::vector<double> durations;
};

// One scheme A_k over one scenario and the communication features it produced,
// measured per window.
struct TrainingPair {
  int id = 0;
  int scenario = 0;
  std::uint64_t seed = 0;
  Provenance provenance = Provenance::simulated;
  FcScheme A;
  CommFeatures c;
};

struct Dataset {
  int L = 0;
  IntervalPlan plan;
  double window = 0.0;
  std::vector<ScenarioFeatures> scenarios;
  std::vector<TrainingPair> pairs;
  nlohmann::json meta = nlohmann::json::object();

  const ScenarioFeatures& scenario_of(const TrainingPair& p) const {
    for (const auto& s : scenarios)
      if (s.id == p.scenario) return s;
    throw Error(ErrorKind::data, "pair " + std::to_string(p.id) + " refers to unknown scenario");
  }
  int windows() const { return scenarios.empty() ? 0 : scenarios.front().m.T; }
  std::size_t num_samples() const { return pairs.size() * static_cast<std::size_t>(windows()); }
  std::size_t num_rows() const { return num_samples() * static_cast<std::size_t>(L); }
};

// A training sample: one window of one pair.
struct SampleRef {
  int pair = 0;  // index into Dataset::pairs
  int window = 0;
};

inline std::vector<SampleRef> all_samples(const Dataset& ds, const std::vector<int>& pair_idx) {
  std::vector<SampleRef> out;
  for (int p : pair_idx)
    for (int w = 0; w < ds.windows(); ++w) out.push_back({p, w});
  return out;
}

// Success ratio of a sample over `zoi`; nullopt when nobody visited it.
inline std::optional<double> sample_alpha(const Dataset& ds, SampleRef r, const std::vector<LinkId>& zoi) {
  const auto& p = ds.pairs[r.pair];
  const auto& m = ds.scenario_of(p).m;
  double num = 0.0, den = 0.0;
  for (LinkId l : zoi) {
    num += p.c.n_c[p.c.idx(l, r.window)];
    den += m.n[m.idx(l, r.window)];
  }
  if (den <= 0.0) return std::nullopt;
  return num / den;
}

struct DatasetOptions {
  double window = 0.0;  // 0 means one window per interval
  SeedingMode seeding = SeedingMode::exact;
  double content_bits = 8.0 * 8.0 * 1024 * 1024;
  int scenario_id = 0;
  int first_pair_id = 0;
  unsigned workers = 0;
};

// Mobility features of a scenario per window (window 0: per interval).
inline ScenarioFeatures scenario_features(const Scenario& sc, const IntervalPlan& plan, double window, int id = 0) {
  WindowPlan wp;
  if (window > 0.0) {
    wp = split_windows(plan, window);
  } else {
    wp.windows = plan;
    for (int t = 0; t < plan.count(); ++t) wp.parent.push_back(t);
  }
  ScenarioFeatures sf;
  sf.id = id;
  sf.m = mobility_features(sc.traj, detect_contacts(sc.contacts), sc.grid, wp.windows);
  sf.parent = wp.parent;
  sf.durations = wp.windows.durations();
  return sf;
}

// Simulates every scheme over the scenario. Mobility features are computed
// once. Neither ZOI nor the target ratio is involved.
inline Dataset build_dataset(const Scenario& sc, const IntervalPlan& plan, const std::vector<FcScheme>& schemes,
                             const ChannelModel& ch, std::uint64_t seed, const DatasetOptions& opt = {}) {
  require(!schemes.empty(), ErrorKind::data, "no schemes to simulate");
  const int L = sc.grid.num_links();
  Dataset ds;
  ds.L = L;
  ds.plan = plan;
  ds.window = opt.window;

  ds.scenarios.push_back(scenario_features(sc, plan, opt.window, opt.scenario_id));

  ds.pairs.resize(schemes.size());
  parallel_for(
      schemes.size(),
      [&](std::size_t k) {
        TrainingPair& p = ds.pairs[k];
        p.id = opt.first_pair_id + static_cast<int>(k);
        p.scenario = opt.scenario_id;
        p.seed = hash_key({seed, static_cast<std::uint64_t>(k)});
        p.A = schemes[k];
        SimOptions so;
        so.seeding = opt.seeding;
        so.content_bits = opt.content_bits;
        so.window = opt.window;
        auto run = simulate(sc, p.A, ch, plan, p.seed, so);
        p.c = comm_features(opt.window > 0.0 ? run.windows : run.outcome);
      },
      opt.workers);
  return ds;
}

// Appends pairs (and their scenarios) of `more`; windows must line up.
inline void merge_dataset(Dataset& into, Dataset more) {
  if (into.pairs.empty() && into.scenarios.empty()) {
    into = std::move(more);
    return;
  }
  require(into.L == more.L && into.windows() == more.windows(), ErrorKind::shape,
          "datasets have different link or window counts");
  for (auto& s : more.scenarios) {
    for (const auto& e : into.scenarios)
      require(e.id != s.id, ErrorKind::data, "duplicate scenario id " + std::to_string(s.id));
    into.scenarios.push_back(std::move(s));
  }
  for (auto& p : more.pairs) {
    for (const auto& e : into.pairs)
      require(e.id != p.id, ErrorKind::data, "duplicate pair id " + std::to_string(p.id));
    into.pairs.push_back(std::move(p));
  }
}

// Z-score parameters of the four mobility channels (n, lambda, tau, nu).
struct Normalizer {
  std::array<double, 4> mean{0, 0, 0, 0};
  std::array<double, 4> scale{1, 1, 1, 1};

  static const std::vector<double>& channel(const MobilityFeatures& m, int c) {
    switch (c) {
      case 0: return m.n;
      case 1: return m.lambda;
      case 2: return m.tau;
      default: return m.nu;
    }
  }
  static std::vector<double>& channel(MobilityFeatures& m, int c) {
    return const_cast<std::vector<double>&>(channel(static_cast<const MobilityFeatures&>(m), c));
  }

  double apply(int c, double x) const { return (x - mean[c]) / scale[c]; }
  double invert(int c, double z) const { return z * scale[c] + mean[c]; }

  MobilityFeatures apply(const MobilityFeatures& m) const {
    MobilityFeatures o = m;
    for (int c = 0; c < 4; ++c)
      for (auto& x : channel(o, c)) x = apply(c, x);
    return o;
  }
  MobilityFeatures invert(const MobilityFeatures& m) const {
    MobilityFeatures o = m;
    for (int c = 0; c < 4; ++c)
      for (auto& x : channel(o, c)) x = invert(c, x);
    return o;
  }

  nlohmann::json to_json() const { return {{"mean", mean}, {"scale", scale}}; }
  static Normalizer from_json(const nlohmann::json& j) {
    Normalizer n;
    n.mean = j.at("mean").get<std::array<double, 4>>();
    n.scale = j.at("scale").get<std::array<double, 4>>();
    return n;
  }
};

// Fits over every (link, window) cell of the given pairs' scenarios, one cell
// per pair, so scenarios count by how many pairs use them.
inline Normalizer fit_normalizer(const Dataset& ds, const std::vector<int>& pair_idx) {
  require(!pair_idx.empty(), ErrorKind::data, "normalizer split is empty");
  Normalizer nz;
  for (int c = 0; c < 4; ++c) {
    double sum = 0.0, cnt = 0.0;
    for (int p : pair_idx)
      for (double x : Normalizer::channel(ds.scenario_of(ds.pairs[p]).m, c)) {
        sum += x;
        cnt += 1.0;
      }
    const double mean = sum / cnt;
    double ss = 0.0;
    for (int p : pair_idx)
      for (double x : Normalizer::channel(ds.scenario_of(ds.pairs[p]).m, c)) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / cnt);
    nz.mean[c] = mean;
    nz.scale[c] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
  }
  return nz;
}

// ---- persistence ----------------------------------------------------------

namespace detail {

inline nlohmann::json plan_json(const IntervalPlan& p) {
  return {{"tick", p.tick}, {"start", p.start}, {"length", p.length}};
}
inline IntervalPlan plan_from_json(const nlohmann::json& j) {
  IntervalPlan p;
  p.tick = j.at("tick").get<double>();
  p.start = j.at("start").get<std::vector<int>>();
  p.length = j.at("length").get<std::vector<int>>();
  return p;
}

}  // namespace detail

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  nlohmann::json man;
  man["format"] = "fcplan-dataset-1";
  man["L"] = ds.L;
  man["intervals"] = detail::plan_json(ds.plan);
  man["window"] = ds.window;
  man["scenarios"] = nlohmann::json::array();
  for (const auto& s : ds.scenarios)
    man["scenarios"].push_back({{"id", s.id}, {"parent", s.parent}, {"durations", s.durations}});
  man["pairs"] = nlohmann::json::array();
  for (const auto& p : ds.pairs)
    man["pairs"].push_back({{"id", p.id},
                            {"scenario", p.scenario},
                            {"seed", p.seed},
                            {"provenance", p.provenance == Provenance::measured ? "measured" : "simulated"}});
  man["rows"] = ds.num_rows();
  man["meta"] = ds.meta;
  {
    std::ofstream f(dir / "dataset.json");
    require(f.good(), ErrorKind::io, "cannot write " + (dir / "dataset.json").string());
    f << man.dump(2) << "\n";
  }
  std::ofstream f(dir / "pairs.csv");
  require(f.good(), ErrorKind::io, "cannot write " + (dir / "pairs.csv").string());
  f << "pair_id,scenario,seed,link_id,t,n,lambda,tau,nu,a,b,s,n_c,gamma\n";
  std::string buf;
  char line[512];
  for (const auto& p : ds.pairs) {
    const auto& sf = ds.scenario_of(p);
    const auto& m = sf.m;
    for (int w = 0; w < m.T; ++w)
      for (LinkId l = 0; l < ds.L; ++l) {
        const auto c = m.idx(l, w);
        const int t = sf.parent[w];
        std::snprintf(line, sizeof line,
                      "%d,%d,%llu,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.id, p.scenario,
                      static_cast<unsigned long long>(p.seed), l, w, m.n[c], m.lambda[c], m.tau[c], m.nu[c],
                      p.A.a(l, t), p.A.b(l, t), p.A.s(l, t), p.c.n_c[c], p.c.gamma[c]);
        buf += line;
        if (buf.size() > (1u << 20)) {
          f << buf;
          buf.clear();
        }
      }
  }
  f << buf;
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "dataset.json");
  require(mf.good(), ErrorKind::dependency, "dataset manifest missing in " + dir.string());
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(mf);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::parse, std::string("dataset manifest: ") + e.what());
  }
  Dataset ds;
  ds.L = man.at("L").get<int>();
  ds.plan = detail::plan_from_json(man.at("intervals"));
  ds.window = man.at("window").get<double>();
  ds.meta = man.value("meta", nlohmann::json::object());
  std::map<int, std::size_t> scen_at;
  for (const auto& s : man.at("scenarios")) {
    ScenarioFeatures sf;
    sf.id = s.at("id").get<int>();
    sf.parent = s.at("parent").get<std::vector<int>>();
    sf.durations = s.at("durations").get<std::vector<double>>();
    sf.m.resize(ds.L, static_cast<int>(sf.parent.size()));
    scen_at[sf.id] = ds.scenarios.size();
    ds.scenarios.push_back(std::move(sf));
  }
  const int Tw = ds.windows();
  const int T = ds.plan.count();
  std::map<int, std::size_t> pair_at;
  for (const auto& p : man.at("pairs")) {
    TrainingPair tp;
    tp.id = p.at("id").get<int>();
    tp.scenario = p.at("scenario").get<int>();
    tp.seed = p.at("seed").get<std::uint64_t>();
    tp.provenance = p.at("provenance").get<std::string>() == "measured" ? Provenance::measured : Provenance::simulated;
    tp.A = FcScheme(ds.L, T);
    tp.c.resize(ds.L, Tw);
    pair_at[tp.id] = ds.pairs.size();
    ds.pairs.push_back(std::move(tp));
  }

  std::ifstream f(dir / "pairs.csv");
  require(f.good(), ErrorKind::dependency, "pairs.csv missing in " + dir.string());
  std::string line;
  std::getline(f, line);
  std::size_t lineno = 1, rows = 0;
  std::vector<std::uint8_t> seen_m(ds.scenarios.size(), 0);
  std::vector<std::string_view> cols;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw Error(ErrorKind::parse, "pairs.csv line " + std::to_string(lineno) + ": " + why);
    };
    cols.clear();
    std::size_t at = 0;
    for (;;) {
      const auto comma = line.find(',', at);
      cols.emplace_back(line.data() + at, (comma == std::string::npos ? line.size() : comma) - at);
      if (comma == std::string::npos) break;
      at = comma + 1;
    }
    if (cols.size() != 14) fail("expected 14 columns");
    auto num = [&](int i) {
      double v;
      auto sv = cols[i];
      auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
      if (ec != std::errc() || ptr != sv.data() + sv.size()) fail("bad number in column " + std::to_string(i + 1));
      return v;
    };
    const int pid = static_cast<int>(num(0));
    const int l = static_cast<int>(num(3));
    const int w = static_cast<int>(num(4));
    auto pit = pair_at.find(pid);
    if (pit == pair_at.end()) fail("unknown pair id");
    if (l < 0 || l >= ds.L || w < 0 || w >= Tw) fail("link or window out of range");
    auto& p = ds.pairs[pit->second];
    const std::size_t si = scen_at.at(p.scenario);
    auto& sf = ds.scenarios[si];
    const auto c = sf.m.idx(l, w);
    sf.m.n[c] = num(5);
    sf.m.lambda[c] = num(6);
    sf.m.tau[c] = num(7);
    sf.m.nu[c] = num(8);
    sf.m.empty[c] = sf.m.n[c] > 0.0 ? 0 : 1;
    p.A.set(l, sf.parent[w], num(9), num(10), num(11));
    p.c.n_c[c] = num(12);
    p.c.gamma[c] = num(13);
    ++rows;
  }
  require(rows == ds.num_rows(), ErrorKind::data,
          "pairs.csv has " + std::to_string(rows) + " rows, manifest expects " + std::to_string(ds.num_rows()));
  return ds;
}

}  // namespace fcplan
