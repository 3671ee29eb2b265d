#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "error.hpp"
#include "geometry.hpp"

namespace fcplan {

using LinkId = int;

inline constexpr double kDefaultSnap = 2.0;  // meters

struct Link {
  LinkId id = 0;
  std::array<Point, 2> endpoints;
  // Intersection index at each end, -1 for a border entry/exit point.
  std::array<int, 2> ends{-1, -1};
  double length = 0.0;
  bool is_border_stub = false;

  Point midpoint() const { return lerp(endpoints[0], endpoints[1], 0.5); }
};

struct RoadGrid {
  std::vector<Link> links;
  std::vector<Point> intersections;
  std::vector<std::vector<LinkId>> adjacency;  // per intersection
  Box bounds;

  int num_links() const { return static_cast<int>(links.size()); }

  std::vector<LinkId> border_stubs() const {
    std::vector<LinkId> out;
    for (const auto& l : links)
      if (l.is_border_stub) out.push_back(l.id);
    return out;
  }
};

namespace detail {

inline void finalize_grid(RoadGrid& g) {
  require(!g.links.empty(), ErrorKind::degenerate_grid, "grid has no links");
  g.adjacency.assign(g.intersections.size(), {});
  double inf = std::numeric_limits<double>::infinity();
  g.bounds = {{inf, inf}, {-inf, -inf}};
  auto grow = [&](Point p) {
    g.bounds.lo.x = std::min(g.bounds.lo.x, p.x);
    g.bounds.lo.y = std::min(g.bounds.lo.y, p.y);
    g.bounds.hi.x = std::max(g.bounds.hi.x, p.x);
    g.bounds.hi.y = std::max(g.bounds.hi.y, p.y);
  };
  for (std::size_t i = 0; i < g.links.size(); ++i) {
    auto& l = g.links[i];
    require(l.id == static_cast<LinkId>(i), ErrorKind::invalid_parameter,
            "link ids must be dense 0..L-1");
    l.length = distance(l.endpoints[0], l.endpoints[1]);
    require(l.length > 0.0, ErrorKind::invalid_parameter,
            "link " + std::to_string(l.id) + " has zero length");
    for (int e = 0; e < 2; ++e) {
      grow(l.endpoints[e]);
      if (l.ends[e] >= 0) g.adjacency[l.ends[e]].push_back(l.id);
    }
  }
  for (auto p : g.intersections) grow(p);
}

}  // namespace detail

// Manhattan lattice of rows x cols square blocks. Roads run between the
// interior lattice points; each boundary interior intersection gets one stub
// per outward direction, reaching the outer edge of the block area.
inline RoadGrid build_manhattan(int rows, int cols, double block_side) {
  require(rows >= 2 && cols >= 2, ErrorKind::degenerate_grid,
          "manhattan grid needs rows >= 2 and cols >= 2");
  require(block_side > 0.0 && std::isfinite(block_side), ErrorKind::invalid_parameter,
          "block_side must be positive");

  RoadGrid g;
  const int ni = rows - 1;  // intersection rows (y)
  const int nj = cols - 1;  // intersection columns (x)
  auto idx = [&](int i, int j) { return i * nj + j; };
  for (int i = 0; i < ni; ++i)
    for (int j = 0; j < nj; ++j)
      g.intersections.push_back({(j + 1) * block_side, (i + 1) * block_side});

  auto add = [&](Point a, Point b, int ea, int eb, bool stub) {
    Link l;
    l.id = static_cast<LinkId>(g.links.size());
    l.endpoints = {a, b};
    l.ends = {ea, eb};
    l.is_border_stub = stub;
    g.links.push_back(l);
  };

  for (int i = 0; i < ni; ++i)
    for (int j = 0; j + 1 < nj; ++j)
      add(g.intersections[idx(i, j)], g.intersections[idx(i, j + 1)], idx(i, j), idx(i, j + 1), false);
  for (int j = 0; j < nj; ++j)
    for (int i = 0; i + 1 < ni; ++i)
      add(g.intersections[idx(i, j)], g.intersections[idx(i + 1, j)], idx(i, j), idx(i + 1, j), false);

  const double xmax = cols * block_side;
  const double ymax = rows * block_side;
  // Stubs run from the border point inward; ends[0] is the border side.
  for (int i = 0; i < ni; ++i) {
    Point p = g.intersections[idx(i, 0)];
    add({0.0, p.y}, p, -1, idx(i, 0), true);
  }
  for (int i = 0; i < ni; ++i) {
    Point p = g.intersections[idx(i, nj - 1)];
    add({xmax, p.y}, p, -1, idx(i, nj - 1), true);
  }
  for (int j = 0; j < nj; ++j) {
    Point p = g.intersections[idx(0, j)];
    add({p.x, 0.0}, p, -1, idx(0, j), true);
  }
  for (int j = 0; j < nj; ++j) {
    Point p = g.intersections[idx(ni - 1, j)];
    add({p.x, ymax}, p, -1, idx(ni - 1, j), true);
  }

  detail::finalize_grid(g);
  g.bounds = {{0.0, 0.0}, {xmax, ymax}};
  return g;
}

// Nearest link by point-to-segment distance; ties go to the smaller id.
inline LinkId link_of(const RoadGrid& g, Point p, double snap = kDefaultSnap) {
  require(g.bounds.contains(p, snap), ErrorKind::off_grid,
          "position (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside grid bounds");
  LinkId best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& l : g.links) {
    const double d = point_segment_distance(p, l.endpoints[0], l.endpoints[1]);
    if (d < best_d) {
      best_d = d;
      best = l.id;
    }
  }
  require(best >= 0 && best_d <= snap, ErrorKind::off_grid,
          "no link within " + std::to_string(snap) + " m of (" + std::to_string(p.x) + ", " +
              std::to_string(p.y) + ")");
  return best;
}

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(Cell, Cell) = default;
};

struct RasterEmbedding {
  int H = 0;
  int W = 0;
  Point origin;
  double cell_w = 0.0;
  double cell_h = 0.0;
  std::vector<Cell> cell_of;                    // per link
  std::vector<std::vector<LinkId>> links_in;    // per flat cell (row * W + col)

  int flat(Cell c) const { return c.row * W + c.col; }
  int flat(LinkId l) const { return flat(cell_of[l]); }
  bool injective() const {
    for (const auto& v : links_in)
      if (v.size() > 1) return false;
    return true;
  }
};

namespace detail {
// Cell index of coordinate v; exact boundaries fall to the lower cell.
inline int bin(double v, double lo, double size, int n) {
  const int c = static_cast<int>(std::ceil((v - lo) / size)) - 1;
  return std::clamp(c, 0, n - 1);
}
}  // namespace detail

inline RasterEmbedding raster_embed(const RoadGrid& g, int H, int W, bool require_injective = false) {
  require(H >= 1 && W >= 1, ErrorKind::invalid_parameter, "raster needs H, W >= 1");
  RasterEmbedding r;
  r.H = H;
  r.W = W;
  r.origin = g.bounds.lo;
  r.cell_w = g.bounds.width() / W;
  r.cell_h = g.bounds.height() / H;
  if (r.cell_w <= 0.0) r.cell_w = 1.0;
  if (r.cell_h <= 0.0) r.cell_h = 1.0;
  r.links_in.assign(static_cast<std::size_t>(H) * W, {});
  for (const auto& l : g.links) {
    const Point m = l.midpoint();
    Cell c{detail::bin(m.y, r.origin.y, r.cell_h, H), detail::bin(m.x, r.origin.x, r.cell_w, W)};
    r.cell_of.push_back(c);
    auto& bucket = r.links_in[r.flat(c)];
    if (require_injective && !bucket.empty())
      throw Error(ErrorKind::resolution, "links " + std::to_string(bucket.front()) + " and " +
                                             std::to_string(l.id) + " share cell (" +
                                             std::to_string(c.row) + ", " + std::to_string(c.col) + ")");
    bucket.push_back(l.id);
  }
  return r;
}

// Smallest square-ish raster at which every link gets its own cell.
inline RasterEmbedding auto_raster(const RoadGrid& g, int max_side = 64) {
  for (int s = 1; s <= max_side; ++s) {
    for (int H = s; H <= s + 2; ++H)
      for (int W = s; W <= s + 2; ++W) {
        auto r = raster_embed(g, H, W);
        if (r.injective()) return r;
      }
  }
  return raster_embed(g, max_side, max_side);
}

inline nlohmann::json grid_to_json(const RoadGrid& g) {
  nlohmann::json j;
  j["links"] = nlohmann::json::array();
  for (const auto& l : g.links)
    j["links"].push_back({{"id", l.id},
                          {"x1", l.endpoints[0].x},
                          {"y1", l.endpoints[0].y},
                          {"x2", l.endpoints[1].x},
                          {"y2", l.endpoints[1].y},
                          {"border_stub", l.is_border_stub}});
  j["intersections"] = nlohmann::json::array();
  for (auto p : g.intersections) j["intersections"].push_back({{"x", p.x}, {"y", p.y}});
  return j;
}

inline RoadGrid grid_from_json(const nlohmann::json& j) {
  RoadGrid g;
  try {
    for (const auto& p : j.at("intersections"))
      g.intersections.push_back({p.at("x").get<double>(), p.at("y").get<double>()});
    for (const auto& jl : j.at("links")) {
      Link l;
      l.id = jl.at("id").get<int>();
      l.endpoints = {Point{jl.at("x1").get<double>(), jl.at("y1").get<double>()},
                     Point{jl.at("x2").get<double>(), jl.at("y2").get<double>()}};
      l.is_border_stub = jl.value("border_stub", false);
      for (int e = 0; e < 2; ++e)
        for (std::size_t k = 0; k < g.intersections.size(); ++k)
          if (distance(g.intersections[k], l.endpoints[e]) < 1e-6) l.ends[e] = static_cast<int>(k);
      g.links.push_back(l);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("grid json: ") + e.what());
  }
  std::sort(g.links.begin(), g.links.end(), [](const Link& a, const Link& b) { return a.id < b.id; });
  detail::finalize_grid(g);
  return g;
}

inline RoadGrid load_grid(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open grid file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, path + ": " + e.what());
  }
  return grid_from_json(j);
}

inline std::uint64_t grid_hash(const RoadGrid& g) {
  const std::string s = grid_to_json(g).dump();
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace fcplan
