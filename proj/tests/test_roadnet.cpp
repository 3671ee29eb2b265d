#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fcplan/rng.hpp"
#include "fcplan/roadnet.hpp"

using namespace fcplan;

namespace {

// Independent count: walk the lattice cell by cell and count unit edges whose
// endpoints are both interior, plus one stub per missing neighbour of every
// interior point.
int enumerate_links(int rows, int cols) {
  auto interior = [&](int i, int j) { return i >= 1 && i <= rows - 1 && j >= 1 && j <= cols - 1; };
  int count = 0;
  for (int i = 0; i <= rows; ++i)
    for (int j = 0; j <= cols; ++j) {
      if (!interior(i, j)) continue;
      const int di[] = {0, 0, 1, -1};
      const int dj[] = {1, -1, 0, 0};
      for (int d = 0; d < 4; ++d) {
        const int a = i + di[d], b = j + dj[d];
        if (interior(a, b)) {
          if (d == 0 || d == 2) ++count;  // count each interior edge once
        } else {
          ++count;  // stub to the border
        }
      }
    }
  return count;
}

int formula(int rows, int cols) {
  return (rows - 1) * (cols - 2) + (cols - 1) * (rows - 2) + 2 * (rows - 1) + 2 * (cols - 1);
}

}  // namespace

TEST(RoadNet, ManhattanFiveByFour) {
  const auto g = build_manhattan(5, 4, 150.0);
  EXPECT_EQ(g.num_links(), 31);
  EXPECT_EQ(g.intersections.size(), 12u);
  for (const auto& l : g.links) {
    EXPECT_DOUBLE_EQ(l.length, 150.0);
    EXPECT_DOUBLE_EQ(l.length, distance(l.endpoints[0], l.endpoints[1]));
  }
  EXPECT_EQ(g.border_stubs().size(), 14u);
}

TEST(RoadNet, PlusSign) {
  const auto g = build_manhattan(2, 2, 100.0);
  EXPECT_EQ(g.intersections.size(), 1u);
  ASSERT_EQ(g.num_links(), 4);
  for (const auto& l : g.links) EXPECT_TRUE(l.is_border_stub);
  EXPECT_EQ(g.adjacency[0].size(), 4u);
}

TEST(RoadNet, DegenerateInputs) {
  try {
    build_manhattan(1, 1, 150.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_grid);
  }
  try {
    build_manhattan(3, 3, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_parameter);
  }
}

TEST(RoadNet, LinkCountFormulaMatchesEnumeration) {
  for (int r = 2; r <= 20; ++r)
    for (int c = 2; c <= 20; ++c) {
      const auto g = build_manhattan(r, c, 10.0);
      ASSERT_EQ(g.num_links(), enumerate_links(r, c)) << r << "x" << c;
      ASSERT_EQ(g.num_links(), formula(r, c)) << r << "x" << c;
      ASSERT_EQ(static_cast<int>(g.intersections.size()), (r - 1) * (c - 1));
      for (const auto& l : g.links)
        if (l.is_border_stub) ASSERT_DOUBLE_EQ(l.length, 10.0);
    }
}

TEST(RoadNet, LinkOfMidpointAndTies) {
  const auto g = build_manhattan(5, 4, 150.0);
  EXPECT_EQ(link_of(g, g.links[7].midpoint()), 7);
  // Every intersection is equidistant (0 m) from its incident links.
  for (std::size_t k = 0; k < g.intersections.size(); ++k) {
    auto inc = g.adjacency[k];
    EXPECT_EQ(link_of(g, g.intersections[k]), *std::min_element(inc.begin(), inc.end()));
  }
}

TEST(RoadNet, LinkOfOffGrid) {
  const auto g = build_manhattan(5, 4, 150.0);
  // Centre of a block is 75 m from every road.
  try {
    link_of(g, {225.0, 225.0}, 2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::off_grid);
  }
  EXPECT_THROW(link_of(g, {-50.0, 150.0}), Error);
}

TEST(RoadNet, LinkOfMatchesBruteForce) {
  const auto g = build_manhattan(6, 5, 120.0);
  Rng rng(11);
  int checked = 0;
  for (int trial = 0; trial < 4000; ++trial) {
    const Point p{rng.uniform(g.bounds.lo.x, g.bounds.hi.x), rng.uniform(g.bounds.lo.y, g.bounds.hi.y)};
    const double snap = 30.0;
    LinkId best = -1;
    double bd = 1e18;
    for (const auto& l : g.links) {
      // projection onto the segment, computed independently of the library
      const double ax = l.endpoints[0].x, ay = l.endpoints[0].y, bx = l.endpoints[1].x, by = l.endpoints[1].y;
      double f = ((p.x - ax) * (bx - ax) + (p.y - ay) * (by - ay)) / ((bx - ax) * (bx - ax) + (by - ay) * (by - ay));
      f = std::max(0.0, std::min(1.0, f));
      const double d = std::hypot(p.x - (ax + f * (bx - ax)), p.y - (ay + f * (by - ay)));
      if (d < bd) {
        bd = d;
        best = l.id;
      }
    }
    if (bd <= snap) {
      ++checked;
      ASSERT_EQ(link_of(g, p, snap), best);
    } else {
      ASSERT_THROW(link_of(g, p, snap), Error);
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(RoadNet, RasterInjectiveAtNineBySeven) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto r = raster_embed(g, 9, 7, true);
  EXPECT_TRUE(r.injective());
  std::set<int> cells;
  for (LinkId l = 0; l < g.num_links(); ++l) {
    cells.insert(r.flat(l));
    // inverse lookup recovers the link
    const auto& bucket = r.links_in[r.flat(l)];
    ASSERT_EQ(bucket.size(), 1u);
    EXPECT_EQ(bucket[0], l);
  }
  EXPECT_EQ(cells.size(), 31u);
}

TEST(RoadNet, RasterSingleCell) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto r = raster_embed(g, 1, 1);
  EXPECT_EQ(r.links_in[0].size(), 31u);
  try {
    raster_embed(g, 1, 1, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::resolution);
    EXPECT_NE(std::string(e.what()).find("links 0 and 1"), std::string::npos);
  }
}

TEST(RoadNet, RasterMappingIsTotal) {
  for (int h = 1; h <= 12; ++h)
    for (int w = 1; w <= 12; ++w) {
      const auto g = build_manhattan(4, 6, 100.0);
      const auto r = raster_embed(g, h, w);
      std::size_t total = 0;
      for (const auto& b : r.links_in) total += b.size();
      ASSERT_EQ(total, static_cast<std::size_t>(g.num_links()));
      for (LinkId l = 0; l < g.num_links(); ++l) {
        const auto& b = r.links_in[r.flat(l)];
        ASSERT_NE(std::find(b.begin(), b.end(), l), b.end());
      }
    }
}

TEST(RoadNet, BoundaryTiesGoToLowerCell) {
  // Two stubs of the 2x2 plus sign have midpoints at x = 50 and x = 150; with
  // W = 4 on a 200 m box cell edges sit at 50, 100, 150.
  const auto g = build_manhattan(2, 2, 100.0);
  const auto r = raster_embed(g, 4, 4);
  for (const auto& l : g.links) {
    const Point m = l.midpoint();
    if (m.x == 50.0) EXPECT_EQ(r.cell_of[l.id].col, 0);
    if (m.x == 150.0) EXPECT_EQ(r.cell_of[l.id].col, 2);
  }
}

TEST(RoadNet, JsonRoundTrip) {
  const auto g = build_manhattan(5, 4, 150.0);
  const auto j = grid_to_json(g);
  ASSERT_TRUE(j.contains("links"));
  EXPECT_EQ(j["links"][0].size(), 6u);
  const auto back = grid_from_json(j);
  ASSERT_EQ(back.num_links(), g.num_links());
  for (LinkId l = 0; l < g.num_links(); ++l) {
    EXPECT_EQ(back.links[l].endpoints, g.links[l].endpoints);
    EXPECT_EQ(back.links[l].ends, g.links[l].ends);
    EXPECT_EQ(back.links[l].is_border_stub, g.links[l].is_border_stub);
  }
  EXPECT_EQ(grid_hash(back), grid_hash(g));
}
