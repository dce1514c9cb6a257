#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "paip/error.hpp"
#include "paip/gridmap.hpp"
#include "paip/rng.hpp"
#include "oracles.hpp"

using namespace paip;
using namespace paip::gridmap;
using oracle::segment_touches_box;

namespace {

const ThetaEstimate kMax = kDefaultThetaMax;

std::set<Cell> walked_cells(const GridGeometry& g, Vec2 a, Vec2 b, double* total_length = nullptr) {
  std::set<Cell> out;
  double len = 0.0;
  walk_segment(g, a, b, [&](std::span<const Cell> cells, double l) {
    out.insert(cells.begin(), cells.end());
    len += l;
    return true;
  });
  if (total_length) *total_length = len;
  return out;
}

}  // namespace

TEST_CASE("difficulty examples") {
  CHECK(difficulty(kMax, kMax) == 1.0);
  CHECK(difficulty({0, 0, 0}, kMax) == 0.0);
  CHECK(difficulty({100, 25, 2.5}, kMax) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(difficulty({201, 0, 0}, kMax) == 1.0);
  CHECK(difficulty({0, 0, 5.0001}, kMax) == 1.0);
  CHECK(difficulty({20, 5, 0.5}, kMax) == doctest::Approx(25.5 / 255.0));
}

TEST_CASE("difficulty rejects bad input") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(difficulty({-1, 0, 0}, kMax), InvalidParameter);
  CHECK_THROWS_AS(difficulty({nan, 0, 0}, kMax), InvalidParameter);
  CHECK_THROWS_AS(difficulty({0, inf, 0}, kMax), InvalidParameter);
  CHECK_THROWS_AS(difficulty({0, 0, 0}, {0, 1, 1}), InvalidParameter);
}

TEST_CASE("difficulty is monotone in each component and clamps") {
  Rng rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.5);
  for (int i = 0; i < 2000; ++i) {
    ThetaEstimate t{u(rng) * kMax.k, u(rng) * kMax.c, u(rng) * kMax.fc};
    const double d = difficulty(t, kMax);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    ThetaEstimate up = t;
    switch (i % 3) {
      case 0: up.k += u(rng) * 10; break;
      case 1: up.c += u(rng) * 5; break;
      default: up.fc += u(rng); break;
    }
    CHECK(difficulty(up, kMax) >= d);
  }
}

TEST_CASE("fixed and unidentified records are inoperable") {
  ObjectRecord r;
  r.theta = ThetaEstimate{0, 0, 0};
  CHECK(record_difficulty(r, kMax) == 0.0);
  r.fixed = true;
  CHECK(record_difficulty(r, kMax) == 1.0);
  r.fixed = false;
  r.theta.reset();
  CHECK(record_difficulty(r, kMax) == 1.0);
}

TEST_CASE("grid map validates costs") {
  GridMap m(4, 3, 0.1);
  CHECK(m.size() == 12);
  CHECK_THROWS_AS(m.set(0, 0, 1.5), InvalidParameter);
  CHECK_THROWS_AS(m.set(0, 0, -0.1), InvalidParameter);
  CHECK_THROWS_AS(m.set(0, 0, std::numeric_limits<double>::quiet_NaN()), InvalidParameter);
  CHECK_THROWS_AS(GridMap(0, 3, 0.1), InvalidArgument);
  CHECK_THROWS_AS(GridMap(3, 3, 0.0), InvalidArgument);
  m.set(3, 2, 0.25);
  CHECK(m.at(3, 2) == 0.25);
  CHECK(m.costs()[2 * 4 + 3] == 0.25);
}

TEST_CASE("cell_of maps far edge inward") {
  GridGeometry g{10, 5, 0.1};
  CHECK(g.cell_of({0.0, 0.0}) == Cell{0, 0});
  CHECK(g.cell_of({0.15, 0.05}) == Cell{1, 0});
  CHECK(g.cell_of({g.extent_x(), g.extent_y()}) == Cell{9, 4});
}

TEST_CASE("associate_hit examples") {
  MemoryPool pool({100, 100, 0.01}, 0.05);
  const int a = pool.associate_hit({0.20, 0.20});
  const int b = pool.associate_hit({0.40, 0.20});
  const int c = pool.associate_hit({0.60, 0.60});
  CHECK(a == 1);
  CHECK(b == 2);
  CHECK(c == 3);
  CHECK(pool.associate_hit({0.62, 0.60}) == 3);
  const int fresh = pool.associate_hit({0.90, 0.10});
  CHECK(fresh == 4);
  CHECK(pool.size() == 4);
  const auto& r = pool.record(fresh);
  CHECK_FALSE(r.theta.has_value());
  CHECK_FALSE(r.fixed);
  CHECK(r.footprint == std::vector<Cell>{Cell{90, 10}});

  // Equidistant between records 1 and 2 with a radius wide enough to include both.
  MemoryPool wide({100, 100, 0.01}, 0.2);
  wide.associate_hit({0.20, 0.20});
  wide.associate_hit({0.40, 0.20});
  CHECK(wide.associate_hit({0.30, 0.25}) == 1);
}

TEST_CASE("associate_hit is idempotent") {
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MemoryPool pool({100, 100, 0.01}, 0.03);
  for (int i = 0; i < 500; ++i) {
    const Vec2 p{u(rng), u(rng)};
    const int id = pool.associate_hit(p);
    CHECK(pool.associate_hit(p) == id);
  }
}

TEST_CASE("build_cost_map examples") {
  const GridGeometry g{10, 10, 0.1};
  GridMap zero(g, 0.0);

  MemoryPool empty(g, 0.05);
  CHECK(build_cost_map(empty, zero, kMax) == GridMap(g, 0.0));

  MemoryPool pool(g, 0.05);
  ObjectRecord fixed;
  fixed.id = 1;
  fixed.footprint = {{2, 2}, {2, 3}, {3, 2}, {3, 3}};
  fixed.fixed = true;
  fixed.theta = ThetaEstimate{0, 0, 0};
  pool.insert(fixed);
  GridMap out = build_cost_map(pool, zero, kMax);
  int ones = 0;
  for (double v : out.costs()) ones += (v == 1.0);
  CHECK(ones == 4);
  for (Cell c : fixed.footprint) CHECK(out.at(c) == 1.0);

  MemoryPool soft(g, 0.05);
  ObjectRecord r;
  r.id = 1;
  r.footprint = {{5, 5}};
  r.theta = ThetaEstimate{0.3 * 255.0, 0, 0};
  soft.insert(r);
  GridMap predicted(g, 0.0);
  predicted.set(5, 5, 0.9);
  predicted.set(6, 6, 0.5);
  predicted.set(7, 7, 0.49);
  GridMap fused = build_cost_map(soft, predicted, kMax);
  CHECK(fused.at(5, 5) == doctest::Approx(0.3));
  CHECK(fused.at(6, 6) == 1.0);
  CHECK(fused.at(7, 7) == 0.0);

  CHECK_THROWS_AS(build_cost_map(soft, GridMap(11, 10, 0.1), kMax), InvalidArgument);
}

TEST_CASE("build_cost_map output is valid and footprints read back their difficulty") {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cell(0, 19);
  const GridGeometry g{20, 20, 0.05};
  for (int trial = 0; trial < 50; ++trial) {
    MemoryPool pool(g, 0.05);
    std::vector<ObjectRecord> made;
    for (int i = 0; i < 6; ++i) {
      ObjectRecord r;
      r.id = i + 1;
      const int x0 = cell(rng) % 16, y0 = cell(rng) % 16;
      for (int dy = 0; dy < 3; ++dy)
        for (int dx = 0; dx < 3; ++dx) r.footprint.push_back({x0 + dx, y0 + dy});
      std::sort(r.footprint.begin(), r.footprint.end());
      if (u(rng) < 0.7) r.theta = ThetaEstimate{u(rng) * 250, u(rng) * 60, u(rng) * 6};
      r.fixed = u(rng) < 0.2;
      pool.insert(r);
      made.push_back(r);
    }
    GridMap predicted(g);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) predicted.set(x, y, u(rng));
    const GridMap out = build_cost_map(pool, predicted, kMax);
    for (double v : out.costs()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    // Overlaps resolve to the hardest record; a record alone in a cell reads back its own difficulty.
    for (const auto& r : made)
      for (Cell c : r.footprint) {
        double expect = 0.0;
        for (const auto& o : made)
          if (o.covers(c)) expect = std::max(expect, record_difficulty(o, kMax));
        CHECK(out.at(c) == expect);
      }
  }
}

TEST_CASE("pool translation shifts footprint by whole cells") {
  MemoryPool pool({20, 20, 0.01}, 0.05);
  const int id = pool.associate_hit({0.105, 0.105});
  pool.observe(id, {0.115, 0.105}, 1);
  CHECK(pool.record(id).footprint.size() == 2);
  for (int i = 0; i < 10; ++i) pool.translate(id, {0.0015, 0.0});
  const auto& r = pool.record(id);
  CHECK(r.footprint.front() == Cell{11, 10});
  CHECK(r.footprint.back() == Cell{12, 10});
  pool.translate(id, {1.0, 0.0});
  CHECK_FALSE(pool.record(id).footprint.empty());
}

TEST_CASE("map file round trip") {
  GridMap m(5, 3, 0.02);
  m.set(0, 0, 0.12345);
  m.set(4, 2, 1.0);
  m.set(2, 1, 0.5);
  std::stringstream ss;
  write_map(ss, m);
  const std::string text = ss.str();
  CHECK(text.rfind("PAIPMAP v1 5 3 0.02", 0) == 0);
  CHECK(text.find("0.1235") != std::string::npos);
  GridMap back = read_map(ss);
  CHECK(back.width() == 5);
  CHECK(back.at(0, 0) == doctest::Approx(0.1235));
  CHECK(back.at(4, 2) == 1.0);
  std::stringstream again;
  write_map(again, back);
  CHECK(again.str() == text);

  std::stringstream bad("PAIPMAP v2 1 1 0.1 0");
  CHECK_THROWS_AS(read_map(bad), IoError);
}

TEST_CASE("pool snapshot round trip") {
  MemoryPool pool({30, 30, 0.01}, 0.04);
  const int a = pool.associate_hit({0.05, 0.05});
  const int b = pool.associate_hit({0.20, 0.10});
  pool.set_theta(a, {12.5, 3.0, 1.25}, 4e-4, 7);
  pool.mark_fixed(b);
  std::stringstream ss;
  write_pool(ss, pool);
  MemoryPool back = read_pool(ss);
  CHECK(back.size() == 2);
  CHECK(back.record(a).theta == pool.record(a).theta);
  CHECK(back.record(a).covariance_trace == 4e-4);
  CHECK_FALSE(back.record(b).theta.has_value());
  CHECK(back.record(b).fixed);
  CHECK(back.record(b).centroid == pool.record(b).centroid);
  std::stringstream again;
  write_pool(again, back);
  CHECK(again.str() == ss.str());
}

TEST_CASE("walk_segment matches a box-clipping oracle") {
  const GridGeometry g{16, 16, 0.25};
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  std::uniform_int_distribution<int> grid_pt(0, 16);
  for (int trial = 0; trial < 3000; ++trial) {
    Vec2 a{u(rng), u(rng)}, b{u(rng), u(rng)};
    // Every third trial uses lattice-aligned endpoints to exercise exact corner touches.
    if (trial % 3 == 0) {
      a = {grid_pt(rng) * 0.25, grid_pt(rng) * 0.25};
      b = {grid_pt(rng) * 0.25, grid_pt(rng) * 0.25};
    }
    double len = 0.0;
    const auto walked = walked_cells(g, a, b, &len);
    std::set<Cell> oracle;
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x)
        if (segment_touches_box(a, b, x * 0.25, y * 0.25, (x + 1) * 0.25, (y + 1) * 0.25)) oracle.insert({x, y});
    CHECK(walked == oracle);
    CHECK(len == doctest::Approx(distance(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("walk_segment stops when the visitor returns false") {
  const GridGeometry g{10, 10, 1.0};
  int calls = 0;
  walk_segment(g, {0.5, 0.5}, {9.5, 0.5}, [&](std::span<const Cell>, double) { return ++calls < 3; });
  CHECK(calls == 3);
}
