#include <algorithm>
#include <chrono>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "paip/error.hpp"
#include "paip/samplers.hpp"

using namespace paip;
using namespace paip::samplers;
using gridmap::GridMap;

namespace {

// Cost-1 slabs above and below a one-cell free corridor at row 10.
GridMap corridor_map() {
  GridMap m(20, 21, 1.0, 0.0);
  for (int y = 0; y < 21; ++y)
    for (int x = 0; x < 20; ++x)
      if (y != 10) m.set(x, y, 1.0);
  return m;
}

GridMap block_map() {
  GridMap m(40, 40, 0.5, 0.0);
  for (int y = 10; y < 30; ++y)
    for (int x = 10; x < 30; ++x)
      if (x != 19 && x != 20) m.set(x, y, 1.0);
  return m;
}

bool blocked_at(const GridMap& m, Vec2 p) { return m.blocked(m.geometry().cell_of(p)); }

}  // namespace

TEST_CASE("sampler names round-trip") {
  for (SamplerKind k : kAllSamplers) CHECK(parse_sampler(to_string(k)) == k);
  CHECK(parse_sampler("learned") == SamplerKind::Learned);
  CHECK_THROWS_AS(parse_sampler("gauss"), InvalidArgument);
}

TEST_CASE("uniform sampler passes a quadrant chi-square test") {
  GridMap m(100, 60, 0.5, 0.0);
  Rng rng(123);
  int counts[4] = {};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Vec2 p = sample(SamplerKind::Uniform, m, nullptr, rng);
    REQUIRE(m.geometry().contains(p));
    counts[(p.x >= 25.0 ? 1 : 0) + (p.y >= 15.0 ? 2 : 0)]++;
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
  // Critical value for three degrees of freedom at alpha 0.01.
  CHECK(chi2 < 11.345);
}

TEST_CASE("bridge samples land in a one-cell corridor between blocked probes") {
  const GridMap m = corridor_map();
  Rng rng(5);
  int got = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto p = try_sample(SamplerKind::Static, m, nullptr, rng);
    if (!p) continue;
    ++got;
    CHECK(m.at(m.geometry().cell_of(*p)) < 1.0);
    CHECK(m.geometry().cell_of(*p).y == 10);
  }
  CHECK(got > 100);
}

TEST_CASE("gaussian and bridge samples avoid blocked cells and stay in bounds") {
  const GridMap m = block_map();
  for (SamplerKind k : {SamplerKind::Hybrid, SamplerKind::Static}) {
    Rng rng(17);
    int near_boundary = 0, got = 0;
    for (int i = 0; i < 3000; ++i) {
      const auto p = try_sample(k, m, nullptr, rng);
      if (!p) continue;
      ++got;
      REQUIRE(m.geometry().contains(*p));
      REQUIRE_FALSE(blocked_at(m, *p));
      const Cell c = m.geometry().cell_of(*p);
      if (c.x >= 4 && c.x < 36 && c.y >= 4 && c.y < 36) ++near_boundary;
    }
    CHECK(got > (k == SamplerKind::Hybrid ? 2000 : 100));
    // The free ring within three cells of the block and the slit cover about 40% of the free area.
    if (k == SamplerKind::Hybrid) CHECK(near_boundary > got * 0.45);
  }
}

TEST_CASE("static sampler starves on an open map") {
  GridMap m(10, 10, 1.0, 0.0);
  Rng rng(1);
  CHECK_FALSE(try_sample(SamplerKind::Static, m, nullptr, rng).has_value());
  CHECK_THROWS_AS(sample(SamplerKind::Static, m, nullptr, rng), SamplingStarved);
}

TEST_CASE("learned sampler follows its density") {
  GridMap m(50, 40, 0.2, 0.0);
  std::vector<double> w(50 * 40, 0.0);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 25; ++x) w[static_cast<std::size_t>(y) * 50 + x] = 1.0;
  const LearnedDensity d(50, 40, w);
  Rng rng(2);
  int left = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec2 p = sample(SamplerKind::Learned, m, &d, rng);
    REQUIRE(m.geometry().contains(p));
    if (p.x < 5.0) ++left;
  }
  CHECK(left >= 9500);
  CHECK_THROWS_AS(sample(SamplerKind::Learned, m, nullptr, rng), InvalidArgument);
  const LearnedDensity wrong(10, 10, std::vector<double>(100, 1.0));
  CHECK_THROWS_AS(sample(SamplerKind::Learned, m, &wrong, rng), InvalidArgument);
}

TEST_CASE("density normalization and cdf") {
  const LearnedDensity d(3, 2, {1, 0, 3, 0, 0, 4});
  double s = 0.0;
  for (double w : d.weights()) s += w;
  CHECK(s == doctest::Approx(1.0));
  CHECK(d.cdf().back() == 1.0);
  CHECK(std::is_sorted(d.cdf().begin(), d.cdf().end()));
  CHECK(d.cell_for(0.0) == 0);
  CHECK(d.cell_for(0.1) == 0);
  CHECK(d.cell_for(0.2) == 2);
  CHECK(d.cell_for(0.9) == 5);
  CHECK_THROWS_AS(LearnedDensity(2, 2, {0, 0, 0, 0}), InvalidArgument);
  CHECK_THROWS_AS(LearnedDensity(2, 2, {1, -1, 1, 1}), InvalidArgument);
  CHECK_THROWS_AS(LearnedDensity(2, 2, {1, 1, 1}), InvalidArgument);
}

TEST_CASE("fitted density concentrates on a straight path") {
  const gridmap::GridGeometry g{40, 40, 0.5};
  const LearnedDensity d = fit_learned({{{2.0, 10.25}, {18.0, 10.25}}}, g);
  double near = 0.0, total = 0.0;
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      total += d.weight(x, y);
      if (std::abs(y - 20) <= 1) near += d.weight(x, y);
    }
  CHECK(total == doctest::Approx(1.0));
  CHECK(near >= 0.9 * total);
  for (double w : d.weights()) CHECK(w > 0.0);
}

TEST_CASE("fitted density from scattered waypoints is near uniform") {
  const gridmap::GridGeometry g{20, 20, 1.0};
  std::vector<std::vector<Vec2>> paths;
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) paths.push_back({{x + 0.5, y + 0.5}});
  const LearnedDensity d = fit_learned(paths, g);
  const auto [lo, hi] = std::minmax_element(d.weights().begin(), d.weights().end());
  CHECK(*hi / *lo < 3.0);
  CHECK_THROWS_AS(fit_learned({}, g), InvalidArgument);
  CHECK_THROWS_AS(fit_learned({{}, {}}, g), InvalidArgument);
}

TEST_CASE("fixed seeds give identical sample streams") {
  const GridMap m = block_map();
  const LearnedDensity d = fit_learned({{{1.0, 1.0}, {19.0, 19.0}}}, m.geometry());
  for (SamplerKind k : kAllSamplers) {
    Rng a(99), b(99);
    for (int i = 0; i < 500; ++i) {
      const auto pa = try_sample(k, m, &d, a), pb = try_sample(k, m, &d, b);
      REQUIRE(pa.has_value() == pb.has_value());
      if (pa) CHECK(*pa == *pb);
    }
  }
}

TEST_CASE("learned draws cost more than uniform draws") {
  GridMap m(200, 200, 0.1, 0.0);
  std::vector<std::vector<Vec2>> paths;
  Rng setup(4);
  for (int i = 0; i < 50; ++i)
    paths.push_back({{uniform01(setup) * 20, uniform01(setup) * 20}, {uniform01(setup) * 20, uniform01(setup) * 20}});
  const LearnedDensity d = fit_learned(paths, m.geometry());
  auto time_of = [&](SamplerKind k) {
    Rng rng(1);
    double sink = 0.0;
    double best = 1e9;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < 200000; ++i) sink += try_sample(k, m, &d, rng)->x;
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    CHECK(sink > 0.0);
    return best;
  };
  CHECK(time_of(SamplerKind::Learned) > time_of(SamplerKind::Uniform));
}

TEST_CASE("density file round trip") {
  const LearnedDensity d = fit_learned({{{0.3, 0.3}, {4.7, 2.2}}}, {10, 6, 0.5});
  std::stringstream ss;
  write_density(ss, d);
  CHECK(ss.str().rfind("PAIPDEN v1 10 6\n", 0) == 0);
  const LearnedDensity back = read_density(ss);
  REQUIRE(back.width() == 10);
  REQUIRE(back.height() == 6);
  for (std::size_t i = 0; i < d.weights().size(); ++i)
    CHECK(back.weights()[i] == doctest::Approx(d.weights()[i]).epsilon(1e-7));
  std::stringstream bad("PAIPMAP v1 1 1");
  CHECK_THROWS_AS(read_density(bad), IoError);
}
