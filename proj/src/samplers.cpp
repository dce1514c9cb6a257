#include "paip/samplers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "paip/error.hpp"

namespace paip::samplers {

using gridmap::GridGeometry;
using gridmap::GridMap;

std::string_view to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::Uniform: return "Uniform";
    case SamplerKind::Hybrid: return "Hybrid";
    case SamplerKind::Static: return "Static";
    case SamplerKind::Learned: return "Learned";
  }
  return "?";
}

SamplerKind parse_sampler(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (SamplerKind k : kAllSamplers) {
    std::string n(to_string(k));
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
    if (n == lower) return k;
  }
  throw InvalidArgument("unknown sampler '" + std::string(name) + "'");
}

LearnedDensity::LearnedDensity(int width, int height, std::vector<double> weights)
    : width_(width), height_(height), weights_(std::move(weights)) {
  if (width <= 0 || height <= 0 || weights_.size() != static_cast<std::size_t>(width) * height)
    throw InvalidArgument("density weights do not match dimensions");
  double total = 0.0;
  for (double w : weights_) {
    if (!std::isfinite(w) || w < 0.0) throw InvalidArgument("density weights must be finite and non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("density has no mass");
  cdf_.resize(weights_.size());
  double run = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    weights_[i] /= total;
    run += weights_[i];
    cdf_[i] = run;
  }
  cdf_.back() = 1.0;
}

std::size_t LearnedDensity::cell_for(double u) const {
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return std::min(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
}

LearnedDensity fit_learned(const std::vector<std::vector<Vec2>>& paths, const GridGeometry& g) {
  if (g.width <= 0 || g.height <= 0 || !(g.resolution > 0.0)) throw InvalidArgument("density needs a non-empty grid");
  std::vector<double> hist(g.size(), 0.0);
  bool any = false;
  auto bump = [&](Vec2 p) {
    Cell c = g.cell_of(p);
    if (!g.contains(c)) return;
    hist[g.index(c)] += 1.0;
    any = true;
  };
  for (const auto& path : paths) {
    if (path.empty()) continue;
    bump(path.front());
    for (std::size_t i = 1; i < path.size(); ++i) {
      // One count per cell entered along the segment.
      Cell last = g.cell_of(path[i - 1]);
      const double seg = distance(path[i - 1], path[i]);
      const int steps = std::max(1, static_cast<int>(std::ceil(seg / (0.5 * g.resolution))));
      for (int s = 1; s <= steps; ++s) {
        const Vec2 p = path[i - 1] + (path[i] - path[i - 1]) * (static_cast<double>(s) / steps);
        const Cell c = g.cell_of(p);
        if (c != last) {
          bump(p);
          last = c;
        }
      }
    }
  }
  if (!any) throw InvalidArgument("no path waypoints to fit a density from");

  std::vector<double> smooth(g.size(), 0.0);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Cell c{x + dx, y + dy};
          if (g.contains(c)) s += hist[g.index(c)];
        }
      smooth[g.index({x, y})] = s / 9.0;
    }
  double total = 0.0;
  for (double v : smooth) total += v;
  for (double& v : smooth) v = std::max(v / total, kDensityFloor);
  return LearnedDensity(g.width, g.height, std::move(smooth));
}

namespace {

bool blocked_at(const GridMap& map, Vec2 p) {
  const Cell c = map.geometry().cell_of(p);
  return map.blocked(c);
}

Vec2 uniform_point(const GridMap& map, Rng& rng) {
  const auto& g = map.geometry();
  return {uniform01(rng) * g.extent_x(), uniform01(rng) * g.extent_y()};
}

}  // namespace

std::optional<Vec2> try_sample(SamplerKind kind, const GridMap& map, const LearnedDensity* density, Rng& rng,
                               const SamplerParams& params) {
  const auto& g = map.geometry();
  const double sigma = params.gaussian_sigma_cells * g.resolution;
  switch (kind) {
    case SamplerKind::Uniform:
      return uniform_point(map, rng);
    case SamplerKind::Hybrid: {
      const bool plain = uniform01(rng) < params.hybrid_uniform_probability;
      std::normal_distribution<double> n(0.0, sigma);
      for (int attempt = 0; attempt < params.retry_budget; ++attempt) {
        if (plain) {
          const Vec2 p = uniform_point(map, rng);
          if (!blocked_at(map, p)) return p;
          continue;
        }
        const Vec2 a = uniform_point(map, rng);
        const Vec2 b = a + Vec2{n(rng), n(rng)};
        if (!g.contains(b)) continue;
        const bool ba = blocked_at(map, a), bb = blocked_at(map, b);
        if (ba != bb) return ba ? b : a;
      }
      return std::nullopt;
    }
    case SamplerKind::Static: {
      std::normal_distribution<double> n(0.0, sigma);
      for (int attempt = 0; attempt < params.retry_budget; ++attempt) {
        const Vec2 a = uniform_point(map, rng);
        if (!blocked_at(map, a)) continue;
        const Vec2 b = a + Vec2{n(rng), n(rng)};
        if (!g.contains(b) || !blocked_at(map, b)) continue;
        const Vec2 mid = (a + b) * 0.5;
        if (!blocked_at(map, mid)) return mid;
      }
      return std::nullopt;
    }
    case SamplerKind::Learned: {
      if (!density || density->width() != g.width || density->height() != g.height) return std::nullopt;
      const std::size_t cell = density->cell_for(uniform01(rng));
      const int cx = static_cast<int>(cell % static_cast<std::size_t>(g.width));
      const int cy = static_cast<int>(cell / static_cast<std::size_t>(g.width));
      return Vec2{(cx + uniform01(rng)) * g.resolution, (cy + uniform01(rng)) * g.resolution};
    }
  }
  return std::nullopt;
}

Vec2 sample(SamplerKind kind, const GridMap& map, const LearnedDensity* density, Rng& rng,
            const SamplerParams& params) {
  if (kind == SamplerKind::Learned &&
      (!density || density->width() != map.width() || density->height() != map.height()))
    throw InvalidArgument("learned sampling needs a density matching the map");
  if (auto p = try_sample(kind, map, density, rng, params)) return *p;
  throw SamplingStarved(std::string(to_string(kind)) + " sampler exhausted its retry budget");
}

void write_density(std::ostream& os, const LearnedDensity& d) {
  os << "PAIPDEN v1 " << d.width() << ' ' << d.height() << '\n';
  char buf[40];
  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      std::snprintf(buf, sizeof buf, "%.9g", d.weight(x, y));
      if (x) os << ' ';
      os << buf;
    }
    os << '\n';
  }
}

LearnedDensity read_density(std::istream& is) {
  std::string magic, version;
  int w = 0, h = 0;
  if (!(is >> magic >> version >> w >> h) || magic != "PAIPDEN" || version != "v1")
    throw IoError("not a PAIPDEN v1 density");
  if (w <= 0 || h <= 0) throw IoError("bad density dimensions");
  std::vector<double> weights(static_cast<std::size_t>(w) * h);
  for (auto& v : weights)
    if (!(is >> v)) throw IoError("density body truncated");
  return LearnedDensity(w, h, std::move(weights));
}

void save_density(const std::string& path, const LearnedDensity& density) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  write_density(os, density);
}

LearnedDensity load_density(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return read_density(is);
}

}  // namespace paip::samplers
