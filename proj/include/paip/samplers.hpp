#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "paip/gridmap.hpp"
#include "paip/rng.hpp"

namespace paip::samplers {

enum class SamplerKind { Uniform, Hybrid, Static, Learned };

inline constexpr SamplerKind kAllSamplers[] = {SamplerKind::Uniform, SamplerKind::Hybrid, SamplerKind::Static,
                                               SamplerKind::Learned};

std::string_view to_string(SamplerKind kind);
/// Accepts the names produced by to_string, case-insensitively. Throws InvalidArgument otherwise.
SamplerKind parse_sampler(std::string_view name);

struct SamplerParams {
  double gaussian_sigma_cells = 3.0;
  double hybrid_uniform_probability = 0.5;
  int retry_budget = 64;
};

/// Normalized per-cell sampling weights with a cumulative table for inverse-CDF draws.
class LearnedDensity {
 public:
  LearnedDensity() = default;
  /// Weights are normalized to sum to 1. Throws InvalidArgument on size mismatch, negative or
  /// non-finite weights, or an all-zero grid.
  LearnedDensity(int width, int height, std::vector<double> weights);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& cdf() const { return cdf_; }
  double weight(int x, int y) const { return weights_[static_cast<std::size_t>(y) * width_ + x]; }

  /// Cell index whose cumulative interval contains u in [0,1).
  std::size_t cell_for(double u) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> weights_;
  std::vector<double> cdf_;
};

inline constexpr double kDensityFloor = 1e-6;

/// Histogram of cells visited by the paths (segments walked cell by cell, so sparse waypoints still
/// mark the route), smoothed with a 3x3 box, normalized, floored at kDensityFloor and renormalized.
/// Throws InvalidArgument when no path has a waypoint.
LearnedDensity fit_learned(const std::vector<std::vector<Vec2>>& paths, const gridmap::GridGeometry& geometry);

/// One draw. Returns nullopt when the retry budget runs out (or a Learned draw lacks a density).
std::optional<Vec2> try_sample(SamplerKind kind, const gridmap::GridMap& map, const LearnedDensity* density, Rng& rng,
                               const SamplerParams& params = {});

/// As try_sample, but throws SamplingStarved on an exhausted budget and InvalidArgument when a
/// Learned draw has no density or the density does not match the map.
Vec2 sample(SamplerKind kind, const gridmap::GridMap& map, const LearnedDensity* density, Rng& rng,
            const SamplerParams& params = {});

// `PAIPDEN v1 <w> <h>` then one row of weights per line.
void write_density(std::ostream& os, const LearnedDensity& density);
LearnedDensity read_density(std::istream& is);
void save_density(const std::string& path, const LearnedDensity& density);
LearnedDensity load_density(const std::string& path);

}  // namespace paip::samplers
