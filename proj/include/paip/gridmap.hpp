#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paip/geometry.hpp"

namespace paip::gridmap {

/// Shape of a grid anchored at the world origin; cell (0,0) covers [0,res)x[0,res).
struct GridGeometry {
  int width = 0;
  int height = 0;
  double resolution = 0.0;

  double extent_x() const { return width * resolution; }
  double extent_y() const { return height * resolution; }
  std::size_t size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }

  bool contains(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  /// Closed-bounds test: the far edges belong to the map.
  bool contains(Vec2 p) const {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= extent_x() && p.y <= extent_y();
  }
  /// Cell containing `p`; points on the far edge map to the last row/column.
  Cell cell_of(Vec2 p) const;
  Vec2 center_of(Cell c) const { return {(c.x + 0.5) * resolution, (c.y + 0.5) * resolution}; }
  std::size_t index(Cell c) const {
    return static_cast<std::size_t>(c.y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c.x);
  }

  bool operator==(const GridGeometry&) const = default;
};

/// Dense field of operational cost in [0,1], row-major. 1 marks inoperable cells.
class GridMap {
 public:
  GridMap() = default;
  GridMap(int width, int height, double resolution, double fill = 0.0);
  explicit GridMap(GridGeometry geometry, double fill = 0.0);

  const GridGeometry& geometry() const { return geom_; }
  int width() const { return geom_.width; }
  int height() const { return geom_.height; }
  double resolution() const { return geom_.resolution; }
  std::size_t size() const { return cost_.size(); }

  double at(Cell c) const { return cost_[geom_.index(c)]; }
  double at(int x, int y) const { return at(Cell{x, y}); }
  /// Throws InvalidParameter when `value` is outside [0,1] or non-finite.
  void set(Cell c, double value);
  void set(int x, int y, double value) { set(Cell{x, y}, value); }
  void fill(double value);

  std::span<const double> costs() const { return cost_; }
  bool blocked(Cell c) const { return at(c) >= 1.0; }
  bool is_binary() const;

  bool operator==(const GridMap&) const = default;

 private:
  GridGeometry geom_{};
  std::vector<double> cost_;
};

/// Spring stiffness, damping and friction of a contacted object.
struct ThetaEstimate {
  double k = 0.0;   // N/m
  double c = 0.0;   // N*s/m
  double fc = 0.0;  // N

  bool operator==(const ThetaEstimate&) const = default;
};

inline constexpr ThetaEstimate kDefaultThetaMax{200.0, 50.0, 5.0};
inline constexpr double kDefaultOccupancyThreshold = 0.5;

/// Operational difficulty of an object: summed parameters over the summed capability limit,
/// saturating at 1. Any component beyond its limit is inoperable.
double difficulty(const ThetaEstimate& theta, const ThetaEstimate& theta_max);

struct ObjectRecord {
  int id = 0;
  Vec2 centroid{};
  std::vector<Cell> footprint;  // sorted, unique
  std::optional<ThetaEstimate> theta;
  double covariance_trace = std::numeric_limits<double>::infinity();
  bool fixed = false;
  std::int64_t last_update = 0;
  int observations = 0;

  bool covers(Cell c) const;
};

/// Difficulty of a stored record: 1 when fixed or not yet identified.
double record_difficulty(const ObjectRecord& record, const ThetaEstimate& theta_max);

/// Object-centric store of everything the agent has sensed or identified.
class MemoryPool {
 public:
  MemoryPool(GridGeometry geometry, double association_radius);

  const GridGeometry& geometry() const { return geom_; }
  double association_radius() const { return radius_; }

  /// Nearest record whose centroid lies within the association radius (lowest id on ties),
  /// otherwise a fresh single-cell record.
  int associate_hit(Vec2 point, std::int64_t tick = 0);
  /// Adds the cell under `point` to the record and folds the point into its centroid.
  void observe(int id, Vec2 point, std::int64_t tick);
  void set_theta(int id, const ThetaEstimate& theta, double covariance_trace, std::int64_t tick);
  void mark_fixed(int id, bool fixed = true);
  /// Shifts a record (centroid and footprint) by a world displacement. Cells pushed off the map
  /// are dropped, but the footprint never becomes empty.
  void translate(int id, Vec2 delta);

  const ObjectRecord* find(int id) const;
  const ObjectRecord& record(int id) const;
  const std::vector<ObjectRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  /// Binary map with 1 on every footprint cell.
  GridMap observed_map() const;

  /// Appends a record verbatim (used by snapshot loading); ids must stay unique.
  void insert(ObjectRecord record);

 private:
  ObjectRecord& mutable_record(int id);

  GridGeometry geom_;
  double radius_;
  int next_id_ = 1;
  std::vector<ObjectRecord> records_;  // ascending id
  std::vector<Vec2> translation_residue_;
};

/// Fuses pool records and predicted occupancy into a planner cost map. Record cells take their
/// difficulty (max over overlapping records); unclaimed cells predicted at or above `p_occ` are 1.
GridMap build_cost_map(const MemoryPool& pool, const GridMap& predicted, const ThetaEstimate& theta_max,
                       double p_occ = kDefaultOccupancyThreshold);

/// Visits a segment as a sequence of pieces. Each call receives the in-bounds cells whose closed
/// square touches the piece (1, 2 or 4 cells) and the piece's world length; vertex touches (cell
/// corners and boundary crossings) arrive with length 0. Returning false stops the walk.
template <class Visitor>
void walk_segment(const GridGeometry& g, Vec2 a, Vec2 b, Visitor&& visit);

// Text I/O. Maps: `PAIPMAP v1 <w> <h> <res>` then costs to 4 decimals, one row per line.
void write_map(std::ostream& os, const GridMap& map);
GridMap read_map(std::istream& is);
void save_map(const std::string& path, const GridMap& map);
GridMap load_map(const std::string& path);

// Pool snapshot: `PAIPPOOL v1 <w> <h> <res> <radius> <n>` then `id cx cy fixed k c f_c cov_trace`.
// Unidentified records store nan parameters. Footprints are not persisted; a loaded record
// covers the cell under its centroid.
void write_pool(std::ostream& os, const MemoryPool& pool);
MemoryPool read_pool(std::istream& is);

// ---------------------------------------------------------------------------

namespace detail {

struct TouchSet {
  std::array<Cell, 4> cells{};
  int count = 0;
};

inline void touching_cells(const GridGeometry& g, double cx, double cy, TouchSet& out) {
  out.count = 0;
  const double fx = std::floor(cx);
  const double fy = std::floor(cy);
  const int xs[2] = {static_cast<int>(fx), static_cast<int>(fx) - 1};
  const int ys[2] = {static_cast<int>(fy), static_cast<int>(fy) - 1};
  const int nx = (cx == fx) ? 2 : 1;
  const int ny = (cy == fy) ? 2 : 1;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      Cell c{xs[i], ys[j]};
      if (g.contains(c)) out.cells[out.count++] = c;
    }
}

}  // namespace detail

template <class Visitor>
void walk_segment(const GridGeometry& g, Vec2 a, Vec2 b, Visitor&& visit) {
  const double inv = 1.0 / g.resolution;
  const double px = a.x * inv, py = a.y * inv;
  const double dx = b.x * inv - px, dy = b.y * inv - py;
  const double world_len = distance(a, b);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Parameter of the next integer crossing along each axis.
  double tx = kInf, next_x = 0.0, step_x = 0.0;
  if (dx > 0.0) {
    next_x = std::floor(px) + 1.0;
    step_x = 1.0;
  } else if (dx < 0.0) {
    next_x = std::ceil(px) - 1.0;
    step_x = -1.0;
  }
  if (dx != 0.0) tx = (next_x - px) / dx;
  double ty = kInf, next_y = 0.0, step_y = 0.0;
  if (dy > 0.0) {
    next_y = std::floor(py) + 1.0;
    step_y = 1.0;
  } else if (dy < 0.0) {
    next_y = std::ceil(py) - 1.0;
    step_y = -1.0;
  }
  if (dy != 0.0) ty = (next_y - py) / dy;

  detail::TouchSet touch;
  auto emit = [&](double cx, double cy, double len) {
    detail::touching_cells(g, cx, cy, touch);
    return visit(std::span<const Cell>(touch.cells.data(), static_cast<std::size_t>(touch.count)), len);
  };

  if (!emit(px, py, 0.0)) return;
  double t_prev = 0.0;
  while (true) {
    const double t_next = std::min({tx, ty, 1.0});
    if (t_next > t_prev) {
      const double tm = 0.5 * (t_prev + t_next);
      if (!emit(px + tm * dx, py + tm * dy, (t_next - t_prev) * world_len)) return;
    }
    if (t_next >= 1.0) break;
    // Snap the crossing coordinate to its exact integer.
    const bool cross_x = (tx == t_next);
    const bool cross_y = (ty == t_next);
    const double cx = cross_x ? next_x : px + t_next * dx;
    const double cy = cross_y ? next_y : py + t_next * dy;
    if (!emit(cx, cy, 0.0)) return;
    if (cross_x) {
      next_x += step_x;
      tx = (next_x - px) / dx;
    }
    if (cross_y) {
      next_y += step_y;
      ty = (next_y - py) / dy;
    }
    t_prev = t_next;
  }
  emit(px + dx, py + dy, 0.0);
}

}  // namespace paip::gridmap
