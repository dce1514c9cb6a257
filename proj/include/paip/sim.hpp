#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "paip/geometry.hpp"
#include "paip/gridmap.hpp"
#include "paip/rng.hpp"

namespace paip::sim {

inline constexpr double kDefaultDt = 0.01;
inline constexpr int kDefaultRays = 16;
inline constexpr double kDefaultSensorRange = 0.15;
inline constexpr double kDefaultEffectorRadius = 0.02;

enum class ShapeKind { Disc, Rect };

struct Shape {
  ShapeKind kind = ShapeKind::Disc;
  double radius = 0.0;  // disc
  double width = 0.0;   // rect, full extent along x
  double height = 0.0;  // rect, full extent along y

  static Shape disc(double r) { return {ShapeKind::Disc, r, 0.0, 0.0}; }
  static Shape rect(double w, double h) { return {ShapeKind::Rect, 0.0, w, h}; }
  bool operator==(const Shape&) const = default;
};

struct SimObject {
  int id = 0;
  Shape shape;
  Vec2 pose;  // center
  double true_k = 0.0;
  double true_c = 0.0;
  double true_fc = 0.0;
  bool fixed = false;

  bool operator==(const SimObject&) const = default;
};

struct Effector {
  Vec2 position;
  Vec2 velocity;
  double radius = kDefaultEffectorRadius;
  double max_force = 10.0;  // N
  double stiffness = 200.0;  // N/m
  double damping = 20.0;     // N*s/m
  double mass = 1.0;         // kg

  bool operator==(const Effector&) const = default;
};

/// One tick of contact between the effector and an object. `dx` is the interface compression
/// (penetration depth) and `v` its backward-difference rate, so that for an unsaturated event
/// f = k*dx + c*v + fc*sign(v) holds exactly with the object's true parameters.
struct ContactEvent {
  int object_id = 0;
  double penetration = 0.0;
  double dx = 0.0;
  double v = 0.0;
  double f = 0.0;
  bool saturated = false;  // the contact force hit the effector's force limit
  Vec2 normal;             // unit, from the object toward the effector
  Vec2 contact_point;      // world point on the effector rim facing the object
  Vec2 object_shift;       // displacement applied to the object this tick
  std::int64_t tick = 0;

  bool operator==(const ContactEvent&) const = default;
};

struct World {
  gridmap::GridGeometry workspace;  // the objects and effector stay inside its extent
  std::vector<SimObject> objects;   // ascending id
  Effector effector;
  std::int64_t tick = 0;
  /// Standard deviation of additive Gaussian noise on reported contact forces (physics unaffected).
  double force_noise = 0.0;
  std::uint64_t noise_seed = 0;
  /// Penetration per object index on the previous tick, used for interface velocity.
  std::vector<double> previous_penetration;
  /// Contact normal per object index, held while the effector center is inside the object.
  std::vector<Vec2> contact_normal;

  const SimObject* find(int id) const;
  bool operator==(const World&) const = default;
};

/// Throws InvalidParameter on non-positive dimensions, duplicate ids, objects outside the workspace
/// or overlapping each other, or invalid effector gains.
void validate(const World& world);

struct StepResult {
  Vec2 command_force;  // clamped controller output
  std::vector<ContactEvent> contacts;
};

/// Advances one tick toward `target`. Throws SimulationDiverged when the state stops being finite.
StepResult step(World& world, Vec2 target, double dt = kDefaultDt);

/// Overlap depth and outward normal of a disc of radius `r` centered at `p` against a shape.
struct Penetration {
  double depth = 0.0;  // > 0 when overlapping
  Vec2 normal;         // from the shape toward p
};
Penetration penetration(const SimObject& object, Vec2 p, double r);

/// True when two objects overlap by more than a negligible margin.
bool overlaps(const SimObject& a, const SimObject& b);

struct RayHit {
  double angle = 0.0;
  Vec2 local;  // hit point relative to the sensor
  Vec2 world;
  double distance = 0.0;

  bool operator==(const RayHit&) const = default;
};

struct ProximityScan {
  double range = kDefaultSensorRange;
  int rays = kDefaultRays;
  std::vector<RayHit> hits;  // one per ray that hit, in ray order
};

/// Casts `rays` evenly spaced rays (ray 0 along +x) from the effector center. A ray reports the
/// nearest object boundary at distance <= range, inclusive.
ProximityScan sense_proximity(const World& world, int rays = kDefaultRays, double range = kDefaultSensorRange);

struct TrackParams {
  double lookahead = 0.04;  // m, two cells of a 0.02 m grid
  double tolerance = 0.01;  // m
  int stall_window = 100;   // ticks
  double stall_progress = 1e-4;  // m
  std::int64_t max_ticks = 20000;
  double dt = kDefaultDt;

  /// Lookahead of two cells and tolerance of half a cell.
  static TrackParams for_resolution(double resolution);
};

enum class TrackStatus { Running, Reached, Stalled, TimedOut };

/// Incremental lookahead tracking of a waypoint chain, one control tick at a time.
class Tracker {
 public:
  Tracker() = default;
  Tracker(std::vector<Vec2> waypoints, const TrackParams& params);

  const std::vector<Vec2>& waypoints() const { return waypoints_; }
  TrackStatus status() const { return status_; }
  std::int64_t ticks() const { return ticks_; }

  /// Target point for an effector at `x`; projection progress along the path never moves back.
  Vec2 target(Vec2 x);
  /// One control tick: computes the target, steps the world and updates the status.
  StepResult advance(World& world);

 private:
  std::vector<Vec2> waypoints_;
  std::vector<double> arc_;  // cumulative arc length at each waypoint
  TrackParams params_;
  std::size_t segment_ = 0;
  double progress_ = 0.0;  // arc length of the current projection
  std::vector<Vec2> history_;  // ring buffer of effector positions
  std::int64_t ticks_ = 0;
  TrackStatus status_ = TrackStatus::Running;
};

struct TrackResult {
  TrackStatus status = TrackStatus::Running;
  std::int64_t ticks = 0;
  std::vector<ContactEvent> contacts;
  std::vector<Vec2> trajectory;  // effector position after each tick
  double max_contact_force = 0.0;
  double max_command_force = 0.0;
};

/// Runs a Tracker until the path end is reached, a stall is detected or max_ticks elapse.
TrackResult track(World& world, const std::vector<Vec2>& waypoints, const TrackParams& params);

// Scene file: `PAIPSCENE v1 <n>`, `workspace <w> <h> <res>`, `effector <x> <y>`, then one object per
// line `id disc r x y k c fc fixed` or `id rect w h x y k c fc fixed`.
void write_scene(std::ostream& os, const World& world);
World read_scene(std::istream& is);
void save_scene(const std::string& path, const World& world);
World load_scene(const std::string& path);

/// Binary occupancy of the workspace grid: 1 on every cell whose center lies inside an object.
gridmap::GridMap occupancy(const World& world);

}  // namespace paip::sim
