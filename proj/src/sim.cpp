#include "paip/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "paip/error.hpp"

namespace paip::sim {

namespace {

constexpr double kOverlapMargin = 1e-12;
constexpr double kRateDeadband = 1e-9;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct Box {
  double x0, y0, x1, y1;
};

Box bounds(const SimObject& o) {
  if (o.shape.kind == ShapeKind::Disc)
    return {o.pose.x - o.shape.radius, o.pose.y - o.shape.radius, o.pose.x + o.shape.radius, o.pose.y + o.shape.radius};
  const double hx = 0.5 * o.shape.width, hy = 0.5 * o.shape.height;
  return {o.pose.x - hx, o.pose.y - hy, o.pose.x + hx, o.pose.y + hy};
}

bool inside_workspace(const World& w, const SimObject& o) {
  const Box b = bounds(o);
  const double ex = w.workspace.extent_x(), ey = w.workspace.extent_y();
  return b.x0 >= -kOverlapMargin && b.y0 >= -kOverlapMargin && b.x1 <= ex + kOverlapMargin &&
         b.y1 <= ey + kOverlapMargin;
}

// Largest extent of the shape along unit direction n, measured from its center.
double support(const SimObject& o, Vec2 n) {
  if (o.shape.kind == ShapeKind::Disc) return o.shape.radius;
  return 0.5 * (std::fabs(n.x) * o.shape.width + std::fabs(n.y) * o.shape.height);
}

bool finite(Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

// Moves the object at `index` along `dir` under force `f`, dragging along every movable object it
// runs into. The chain slides at max(0, f - sum fc) / sum c, or not at all when anything blocks it.
Vec2 push_chain(World& world, std::size_t index, Vec2 dir, double f, double dt) {
  std::vector<std::size_t> chain{index};
  for (;;) {
    double sum_fc = 0.0, sum_c = 0.0;
    for (std::size_t m : chain) {
      const auto& o = world.objects[m];
      if (o.fixed) return {};
      sum_fc += o.true_fc;
      sum_c += o.true_c;
    }
    const double v = std::max(0.0, f - sum_fc) / sum_c;
    if (!(v > 0.0)) return {};
    const Vec2 shift = dir * (v * dt);
    bool grew = false;
    for (std::size_t ci = 0; ci < chain.size(); ++ci) {
      SimObject moved = world.objects[chain[ci]];
      moved.pose += shift;
      if (!inside_workspace(world, moved)) return {};
      for (std::size_t j = 0; j < world.objects.size(); ++j) {
        if (std::find(chain.begin(), chain.end(), j) != chain.end()) continue;
        if (overlaps(moved, world.objects[j])) {
          chain.push_back(j);
          grew = true;
        }
      }
    }
    if (!grew) {
      for (std::size_t m : chain) world.objects[m].pose += shift;
      return shift;
    }
  }
}

}  // namespace

const SimObject* World::find(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

void validate(const World& w) {
  const auto& g = w.workspace;
  if (g.width <= 0 || g.height <= 0 || !(g.resolution > 0.0)) throw InvalidParameter("workspace must be non-empty");
  const auto& e = w.effector;
  if (!(e.radius > 0.0) || !(e.max_force > 0.0) || !(e.stiffness > 0.0) || !(e.damping > 0.0) || !(e.mass > 0.0))
    throw InvalidParameter("effector radius, force limit, gains and mass must be positive");
  if (!finite(e.position) || !finite(e.velocity) || !g.contains(e.position))
    throw InvalidParameter("effector must start inside the workspace");
  if (!(w.force_noise >= 0.0)) throw InvalidParameter("force noise must be non-negative");
  for (std::size_t i = 0; i < w.objects.size(); ++i) {
    const auto& o = w.objects[i];
    const bool dims = o.shape.kind == ShapeKind::Disc ? o.shape.radius > 0.0 : (o.shape.width > 0.0 && o.shape.height > 0.0);
    if (!dims) throw InvalidParameter("object " + std::to_string(o.id) + " has non-positive dimensions");
    if (!(o.true_k >= 0.0) || !(o.true_c > 0.0) || !(o.true_fc >= 0.0) || !std::isfinite(o.true_k) ||
        !std::isfinite(o.true_c) || !std::isfinite(o.true_fc))
      throw InvalidParameter("object " + std::to_string(o.id) + " needs k >= 0, c > 0, fc >= 0");
    if (!inside_workspace(w, o)) throw InvalidParameter("object " + std::to_string(o.id) + " leaves the workspace");
    if (i > 0 && w.objects[i - 1].id >= o.id) throw InvalidParameter("object ids must be unique and ascending");
    for (std::size_t j = 0; j < i; ++j)
      if (overlaps(w.objects[j], o))
        throw InvalidParameter("objects " + std::to_string(w.objects[j].id) + " and " + std::to_string(o.id) + " overlap");
  }
}

Penetration penetration(const SimObject& o, Vec2 p, double r) {
  Penetration out;
  if (o.shape.kind == ShapeKind::Disc) {
    const Vec2 d = p - o.pose;
    const double n = d.norm();
    out.depth = o.shape.radius + r - n;
    out.normal = n > 0.0 ? d / n : Vec2{1.0, 0.0};
    return out;
  }
  const Box b = bounds(o);
  const Vec2 q{std::clamp(p.x, b.x0, b.x1), std::clamp(p.y, b.y0, b.y1)};
  const Vec2 d = p - q;
  const double n = d.norm();
  if (n > 0.0) {
    out.depth = r - n;
    out.normal = d / n;
    return out;
  }
  // Center inside the box: leave through the nearest face.
  const double faces[4] = {p.x - b.x0, b.x1 - p.x, p.y - b.y0, b.y1 - p.y};
  const Vec2 normals[4] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  int best = 0;
  for (int i = 1; i < 4; ++i)
    if (faces[i] < faces[best]) best = i;
  out.depth = r + faces[best];
  out.normal = normals[best];
  return out;
}

bool overlaps(const SimObject& a, const SimObject& b) {
  if (a.shape.kind == ShapeKind::Disc) return penetration(b, a.pose, a.shape.radius).depth > kOverlapMargin;
  if (b.shape.kind == ShapeKind::Disc) return penetration(a, b.pose, b.shape.radius).depth > kOverlapMargin;
  const Box p = bounds(a), q = bounds(b);
  return std::min(p.x1, q.x1) - std::max(p.x0, q.x0) > kOverlapMargin &&
         std::min(p.y1, q.y1) - std::max(p.y0, q.y0) > kOverlapMargin;
}

StepResult step(World& world, Vec2 target, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidParameter("time step must be positive");
  if (!finite(target)) throw InvalidParameter("target must be finite");
  auto& e = world.effector;
  if (!finite(e.position) || !finite(e.velocity)) throw SimulationDiverged("effector state is not finite");

  StepResult out;
  Vec2 force = (target - e.position) * e.stiffness - e.velocity * e.damping;
  const double magnitude = force.norm();
  if (magnitude > e.max_force) force = force * (e.max_force / magnitude);
  out.command_force = force;

  world.previous_penetration.resize(world.objects.size(), 0.0);
  world.contact_normal.resize(world.objects.size(), Vec2{});
  Vec2 reaction;
  for (std::size_t i = 0; i < world.objects.size(); ++i) {
    const auto& o = world.objects[i];
    Penetration pen = penetration(o, e.position, e.radius);
    if (pen.depth <= 0.0) {
      world.previous_penetration[i] = 0.0;
      continue;
    }
    // While the effector center is inside the object the geometric normal is meaningless (it
    // flips past the center), so an ongoing contact keeps its normal and deepens along it.
    const Vec2 held = world.contact_normal[i];
    if (world.previous_penetration[i] > 0.0 && held != Vec2{} && penetration(o, e.position, 0.0).depth > 0.0) {
      pen.normal = held;
      pen.depth = e.radius + support(o, held) - (e.position - o.pose).dot(held);
      if (pen.depth <= 0.0) {
        world.previous_penetration[i] = 0.0;
        continue;
      }
    }
    world.contact_normal[i] = pen.normal;
    double rate = (pen.depth - world.previous_penetration[i]) / dt;
    if (std::fabs(rate) < kRateDeadband) rate = 0.0;  // rounding noise must not flip the friction sign
    world.previous_penetration[i] = pen.depth;
    const double raw = o.true_k * pen.depth + o.true_c * rate + o.true_fc * sign(rate);
    if (!std::isfinite(raw)) throw SimulationDiverged("contact force is not finite");
    if (raw <= 0.0) continue;  // separating faster than the interface relaxes
    const double f = std::min(raw, e.max_force);
    reaction += pen.normal * f;

    ContactEvent ev;
    ev.object_id = o.id;
    ev.penetration = pen.depth;
    ev.dx = pen.depth;
    ev.v = rate;
    ev.f = f;
    ev.saturated = raw > e.max_force;
    ev.normal = pen.normal;
    ev.contact_point = e.position - pen.normal * e.radius;
    ev.tick = world.tick;
    ev.object_shift = push_chain(world, i, pen.normal * -1.0, f, dt);
    if (world.force_noise > 0.0) {
      Rng rng(derive_seed({world.noise_seed, static_cast<std::uint64_t>(world.tick), static_cast<std::uint64_t>(o.id)}));
      ev.f += std::normal_distribution<double>(0.0, world.force_noise)(rng);
    }
    out.contacts.push_back(ev);
  }

  e.velocity += (force + reaction) * (dt / e.mass);
  e.position += e.velocity * dt;
  const double ex = world.workspace.extent_x(), ey = world.workspace.extent_y();
  if (e.position.x < 0.0 || e.position.x > ex) {
    e.position.x = std::clamp(e.position.x, 0.0, ex);
    e.velocity.x = 0.0;
  }
  if (e.position.y < 0.0 || e.position.y > ey) {
    e.position.y = std::clamp(e.position.y, 0.0, ey);
    e.velocity.y = 0.0;
  }
  if (!finite(e.position) || !finite(e.velocity)) throw SimulationDiverged("effector state is not finite");
  ++world.tick;
  return out;
}

namespace {

// Smallest t >= 0 with origin + t*dir on the shape, or infinity. Zero when the origin is inside.
double ray_distance(const SimObject& o, Vec2 origin, Vec2 dir) {
  const double inf = std::numeric_limits<double>::infinity();
  if (o.shape.kind == ShapeKind::Disc) {
    const Vec2 m = origin - o.pose;
    const double r = o.shape.radius;
    const double c = m.squared_norm() - r * r;
    if (c <= 0.0) return 0.0;
    const double b = m.dot(dir);
    if (b > 0.0) return inf;
    const double disc = b * b - c;
    if (disc < 0.0) return inf;
    return std::max(0.0, -b - std::sqrt(disc));
  }
  const Box bx = bounds(o);
  double t0 = 0.0, t1 = inf;
  const double p[2] = {origin.x, origin.y}, d[2] = {dir.x, dir.y};
  const double lo[2] = {bx.x0, bx.y0}, hi[2] = {bx.x1, bx.y1};
  for (int k = 0; k < 2; ++k) {
    if (std::fabs(d[k]) < 1e-15) {
      if (p[k] < lo[k] || p[k] > hi[k]) return inf;
      continue;
    }
    double ta = (lo[k] - p[k]) / d[k], tb = (hi[k] - p[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return inf;
  }
  return t0;
}

}  // namespace

ProximityScan sense_proximity(const World& world, int rays, double range) {
  if (rays < 1) throw InvalidParameter("proximity scan needs at least one ray");
  if (!(range > 0.0)) throw InvalidParameter("sensor range must be positive");
  ProximityScan scan;
  scan.range = range;
  scan.rays = rays;
  const Vec2 origin = world.effector.position;
  for (int i = 0; i < rays; ++i) {
    const double angle = 2.0 * M_PI * i / rays;
    const Vec2 dir{std::cos(angle), std::sin(angle)};
    double best = std::numeric_limits<double>::infinity();
    for (const auto& o : world.objects) best = std::min(best, ray_distance(o, origin, dir));
    // Inclusive range, tolerant of rounding in the intersection.
    if (best > range * (1.0 + 1e-12)) continue;
    best = std::min(best, range);
    RayHit hit;
    hit.angle = angle;
    hit.distance = best;
    hit.local = dir * best;
    hit.world = origin + hit.local;
    scan.hits.push_back(hit);
  }
  return scan;
}

TrackParams TrackParams::for_resolution(double resolution) {
  TrackParams p;
  p.lookahead = 2.0 * resolution;
  p.tolerance = 0.5 * resolution;
  return p;
}

Tracker::Tracker(std::vector<Vec2> waypoints, const TrackParams& params)
    : waypoints_(std::move(waypoints)), params_(params) {
  if (waypoints_.empty()) throw InvalidArgument("tracking needs at least one waypoint");
  if (!(params_.lookahead > 0.0) || !(params_.tolerance > 0.0) || params_.stall_window < 1 || !(params_.dt > 0.0))
    throw InvalidParameter("tracking parameters must be positive");
  arc_.assign(waypoints_.size(), 0.0);
  for (std::size_t i = 1; i < waypoints_.size(); ++i) arc_[i] = arc_[i - 1] + distance(waypoints_[i - 1], waypoints_[i]);
}

Vec2 Tracker::target(Vec2 x) {
  const std::size_t n = waypoints_.size();
  if (n == 1) return waypoints_[0];
  // Nearest projection among segments starting within reach of the current progress.
  double best_d2 = std::numeric_limits<double>::infinity();
  std::size_t best_seg = segment_;
  double best_arc = progress_;
  const double reach = progress_ + 2.0 * params_.lookahead;
  for (std::size_t j = segment_; j + 1 < n && arc_[j] <= reach; ++j) {
    const Vec2 a = waypoints_[j], b = waypoints_[j + 1];
    const Vec2 ab = b - a;
    const double len2 = ab.squared_norm();
    const double t = len2 > 0.0 ? std::clamp((x - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    const Vec2 q = a + ab * t;
    const double d2 = (x - q).squared_norm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best_seg = j;
      best_arc = arc_[j] + t * (arc_[j + 1] - arc_[j]);
    }
  }
  if (best_arc > progress_) {
    progress_ = best_arc;
    segment_ = best_seg;
  }
  const double s = progress_ + params_.lookahead;
  if (s > arc_.back()) {
    // Keep pushing past the end along the last heading until the effector gets there, so the
    // lookahead force survives when an object sits on the final waypoint.
    std::size_t k = n - 1;
    while (k > 0 && arc_[k] == arc_[k - 1]) --k;
    if (k == 0) return waypoints_.back();
    const Vec2 dir = (waypoints_[k] - waypoints_[k - 1]) / (arc_[k] - arc_[k - 1]);
    if ((x - waypoints_.back()).dot(dir) >= 0.0) return waypoints_.back();
    return waypoints_.back() + dir * (s - arc_.back());
  }
  std::size_t j = segment_;
  while (j + 2 < n && arc_[j + 1] < s) ++j;
  const double len = arc_[j + 1] - arc_[j];
  const double t = len > 0.0 ? std::clamp((s - arc_[j]) / len, 0.0, 1.0) : 1.0;
  return waypoints_[j] + (waypoints_[j + 1] - waypoints_[j]) * t;
}

StepResult Tracker::advance(World& world) {
  if (status_ != TrackStatus::Running) return {};
  if (history_.empty()) history_.push_back(world.effector.position);
  const Vec2 t = target(world.effector.position);
  StepResult r = step(world, t, params_.dt);
  ++ticks_;
  const Vec2 x = world.effector.position;
  const std::size_t window = static_cast<std::size_t>(params_.stall_window);
  // history_[ticks % (window + 1)] holds the position `window` ticks ago once full.
  if (history_.size() < window + 1) {
    history_.push_back(x);
  } else {
    const std::size_t slot = static_cast<std::size_t>(ticks_) % (window + 1);
    const Vec2 old = history_[slot];
    history_[slot] = x;
    if (distance(old, x) < params_.stall_progress) status_ = TrackStatus::Stalled;
  }
  if (distance(x, waypoints_.back()) <= params_.tolerance) status_ = TrackStatus::Reached;
  else if (status_ == TrackStatus::Running && params_.max_ticks > 0 && ticks_ >= params_.max_ticks)
    status_ = TrackStatus::TimedOut;
  return r;
}

TrackResult track(World& world, const std::vector<Vec2>& waypoints, const TrackParams& params) {
  Tracker tracker(waypoints, params);
  TrackResult out;
  if (distance(world.effector.position, waypoints.back()) <= params.tolerance) {
    out.status = TrackStatus::Reached;
    return out;
  }
  while (tracker.status() == TrackStatus::Running) {
    StepResult r = tracker.advance(world);
    out.max_command_force = std::max(out.max_command_force, r.command_force.norm());
    for (auto& c : r.contacts) {
      out.max_contact_force = std::max(out.max_contact_force, c.f);
      out.contacts.push_back(c);
    }
    out.trajectory.push_back(world.effector.position);
  }
  out.status = tracker.status();
  out.ticks = tracker.ticks();
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_scene(std::ostream& os, const World& w) {
  os << "PAIPSCENE v1 " << w.objects.size() << '\n';
  os << "workspace " << w.workspace.width << ' ' << w.workspace.height << ' ' << fmt(w.workspace.resolution) << '\n';
  os << "effector " << fmt(w.effector.position.x) << ' ' << fmt(w.effector.position.y) << '\n';
  for (const auto& o : w.objects) {
    os << o.id << ' ';
    if (o.shape.kind == ShapeKind::Disc) os << "disc " << fmt(o.shape.radius);
    else os << "rect " << fmt(o.shape.width) << ' ' << fmt(o.shape.height);
    os << ' ' << fmt(o.pose.x) << ' ' << fmt(o.pose.y) << ' ' << fmt(o.true_k) << ' ' << fmt(o.true_c) << ' '
       << fmt(o.true_fc) << ' ' << (o.fixed ? 1 : 0) << '\n';
  }
}

World read_scene(std::istream& is) {
  std::string magic, version, key;
  std::size_t n = 0;
  if (!(is >> magic >> version >> n) || magic != "PAIPSCENE" || version != "v1") throw IoError("not a PAIPSCENE v1 file");
  World w;
  if (!(is >> key >> w.workspace.width >> w.workspace.height >> w.workspace.resolution) || key != "workspace")
    throw IoError("scene is missing its workspace line");
  if (!(is >> key >> w.effector.position.x >> w.effector.position.y) || key != "effector")
    throw IoError("scene is missing its effector line");
  for (std::size_t i = 0; i < n; ++i) {
    SimObject o;
    std::string shape;
    int fixed = 0;
    if (!(is >> o.id >> shape)) throw IoError("scene truncated");
    if (shape == "disc") {
      if (!(is >> o.shape.radius)) throw IoError("bad disc line");
      o.shape.kind = ShapeKind::Disc;
    } else if (shape == "rect") {
      if (!(is >> o.shape.width >> o.shape.height)) throw IoError("bad rect line");
      o.shape.kind = ShapeKind::Rect;
    } else {
      throw IoError("unknown shape '" + shape + "'");
    }
    if (!(is >> o.pose.x >> o.pose.y >> o.true_k >> o.true_c >> o.true_fc >> fixed)) throw IoError("bad object line");
    o.fixed = fixed != 0;
    w.objects.push_back(o);
  }
  try {
    validate(w);
  } catch (const InvalidParameter& e) {
    throw IoError(std::string("invalid scene: ") + e.what());
  }
  return w;
}

void save_scene(const std::string& path, const World& world) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  write_scene(os, world);
}

World load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return read_scene(is);
}

gridmap::GridMap occupancy(const World& world) {
  gridmap::GridMap m(world.workspace, 0.0);
  for (int y = 0; y < world.workspace.height; ++y)
    for (int x = 0; x < world.workspace.width; ++x) {
      const Vec2 c = world.workspace.center_of({x, y});
      for (const auto& o : world.objects)
        if (penetration(o, c, 0.0).depth >= 0.0) {
          m.set(x, y, 1.0);
          break;
        }
    }
  return m;
}

}  // namespace paip::sim
