#include "paip/agent.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>

#include "paip/error.hpp"

namespace paip::agent {

using gridmap::GridMap;
using gridmap::ObjectRecord;

std::string_view to_string(AgentMode mode) { return mode == AgentMode::Motion ? "Motion" : "Kinesthetic"; }

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::Interactive: return "Interactive";
    case Strategy::AvoidContact: return "AvoidContact";
    case Strategy::OpenLoop: return "OpenLoop";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "interactive") return Strategy::Interactive;
  if (name == "avoid-contact") return Strategy::AvoidContact;
  if (name == "open-loop") return Strategy::OpenLoop;
  throw InvalidArgument("unknown strategy '" + std::string(name) + "'");
}

void AgentConfig::validate() const {
  if (!(t_conf > 0.0) || !std::isfinite(t_conf)) throw InvalidParameter("t_conf must be positive");
  if (replan_period < 1) throw InvalidParameter("replan period must be at least 1");
  if (!(budget > 0.0)) throw InvalidParameter("plan budget must be positive");
  if (max_iterations < 0) throw InvalidParameter("max_iterations must be non-negative");
  if (solve_every < 1) throw InvalidParameter("solve cadence must be at least 1");
  if (!(lambda >= 0.0)) throw InvalidParameter("lambda must be non-negative");
  if (!(probe_difficulty > 0.0 && probe_difficulty < 1.0)) throw InvalidParameter("probe difficulty must be in (0,1)");
  if (probe_timeout < 1 || max_plan_failures < 1) throw InvalidParameter("timeouts must be positive");
  gridmap::difficulty({}, theta_max);  // validates the limits
}

namespace {

constexpr std::size_t kStallWindow = 100;
constexpr std::int64_t kRecentContactTicks = 10;
constexpr int kMaxIdleStalls = 3;
constexpr double kChaseProgress = 1e-3;
constexpr int kMaxDislodges = 4;
constexpr int kDislodgeAfterFailures = 10;
constexpr double kChaseCreep = 0.01;
constexpr double kInoperable = 1.0 - 1e-6;
constexpr double kStallProgress = 1e-4;

double trace_of(const Estimators& est, int id) {
  const auto it = est.find(id);
  return it == est.end() ? std::numeric_limits<double>::infinity() : it->second.estimator.confidence_trace();
}

std::vector<Cell> path_cells(const gridmap::GridGeometry& g, const std::vector<Vec2>& path) {
  std::vector<Cell> cells;
  for (std::size_t i = 1; i < path.size(); ++i)
    gridmap::walk_segment(g, path[i - 1], path[i], [&](std::span<const Cell> touched, double) {
      cells.insert(cells.end(), touched.begin(), touched.end());
      return true;
    });
  if (path.size() == 1) {
    const Cell c = g.cell_of(path.front());
    if (g.contains(c)) cells.push_back(c);
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

Cell clamp_cell(const gridmap::GridGeometry& g, Vec2 p) {
  Cell c = g.cell_of(p);
  c.x = std::clamp(c.x, 0, g.width - 1);
  c.y = std::clamp(c.y, 0, g.height - 1);
  return c;
}

double nearest_cell_distance(const ObjectRecord& r, const gridmap::GridGeometry& g, Vec2 p);

/// 4-connected reachability over cells below 1; diagonal steps between two blocked cells are
/// never feasible for an edge, so 4-connectivity matches what a planner can reach.
bool reachable(const GridMap& map, Cell from, Cell to) {
  const auto& g = map.geometry();
  if (map.blocked(to)) return false;
  std::vector<char> seen(g.size(), 0);
  std::deque<Cell> queue{from};
  seen[g.index(from)] = 1;
  constexpr int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    if (c == to) return true;
    for (int k = 0; k < 4; ++k) {
      const Cell n{c.x + dx[k], c.y + dy[k]};
      if (!g.contains(n) || seen[g.index(n)] || map.blocked(n)) continue;
      seen[g.index(n)] = 1;
      queue.push_back(n);
    }
  }
  return false;
}

/// Conservative map with every record that needs probing, and every cell that only the
/// prediction marks occupied, lowered to `d`. Fixed records stay inoperable.
GridMap probe_map(const AgentState& s, const GridMap& predicted, double d, int freed = -1) {
  const auto& g = s.pool.geometry();
  GridMap out(g, 0.0);
  std::vector<char> claimed(g.size(), 0);
  for (const auto& r : s.pool.records()) {
    double v;
    if (r.id == freed && !r.fixed)
      v = 0.0;
    else if (needs_probe(r, s.estimators, s.config.t_conf))
      v = d;
    else
      v = gridmap::record_difficulty(r, s.config.theta_max);
    for (Cell c : r.footprint) {
      const auto i = g.index(c);
      if (!claimed[i] || v > out.at(c)) out.set(c, v);
      claimed[i] = 1;
    }
  }
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      if (!claimed[g.index({x, y})] && predicted.at(x, y) >= s.config.p_occ) out.set(x, y, d);
  return out;
}

/// Map with the record `freed` made traversable, used to approach an object under probe.
GridMap with_record_freed(const GridMap& map, const MemoryPool& pool, int freed) {
  GridMap out = map;
  const ObjectRecord& r = pool.record(freed);
  if (r.fixed) return out;
  for (Cell c : r.footprint) {
    bool other_fixed = false;
    for (const auto& o : pool.records())
      if (o.id != freed && o.fixed && o.covers(c)) other_fixed = true;
    if (!other_fixed) out.set(c, 0.0);
  }
  return out;
}

std::optional<planning::Path> plan_on(const AgentState& s, GridMap map, Vec2 start, Vec2 goal, std::uint64_t salt) {
  const auto& g = map.geometry();
  // The effector occupies its own cell, whatever the records claim.
  map.set(clamp_cell(g, start), 0.0);
  planning::PlanQuery q;
  q.start = start;
  q.goals = {goal};
  q.budget = s.config.budget;
  q.lambda = s.config.lambda;
  q.max_iterations = s.config.max_iterations;
  Rng rng(derive_seed({s.config.seed, static_cast<std::uint64_t>(s.ticks), s.goal_index, salt}));
  try {
    auto r = planning::plan(s.config.planner, s.config.sampler, map, q, rng);
    if (r.success()) return r.path;
  } catch (const InvalidArgument&) {
    // Goal in an inoperable cell or off the map.
  }
  return std::nullopt;
}

const GridMap& prediction(AgentState& s) {
  GridMap observed = s.pool.observed_map();
  if (!(observed == s.observed_cache) || s.predicted_cache.size() == 0) {
    s.observed_cache = std::move(observed);
    s.predicted_cache = s.config.net ? topo::predict(*s.config.net, s.observed_cache) : s.observed_cache;
  }
  return s.predicted_cache;
}

void start_tracking(AgentState& s, planning::Path path, const GridMap& map, bool probes) {
  s.path = std::move(path);
  s.path_valid = true;
  s.path_probes = probes;
  s.last_cost_map = map;
  sim::TrackParams tp = sim::TrackParams::for_resolution(s.pool.geometry().resolution);
  tp.max_ticks = std::numeric_limits<std::int64_t>::max();
  s.tracker = sim::Tracker(s.path.waypoints, tp);
}

/// True when the path being tracked still leads to `goal` and stays valid on `map`. Periodic
/// replans keep such a path so that randomized plans do not make the effector dither.
bool keeps_path(const AgentState& s, GridMap map, Vec2 goal, bool probes) {
  if (!s.path_valid || s.blocked || s.path_probes != probes || s.path.waypoints.size() < 2) return false;
  if (s.path.waypoints.back() != goal) return false;
  map.set(clamp_cell(map.geometry(), s.path.waypoints.front()), 0.0);
  for (std::size_t i = 1; i < s.path.waypoints.size(); ++i)
    if (!planning::validate_edge(map, s.path.waypoints[i - 1], s.path.waypoints[i])) return false;
  return true;
}

bool keep_or_plan(AgentState& s, GridMap map, Vec2 x, Vec2 goal, bool probes, std::uint64_t salt) {
  if (keeps_path(s, map, goal, probes)) {
    s.last_cost_map = std::move(map);
    return true;
  }
  if (auto p = plan_on(s, map, x, goal, salt)) {
    start_tracking(s, std::move(*p), map, probes);
    return true;
  }
  return false;
}

void fail(AgentState& s, std::string why) {
  s.status = TickStatus::Failed;
  s.diagnostics = std::move(why);
}

/// Sideways push of a jammed record that blocks the goal: approach it from one side,
/// perpendicular to the direction that jammed it, and push it across. Returns false when no
/// jammed record is left to try or neither side can be reached.
bool plan_dislodge(AgentState& s, Vec2 x, const GridMap& predicted) {
  if (s.jammed.empty() || s.dislodges >= kMaxDislodges) return false;
  const auto& g = s.pool.geometry();
  const Vec2 goal = s.goals[s.goal_index];
  const Cell goal_cell = clamp_cell(g, goal);
  int pick = -1;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [id, dir] : s.jammed) {
    const ObjectRecord& r = s.pool.record(id);
    const double d = r.covers(goal_cell) ? -1.0 : distance(r.centroid, goal);
    if (d < best) {
      best = d;
      pick = id;
    }
  }
  const Vec2 push = s.jammed.at(pick);
  const ObjectRecord& r = s.pool.record(pick);
  GridMap base = gridmap::build_cost_map(s.pool, predicted, s.config.theta_max, s.config.p_occ);
  const double re = sim::kDefaultEffectorRadius;
  // A jammed effector may sit on cells of the record it pressed into.
  const Cell at = clamp_cell(g, x);
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx) {
      const Cell c{at.x + dx, at.y + dy};
      if (g.contains(c) && distance(g.center_of(c), x) <= re + g.resolution) base.set(c, 0.0);
    }
  auto room = [&](Vec2 p) { return std::min({p.x, p.y, g.extent_x() - p.x, g.extent_y() - p.y}); };
  Vec2 side{-push.y, push.x};
  if (room(r.centroid + side * 0.3) < room(r.centroid - side * 0.3)) side = side * -1.0;
  for (int attempt = 0; attempt < 2; ++attempt, side = side * -1.0) {
    double behind = 0.0, ahead = 0.0;
    for (Cell c : r.footprint) {
      const double t = (g.center_of(c) - r.centroid).dot(side);
      behind = std::max(behind, -t);
      ahead = std::max(ahead, t);
    }
    behind += 0.5 * g.resolution;
    ahead += 0.5 * g.resolution;
    const Vec2 from = r.centroid - side * (behind + re + 1.5 * g.resolution);
    const Vec2 to = from + side * (behind + ahead + 2 * re + 3 * g.resolution);
    if (!g.contains(from) || !g.contains(to)) continue;
    s.pool.mark_fixed(pick, false);
    const GridMap freed = with_record_freed(base, s.pool, pick);
    const bool clear = planning::validate_edge(freed, from, to);
    s.pool.mark_fixed(pick, true);
    if (!clear) continue;
    auto approach = plan_on(s, base, x, from, 7 + static_cast<std::uint64_t>(attempt));
    if (!approach) continue;
    planning::Path path;
    path.waypoints = approach->waypoints;
    path.waypoints.push_back(to);
    s.pool.mark_fixed(pick, false);
    s.jammed.erase(pick);
    ++s.dislodges;
    s.maneuver = true;
    s.maneuver_record = pick;
    start_tracking(s, std::move(path), freed, false);
    return true;
  }
  return false;
}

/// Plans toward the current goal: first avoiding every cell of cost 1, then with unknown space
/// made passable. Returns false when no plan was produced this tick.
bool plan_motion(AgentState& s, Vec2 x) {
  const Vec2 goal = s.goals[s.goal_index];
  const GridMap& predicted = prediction(s);
  if (s.config.strategy == Strategy::OpenLoop) {
    GridMap probe = probe_map(s, predicted, s.config.probe_difficulty);
    if (auto p = plan_on(s, probe, x, goal, 5)) {
      start_tracking(s, std::move(*p), probe, true);
      return true;
    }
    fail(s, "open-loop plan failed");
    return false;
  }
  GridMap conservative = gridmap::build_cost_map(s.pool, predicted, s.config.theta_max, s.config.p_occ);
  const auto& g = conservative.geometry();
  if (s.config.strategy == Strategy::AvoidContact) {
    for (const auto& r : s.pool.records())
      for (Cell c : r.footprint) conservative.set(c, 1.0);
    return keep_or_plan(s, std::move(conservative), x, goal, false, 6);
  }
  // A jammed record next to the goal blocks it even where the map still looks free.
  const bool jam_at_goal = std::any_of(s.jammed.begin(), s.jammed.end(), [&](const auto& j) {
    return nearest_cell_distance(s.pool.record(j.first), g, goal) <= s.pool.association_radius();
  });
  if ((jam_at_goal || s.plan_failures >= kDislodgeAfterFailures) && !s.maneuver && plan_dislodge(s, x, predicted))
    return true;
  if (keep_or_plan(s, std::move(conservative), x, goal, false, 1)) return true;
  GridMap probe = probe_map(s, predicted, s.config.probe_difficulty);
  GridMap carved = probe;
  carved.set(clamp_cell(g, x), 0.0);
  if (!reachable(carved, clamp_cell(g, x), clamp_cell(g, goal))) {
    if (plan_dislodge(s, x, predicted)) return true;
    fail(s, "goal unreachable: enclosed by immovable records");
    return false;
  }
  return keep_or_plan(s, std::move(probe), x, goal, true, 2);
}

bool plan_approach(AgentState& s, Vec2 x) {
  const ObjectRecord& r = s.pool.record(s.active);
  const GridMap& predicted = prediction(s);
  GridMap conservative = gridmap::build_cost_map(s.pool, predicted, s.config.theta_max, s.config.p_occ);
  GridMap m = with_record_freed(conservative, s.pool, s.active);
  if (auto p = plan_on(s, m, x, r.centroid, 3)) {
    start_tracking(s, std::move(*p), m, false);
    return true;
  }
  GridMap probe = probe_map(s, predicted, s.config.probe_difficulty, s.active);
  if (auto p = plan_on(s, probe, x, r.centroid, 4)) {
    start_tracking(s, std::move(*p), probe, true);
    return true;
  }
  return false;
}

double nearest_cell_distance(const ObjectRecord& r, const gridmap::GridGeometry& g, Vec2 p) {
  double best = std::numeric_limits<double>::infinity();
  for (Cell c : r.footprint) best = std::min(best, distance(g.center_of(c), p));
  return best;
}

/// Record a contact point belongs to: the one with the nearest footprint cell within the
/// association radius, otherwise a new record seeded at the point.
/// The record a contact belongs to: the probed record when the contact lies near it, since one
/// object may be sensed as several records; else the nearest record within the association
/// radius; else a new record.
int record_for_contact(MemoryPool& pool, Vec2 point, std::int64_t tick, int active) {
  if (active >= 0 && pool.find(active) &&
      nearest_cell_distance(pool.record(active), pool.geometry(), point) <= 0.5 * pool.association_radius())
    return active;
  int best = -1;
  double best_d = pool.association_radius();
  for (const auto& r : pool.records()) {
    const double d = nearest_cell_distance(r, pool.geometry(), point);
    if (d < best_d) {
      best_d = d;
      best = r.id;
    }
  }
  if (best >= 0) return best;
  return pool.associate_hit(point, tick);
}

/// Records an obstacle hit: a hit on a cell touching a record's footprint extends that record,
/// since objects wider than the association radius would otherwise split into several records.
void record_hit(MemoryPool& pool, Vec2 point, std::int64_t tick) {
  const auto& g = pool.geometry();
  const Cell at = clamp_cell(g, point);
  int best = -1;
  int best_d = 2;
  for (const auto& r : pool.records())
    for (Cell c : r.footprint) {
      const int d = std::max(std::abs(c.x - at.x), std::abs(c.y - at.y));
      if (d < best_d) {
        best_d = d;
        best = r.id;
      }
    }
  if (best >= 0) {
    pool.observe(best, point, tick);
    return;
  }
  const std::size_t before = pool.size();
  const int id = pool.associate_hit(point, tick);
  if (pool.size() == before) pool.observe(id, point, tick);
}

void end_probe(AgentState& s) {
  s.mode = AgentMode::Motion;
  s.active = -1;
  s.chasing = false;
  s.history.clear();
  s.chase.clear();
  s.path_valid = false;
}

}  // namespace

bool needs_probe(const ObjectRecord& record, const Estimators& estimators, double t_conf) {
  (void)estimators;
  if (record.fixed) return false;
  return !record.theta || !(record.covariance_trace <= t_conf);
}

Intention intention(const MemoryPool& pool, const std::vector<Vec2>& path, const Estimators& estimators,
                    double t_conf, Vec2 position, Vec2 goal, int active) {
  if (active >= 0 && pool.find(active)) {
    if (trace_of(estimators, active) <= t_conf) return {AgentMode::Motion, goal, -1};
    return {AgentMode::Kinesthetic, pool.record(active).centroid, active};
  }
  const auto cells = path_cells(pool.geometry(), path);
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& r : pool.records()) {
    if (!needs_probe(r, estimators, t_conf)) continue;
    const bool crossed = std::any_of(cells.begin(), cells.end(), [&](Cell c) { return r.covers(c); });
    if (!crossed) continue;
    const double d = distance(position, r.centroid);
    if (d < best_d) {
      best_d = d;
      best = r.id;
    }
  }
  if (best < 0) return {AgentMode::Motion, goal, -1};
  return {AgentMode::Kinesthetic, pool.record(best).centroid, best};
}

AgentState::AgentState(const sim::World& world, std::vector<Vec2> goals_, const AgentConfig& config_)
    : config(config_), pool(world.workspace, config_.association_radius), goals(std::move(goals_)) {
  config.validate();
  if (goals.empty()) throw InvalidArgument("an episode needs at least one goal");
  for (Vec2 gl : goals)
    if (!is_finite(gl) || !world.workspace.contains(gl)) throw InvalidArgument("goal outside the workspace");
  if (config.net) {
    const auto& c = config.net->config();
    if (c.height != world.workspace.height || c.width != world.workspace.width)
      throw InvalidArgument("network input size differs from the workspace grid");
  }
  target = world.effector.position;
}

LogRecord tick(sim::World& world, AgentState& s) {
  LogRecord rec;
  rec.tick = s.ticks;
  rec.position = world.effector.position;
  if (s.status != TickStatus::Running) return rec;
  const auto& g = s.pool.geometry();
  const Vec2 x = world.effector.position;
  const Vec2 goal = s.goals[s.goal_index];

  // Perceive.
  const auto scan = sim::sense_proximity(world, s.config.rays, s.config.sensor_range);
  for (const auto& h : scan.hits) record_hit(s.pool, h.world, s.ticks);

  // Probe bookkeeping.
  if (s.mode == AgentMode::Kinesthetic) {
    const ObjectRecord* r = s.pool.find(s.active);
    if (!r || r->fixed) {
      end_probe(s);
    } else if (trace_of(s.estimators, s.active) <= s.config.t_conf) {
      end_probe(s);
    } else if (s.ticks - s.probe_start >= s.config.probe_timeout) {
      s.pool.mark_fixed(s.active);
      end_probe(s);
    } else if (!s.estimators[s.active].touched && distance(x, r->centroid) <= 0.5 * g.resolution) {
      // Reached the centroid without touching anything: nothing solid is there.
      s.pool.set_theta(s.active, ThetaEstimate{}, 0.0, s.ticks);
      end_probe(s);
    }
  }

  bool due = !s.path_valid || s.blocked || s.ticks - s.last_plan_tick >= s.config.replan_period;
  if (s.maneuver) due = !s.path_valid || s.blocked;
  if (s.config.strategy == Strategy::OpenLoop) {
    if (s.last_plan_tick >= 0 && (s.blocked || !s.path_valid)) fail(s, "open-loop execution blocked");
    due = s.last_plan_tick < 0;
  }
  if (s.status != TickStatus::Running) return rec;
  if (s.mode == AgentMode::Motion && due) {
    rec.planned = true;
    s.last_plan_tick = s.ticks;
    s.blocked = false;
    if (plan_motion(s, x)) {
      s.plan_failures = 0;
      const Intention it = intention(s.pool, s.path.waypoints, s.estimators, s.config.t_conf, x, goal);
      if (it.mode == AgentMode::Kinesthetic && s.config.strategy == Strategy::Interactive) {
        s.mode = AgentMode::Kinesthetic;
        s.active = it.record;
        s.probe_start = s.ticks;
        s.chasing = false;
        s.history.clear();
        s.path_valid = false;
        s.estimators[s.active].touched = false;
        ++s.kinesthetic_episodes;
      }
    } else {
      s.path_valid = false;
      if (s.status == TickStatus::Running && ++s.plan_failures >= s.config.max_plan_failures)
        fail(s, "no path toward the goal after repeated plan attempts");
    }
  }
  if (s.status != TickStatus::Running) return rec;

  if (s.mode == AgentMode::Kinesthetic) {
    const ObjectRecord& r = s.pool.record(s.active);
    if (!s.chasing && (s.estimators[s.active].touched ||
                       nearest_cell_distance(r, g, x) <= 2.0 * g.resolution + world.effector.radius))
      s.chasing = true;
    if (!s.chasing && (!s.path_valid || s.blocked || s.ticks - s.last_plan_tick >= s.config.replan_period)) {
      rec.planned = true;
      s.last_plan_tick = s.ticks;
      s.blocked = false;
      if (!plan_approach(s, x)) s.chasing = true;
    }
  }

  // The log reports the decision the command below was issued under.
  rec.mode = s.mode;
  rec.record = s.active;
  rec.conf = s.active >= 0 ? trace_of(s.estimators, s.active) : std::numeric_limits<double>::infinity();

  // Act.
  sim::StepResult step;
  if (s.mode == AgentMode::Kinesthetic && s.chasing) {
    const Vec2 c = s.pool.record(s.active).centroid;
    const Vec2 d = c - x;
    const double n = d.norm();
    const double look = sim::TrackParams::for_resolution(g.resolution).lookahead;
    s.target = n <= look ? c : x + d * (look / n);
    step = sim::step(world, s.target);
  } else if (s.path_valid) {
    s.target = s.tracker.target(x);
    step = s.tracker.advance(world);
  } else {
    s.target = x;
    step = sim::step(world, x);
  }
  ++s.ticks;
  const Vec2 nx = world.effector.position;
  s.distance += distance(x, nx);
  rec.force = step.command_force;
  rec.contacts = static_cast<int>(step.contacts.size());
  s.total_contacts += rec.contacts;

  // Contacts update the pool and the estimators.
  for (const auto& ev : step.contacts) {
    const int id = record_for_contact(s.pool, ev.contact_point, s.ticks, s.mode == AgentMode::Kinesthetic ? s.active : -1);
    s.recent_contacts[id] = s.ticks;
    s.recent_push[id] = ev.normal * -1.0;
    // Touch is perception: the point the effector presses on belongs to the object.
    if (g.contains(ev.contact_point)) s.pool.observe(id, ev.contact_point, s.ticks);
    if (ev.object_shift != Vec2{}) s.pool.translate(id, ev.object_shift);
    auto& ps = s.estimators[id];
    ps.touched = true;
    if (ev.saturated) continue;
    ps.estimator.push_sample({ev.dx, ev.v, ev.f, ev.tick});
    if (++ps.contact_ticks % s.config.solve_every != 0) continue;
    try {
      const ThetaEstimate theta = ps.estimator.solve();
      if (ps.estimator.solve_count() >= 2) {
        const double trace = ps.estimator.update_confidence();
        const ObjectRecord& r = s.pool.record(id);
        if (trace <= s.config.t_conf || r.theta) s.pool.set_theta(id, theta, trace, s.ticks);
        // At the capability limit the object cannot be operated; rounding must not make it passable.
        if (trace <= s.config.t_conf && gridmap::difficulty(theta, s.config.theta_max) >= kInoperable && !r.fixed)
          s.pool.mark_fixed(id);
      }
    } catch (const RankDeficient&) {
      // Not enough excitation yet.
    }
  }

  // Blocked execution: the effector made no progress over a full stall window.
  s.history.push_back(nx);
  if (s.history.size() > kStallWindow) s.history.pop_front();
  bool stalled = s.history.size() == kStallWindow && distance(s.history.front(), s.history.back()) < kStallProgress;
  if (s.mode == AgentMode::Kinesthetic && s.chasing) {
    // A chase also stalls when it creeps without closing in on the record. Pushing a movable
    // object carries the effector much further than kChaseCreep per window.
    s.chase.push_back({distance(nx, s.pool.record(s.active).centroid), nx});
    if (s.chase.size() > kStallWindow) s.chase.pop_front();
    if (s.chase.size() == kStallWindow && s.chase.front().first - s.chase.back().first < kChaseProgress &&
        distance(s.chase.front().second, s.chase.back().second) < kChaseCreep)
      stalled = true;
  }
  if (stalled) {
    s.history.clear();
    bool learned = false;
    for (const auto& [id, when] : s.recent_contacts)
      if (when + kRecentContactTicks >= s.ticks && !s.pool.record(id).fixed) {
        s.pool.mark_fixed(id);
        // A movable object that stops yielding is jammed in this direction only, unless a
        // sideways push already failed to free it.
        if (s.pool.record(id).theta && !(s.maneuver && id == s.maneuver_record) && s.mode == AgentMode::Motion)
          s.jammed[id] = s.recent_push[id];
        learned = true;
      }
    s.maneuver = false;
    if (s.mode == AgentMode::Kinesthetic) learned = true;
    if (!learned && ++s.idle_stalls >= kMaxIdleStalls) fail(s, "effector wedged: repeated stalls without new obstacles");
    if (learned) s.idle_stalls = 0;
    s.blocked = true;
    s.path_valid = false;
    if (s.mode == AgentMode::Kinesthetic) {
      // Pressing toward the probed record got nowhere: it does not yield.
      if (!s.pool.record(s.active).fixed) s.pool.mark_fixed(s.active);
      end_probe(s);
    }
  } else if (s.path_valid && s.tracker.status() == sim::TrackStatus::Reached) {
    s.maneuver = false;
    if (s.mode == AgentMode::Motion)
      s.path_valid = false;
    else
      s.chasing = true;
  }

  rec.position = nx;

  if (distance(nx, goal) <= sim::TrackParams::for_resolution(g.resolution).tolerance) {
    ++s.goal_index;
    end_probe(s);
    s.last_plan_tick = -1;
    if (s.goal_index == s.goals.size()) s.status = TickStatus::Reached;
  }
  return rec;
}

EpisodeResult run_episode(sim::World world, const std::vector<Vec2>& goals, const AgentConfig& config,
                          std::int64_t tick_cap) {
  AgentState state(world, goals, config);
  EpisodeResult out;
  while (state.status == TickStatus::Running && state.ticks < tick_cap) out.log.push_back(tick(world, state));
  out.success = state.status == TickStatus::Reached;
  out.ticks = state.ticks;
  out.contacts = state.total_contacts;
  out.distance = state.distance;
  out.kinesthetic_episodes = state.kinesthetic_episodes;
  out.goals_reached = state.goal_index;
  out.diagnostics = state.status == TickStatus::Running ? "tick cap reached" : state.diagnostics;
  return out;
}

void write_log(std::ostream& os, const std::vector<LogRecord>& log) {
  os << "tick,mode,x,y,fx,fy,planned,contacts,conf\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%lld,%s,%.9g,%.9g,%.9g,%.9g,%d,%d,%.9g\n", static_cast<long long>(r.tick),
                  r.mode == AgentMode::Motion ? "Motion" : "Kinesthetic", r.position.x, r.position.y, r.force.x,
                  r.force.y, r.planned ? 1 : 0, r.contacts, r.conf);
    os << buf;
  }
}

}  // namespace paip::agent
