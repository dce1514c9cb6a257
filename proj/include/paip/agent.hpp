#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "paip/gridmap.hpp"
#include "paip/identify.hpp"
#include "paip/planners.hpp"
#include "paip/sim.hpp"
#include "paip/toponet.hpp"

namespace paip::agent {

using gridmap::MemoryPool;
using gridmap::ThetaEstimate;

enum class AgentMode { Motion, Kinesthetic };
std::string_view to_string(AgentMode mode);

/// Interactive is the full loop. The other two are reference behaviors without interaction:
/// AvoidContact treats every sensed record as inoperable and replans; OpenLoop plans once after
/// the first scan, with sensed records passable at the probe difficulty, and never replans.
enum class Strategy { Interactive, AvoidContact, OpenLoop };
std::string_view to_string(Strategy strategy);
/// Accepts `interactive`, `avoid-contact` and `open-loop`; throws InvalidArgument otherwise.
Strategy parse_strategy(std::string_view name);

struct AgentConfig {
  Strategy strategy = Strategy::Interactive;
  double t_conf = identify::kDefaultConfidenceThreshold;
  ThetaEstimate theta_max = gridmap::kDefaultThetaMax;
  int replan_period = 5;  // ticks
  planning::PlannerKind planner = planning::PlannerKind::RrtConnect;
  samplers::SamplerKind sampler = samplers::SamplerKind::Uniform;
  double lambda = 1.0;
  double budget = 0.02;  // s of wall time per plan call
  /// Search iteration cap per plan call; with a budget that is never reached it makes episodes
  /// independent of machine speed.
  std::int64_t max_iterations = 4000;
  int solve_every = 10;  // contact ticks between estimator solves
  double association_radius = 0.1;  // m
  double p_occ = gridmap::kDefaultOccupancyThreshold;
  /// Difficulty given to unidentified records when no path avoids them; only such a plan can
  /// send the agent into contact with an unknown object.
  double probe_difficulty = 0.9;
  /// Ticks spent probing one record before it is treated as immovable.
  int probe_timeout = 1000;
  /// Consecutive failed plan calls before the task is declared failed.
  int max_plan_failures = 40;
  int rays = sim::kDefaultRays;
  double sensor_range = sim::kDefaultSensorRange;
  /// Occupancy completion network matching the workspace grid; null uses the observed map as is.
  const topo::TopoNet<float>* net = nullptr;
  std::uint64_t seed = 0;

  /// Throws InvalidParameter on a violated constraint.
  void validate() const;
};

/// Per-record identification state owned by the agent.
struct ProbeState {
  identify::LSEstimator estimator;
  std::int64_t contact_ticks = 0;
  bool touched = false;
};
using Estimators = std::map<int, ProbeState>;

struct Intention {
  AgentMode mode = AgentMode::Motion;
  Vec2 target;
  int record = -1;  // record being probed in Kinesthetic mode
};

/// Records whose difficulty is still unknown: not fixed and either never identified or
/// identified with a confidence trace above `t_conf`.
bool needs_probe(const gridmap::ObjectRecord& record, const Estimators& estimators, double t_conf);

/// Mode selection. A path crossing a record that needs probing yields Kinesthetic with that
/// record's centroid (nearest to `position` first); otherwise Motion toward `goal`. While
/// `active` names a record under probe, Motion is returned once its confidence trace is at or
/// below `t_conf`.
Intention intention(const MemoryPool& pool, const std::vector<Vec2>& path, const Estimators& estimators,
                    double t_conf, Vec2 position, Vec2 goal, int active = -1);

enum class TickStatus { Running, Reached, Failed };

struct LogRecord {
  std::int64_t tick = 0;
  AgentMode mode = AgentMode::Motion;
  Vec2 position;
  Vec2 force;      // commanded effector force
  bool planned = false;
  int contacts = 0;
  double conf = std::numeric_limits<double>::infinity();  // trace of the record under probe
  int record = -1;
};

struct AgentState {
  AgentState(const sim::World& world, std::vector<Vec2> goals, const AgentConfig& config);

  AgentConfig config;
  MemoryPool pool;
  Estimators estimators;
  std::vector<Vec2> goals;
  std::size_t goal_index = 0;
  AgentMode mode = AgentMode::Motion;
  int active = -1;  // record under probe
  Vec2 target;
  planning::Path path;
  bool path_valid = false;
  bool path_probes = false;  // path was planned with unknown records made passable
  sim::Tracker tracker;
  std::int64_t last_plan_tick = -1;
  bool blocked = false;
  int plan_failures = 0;
  int idle_stalls = 0;  // consecutive stalls that marked nothing new
  std::int64_t probe_start = 0;
  bool chasing = false;  // steering straight at the probed record instead of along a path
  std::deque<Vec2> history;  // recent effector positions for stall detection
  std::deque<std::pair<double, Vec2>> chase;  // distance to the chased record, effector position
  std::map<int, std::int64_t> recent_contacts;  // record id -> tick of its last contact
  std::map<int, Vec2> recent_push;              // record id -> direction it was last pushed
  /// Identified movable records that stopped yielding, with the push direction that jammed them.
  /// They plan as fixed until a sideways push frees them.
  std::map<int, Vec2> jammed;
  int dislodges = 0;
  bool maneuver = false;  // executing a sideways push; no periodic replans
  int maneuver_record = -1;
  std::int64_t ticks = 0;
  int kinesthetic_episodes = 0;
  std::int64_t total_contacts = 0;
  double distance = 0.0;
  TickStatus status = TickStatus::Running;
  std::string diagnostics;
  gridmap::GridMap observed_cache;
  gridmap::GridMap predicted_cache;
  /// Cost map the current path was planned on.
  gridmap::GridMap last_cost_map;
};

/// One perceive, plan and act iteration. Advances the world by one control tick.
LogRecord tick(sim::World& world, AgentState& state);

struct EpisodeResult {
  bool success = false;
  std::int64_t ticks = 0;
  std::int64_t contacts = 0;
  double distance = 0.0;  // effector path length, m
  int kinesthetic_episodes = 0;
  std::size_t goals_reached = 0;
  std::string diagnostics;
  std::vector<LogRecord> log;
};

inline constexpr std::int64_t kDefaultTickCap = 5000;

/// Runs ticks until every goal is reached in order, the task fails, or `tick_cap` ticks elapse.
EpisodeResult run_episode(sim::World world, const std::vector<Vec2>& goals, const AgentConfig& config,
                          std::int64_t tick_cap = kDefaultTickCap);

/// CSV with header `tick,mode,x,y,fx,fy,planned,contacts,conf` and one line per record.
void write_log(std::ostream& os, const std::vector<LogRecord>& log);

}  // namespace paip::agent
