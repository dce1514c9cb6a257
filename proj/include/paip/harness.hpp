#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "paip/agent.hpp"
#include "paip/gridmap.hpp"
#include "paip/planners.hpp"
#include "paip/samplers.hpp"
#include "paip/sim.hpp"

namespace paip::harness {

using gridmap::GridMap;
using gridmap::ThetaEstimate;
using planning::Outcome;
using planning::PlannerKind;
using samplers::SamplerKind;

struct ScenarioSpec {
  int n_objects = 10;
  double p_fix = 0.1;
  int n_targets = 1;
  int width = 128;
  int height = 128;
  double resolution = 0.01;
  std::uint64_t seed = 0;
  ThetaEstimate theta_max = gridmap::kDefaultThetaMax;
  int min_object_cells = 4;  // footprint extent across, in cells
  int max_object_cells = 16;
  int n_pairs = 4;
  double min_separation_cells = 50.0;
  int max_attempts = 1000;

  /// Throws InvalidParameter on a violated constraint.
  void validate() const;
};

struct StartGoal {
  Vec2 start;
  Vec2 goal;

  bool operator==(const StartGoal&) const = default;
};

struct Scenario {
  GridMap map;      // operational cost of every object cell, 0 elsewhere
  sim::World world;  // effector at the first pair's start
  std::vector<StartGoal> pairs;
  /// First pair's goal followed by further targets for multi-target episodes.
  std::vector<Vec2> targets;
};

/// Random non-overlapping discs and rectangles with parameters uniform in (0, theta_max], each
/// fixed with probability p_fix, plus start/goal pairs separated by at least the minimum
/// distance. Starts lie in free cells clear of every object; goals lie in cells of cost < 1.
/// Throws GenerationError when placement fails within max_attempts draws.
Scenario gen_map(const ScenarioSpec& spec);

/// Ground-truth cost map of a scene: cells whose centers lie inside an object take its
/// difficulty, or 1 when it is fixed.
GridMap scene_cost_map(const sim::World& world, const ThetaEstimate& theta_max = gridmap::kDefaultThetaMax);

/// Binary occupancy maps from the scenario generator at the given size, for network training.
std::vector<float> training_map(Rng& rng, int height, int width);

/// The movable-goal scene: a movable object covers the only goal and a stiff fixed wall, out of
/// initial sensor range, separates the start from it. 64x64 cells at 0.02 m.
Scenario movable_goal_scene(std::uint64_t seed);

struct RateInterval {
  int successes = 0;
  int trials = 0;
  double rate = 0.0;
  double lo = 0.0;  // Wilson score interval at 95%
  double hi = 0.0;
};
RateInterval wilson(int successes, int trials);

struct TrialResult {
  PlannerKind planner = PlannerKind::RrtConnect;
  SamplerKind sampler = SamplerKind::Uniform;
  int map = 0;
  int pair = 0;
  Outcome outcome = Outcome::NoPath;
  double time_s = 0.0;
  double joint_cost = 0.0;  // 0 unless the trial succeeded
};

struct ComboSummary {
  PlannerKind planner = PlannerKind::RrtConnect;
  SamplerKind sampler = SamplerKind::Uniform;
  RateInterval success;
  double time_p50 = 0.0;
  double time_p90 = 0.0;
  double time_max = 0.0;
};

struct OrthoOptions {
  int n_maps = 100;
  double budget = 0.02;
  std::uint64_t seed = 1;
  ScenarioSpec base;  // seed is replaced per map
  /// Maps solved offline to fit the learned sampling density; drawn from an independent stream.
  int density_maps = 20;
  int threads = 1;
  std::function<void(int done, int total)> progress;
};

struct OrthoReport {
  std::vector<TrialResult> trials;  // planner-major, then sampler, map, pair
  std::vector<ComboSummary> combos;  // planner-major, then sampler
  const ComboSummary& combo(PlannerKind planner, SamplerKind sampler) const;
};

/// Default benchmark map settings: 128x128 cells at 0.01 m with a share of fixed obstacles.
ScenarioSpec ortho_spec();

/// Learned sampling density fitted to reference solutions on `n_maps` generated maps.
samplers::LearnedDensity fit_density(const ScenarioSpec& base, int n_maps, std::uint64_t seed);

/// Every planner with every sampler on every pair of `maps`, each trial with its own rng.
OrthoReport run_ortho_on(const std::vector<Scenario>& maps, const samplers::LearnedDensity& density,
                         const OrthoOptions& options);
/// Generates options.n_maps maps and the learned density, then runs run_ortho_on.
OrthoReport run_ortho(const OrthoOptions& options);

/// `planner,sampler,map,pair,outcome,time_s,joint_cost`
void write_trials_csv(std::ostream& os, const std::vector<TrialResult>& trials);
void write_combo_table(std::ostream& os, const std::vector<ComboSummary>& combos);

struct StressOptions {
  int min_objects = 6;
  int max_objects = 15;
  int episodes = 50;
  std::uint64_t seed = 1;
  agent::AgentConfig agent;
  std::int64_t tick_cap = agent::kDefaultTickCap;
  int threads = 1;
  std::function<void(int objects, int episode, const agent::EpisodeResult&)> on_episode;
};

struct StressRow {
  int objects = 0;
  RateInterval success;
  double mean_occupancy = 0.0;  // share of workspace cells covered by objects
  double mean_ticks = 0.0;
};

/// Agent scene settings: 64x64 cells at 0.02 m with the given object count and fixed share.
ScenarioSpec agent_spec(int n_objects, double p_fix, int n_targets, std::uint64_t seed);

/// Closed-loop episodes on generated scenes with no fixed objects, per object count.
std::vector<StressRow> run_stress(const StressOptions& options);
/// `objects,episodes,successes,rate,rate_lo,rate_hi,mean_occupancy,mean_ticks`
void write_stress_table(std::ostream& os, const std::vector<StressRow>& rows);

enum class Sweep { Objects, FixedShare, Targets };
Sweep parse_sweep(std::string_view name);
std::string_view to_string(Sweep sweep);

struct BaselineOptions {
  Sweep sweep = Sweep::Objects;
  int episodes = 20;
  std::uint64_t seed = 1;
  agent::AgentConfig agent;
  std::int64_t tick_cap = agent::kDefaultTickCap;
  int threads = 1;
};

struct BaselineRow {
  std::string variable;
  double value = 0.0;
  RateInterval interactive;
  RateInterval avoid_contact;  // collision-free proxy
  RateInterval open_loop;      // open-loop proxy
};

/// The three strategies on identical generated scenes, per sweep point.
std::vector<BaselineRow> run_baselines(const BaselineOptions& options);
void write_baseline_table(std::ostream& os, const std::vector<BaselineRow>& rows);

struct RenderInput {
  const GridMap* map = nullptr;
  const planning::Path* path = nullptr;
  const std::vector<agent::LogRecord>* log = nullptr;
  const std::vector<Vec2>* samples = nullptr;
  std::vector<Vec2> markers;  // start and goal points
};

/// Deterministic SVG: one rect per non-zero cell shaded by cost, the path as a polyline with
/// its waypoints in world units scaled to pixels, the logged trajectory and optional samples.
void render_svg(std::ostream& os, const RenderInput& input, double pixels_per_cell = 8.0);

// Scenario directory layout written by save_scenario: `<stem>.map`, `<stem>.scene`, `<stem>.pairs`.
// Pairs file: `PAIPPAIRS v1 <n> <m>` then n lines `sx sy gx gy` and m target lines `x y`.
void write_pairs(std::ostream& os, const std::vector<StartGoal>& pairs, const std::vector<Vec2>& targets);
void read_pairs(std::istream& is, std::vector<StartGoal>& pairs, std::vector<Vec2>& targets);
void save_scenario(const std::string& dir, const std::string& stem, const Scenario& scenario);
Scenario load_scenario(const std::string& dir, const std::string& stem);
/// Stems of every scenario in `dir`, sorted.
std::vector<std::string> list_scenarios(const std::string& dir);

}  // namespace paip::harness
