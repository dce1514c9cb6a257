#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "paip/gridmap.hpp"
#include "paip/rng.hpp"
#include "paip/samplers.hpp"

namespace paip::planning {

using gridmap::GridMap;
using samplers::SamplerKind;

enum class PlannerKind { RrtConnect, BEst, BitStar, Prm };

inline constexpr PlannerKind kAllPlanners[] = {PlannerKind::RrtConnect, PlannerKind::BEst, PlannerKind::BitStar,
                                               PlannerKind::Prm};

std::string_view to_string(PlannerKind kind);
/// Accepts to_string names and the short forms rrtc, best, bit, prm, case-insensitively.
PlannerKind parse_planner(std::string_view name);

inline constexpr double kDefaultStepCells = 2.0;
inline constexpr double kGoalToleranceCells = 0.5;
inline constexpr int kPrmNeighbors = 10;
inline constexpr int kBitStarBatch = 64;
inline constexpr int kDeadlineCheckInterval = 64;
inline constexpr int kSmoothMaxFailures = 100;

struct PlanQuery {
  Vec2 start;
  std::vector<Vec2> goals;
  double budget = 0.02;  // seconds of wall time, smoothing included
  double step = 0.0;     // steering step in meters; 0 selects kDefaultStepCells cells
  double lambda = 1.0;   // weight of the operational-cost integral
  /// Search iterations before giving up with NoPath; 0 means only the budget limits the search.
  std::int64_t max_iterations = 0;
  bool smooth = true;
};

struct Path {
  std::vector<Vec2> waypoints;
  double length = 0.0;
  double op_cost = 0.0;  // integral of difficulty along the path, in meters
  double joint_cost = 0.0;

  bool operator==(const Path&) const = default;
};

enum class Outcome { Success, NoPath, BudgetExhausted };
std::string_view to_string(Outcome outcome);

struct PlanStats {
  std::int64_t iterations = 0;
  std::int64_t nodes = 0;
  std::int64_t samples = 0;
  double wall_time = 0.0;
};

struct PlanResult {
  Outcome outcome = Outcome::NoPath;
  Path path;           // valid on Success
  int goal_index = -1;  // index into PlanQuery::goals on Success
  PlanStats stats;

  bool success() const { return outcome == Outcome::Success; }
};

struct EdgeEvaluation {
  bool feasible = false;
  double length = 0.0;
  double op_cost = 0.0;
};

/// Walks the closed cells touched by segment ab. A piece running along a cell boundary is charged
/// the larger difficulty of the cells it separates.
EdgeEvaluation evaluate_edge(const GridMap& map, Vec2 a, Vec2 b);
/// True iff both endpoints are on the map and no touched cell has cost 1.
bool validate_edge(const GridMap& map, Vec2 a, Vec2 b);
/// |ab| + lambda * integral of difficulty. Throws InvalidArgument for an infeasible edge.
double edge_cost(const GridMap& map, Vec2 a, Vec2 b, double lambda);

/// Computes length and costs for a waypoint chain. Throws InvalidArgument if any segment is infeasible.
Path make_path(const GridMap& map, std::vector<Vec2> waypoints, double lambda);

/// Random shortcutting: accepts a direct edge between two non-adjacent waypoints when it is feasible
/// and strictly cheaper than the chain it replaces. Stops after `max_failures` consecutive
/// rejections or when `budget` seconds have elapsed.
Path smooth(const GridMap& map, const Path& path, double lambda, double budget, Rng& rng,
            int max_failures = kSmoothMaxFailures);

/// Throws InvalidArgument for an invalid query (bad budget/step/lambda, endpoints off the map or
/// in cost-1 cells, no goals, Learned sampling without a matching density).
PlanResult plan(PlannerKind planner, SamplerKind sampler, const GridMap& map, const PlanQuery& query, Rng& rng,
                const samplers::LearnedDensity* density = nullptr, const samplers::SamplerParams& params = {});

// `PAIPPATH v1 <n> <length> <op_cost> <joint_cost>` then `x y` per waypoint.
void write_path(std::ostream& os, const Path& path);
Path read_path(std::istream& is);
void save_path(const std::string& file, const Path& path);
Path load_path(const std::string& file);

}  // namespace paip::planning
