#include "paip/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

#include "paip/error.hpp"

namespace paip::harness {

using gridmap::GridGeometry;
using sim::Shape;
using sim::SimObject;

void ScenarioSpec::validate() const {
  if (n_objects < 0) throw InvalidParameter("object count must be non-negative");
  if (!(p_fix >= 0.0 && p_fix <= 1.0)) throw InvalidParameter("fixed probability must lie in [0,1]");
  if (n_targets < 1) throw InvalidParameter("at least one target is required");
  if (width <= 0 || height <= 0 || !(resolution > 0.0)) throw InvalidParameter("map must be non-empty");
  if (min_object_cells < 1 || max_object_cells < min_object_cells)
    throw InvalidParameter("object size range is empty");
  if (max_object_cells >= std::min(width, height)) throw InvalidParameter("objects must fit inside the map");
  if (n_pairs < 0 || !(min_separation_cells >= 0.0) || max_attempts < 1)
    throw InvalidParameter("pair settings out of range");
  gridmap::difficulty({}, theta_max);
}

namespace {

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// Uniform in (0, hi].
double positive_uniform(Rng& rng, double hi) { return hi * (1.0 - uniform01(rng)); }

/// Cells whose centers lie inside the object.
template <class F>
void for_object_cells(const SimObject& o, const GridGeometry& g, F&& f) {
  const double hx = o.shape.kind == sim::ShapeKind::Disc ? o.shape.radius : 0.5 * o.shape.width;
  const double hy = o.shape.kind == sim::ShapeKind::Disc ? o.shape.radius : 0.5 * o.shape.height;
  const int x0 = std::max(0, static_cast<int>(std::floor((o.pose.x - hx) / g.resolution)));
  const int x1 = std::min(g.width - 1, static_cast<int>(std::floor((o.pose.x + hx) / g.resolution)));
  const int y0 = std::max(0, static_cast<int>(std::floor((o.pose.y - hy) / g.resolution)));
  const int y1 = std::min(g.height - 1, static_cast<int>(std::floor((o.pose.y + hy) / g.resolution)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (sim::penetration(o, g.center_of({x, y}), 0.0).depth > 0.0) f(Cell{x, y});
}

SimObject inflated(const SimObject& o, double margin) {
  SimObject big = o;
  if (o.shape.kind == sim::ShapeKind::Disc)
    big.shape.radius += margin;
  else {
    big.shape.width += 2 * margin;
    big.shape.height += 2 * margin;
  }
  return big;
}

bool start_clear(const sim::World& w, const GridMap& map, Vec2 p) {
  if (map.at(map.geometry().cell_of(p)) != 0.0) return false;
  const double r = w.effector.radius;
  if (p.x < r || p.y < r || p.x > w.workspace.extent_x() - r || p.y > w.workspace.extent_y() - r) return false;
  for (const auto& o : w.objects)
    if (sim::penetration(o, p, r).depth > 0.0) return false;
  return true;
}

Vec2 uniform_point(Rng& rng, const GridGeometry& g) {
  return {uniform01(rng) * g.extent_x(), uniform01(rng) * g.extent_y()};
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  const std::size_t k = std::min(v.size() - 1, static_cast<std::size_t>(std::floor(q * (v.size() - 1) + 0.5)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

/// Runs job(i) for i in [0,n) on `threads` workers.
template <class F>
void parallel_for(int n, int threads, F&& job) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) job(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

GridMap scene_cost_map(const sim::World& w, const ThetaEstimate& theta_max) {
  GridMap map(w.workspace, 0.0);
  for (const auto& o : w.objects) {
    const double d = o.fixed ? 1.0 : gridmap::difficulty({o.true_k, o.true_c, o.true_fc}, theta_max);
    for_object_cells(o, w.workspace, [&](Cell c) { map.set(c, std::max(map.at(c), d)); });
  }
  return map;
}

Scenario gen_map(const ScenarioSpec& spec) {
  spec.validate();
  Rng rng(derive_seed({spec.seed, 0x5ce7e}));
  Scenario out;
  sim::World& w = out.world;
  w.workspace = {spec.width, spec.height, spec.resolution};
  const double res = spec.resolution;

  for (int i = 0; i < spec.n_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
      SimObject o;
      o.id = i + 1;
      const int a = uniform_int(rng, spec.min_object_cells, spec.max_object_cells);
      const int b = uniform_int(rng, spec.min_object_cells, spec.max_object_cells);
      if (uniform01(rng) < 0.5)
        o.shape = Shape::disc(0.5 * a * res);
      else
        o.shape = Shape::rect(a * res, b * res);
      const double hx = o.shape.kind == sim::ShapeKind::Disc ? o.shape.radius : 0.5 * o.shape.width;
      const double hy = o.shape.kind == sim::ShapeKind::Disc ? o.shape.radius : 0.5 * o.shape.height;
      o.pose = {hx + uniform01(rng) * (w.workspace.extent_x() - 2 * hx),
                hy + uniform01(rng) * (w.workspace.extent_y() - 2 * hy)};
      o.true_k = positive_uniform(rng, spec.theta_max.k);
      o.true_c = positive_uniform(rng, spec.theta_max.c);
      o.true_fc = positive_uniform(rng, spec.theta_max.fc);
      o.fixed = uniform01(rng) < spec.p_fix;
      // One free cell between objects keeps them distinct on the grid.
      const SimObject big = inflated(o, res);
      if (std::any_of(w.objects.begin(), w.objects.end(), [&](const SimObject& p) { return sim::overlaps(big, p); }))
        continue;
      w.objects.push_back(o);
      placed = true;
    }
    if (!placed) throw GenerationError("could not place object " + std::to_string(i + 1));
  }
  out.map = scene_cost_map(w, spec.theta_max);

  const double sep = spec.min_separation_cells * res;
  for (int p = 0; p < spec.n_pairs; ++p) {
    bool found = false;
    for (int attempt = 0; attempt < spec.max_attempts && !found; ++attempt) {
      const Vec2 s = uniform_point(rng, w.workspace);
      const Vec2 gl = uniform_point(rng, w.workspace);
      if (distance(s, gl) < sep || !start_clear(w, out.map, s) || out.map.blocked(w.workspace.cell_of(gl))) continue;
      out.pairs.push_back({s, gl});
      found = true;
    }
    if (!found) throw GenerationError("could not draw start/goal pair " + std::to_string(p));
  }
  if (!out.pairs.empty()) {
    w.effector.position = out.pairs.front().start;
    out.targets.push_back(out.pairs.front().goal);
    for (int t = 1; t < spec.n_targets; ++t) {
      bool found = false;
      for (int attempt = 0; attempt < spec.max_attempts && !found; ++attempt) {
        const Vec2 gl = uniform_point(rng, w.workspace);
        if (distance(gl, out.targets.back()) < sep || out.map.blocked(w.workspace.cell_of(gl))) continue;
        out.targets.push_back(gl);
        found = true;
      }
      if (!found) throw GenerationError("could not draw target " + std::to_string(t));
    }
  } else {
    w.effector.position = {0.5 * w.workspace.extent_x(), 0.5 * w.workspace.extent_y()};
  }
  return out;
}

std::vector<float> training_map(Rng& rng, int height, int width) {
  ScenarioSpec spec;
  spec.width = width;
  spec.height = height;
  spec.resolution = 0.02;
  spec.n_pairs = 0;
  spec.p_fix = 0.0;
  spec.max_object_cells = std::min(16, std::min(width, height) / 4);
  spec.min_object_cells = std::min(4, spec.max_object_cells);
  const int area_scale = std::max(1, width * height / 4096);
  spec.n_objects = uniform_int(rng, 6, 15) * area_scale;
  spec.seed = rng();
  const Scenario s = gen_map(spec);
  std::vector<float> out(static_cast<std::size_t>(width) * height, 0.0f);
  for (const auto& o : s.world.objects)
    for_object_cells(o, s.world.workspace, [&](Cell c) { out[s.world.workspace.index(c)] = 1.0f; });
  return out;
}

Scenario movable_goal_scene(std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0xf16}));
  Scenario out;
  sim::World& w = out.world;
  w.workspace = {64, 64, 0.02};
  const Vec2 start{0.15, 0.3 + 0.68 * uniform01(rng)};
  const Vec2 goal{1.0, 0.3 + 0.68 * uniform01(rng)};
  const double wall_y = std::clamp(0.5 * (start.y + goal.y), 0.45, 0.83);

  SimObject wall;
  wall.id = 1;
  wall.shape = Shape::rect(0.1, 0.56);
  wall.pose = {0.6, wall_y};
  wall.true_k = 200.0;
  wall.true_c = 50.0;
  wall.true_fc = 5.0;
  wall.fixed = true;

  SimObject load;
  load.id = 2;
  const double size = 0.1 + 0.06 * uniform01(rng);
  if (uniform01(rng) < 0.5)
    load.shape = Shape::disc(0.5 * size);
  else
    load.shape = Shape::rect(size, size);
  const double off = 0.15 * size;
  load.pose = goal + Vec2{off * (2 * uniform01(rng) - 1), off * (2 * uniform01(rng) - 1)};
  load.true_k = 40.0 + 140.0 * uniform01(rng);
  load.true_c = 5.0 + 25.0 * uniform01(rng);
  load.true_fc = 0.5 + 2.5 * uniform01(rng);

  w.objects = {wall, load};
  w.effector.position = start;
  out.map = scene_cost_map(w);
  out.pairs = {{start, goal}};
  out.targets = {goal};
  return out;
}

RateInterval wilson(int successes, int trials) {
  RateInterval r;
  r.successes = successes;
  r.trials = trials;
  if (trials <= 0) return r;
  constexpr double z = 1.959963984540054;
  const double n = trials, p = static_cast<double>(successes) / n;
  const double denom = 1.0 + z * z / n;
  const double centre = (p + z * z / (2 * n)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom;
  r.rate = p;
  r.lo = std::max(0.0, centre - half);
  r.hi = std::min(1.0, centre + half);
  return r;
}

const ComboSummary& OrthoReport::combo(PlannerKind planner, SamplerKind sampler) const {
  for (const auto& c : combos)
    if (c.planner == planner && c.sampler == sampler) return c;
  throw InvalidArgument("combination not in report");
}

ScenarioSpec ortho_spec() {
  ScenarioSpec s;
  s.width = 128;
  s.height = 128;
  s.resolution = 0.01;
  s.n_objects = 60;
  s.p_fix = 0.5;
  return s;
}

samplers::LearnedDensity fit_density(const ScenarioSpec& base, int n_maps, std::uint64_t seed) {
  std::vector<std::vector<Vec2>> paths;
  for (int m = 0; m < n_maps; ++m) {
    ScenarioSpec spec = base;
    spec.seed = derive_seed({seed, 0xde5, static_cast<std::uint64_t>(m)});
    const Scenario s = gen_map(spec);
    for (std::size_t p = 0; p < s.pairs.size(); ++p) {
      planning::PlanQuery q;
      q.start = s.pairs[p].start;
      q.goals = {s.pairs[p].goal};
      q.budget = 10.0;
      q.max_iterations = 20000;
      Rng rng(derive_seed({seed, 0xde6, static_cast<std::uint64_t>(m), p}));
      const auto r = planning::plan(PlannerKind::RrtConnect, SamplerKind::Uniform, s.map, q, rng);
      if (r.success()) paths.push_back(r.path.waypoints);
    }
  }
  GridGeometry g{base.width, base.height, base.resolution};
  return samplers::fit_learned(paths, g);
}

OrthoReport run_ortho_on(const std::vector<Scenario>& maps, const samplers::LearnedDensity& density,
                         const OrthoOptions& options) {
  OrthoReport report;
  for (PlannerKind p : planning::kAllPlanners)
    for (SamplerKind s : samplers::kAllSamplers)
      for (std::size_t m = 0; m < maps.size(); ++m)
        for (std::size_t k = 0; k < maps[m].pairs.size(); ++k) {
          TrialResult t;
          t.planner = p;
          t.sampler = s;
          t.map = static_cast<int>(m);
          t.pair = static_cast<int>(k);
          report.trials.push_back(t);
        }
  const int total = static_cast<int>(report.trials.size());
  std::atomic<int> done{0};
  std::mutex progress_mutex;
  parallel_for(total, options.threads, [&](int i) {
    TrialResult& t = report.trials[static_cast<std::size_t>(i)];
    const Scenario& sc = maps[static_cast<std::size_t>(t.map)];
    planning::PlanQuery q;
    q.start = sc.pairs[static_cast<std::size_t>(t.pair)].start;
    q.goals = {sc.pairs[static_cast<std::size_t>(t.pair)].goal};
    q.budget = options.budget;
    const auto combo = static_cast<std::uint64_t>(static_cast<int>(t.planner) * 4 + static_cast<int>(t.sampler));
    Rng rng(derive_seed({options.seed, static_cast<std::uint64_t>(t.map), static_cast<std::uint64_t>(t.pair), combo}));
    const auto r = planning::plan(t.planner, t.sampler, sc.map, q, rng, &density);
    t.outcome = r.outcome;
    t.time_s = r.stats.wall_time;
    t.joint_cost = r.success() ? r.path.joint_cost : 0.0;
    const int d = ++done;
    if (options.progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      options.progress(d, total);
    }
  });

  for (PlannerKind p : planning::kAllPlanners)
    for (SamplerKind s : samplers::kAllSamplers) {
      ComboSummary c;
      c.planner = p;
      c.sampler = s;
      std::vector<double> times;
      int ok = 0;
      for (const auto& t : report.trials)
        if (t.planner == p && t.sampler == s) {
          times.push_back(t.time_s);
          ok += t.outcome == Outcome::Success;
        }
      c.success = wilson(ok, static_cast<int>(times.size()));
      c.time_p50 = quantile(times, 0.5);
      c.time_p90 = quantile(times, 0.9);
      c.time_max = times.empty() ? 0.0 : *std::max_element(times.begin(), times.end());
      report.combos.push_back(c);
    }
  return report;
}

OrthoReport run_ortho(const OrthoOptions& options) {
  if (options.n_maps < 0) throw InvalidParameter("map count must be non-negative");
  std::vector<Scenario> maps;
  for (int m = 0; m < options.n_maps; ++m) {
    ScenarioSpec spec = options.base;
    spec.seed = derive_seed({options.seed, 0x0a7, static_cast<std::uint64_t>(m)});
    maps.push_back(gen_map(spec));
  }
  const auto density = fit_density(options.base, options.density_maps, options.seed);
  return run_ortho_on(maps, density, options);
}

void write_trials_csv(std::ostream& os, const std::vector<TrialResult>& trials) {
  os << "planner,sampler,map,pair,outcome,time_s,joint_cost\n";
  char buf[200];
  for (const auto& t : trials) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%s,%.6f,%.9g\n", std::string(planning::to_string(t.planner)).c_str(),
                  std::string(samplers::to_string(t.sampler)).c_str(), t.map, t.pair,
                  std::string(planning::to_string(t.outcome)).c_str(), t.time_s, t.joint_cost);
    os << buf;
  }
}

void write_combo_table(std::ostream& os, const std::vector<ComboSummary>& combos) {
  os << "planner,sampler,trials,successes,rate,rate_lo,rate_hi,time_p50,time_p90,time_max\n";
  char buf[240];
  for (const auto& c : combos) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%.4f,%.4f,%.4f,%.6f,%.6f,%.6f\n",
                  std::string(planning::to_string(c.planner)).c_str(),
                  std::string(samplers::to_string(c.sampler)).c_str(), c.success.trials, c.success.successes,
                  c.success.rate, c.success.lo, c.success.hi, c.time_p50, c.time_p90, c.time_max);
    os << buf;
  }
}

ScenarioSpec agent_spec(int n_objects, double p_fix, int n_targets, std::uint64_t seed) {
  ScenarioSpec s;
  s.width = 64;
  s.height = 64;
  s.resolution = 0.02;
  s.n_objects = n_objects;
  s.p_fix = p_fix;
  s.n_targets = n_targets;
  s.n_pairs = 1;
  s.seed = seed;
  return s;
}

std::vector<StressRow> run_stress(const StressOptions& options) {
  if (options.min_objects < 0 || options.max_objects < options.min_objects || options.episodes < 0)
    throw InvalidParameter("stress ranges out of order");
  const int counts = options.max_objects - options.min_objects + 1;
  const int total = counts * options.episodes;
  struct Outcome1 {
    bool success = false;
    double occupancy = 0.0;
    std::int64_t ticks = 0;
  };
  std::vector<Outcome1> results(static_cast<std::size_t>(total));
  std::mutex cb;
  parallel_for(total, options.threads, [&](int i) {
    const int n = options.min_objects + i / std::max(1, options.episodes);
    const int e = i % std::max(1, options.episodes);
    const auto seed = derive_seed({options.seed, 0x57e55, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(e)});
    const Scenario sc = gen_map(agent_spec(n, 0.0, 1, seed));
    agent::AgentConfig cfg = options.agent;
    cfg.seed = seed;
    const auto r = agent::run_episode(sc.world, sc.targets, cfg, options.tick_cap);
    std::size_t covered = 0;
    for (double v : sc.map.costs()) covered += v > 0.0;
    auto& out = results[static_cast<std::size_t>(i)];
    out.success = r.success;
    out.ticks = r.ticks;
    out.occupancy = static_cast<double>(covered) / static_cast<double>(sc.map.size());
    if (options.on_episode) {
      std::lock_guard<std::mutex> lock(cb);
      options.on_episode(n, e, r);
    }
  });
  std::vector<StressRow> rows;
  for (int k = 0; k < counts; ++k) {
    StressRow row;
    row.objects = options.min_objects + k;
    int ok = 0;
    double occ = 0.0, ticks = 0.0;
    for (int e = 0; e < options.episodes; ++e) {
      const auto& r = results[static_cast<std::size_t>(k * options.episodes + e)];
      ok += r.success;
      occ += r.occupancy;
      ticks += static_cast<double>(r.ticks);
    }
    row.success = wilson(ok, options.episodes);
    if (options.episodes > 0) {
      row.mean_occupancy = occ / options.episodes;
      row.mean_ticks = ticks / options.episodes;
    }
    rows.push_back(row);
  }
  return rows;
}

Sweep parse_sweep(std::string_view name) {
  if (name == "objects") return Sweep::Objects;
  if (name == "pfix") return Sweep::FixedShare;
  if (name == "targets") return Sweep::Targets;
  throw InvalidArgument("unknown sweep '" + std::string(name) + "'");
}

std::string_view to_string(Sweep sweep) {
  switch (sweep) {
    case Sweep::Objects: return "objects";
    case Sweep::FixedShare: return "pfix";
    case Sweep::Targets: return "targets";
  }
  return "?";
}

std::vector<BaselineRow> run_baselines(const BaselineOptions& options) {
  struct Point {
    int objects;
    double p_fix;
    int targets;
    double value;
  };
  std::vector<Point> points;
  switch (options.sweep) {
    case Sweep::Objects:
      for (int n = 1; n <= 6; ++n) points.push_back({n, 0.1, 1, static_cast<double>(n)});
      break;
    case Sweep::FixedShare:
      for (double p : {0.0, 0.1, 0.2, 0.3}) points.push_back({6, p, 1, p});
      break;
    case Sweep::Targets:
      for (int t = 1; t <= 3; ++t) points.push_back({6, 0.1, t, static_cast<double>(t)});
      break;
  }
  constexpr agent::Strategy kStrategies[] = {agent::Strategy::Interactive, agent::Strategy::AvoidContact,
                                             agent::Strategy::OpenLoop};
  const int per_point = options.episodes * 3;
  const int total = static_cast<int>(points.size()) * per_point;
  std::vector<char> ok(static_cast<std::size_t>(total), 0);
  parallel_for(total, options.threads, [&](int i) {
    const auto& pt = points[static_cast<std::size_t>(i / per_point)];
    const int e = (i % per_point) / 3;
    const auto strategy = kStrategies[i % 3];
    const auto seed = derive_seed({options.seed, 0xba5e, static_cast<std::uint64_t>(options.sweep),
                                   static_cast<std::uint64_t>(i / per_point), static_cast<std::uint64_t>(e)});
    const Scenario sc = gen_map(agent_spec(pt.objects, pt.p_fix, pt.targets, seed));
    agent::AgentConfig cfg = options.agent;
    cfg.strategy = strategy;
    cfg.seed = seed;
    ok[static_cast<std::size_t>(i)] = agent::run_episode(sc.world, sc.targets, cfg, options.tick_cap).success;
  });
  std::vector<BaselineRow> rows;
  for (std::size_t p = 0; p < points.size(); ++p) {
    BaselineRow row;
    row.variable = std::string(to_string(options.sweep));
    row.value = points[p].value;
    int counts[3] = {0, 0, 0};
    for (int e = 0; e < options.episodes; ++e)
      for (int k = 0; k < 3; ++k) counts[k] += ok[p * per_point + static_cast<std::size_t>(e * 3 + k)];
    row.interactive = wilson(counts[0], options.episodes);
    row.avoid_contact = wilson(counts[1], options.episodes);
    row.open_loop = wilson(counts[2], options.episodes);
    rows.push_back(row);
  }
  return rows;
}

void write_stress_table(std::ostream& os, const std::vector<StressRow>& rows) {
  os << "objects,episodes,successes,rate,rate_lo,rate_hi,mean_occupancy,mean_ticks\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.4f,%.4f,%.4f,%.4f,%.1f\n", r.objects, r.success.trials,
                  r.success.successes, r.success.rate, r.success.lo, r.success.hi, r.mean_occupancy, r.mean_ticks);
    os << buf;
  }
}

void write_baseline_table(std::ostream& os, const std::vector<BaselineRow>& rows) {
  os << "variable,value,episodes,interactive,collision_free_proxy,open_loop_proxy,delta_collision_free,delta_open_loop\n";
  char buf[240];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%g,%d,%.4f,%.4f,%.4f,%.4f,%.4f\n", r.variable.c_str(), r.value,
                  r.interactive.trials, r.interactive.rate, r.avoid_contact.rate, r.open_loop.rate,
                  r.interactive.rate - r.avoid_contact.rate, r.interactive.rate - r.open_loop.rate);
    os << buf;
  }
}

void render_svg(std::ostream& os, const RenderInput& in, double ppc) {
  if (!in.map) throw InvalidArgument("render needs a map");
  if (!(ppc > 0.0)) throw InvalidParameter("pixels per cell must be positive");
  const auto& g = in.map->geometry();
  const double W = g.width * ppc, H = g.height * ppc, s = ppc / g.resolution;
  auto px = [&](Vec2 p) { return Vec2{p.x * s, H - p.y * s}; };
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n", W, H,
                W, H);
  os << buf;
  std::snprintf(buf, sizeof buf, "<rect x=\"0\" y=\"0\" width=\"%g\" height=\"%g\" fill=\"#ffffff\"/>\n", W, H);
  os << buf;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const double v = in.map->at(x, y);
      if (v <= 0.0) continue;
      const int shade = static_cast<int>(std::lround(230.0 * (1.0 - v)));
      std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"rgb(%d,%d,%d)\"/>\n",
                    x * ppc, H - (y + 1) * ppc, ppc, ppc, shade, shade, shade);
      os << buf;
    }
  auto polyline = [&](const std::vector<Vec2>& pts, const char* colour, double width) {
    if (pts.empty()) return;
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"" << width << "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec2 q = px(pts[i]);
      std::snprintf(buf, sizeof buf, "%s%.6g,%.6g", i ? " " : "", q.x, q.y);
      os << buf;
    }
    os << "\"/>\n";
  };
  if (in.samples)
    for (Vec2 p : *in.samples) {
      const Vec2 q = px(p);
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.6g\" cy=\"%.6g\" r=\"%g\" fill=\"#4a90d9\"/>\n", q.x, q.y,
                    0.2 * ppc);
      os << buf;
    }
  if (in.log) {
    std::vector<Vec2> traj;
    for (const auto& r : *in.log) traj.push_back(r.position);
    polyline(traj, "#e67e22", 0.3 * ppc);
  }
  if (in.path) polyline(in.path->waypoints, "#c0392b", 0.25 * ppc);
  for (Vec2 m : in.markers) {
    const Vec2 q = px(m);
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.6g\" cy=\"%.6g\" r=\"%g\" fill=\"#27ae60\"/>\n", q.x, q.y, 0.6 * ppc);
    os << buf;
  }
  os << "</svg>\n";
}

void write_pairs(std::ostream& os, const std::vector<StartGoal>& pairs, const std::vector<Vec2>& targets) {
  os << "PAIPPAIRS v1 " << pairs.size() << ' ' << targets.size() << '\n';
  char buf[160];
  for (const auto& p : pairs) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g\n", p.start.x, p.start.y, p.goal.x, p.goal.y);
    os << buf;
  }
  for (Vec2 t : targets) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", t.x, t.y);
    os << buf;
  }
}

void read_pairs(std::istream& is, std::vector<StartGoal>& pairs, std::vector<Vec2>& targets) {
  std::string magic, version;
  long long n = -1, m = -1;
  if (!(is >> magic >> version >> n >> m) || magic != "PAIPPAIRS" || version != "v1" || n < 0 || m < 0)
    throw IoError("not a PAIPPAIRS v1 file");
  pairs.assign(static_cast<std::size_t>(n), {});
  targets.assign(static_cast<std::size_t>(m), {});
  for (auto& p : pairs)
    if (!(is >> p.start.x >> p.start.y >> p.goal.x >> p.goal.y)) throw IoError("pairs file truncated");
  for (auto& t : targets)
    if (!(is >> t.x >> t.y)) throw IoError("pairs file truncated");
}

void save_scenario(const std::string& dir, const std::string& stem, const Scenario& scenario) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base = std::filesystem::path(dir) / stem;
  gridmap::save_map(base.string() + ".map", scenario.map);
  sim::save_scene(base.string() + ".scene", scenario.world);
  std::ofstream os(base.string() + ".pairs");
  if (!os) throw IoError("cannot write " + base.string() + ".pairs");
  write_pairs(os, scenario.pairs, scenario.targets);
}

Scenario load_scenario(const std::string& dir, const std::string& stem) {
  const std::filesystem::path base = std::filesystem::path(dir) / stem;
  Scenario s;
  s.map = gridmap::load_map(base.string() + ".map");
  s.world = sim::load_scene(base.string() + ".scene");
  std::ifstream is(base.string() + ".pairs");
  if (!is) throw IoError("cannot read " + base.string() + ".pairs");
  read_pairs(is, s.pairs, s.targets);
  return s;
}

std::vector<std::string> list_scenarios(const std::string& dir) {
  std::vector<std::string> stems;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec))
    if (entry.path().extension() == ".map") stems.push_back(entry.path().stem().string());
  if (ec) throw IoError("cannot list " + dir);
  std::sort(stems.begin(), stems.end());
  return stems;
}

}  // namespace paip::harness
