#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "paip/error.hpp"
#include "paip/harness.hpp"
#include "paip/toponet.hpp"

using namespace paip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitBenchmark = 2;

// Success-rate floors behind exit code 2.
constexpr double kOrthoFloor = 0.85;
constexpr double kStressFloor = 0.90;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class Write>
void write_file(const std::string& path, Write&& write) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  write(os);
  if (!os) throw IoError("failed writing " + path);
}

Vec2 parse_point(const std::string& text) {
  double x = 0.0, y = 0.0;
  char comma = 0;
  std::istringstream is(text);
  if (!(is >> x >> comma >> y) || comma != ',') throw UsageError("expected X,Y but got '" + text + "'");
  return {x, y};
}

std::vector<float> binary_occupancy(const gridmap::GridMap& map) {
  std::vector<float> out(static_cast<std::size_t>(map.width()) * map.height(), 0.0f);
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x)
      if (map.at(x, y) > 0.0) out[static_cast<std::size_t>(y) * map.width() + x] = 1.0f;
  return out;
}

std::vector<harness::Scenario> load_all(const std::string& dir) {
  std::vector<harness::Scenario> maps;
  for (const auto& stem : harness::list_scenarios(dir)) maps.push_back(harness::load_scenario(dir, stem));
  if (maps.empty()) throw UsageError("no scenarios in " + dir);
  return maps;
}

void progress_line(int done, int total) {
  if (done == total || done % 200 == 0) std::fprintf(stderr, "\r%d/%d trials", done, total);
  if (done == total) std::fprintf(stderr, "\n");
}

// gen-maps
struct GenArgs {
  int n = 100;
  int objects = 60;
  double pfix = 0.5;
  int targets = 1;
  int size = 128;
  double resolution = 0.01;
  std::uint64_t seed = 1;
  std::string out;
};

int gen_maps(const GenArgs& a) {
  for (int i = 0; i < a.n; ++i) {
    harness::ScenarioSpec spec = harness::ortho_spec();
    spec.n_objects = a.objects;
    spec.p_fix = a.pfix;
    spec.n_targets = a.targets;
    spec.width = spec.height = a.size;
    spec.resolution = a.resolution;
    spec.seed = derive_seed({a.seed, static_cast<std::uint64_t>(i)});
    char stem[32];
    std::snprintf(stem, sizeof stem, "map_%04d", i);
    harness::save_scenario(a.out, stem, harness::gen_map(spec));
  }
  std::printf("wrote %d scenarios to %s\n", a.n, a.out.c_str());
  return kExitOk;
}

// bench ortho
struct OrthoArgs {
  std::string maps;
  int n = 100;
  double budget = 0.02;
  int density_maps = 20;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "results.csv";
  std::string table;
};

int bench_ortho(const OrthoArgs& a) {
  harness::OrthoOptions o;
  o.n_maps = a.n;
  o.budget = a.budget;
  o.density_maps = a.density_maps;
  o.seed = a.seed;
  o.threads = a.threads;
  o.base = harness::ortho_spec();
  o.progress = progress_line;
  harness::OrthoReport report;
  if (!a.maps.empty()) {
    const auto maps = load_all(a.maps);
    o.base.width = maps.front().map.width();
    o.base.height = maps.front().map.height();
    o.base.resolution = maps.front().map.resolution();
    const auto density = harness::fit_density(o.base, o.density_maps, o.seed);
    report = harness::run_ortho_on(maps, density, o);
  } else {
    report = harness::run_ortho(o);
  }
  write_file(a.out, [&](std::ostream& os) { harness::write_trials_csv(os, report.trials); });
  harness::write_combo_table(std::cout, report.combos);
  if (!a.table.empty()) write_file(a.table, [&](std::ostream& os) { harness::write_combo_table(os, report.combos); });
  const double base = report.combo(planning::PlannerKind::RrtConnect, samplers::SamplerKind::Uniform).success.rate;
  return base >= kOrthoFloor ? kExitOk : kExitBenchmark;
}

// bench stress
struct StressArgs {
  int min = 6;
  int max = 15;
  int episodes = 50;
  std::uint64_t seed = 1;
  std::int64_t cap = agent::kDefaultTickCap;
  int threads = 1;
  std::string out;
};

agent::AgentConfig bench_agent() {
  agent::AgentConfig c;
  c.budget = 5.0;  // iteration-capped plans keep episodes reproducible
  return c;
}

int bench_stress(const StressArgs& a) {
  harness::StressOptions o;
  o.min_objects = a.min;
  o.max_objects = a.max;
  o.episodes = a.episodes;
  o.seed = a.seed;
  o.tick_cap = a.cap;
  o.threads = a.threads;
  o.agent = bench_agent();
  o.on_episode = [](int n, int e, const agent::EpisodeResult& r) {
    if (!r.success) std::fprintf(stderr, "objects %d episode %d failed: %s\n", n, e, r.diagnostics.c_str());
  };
  const auto rows = harness::run_stress(o);
  harness::write_stress_table(std::cout, rows);
  if (!a.out.empty()) write_file(a.out, [&](std::ostream& os) { harness::write_stress_table(os, rows); });
  for (const auto& r : rows)
    if (r.success.rate < kStressFloor) return kExitBenchmark;
  return kExitOk;
}

// bench baseline
struct BaselineArgs {
  std::string sweep = "objects";
  int episodes = 20;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
};

int bench_baseline(const BaselineArgs& a) {
  harness::BaselineOptions o;
  o.sweep = harness::parse_sweep(a.sweep);
  o.episodes = a.episodes;
  o.seed = a.seed;
  o.threads = a.threads;
  o.agent = bench_agent();
  const auto rows = harness::run_baselines(o);
  harness::write_baseline_table(std::cout, rows);
  if (!a.out.empty()) write_file(a.out, [&](std::ostream& os) { harness::write_baseline_table(os, rows); });
  for (const auto& r : rows)
    if (r.interactive.rate < r.avoid_contact.rate || r.interactive.rate < r.open_loop.rate) return kExitBenchmark;
  return kExitOk;
}

// train-topo / eval-topo
struct TrainArgs {
  int cinit = 8;
  int cbot = 32;
  int epochs = 30;
  int samples = 512;
  int size = 64;
  std::uint64_t seed = 1;
  std::string out = "model.paipnet";
};

int train_topo(const TrainArgs& a) {
  topo::TopoConfig c;
  c.c_init = a.cinit;
  c.c_bot = a.cbot;
  c.height = c.width = a.size;
  topo::TopoNet<float> net(c, a.seed);
  const int size = a.size;
  const topo::MapGenerator gen = [size](Rng& rng) { return harness::training_map(rng, size, size); };
  topo::TrainOptions o;
  o.epochs = a.epochs;
  o.samples_per_epoch = a.samples;
  o.seed = a.seed;
  o.on_epoch = [](int epoch, double loss) { std::fprintf(stderr, "epoch %d loss %.6f\n", epoch, loss); };
  const auto r = topo::train(net, gen, o);
  topo::save_model(a.out, net);
  std::printf("parameters %lld validation_mse %.6f\n", static_cast<long long>(net.parameter_count()),
              r.validation_mse);
  return kExitOk;
}

struct EvalArgs {
  std::string model;
  std::string maps;
  int samples = 64;
  std::uint64_t seed = 2;
};

int eval_topo(const EvalArgs& a) {
  const auto net = topo::load_model(a.model);
  const auto& c = net.config();
  topo::MapGenerator gen;
  int samples = a.samples;
  std::vector<std::vector<float>> maps;
  if (!a.maps.empty()) {
    for (const auto& s : load_all(a.maps)) {
      if (s.map.width() != c.width || s.map.height() != c.height)
        throw UsageError("maps must be " + std::to_string(c.width) + "x" + std::to_string(c.height) + " for this model");
      maps.push_back(binary_occupancy(s.map));
    }
    samples = static_cast<int>(maps.size());
    gen = [&maps, i = std::size_t{0}](Rng&) mutable { return maps[i++ % maps.size()]; };
  } else {
    gen = [&c](Rng& rng) { return harness::training_map(rng, c.height, c.width); };
  }
  std::printf("samples %d mse %.6f\n", samples, topo::evaluate_mse(net, gen, samples, a.seed));
  return kExitOk;
}

// run-agent
struct AgentArgs {
  std::string scene;
  std::vector<std::string> goals;
  std::string strategy = "interactive";
  std::string model;
  std::uint64_t seed = 1;
  std::int64_t cap = agent::kDefaultTickCap;
  std::string log;
  std::string render;
};

int run_agent(const AgentArgs& a) {
  const sim::World world = sim::load_scene(a.scene);
  std::vector<Vec2> goals;
  for (const auto& g : a.goals) goals.push_back(parse_point(g));
  agent::AgentConfig c = bench_agent();
  c.strategy = agent::parse_strategy(a.strategy);
  c.seed = a.seed;
  std::optional<topo::TopoNet<float>> net;
  if (!a.model.empty()) {
    net = topo::load_model(a.model);
    c.net = &*net;
  }
  const auto r = agent::run_episode(world, goals, c, a.cap);
  std::printf("success %d ticks %lld contacts %lld kinesthetic %d goals %zu distance %.4f %s\n", r.success ? 1 : 0,
              static_cast<long long>(r.ticks), static_cast<long long>(r.contacts), r.kinesthetic_episodes,
              static_cast<std::size_t>(r.goals_reached), r.distance,
              r.diagnostics.c_str());
  if (!a.log.empty()) write_file(a.log, [&](std::ostream& os) { agent::write_log(os, r.log); });
  if (!a.render.empty()) {
    const auto map = harness::scene_cost_map(world);
    harness::RenderInput in;
    in.map = &map;
    in.log = &r.log;
    in.markers = {world.effector.position};
    in.markers.insert(in.markers.end(), goals.begin(), goals.end());
    write_file(a.render, [&](std::ostream& os) { harness::render_svg(os, in); });
  }
  return r.success ? kExitOk : kExitBenchmark;
}

// render
struct RenderArgs {
  std::string map;
  std::string path;
  std::string out;
  double scale = 8.0;
};

int render(const RenderArgs& a) {
  const auto map = gridmap::load_map(a.map);
  std::optional<planning::Path> path;
  harness::RenderInput in;
  in.map = &map;
  if (!a.path.empty()) {
    path = planning::load_path(a.path);
    in.path = &*path;
    if (!path->waypoints.empty()) in.markers = {path->waypoints.front(), path->waypoints.back()};
  }
  write_file(a.out, [&](std::ostream& os) { harness::render_svg(os, in, a.scale); });
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive planning toolkit: map generation, benchmarks, network training and agent runs"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-maps", "Generate scenarios (map, scene, start/goal pairs)");
  g->add_option("--n", gen.n, "Number of scenarios")->check(CLI::NonNegativeNumber);
  g->add_option("--objects", gen.objects, "Objects per map")->check(CLI::NonNegativeNumber);
  g->add_option("--pfix", gen.pfix, "Probability an object is fixed")->check(CLI::Range(0.0, 1.0));
  g->add_option("--targets", gen.targets, "Targets per scenario")->check(CLI::PositiveNumber);
  g->add_option("--size", gen.size, "Map side in cells")->check(CLI::PositiveNumber);
  g->add_option("--res", gen.resolution, "Meters per cell")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Master seed");
  g->add_option("--out", gen.out, "Output directory")->required();

  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  OrthoArgs ortho;
  auto* bo = bench->add_subcommand("ortho", "Every planner with every sampler under a time budget");
  bo->add_option("--maps", ortho.maps, "Scenario directory; generated when omitted");
  bo->add_option("--n", ortho.n, "Maps to generate when --maps is omitted")->check(CLI::NonNegativeNumber);
  bo->add_option("--budget", ortho.budget, "Seconds per trial")->check(CLI::PositiveNumber);
  bo->add_option("--density-maps", ortho.density_maps, "Maps solved to fit the learned density")
      ->check(CLI::PositiveNumber);
  bo->add_option("--seed", ortho.seed, "Master seed");
  bo->add_option("--threads", ortho.threads, "Worker threads")->check(CLI::PositiveNumber);
  bo->add_option("--out", ortho.out, "Per-trial CSV");
  bo->add_option("--table", ortho.table, "Per-combination CSV");

  StressArgs stress;
  auto* bs = bench->add_subcommand("stress", "Closed-loop agent over object counts with no fixed objects");
  bs->add_option("--min", stress.min, "Fewest objects")->check(CLI::PositiveNumber);
  bs->add_option("--max", stress.max, "Most objects")->check(CLI::PositiveNumber);
  bs->add_option("--episodes", stress.episodes, "Episodes per count")->check(CLI::PositiveNumber);
  bs->add_option("--seed", stress.seed, "Master seed");
  bs->add_option("--cap", stress.cap, "Tick cap per episode")->check(CLI::NonNegativeNumber);
  bs->add_option("--threads", stress.threads, "Worker threads")->check(CLI::PositiveNumber);
  bs->add_option("--out", stress.out, "Table CSV");

  BaselineArgs baseline;
  auto* bb = bench->add_subcommand("baseline", "Interactive agent against the two proxies");
  bb->add_option("--sweep", baseline.sweep, "Swept variable")->check(CLI::IsMember({"objects", "pfix", "targets"}));
  bb->add_option("--episodes", baseline.episodes, "Episodes per sweep point")->check(CLI::PositiveNumber);
  bb->add_option("--seed", baseline.seed, "Master seed");
  bb->add_option("--threads", baseline.threads, "Worker threads")->check(CLI::PositiveNumber);
  bb->add_option("--out", baseline.out, "Table CSV");

  TrainArgs train;
  auto* tt = app.add_subcommand("train-topo", "Train the occupancy completion network");
  tt->add_option("--cinit", train.cinit, "First-level channels")->check(CLI::PositiveNumber);
  tt->add_option("--cbot", train.cbot, "Bottleneck channels")->check(CLI::PositiveNumber);
  tt->add_option("--epochs", train.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  tt->add_option("--samples", train.samples, "Maps per epoch")->check(CLI::PositiveNumber);
  tt->add_option("--size", train.size, "Map side in cells")->check(CLI::PositiveNumber);
  tt->add_option("--seed", train.seed, "Seed for weights and data");
  tt->add_option("--out", train.out, "Model file");

  EvalArgs eval;
  auto* et = app.add_subcommand("eval-topo", "Held-out MSE of a trained network");
  et->add_option("--model", eval.model, "Model file")->required();
  et->add_option("--maps", eval.maps, "Scenario directory; generated maps when omitted");
  et->add_option("--samples", eval.samples, "Generated maps when --maps is omitted")->check(CLI::PositiveNumber);
  et->add_option("--seed", eval.seed, "Mask and map seed");

  AgentArgs agent_args;
  auto* ra = app.add_subcommand("run-agent", "Run one closed-loop episode on a scene file");
  ra->add_option("--scene", agent_args.scene, "Scene file")->required();
  ra->add_option("--goal", agent_args.goals, "Goal X,Y (repeat for several targets)")->required();
  ra->add_option("--strategy", agent_args.strategy, "interactive, avoid-contact or open-loop")
      ->check(CLI::IsMember({"interactive", "avoid-contact", "open-loop"}));
  ra->add_option("--model", agent_args.model, "Occupancy network for map completion");
  ra->add_option("--seed", agent_args.seed, "Planner seed");
  ra->add_option("--cap", agent_args.cap, "Tick cap")->check(CLI::NonNegativeNumber);
  ra->add_option("--log", agent_args.log, "Episode log CSV");
  ra->add_option("--render", agent_args.render, "SVG of the scene and trajectory");

  RenderArgs render_args;
  auto* rd = app.add_subcommand("render", "Render a map and optional path to SVG");
  rd->add_option("--map", render_args.map, "Map file")->required();
  rd->add_option("--path", render_args.path, "Path file");
  rd->add_option("--scale", render_args.scale, "Pixels per cell")->check(CLI::PositiveNumber);
  rd->add_option("--out", render_args.out, "SVG file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (g->parsed()) return gen_maps(gen);
    if (bo->parsed()) return bench_ortho(ortho);
    if (bs->parsed()) return bench_stress(stress);
    if (bb->parsed()) return bench_baseline(baseline);
    if (tt->parsed()) return train_topo(train);
    if (et->parsed()) return eval_topo(eval);
    if (ra->parsed()) return run_agent(agent_args);
    if (rd->parsed()) return render(render_args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidParameter& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBenchmark;
  }
  return kExitUsage;
}
