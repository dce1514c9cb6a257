// Acceptance checks, one PASS/FAIL line per criterion. Tolerances are pinned below.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "paip/agent.hpp"
#include "paip/harness.hpp"
#include "paip/identify.hpp"
#include "paip/planners.hpp"
#include "paip/sim.hpp"
#include "paip/toponet.hpp"

using namespace paip;
using gridmap::ThetaEstimate;

namespace {

// Estimator recovery.
constexpr double kNoiselessTol = 1e-9;
constexpr double kNoisyTol = 0.05;
constexpr double kNoiseSigma = 0.01;
// Closed-loop identification.
constexpr int kLoopTicks = 200;
constexpr double kLoopRelTol = 0.05;
// Gradient check.
constexpr double kGradRelTol = 1e-4;
// A small step keeps central differences from straddling ReLU kinks; gradients below the floor
// are compared against it, since roundoff in the difference quotient dominates there.
constexpr double kGradStep = 1e-6;
constexpr double kGradFloor = 1e-6;
// Network training.
constexpr double kTopoMseMax = 0.05;
constexpr double kTopoCapacityMargin = 0.002;
constexpr double kTopoSecondsMax = 1800.0;
constexpr int kTopoEpochs = 24;
constexpr int kTopoSamplesPerEpoch = 512;
constexpr int kTopoHeldOut = 256;
// Parameter counts.
constexpr double kRatioLo = 3.0, kRatioHi = 5.0;
// Planner benchmark.
constexpr double kOrthoUniformMin = 0.85;
constexpr double kOrthoHybridGap = 0.05;
constexpr double kOrthoSecondsMax = 600.0;
// Grid search agreement.
constexpr int kGridMaps = 50;
constexpr double kGridBudget = 2.0;
// Stress.
constexpr double kStressMin = 0.90;
constexpr double kStressSecondsMax = 1200.0;
// Movable goal.
constexpr int kMovableSeeds = 10;
constexpr int kMovableMin = 8;
// Agent plan calls stop on the iteration cap, never on this wall-time budget.
constexpr double kAgentBudget = 5.0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double theta_err(const ThetaEstimate& a, const ThetaEstimate& b) {
  return std::max({std::fabs(a.k - b.k), std::fabs(a.c - b.c), std::fabs(a.fc - b.fc)});
}

ThetaEstimate fit_samples(int n, double sigma, std::uint64_t seed, const ThetaEstimate& truth) {
  Rng rng(seed);
  std::uniform_real_distribution<double> udx(0.0, 0.1), uv(-0.2, 0.2);
  std::normal_distribution<double> eps(0.0, sigma);
  identify::LSEstimator est;
  for (int i = 0; i < n; ++i) {
    const double dx = udx(rng), v = uv(rng);
    const double s = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
    double f = truth.k * dx + truth.c * v + truth.fc * s;
    if (sigma > 0) f += eps(rng);
    est.push_sample({dx, v, f, i});
  }
  return est.solve();
}

Verdict estimator_recovery() {
  const ThetaEstimate truth{2.0, 0.5, 1.0};
  const double clean = theta_err(fit_samples(10, 0.0, 42, truth), truth);
  const double noisy = theta_err(fit_samples(1000, kNoiseSigma, 2024, truth), truth);
  std::vector<double> med;
  for (int n : {30, 300, 3000}) {
    std::vector<double> e;
    for (std::uint64_t s = 0; s < 20; ++s) e.push_back(theta_err(fit_samples(n, kNoiseSigma, 1000 + s, truth), truth));
    std::sort(e.begin(), e.end());
    med.push_back(0.5 * (e[9] + e[10]));
  }
  const bool ok = clean < kNoiselessTol && noisy < kNoisyTol && med[1] < med[0] && med[2] < med[1];
  return {ok, fmt("noiseless %.2e, noisy %.4f, medians %.4f %.4f %.4f", clean, noisy, med[0], med[1], med[2])};
}

Verdict loop_closure() {
  Rng rng(8);
  double worst = 0.0;
  bool ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    const double k = 20 + 180 * uniform01(rng), c = 2 + 48 * uniform01(rng), fc = 0.2 + 4.8 * uniform01(rng);
    sim::World w;
    w.workspace = {400, 64, 0.02};
    w.effector.position = {0.3, 0.64};
    sim::SimObject o;
    o.id = 1;
    o.shape = sim::Shape::disc(0.05);
    o.pose = {0.6, 0.64};
    o.true_k = k;
    o.true_c = c;
    o.true_fc = fc;
    w.objects.push_back(o);
    identify::LSEstimator est;
    sim::Tracker tracker({{0.3, 0.64}, {7.9, 0.64}}, sim::TrackParams::for_resolution(0.02));
    int ticks = 0;
    while (ticks < kLoopTicks && tracker.status() == sim::TrackStatus::Running) {
      const auto r = tracker.advance(w);
      if (!r.contacts.empty()) ++ticks;
      for (const auto& ev : r.contacts)
        if (!ev.saturated) est.push_sample({ev.dx, ev.v, ev.f, ev.tick});
    }
    if (ticks < kLoopTicks) {
      ok = false;
      continue;
    }
    const auto t = est.solve();
    worst = std::max({worst, std::fabs(t.k - k) / k, std::fabs(t.c - c) / c, std::fabs(t.fc - fc) / fc});
  }
  ok = ok && worst <= kLoopRelTol;
  return {ok, fmt("10 objects, worst relative error %.4f after %d contact ticks", worst, kLoopTicks)};
}

Verdict gradient_check() {
  topo::TopoConfig c;
  c.c_init = 2;
  c.c_bot = 4;
  c.height = 8;
  c.width = 8;
  c.batch_size = 2;
  topo::TopoNet<double> net(c, 21);
  Rng rng(4);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& p : net.params())
    if (p.name.find("norm") != std::string::npos || p.name.find(".bias") != std::string::npos)
      for (auto& v : p.value) v += u(rng);
  topo::Tensor<double> in(2, 1, 8, 8), label(2, 1, 8, 8);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (auto& v : in.data) v = u01(rng);
  for (auto& v : label.data) v = u01(rng);
  const auto g = net.backward(in, label);
  auto loss = [&] {
    const auto out = net.forward(in, topo::Mode::Train);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += (out.data[i] - label.data[i]) * (out.data[i] - label.data[i]);
    return s / static_cast<double>(out.size());
  };
  const double eps = kGradStep;
  double worst = 0.0;
  std::int64_t checked = 0;
  for (std::size_t b = 0; b < net.params().size(); ++b) {
    auto& p = net.params()[b];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + eps;
      const double lp = loss();
      p.value[i] = keep - eps;
      const double lm = loss();
      p.value[i] = keep;
      const double numeric = (lp - lm) / (2 * eps), analytic = g.blocks[b][i];
      const double scale = std::max({std::fabs(numeric), std::fabs(analytic), kGradFloor});
      worst = std::max(worst, std::fabs(numeric - analytic) / scale);
      ++checked;
    }
  }
  return {worst < kGradRelTol, fmt("%lld parameters, max relative error %.2e", static_cast<long long>(checked), worst)};
}

Verdict toponet_training() {
  const auto t0 = std::chrono::steady_clock::now();
  const topo::MapGenerator gen = [](Rng& r) { return harness::training_map(r, 64, 64); };
  auto train_eval = [&](int ci, int cb) {
    topo::TopoConfig c;
    c.c_init = ci;
    c.c_bot = cb;
    topo::TopoNet<float> net(c, 7);
    topo::TrainOptions o;
    o.epochs = kTopoEpochs;
    o.samples_per_epoch = kTopoSamplesPerEpoch;
    o.validation_samples = 0;
    o.seed = 1;
    topo::train(net, gen, o);
    return topo::evaluate_mse(net, gen, kTopoHeldOut, 9001);
  };
  const double big = train_eval(8, 32);
  const double small = train_eval(4, 16);
  const double secs = seconds_since(t0);
  const bool ok = big <= kTopoMseMax && small >= big - kTopoCapacityMargin && secs <= kTopoSecondsMax;
  return {ok, fmt("held-out MSE (8,32) %.4f, (4,16) %.4f after %d epochs, %.0f s", big, small, kTopoEpochs, secs)};
}

Verdict param_counts() {
  auto count = [](int ci, int cb) {
    topo::TopoConfig c;
    c.c_init = ci;
    c.c_bot = cb;
    return topo::param_count(c);
  };
  const auto a = count(4, 16), b = count(8, 32), c = count(16, 64);
  const double r1 = static_cast<double>(b) / a, r2 = static_cast<double>(c) / b;
  const bool ok = a < b && b < c && r1 >= kRatioLo && r1 <= kRatioHi && r2 >= kRatioLo && r2 <= kRatioHi;
  return {ok, fmt("%lld < %lld < %lld, ratios %.2f %.2f", static_cast<long long>(a), static_cast<long long>(b),
                  static_cast<long long>(c), r1, r2)};
}

Verdict ortho_benchmark() {
  using harness::PlannerKind;
  using harness::SamplerKind;
  const auto t0 = std::chrono::steady_clock::now();
  harness::OrthoOptions o;
  o.n_maps = 100;
  o.budget = 0.02;
  o.base = harness::ortho_spec();
  const auto r = harness::run_ortho(o);
  const double secs = seconds_since(t0);
  const SamplerKind samplers[] = {SamplerKind::Uniform, SamplerKind::Hybrid, SamplerKind::Static, SamplerKind::Learned};
  const PlannerKind planners[] = {PlannerKind::RrtConnect, PlannerKind::BEst, PlannerKind::BitStar, PlannerKind::Prm};
  auto rate = [&](PlannerKind p, SamplerKind s) { return r.combo(p, s).success.rate; };
  const double uni = rate(PlannerKind::RrtConnect, SamplerKind::Uniform);
  const double hyb = rate(PlannerKind::RrtConnect, SamplerKind::Hybrid);
  const double lrn = rate(PlannerKind::RrtConnect, SamplerKind::Learned);
  const bool uniform_ok = uni >= kOrthoUniformMin;
  const bool hybrid_ok = std::fabs(hyb - uni) <= kOrthoHybridGap;
  bool learned_lowest = true;
  for (auto s : samplers)
    if (s != SamplerKind::Learned && !(lrn < rate(PlannerKind::RrtConnect, s))) learned_lowest = false;
  bool rrtc_best = true;
  for (auto s : samplers)
    for (auto p : planners)
      if (rate(p, s) > rate(PlannerKind::RrtConnect, s)) rrtc_best = false;
  const bool time_ok = secs <= kOrthoSecondsMax;
  std::string detail = fmt("%zu trials in %.0f s; RRT-C uniform %.3f hybrid %.3f bridge %.3f learned %.3f", r.trials.size(),
                           secs, uni, hyb, rate(PlannerKind::RrtConnect, SamplerKind::Static), lrn);
  detail += fmt("; uniform>=%.2f %s, hybrid gap %s, learned lowest %s, RRT-C best %s, time %s", kOrthoUniformMin,
                uniform_ok ? "yes" : "no", hybrid_ok ? "yes" : "no", learned_lowest ? "yes" : "no",
                rrtc_best ? "yes" : "no", time_ok ? "yes" : "no");
  return {uniform_ok && hybrid_ok && learned_lowest && rrtc_best && time_ok, detail};
}

Verdict grid_agreement() {
  int agree = 0, reachable = 0;
  for (int i = 0; i < kGridMaps; ++i) {
    Rng rng(derive_seed({0x9a1, static_cast<std::uint64_t>(i)}));
    gridmap::GridMap m(20, 20, 1.0, 0.0);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) {
        const double u = uniform01(rng);
        if (u < 0.38) m.set(x, y, 1.0);
        else if (u < 0.58) m.set(x, y, std::floor(uniform01(rng) * 100.0) / 100.0);
      }
    auto free_cell = [&] {
      for (;;) {
        const Cell c{static_cast<int>(uniform01(rng) * 20), static_cast<int>(uniform01(rng) * 20)};
        if (!m.blocked(c)) return c;
      }
    };
    const Cell a = free_cell(), b = free_cell();
    const bool expect = oracle::grid_dijkstra(m, a, b, 1.0).has_value();
    planning::PlanQuery q;
    q.start = m.geometry().center_of(a);
    q.goals = {m.geometry().center_of(b)};
    q.budget = kGridBudget;
    const auto r = planning::plan(planning::PlannerKind::RrtConnect, samplers::SamplerKind::Uniform, m, q, rng);
    agree += r.success() == expect;
    reachable += expect;
  }
  return {agree == kGridMaps, fmt("%d/%d agree, %d reachable", agree, kGridMaps, reachable)};
}

Verdict stress() {
  const auto t0 = std::chrono::steady_clock::now();
  harness::StressOptions o;
  o.agent.budget = kAgentBudget;
  const auto rows = harness::run_stress(o);
  const double secs = seconds_since(t0);
  bool ok = secs <= kStressSecondsMax && !rows.empty();
  std::string rates;
  for (const auto& r : rows) {
    ok = ok && r.success.rate >= kStressMin;
    rates += fmt(" %d:%.2f", r.objects, r.success.rate);
  }
  return {ok, fmt("rates%s in %.0f s", rates.c_str(), secs)};
}

Verdict movable_goal() {
  int wins[3] = {0, 0, 0};
  const agent::Strategy strategies[] = {agent::Strategy::Interactive, agent::Strategy::AvoidContact,
                                        agent::Strategy::OpenLoop};
  for (int seed = 0; seed < kMovableSeeds; ++seed) {
    const auto s = harness::movable_goal_scene(static_cast<std::uint64_t>(seed));
    for (int i = 0; i < 3; ++i) {
      agent::AgentConfig c;
      c.strategy = strategies[i];
      c.budget = kAgentBudget;
      wins[i] += agent::run_episode(s.world, s.targets, c).success;
    }
  }
  const bool ok = wins[0] >= kMovableMin && wins[1] == 0 && wins[2] == 0;
  return {ok, fmt("interactive %d/%d, avoid-contact %d/%d, open-loop %d/%d", wins[0], kMovableSeeds, wins[1],
                  kMovableSeeds, wins[2], kMovableSeeds)};
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Maps, paths, logs and renders from one seeded pass, keyed by artifact name.
std::map<std::string, std::string> artifacts(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (int i = 0; i < 3; ++i) {
    const auto scenario = harness::gen_map(harness::agent_spec(10, 0.2, 1, 500 + i));
    const std::string stem = fmt("map_%d", i);
    harness::save_scenario(dir.string(), stem, scenario);
    for (const char* ext : {".map", ".scene", ".pairs"}) out[stem + ext] = read_all(dir / (stem + ext));

    planning::PlanQuery q;
    q.start = scenario.pairs[0].start;
    q.goals = {scenario.pairs[0].goal};
    q.budget = kAgentBudget;
    q.max_iterations = 4000;
    Rng rng(derive_seed({77, static_cast<std::uint64_t>(i)}));
    const auto plan = planning::plan(planning::PlannerKind::RrtConnect, samplers::SamplerKind::Uniform, scenario.map, q, rng);
    std::ostringstream path;
    planning::write_path(path, plan.path);
    out[stem + ".path"] = path.str();

    agent::AgentConfig c;
    c.budget = kAgentBudget;
    const auto ep = agent::run_episode(scenario.world, scenario.targets, c);
    std::ostringstream log;
    agent::write_log(log, ep.log);
    out[stem + ".log"] = log.str();

    harness::RenderInput in;
    in.map = &scenario.map;
    in.path = &plan.path;
    in.log = &ep.log;
    in.markers = {scenario.pairs[0].start, scenario.pairs[0].goal};
    std::ostringstream svg;
    harness::render_svg(svg, in);
    out[stem + ".svg"] = svg.str();
  }
  std::filesystem::remove_all(dir);
  return out;
}

Verdict determinism() {
  const auto tmp = std::filesystem::temp_directory_path();
  const auto a = artifacts(tmp / "paip_accept_a");
  const auto b = artifacts(tmp / "paip_accept_b");
  int differing = 0;
  std::size_t bytes = 0;
  for (const auto& [name, text] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != text) ++differing;
    bytes += text.size();
  }
  const bool ok = differing == 0 && a.size() == b.size() && !a.empty();
  return {ok, fmt("%zu artifacts, %zu bytes, %d differ", a.size(), bytes, differing)};
}

struct Criterion {
  const char* name;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance checks");
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1-based)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {"estimator recovery", estimator_recovery},
      {"closed-loop identification", loop_closure},
      {"network gradients", gradient_check},
      {"occupancy completion", toponet_training},
      {"parameter counts", param_counts},
      {"planner benchmark", ortho_benchmark},
      {"grid search agreement", grid_agreement},
      {"stress", stress},
      {"movable goal", movable_goal},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].name, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
