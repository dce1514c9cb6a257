#include "paip/planners.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <tuple>

#include "paip/error.hpp"

namespace paip::planning {

using samplers::LearnedDensity;
using samplers::SamplerParams;

std::string_view to_string(PlannerKind kind) {
  switch (kind) {
    case PlannerKind::RrtConnect: return "RRT-C";
    case PlannerKind::BEst: return "B-EST";
    case PlannerKind::BitStar: return "BIT*";
    case PlannerKind::Prm: return "PRM";
  }
  return "?";
}

PlannerKind parse_planner(std::string_view name) {
  std::string s;
  for (char c : name)
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '*') s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "rrtc" || s == "rrtconnect") return PlannerKind::RrtConnect;
  if (s == "best") return PlannerKind::BEst;
  if (s == "bit*" || s == "bit" || s == "bitstar") return PlannerKind::BitStar;
  if (s == "prm") return PlannerKind::Prm;
  throw InvalidArgument("unknown planner '" + std::string(name) + "'");
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Success: return "success";
    case Outcome::NoPath: return "no_path";
    case Outcome::BudgetExhausted: return "budget_exhausted";
  }
  return "?";
}

EdgeEvaluation evaluate_edge(const GridMap& map, Vec2 a, Vec2 b) {
  EdgeEvaluation e;
  const auto& g = map.geometry();
  if (!g.contains(a) || !g.contains(b)) return e;
  bool ok = true;
  double op = 0.0;
  gridmap::walk_segment(g, a, b, [&](std::span<const Cell> cells, double len) {
    double worst = 0.0;
    for (Cell c : cells) worst = std::max(worst, map.at(c));
    if (worst >= 1.0) {
      ok = false;
      return false;
    }
    op += worst * len;
    return true;
  });
  if (!ok) return e;
  e.feasible = true;
  e.length = distance(a, b);
  e.op_cost = op;
  return e;
}

bool validate_edge(const GridMap& map, Vec2 a, Vec2 b) {
  const auto& g = map.geometry();
  if (!g.contains(a) || !g.contains(b)) return false;
  bool ok = true;
  gridmap::walk_segment(g, a, b, [&](std::span<const Cell> cells, double) {
    for (Cell c : cells)
      if (map.blocked(c)) {
        ok = false;
        return false;
      }
    return true;
  });
  return ok;
}

double edge_cost(const GridMap& map, Vec2 a, Vec2 b, double lambda) {
  const auto e = evaluate_edge(map, a, b);
  if (!e.feasible) throw InvalidArgument("edge crosses an inoperable cell or leaves the map");
  return e.length + lambda * e.op_cost;
}

Path make_path(const GridMap& map, std::vector<Vec2> waypoints, double lambda) {
  Path p;
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    const auto e = evaluate_edge(map, waypoints[i - 1], waypoints[i]);
    if (!e.feasible) throw InvalidArgument("path segment " + std::to_string(i - 1) + " is infeasible");
    p.length += e.length;
    p.op_cost += e.op_cost;
  }
  p.joint_cost = p.length + lambda * p.op_cost;
  p.waypoints = std::move(waypoints);
  return p;
}

namespace {

using Clock = std::chrono::steady_clock;

class Deadline {
 public:
  explicit Deadline(double seconds)
      : start_(Clock::now()),
        end_(start_ + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds))) {}
  Deadline(Clock::time_point start, double seconds)
      : start_(start), end_(start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds))) {}
  bool expired() const { return Clock::now() >= end_; }
  double elapsed() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }
  double remaining() const { return std::max(0.0, std::chrono::duration<double>(end_ - Clock::now()).count()); }

 private:
  Clock::time_point start_, end_;
};

/// Bucket grid over the map extent for nearest, k-nearest and radius queries.
class PointIndex {
 public:
  PointIndex(double extent_x, double extent_y, double bucket)
      : bucket_(bucket),
        nx_(std::max(1, static_cast<int>(std::ceil(extent_x / bucket)))),
        ny_(std::max(1, static_cast<int>(std::ceil(extent_y / bucket)))),
        buckets_(static_cast<std::size_t>(nx_) * ny_) {}

  void insert(int id, Vec2 p) {
    if (static_cast<std::size_t>(id) >= pts_.size()) pts_.resize(static_cast<std::size_t>(id) + 1);
    pts_[id] = p;
    buckets_[bucket_of(p)].push_back(id);
    ++count_;
  }
  std::size_t size() const { return count_; }

  int nearest(Vec2 q) const {
    if (count_ == 0) return -1;
    const auto [bx, by] = coords(q);
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int r = 0; r <= std::max(nx_, ny_); ++r) {
      if (best >= 0 && (r - 1) * bucket_ > 0.0 && ((r - 1) * bucket_) * ((r - 1) * bucket_) > best_d2) break;
      visit_ring(bx, by, r, [&](int id) {
        const double d2 = (pts_[id] - q).squared_norm();
        if (d2 < best_d2 || (d2 == best_d2 && id < best)) {
          best_d2 = d2;
          best = id;
        }
      });
    }
    return best;
  }

  void within(Vec2 q, double radius, std::vector<int>& out) const {
    out.clear();
    const int span = static_cast<int>(std::ceil(radius / bucket_));
    const auto [bx, by] = coords(q);
    const double r2 = radius * radius;
    for (int y = std::max(0, by - span); y <= std::min(ny_ - 1, by + span); ++y)
      for (int x = std::max(0, bx - span); x <= std::min(nx_ - 1, bx + span); ++x)
        for (int id : buckets_[static_cast<std::size_t>(y) * nx_ + x])
          if ((pts_[id] - q).squared_norm() <= r2) out.push_back(id);
    std::sort(out.begin(), out.end());
  }

  void k_nearest(Vec2 q, int k, int exclude, std::vector<int>& out) const {
    out.clear();
    if (k <= 0) return;
    const auto [bx, by] = coords(q);
    std::vector<std::pair<double, int>> cand;
    for (int r = 0; r <= std::max(nx_, ny_); ++r) {
      visit_ring(bx, by, r, [&](int id) {
        if (id != exclude) cand.emplace_back((pts_[id] - q).squared_norm(), id);
      });
      if (static_cast<int>(cand.size()) >= k) {
        std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end());
        const double kth = cand[k - 1].first;
        if (r * bucket_ * r * bucket_ >= kth) break;
      }
    }
    std::sort(cand.begin(), cand.end());
    for (int i = 0; i < std::min<int>(k, static_cast<int>(cand.size())); ++i) out.push_back(cand[i].second);
  }

 private:
  std::pair<int, int> coords(Vec2 p) const {
    const int x = std::clamp(static_cast<int>(p.x / bucket_), 0, nx_ - 1);
    const int y = std::clamp(static_cast<int>(p.y / bucket_), 0, ny_ - 1);
    return {x, y};
  }
  std::size_t bucket_of(Vec2 p) const {
    const auto [x, y] = coords(p);
    return static_cast<std::size_t>(y) * nx_ + x;
  }
  template <class F>
  void visit_ring(int bx, int by, int r, F&& f) const {
    auto cell = [&](int x, int y) {
      if (x < 0 || y < 0 || x >= nx_ || y >= ny_) return;
      for (int id : buckets_[static_cast<std::size_t>(y) * nx_ + x]) f(id);
    };
    if (r == 0) {
      cell(bx, by);
      return;
    }
    for (int x = bx - r; x <= bx + r; ++x) {
      cell(x, by - r);
      cell(x, by + r);
    }
    for (int y = by - r + 1; y <= by + r - 1; ++y) {
      cell(bx - r, y);
      cell(bx + r, y);
    }
  }

  double bucket_;
  int nx_, ny_;
  std::vector<std::vector<int>> buckets_;
  std::vector<Vec2> pts_;
  std::size_t count_ = 0;
};

struct Search {
  const GridMap& map;
  Vec2 start, goal;
  double step;
  double lambda;
  const Deadline& deadline;
  std::int64_t max_iterations;
  SamplerKind sampler;
  const LearnedDensity* density;
  const SamplerParams& params;
  Rng& rng;
  PlanStats& stats;

  // Returns the raw waypoint chain on success; `outcome` reports why it failed otherwise.
  std::optional<std::vector<Vec2>> run(PlannerKind kind, Outcome& outcome);

 private:
  bool stop(std::int64_t iter, Outcome& outcome) const {
    if (max_iterations > 0 && iter >= max_iterations) {
      outcome = Outcome::NoPath;
      return true;
    }
    if (iter % kDeadlineCheckInterval == 0 && deadline.expired()) {
      outcome = Outcome::BudgetExhausted;
      return true;
    }
    return false;
  }
  std::optional<Vec2> draw() {
    auto p = samplers::try_sample(sampler, map, density, rng, params);
    if (p) ++stats.samples;
    return p;
  }
  // Sampled point usable as a roadmap vertex.
  std::optional<Vec2> draw_free() {
    auto p = draw();
    if (p && map.blocked(map.geometry().cell_of(*p))) return std::nullopt;
    return p;
  }
  PointIndex make_index() const {
    return PointIndex(map.geometry().extent_x(), map.geometry().extent_y(), std::max(step, map.resolution()));
  }

  std::optional<std::vector<Vec2>> rrt_connect(Outcome& outcome);
  std::optional<std::vector<Vec2>> bidirectional_est(Outcome& outcome);
  std::optional<std::vector<Vec2>> bit_star(Outcome& outcome);
  std::optional<std::vector<Vec2>> prm(Outcome& outcome);
};

struct Tree {
  std::vector<Vec2> pts;
  std::vector<int> parent;
  PointIndex index;

  Tree(Vec2 root, PointIndex idx) : index(std::move(idx)) { add(root, -1); }
  int add(Vec2 p, int par) {
    const int id = static_cast<int>(pts.size());
    pts.push_back(p);
    parent.push_back(par);
    index.insert(id, p);
    return id;
  }
  std::vector<Vec2> chain_to_root(int id) const {
    std::vector<Vec2> out;
    for (int v = id; v >= 0; v = parent[v]) out.push_back(pts[v]);
    return out;
  }
};

// Joins a start-rooted chain ending at `a` with a goal-rooted chain ending at `b`.
std::vector<Vec2> join(const Tree& from_start, int a, const Tree& from_goal, int b) {
  std::vector<Vec2> head = from_start.chain_to_root(a);
  std::reverse(head.begin(), head.end());
  std::vector<Vec2> tail = from_goal.chain_to_root(b);
  if (!head.empty() && !tail.empty() && head.back() == tail.front()) tail.erase(tail.begin());
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

std::optional<std::vector<Vec2>> Search::run(PlannerKind kind, Outcome& outcome) {
  switch (kind) {
    case PlannerKind::RrtConnect: return rrt_connect(outcome);
    case PlannerKind::BEst: return bidirectional_est(outcome);
    case PlannerKind::BitStar: return bit_star(outcome);
    case PlannerKind::Prm: return prm(outcome);
  }
  return std::nullopt;
}

std::optional<std::vector<Vec2>> Search::rrt_connect(Outcome& outcome) {
  Tree ta(start, make_index()), tb(goal, make_index());
  Tree* a = &ta;
  Tree* b = &tb;
  enum class Step { Trapped, Advanced, Reached };
  auto extend = [&](Tree& t, Vec2 q, int& added) {
    const int n = t.index.nearest(q);
    const Vec2 from = t.pts[n];
    const double d = distance(from, q);
    if (d <= 1e-12) {
      added = n;
      return Step::Reached;
    }
    const Vec2 to = d <= step ? q : from + (q - from) * (step / d);
    if (!validate_edge(map, from, to)) return Step::Trapped;
    added = t.add(to, n);
    ++stats.nodes;
    return d <= step ? Step::Reached : Step::Advanced;
  };
  for (std::int64_t iter = 0;; ++iter) {
    if (stop(iter, outcome)) break;
    ++stats.iterations;
    const auto q = draw();
    if (q) {
      int na = -1;
      if (extend(*a, *q, na) != Step::Trapped) {
        const Vec2 target = a->pts[na];
        int nb = -1;
        Step s;
        do {
          s = extend(*b, target, nb);
        } while (s == Step::Advanced);
        if (s == Step::Reached) return a == &ta ? join(ta, na, tb, nb) : join(ta, nb, tb, na);
      }
    }
    std::swap(a, b);
  }
  return std::nullopt;
}

std::optional<std::vector<Vec2>> Search::bidirectional_est(Outcome& outcome) {
  Tree trees[2] = {Tree(start, make_index()), Tree(goal, make_index())};
  std::vector<int> neighbors[2] = {{0}, {0}};
  std::vector<double> weight[2] = {{1.0}, {1.0}};
  double total[2] = {1.0, 1.0};
  const double radius = 2.0 * step;
  std::vector<int> near;
  for (std::int64_t iter = 0;; ++iter) {
    if (stop(iter, outcome)) break;
    ++stats.iterations;
    const int side = static_cast<int>(iter % 2);
    Tree& t = trees[side];
    Tree& other = trees[1 - side];
    // Sparse regions are expanded preferentially.
    double u = uniform01(rng) * total[side];
    int v = static_cast<int>(t.pts.size()) - 1;
    for (std::size_t i = 0; i < t.pts.size(); ++i) {
      u -= weight[side][i];
      if (u < 0.0) {
        v = static_cast<int>(i);
        break;
      }
    }
    const auto q = draw();
    if (!q) continue;
    const Vec2 from = t.pts[v];
    const double d = distance(from, *q);
    if (d <= 1e-12) continue;
    const Vec2 to = d <= step ? *q : from + (*q - from) * (step / d);
    if (!validate_edge(map, from, to)) continue;
    t.index.within(to, radius, near);
    const int id = t.add(to, v);
    ++stats.nodes;
    neighbors[side].push_back(static_cast<int>(near.size()));
    weight[side].push_back(1.0 / (1.0 + static_cast<double>(near.size())));
    total[side] += weight[side].back();
    for (int nb : near) {
      const double old = weight[side][nb];
      ++neighbors[side][nb];
      weight[side][nb] = 1.0 / (1.0 + neighbors[side][nb]);
      total[side] += weight[side][nb] - old;
    }
    const int o = other.index.nearest(to);
    if (validate_edge(map, to, other.pts[o]))
      return side == 0 ? join(trees[0], id, trees[1], o) : join(trees[0], o, trees[1], id);
  }
  return std::nullopt;
}

std::optional<std::vector<Vec2>> Search::bit_star(Outcome& outcome) {
  // Vertices carry cost-to-come; samples wait until an edge from a vertex reaches them.
  std::vector<Vec2> vpts{start};
  std::vector<int> vparent{-1};
  std::vector<double> vcost{0.0};
  std::vector<int> vsample{-1};
  PointIndex vindex = make_index();
  vindex.insert(0, start);

  std::vector<Vec2> spts{goal};
  std::vector<char> sused{0};
  PointIndex sindex = make_index();
  sindex.insert(0, goal);

  const double area = map.geometry().extent_x() * map.geometry().extent_y();
  const double gamma = 2.0 * std::sqrt(1.5) * std::sqrt(area / M_PI);
  auto radius = [&]() {
    const double q = static_cast<double>(vpts.size() + spts.size());
    return std::max(3.0 * step, gamma * std::sqrt(std::log(q + 1.0) / (q + 1.0)));
  };

  using Entry = std::tuple<double, std::int64_t, int, int>;  // key, sequence, vertex, sample
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  std::int64_t seq = 0;
  std::vector<int> near;
  auto expand = [&](int v, double r) {
    sindex.within(vpts[v], r, near);
    for (int s : near) {
      if (sused[s]) continue;
      const double key = vcost[v] + distance(vpts[v], spts[s]) + distance(spts[s], goal);
      queue.emplace(key, seq++, v, s);
    }
  };

  std::int64_t iter = 0;
  expand(0, radius());
  while (true) {
    if (queue.empty()) {
      // New batch, then re-expand every vertex with the shrunken radius.
      for (int i = 0; i < kBitStarBatch; ++i) {
        if (stop(iter, outcome)) return std::nullopt;
        ++iter;
        ++stats.iterations;
        const auto p = draw_free();
        if (!p) continue;
        const int id = static_cast<int>(spts.size());
        spts.push_back(*p);
        sused.push_back(0);
        sindex.insert(id, *p);
      }
      const double r = radius();
      for (std::size_t v = 0; v < vpts.size(); ++v) {
        if ((v + 1) % kDeadlineCheckInterval == 0 && deadline.expired()) {
          outcome = Outcome::BudgetExhausted;
          return std::nullopt;
        }
        expand(static_cast<int>(v), r);
      }
      continue;
    }
    if (stop(iter, outcome)) return std::nullopt;
    ++iter;
    ++stats.iterations;
    const auto [key, unused_seq, v, s] = queue.top();
    (void)key;
    (void)unused_seq;
    queue.pop();
    if (sused[s]) continue;
    const auto e = evaluate_edge(map, vpts[v], spts[s]);
    if (!e.feasible) continue;
    const int id = static_cast<int>(vpts.size());
    vpts.push_back(spts[s]);
    vparent.push_back(v);
    vcost.push_back(vcost[v] + e.length + lambda * e.op_cost);
    vsample.push_back(s);
    vindex.insert(id, spts[s]);
    sused[s] = 1;
    ++stats.nodes;
    if (s == 0) {
      std::vector<Vec2> out;
      for (int u = id; u >= 0; u = vparent[u]) out.push_back(vpts[u]);
      std::reverse(out.begin(), out.end());
      return out;
    }
    expand(id, radius());
  }
}

std::optional<std::vector<Vec2>> Search::prm(Outcome& outcome) {
  std::vector<Vec2> pts;
  std::vector<std::vector<std::pair<int, double>>> adj;
  std::vector<int> parent;
  PointIndex index = make_index();
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<int> knn;
  auto add = [&](Vec2 p) {
    const int id = static_cast<int>(pts.size());
    pts.push_back(p);
    adj.emplace_back();
    parent.push_back(id);
    index.k_nearest(p, kPrmNeighbors, -1, knn);
    index.insert(id, p);
    for (int nb : knn) {
      const auto e = evaluate_edge(map, p, pts[nb]);
      if (!e.feasible) continue;
      const double c = e.length + lambda * e.op_cost;
      adj[id].emplace_back(nb, c);
      adj[nb].emplace_back(id, c);
      const int ra = find(id), rb = find(nb);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    ++stats.nodes;
    return id;
  };
  add(start);
  add(goal);
  auto shortest = [&]() {
    std::vector<double> dist(pts.size(), std::numeric_limits<double>::infinity());
    std::vector<int> prev(pts.size(), -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[0] = 0.0;
    pq.emplace(0.0, 0);
    while (!pq.empty()) {
      const auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      if (u == 1) break;
      for (const auto& [w, c] : adj[u])
        if (d + c < dist[w]) {
          dist[w] = d + c;
          prev[w] = u;
          pq.emplace(dist[w], w);
        }
    }
    std::vector<Vec2> out;
    for (int u = 1; u >= 0; u = prev[u]) out.push_back(pts[u]);
    std::reverse(out.begin(), out.end());
    return out;
  };
  if (find(0) == find(1)) return shortest();
  for (std::int64_t iter = 0;; ++iter) {
    if (stop(iter, outcome)) break;
    ++stats.iterations;
    const auto p = draw_free();
    if (p) add(*p);
    // Query the roadmap once per batch.
    if ((iter + 1) % kBitStarBatch == 0 && find(0) == find(1)) return shortest();
  }
  return std::nullopt;
}

void validate_query(const GridMap& map, const PlanQuery& q) {
  if (!(q.budget > 0.0) || !std::isfinite(q.budget)) throw InvalidArgument("planning budget must be positive");
  if (!(q.step >= 0.0) || !std::isfinite(q.step)) throw InvalidArgument("steering step must be positive");
  if (!(q.lambda >= 0.0) || !std::isfinite(q.lambda)) throw InvalidArgument("lambda must be finite and non-negative");
  if (q.max_iterations < 0) throw InvalidArgument("iteration cap must be non-negative");
  if (q.goals.empty()) throw InvalidArgument("query has no goal");
  const auto& g = map.geometry();
  auto check = [&](Vec2 p, const char* what) {
    if (!is_finite(p) || !g.contains(p)) throw InvalidArgument(std::string(what) + " lies outside the map");
    if (map.blocked(g.cell_of(p))) throw InvalidArgument(std::string(what) + " lies in an inoperable cell");
  };
  check(q.start, "start");
  for (Vec2 goal : q.goals) check(goal, "goal");
}

}  // namespace

Path smooth(const GridMap& map, const Path& path, double lambda, double budget, Rng& rng, int max_failures) {
  Path cur = path;
  const std::size_t n0 = cur.waypoints.size();
  if (n0 < 3 || !(budget > 0.0)) return cur;
  const Deadline deadline(budget);
  // Per-segment joint costs so chain costs are cheap to recompute.
  std::vector<double> seg;
  auto rebuild = [&]() {
    seg.clear();
    for (std::size_t i = 1; i < cur.waypoints.size(); ++i)
      seg.push_back(edge_cost(map, cur.waypoints[i - 1], cur.waypoints[i], lambda));
  };
  rebuild();
  int failures = 0;
  while (failures < max_failures && cur.waypoints.size() >= 3 && !deadline.expired()) {
    const std::size_t n = cur.waypoints.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t i = pick(rng), j = pick(rng);
    if (i > j) std::swap(i, j);
    if (j < i + 2) {
      ++failures;
      continue;
    }
    double chain = 0.0;
    for (std::size_t k = i; k < j; ++k) chain += seg[k];
    const auto e = evaluate_edge(map, cur.waypoints[i], cur.waypoints[j]);
    const double direct = e.length + lambda * e.op_cost;
    if (!e.feasible || !(direct < chain)) {
      ++failures;
      continue;
    }
    cur.waypoints.erase(cur.waypoints.begin() + static_cast<std::ptrdiff_t>(i) + 1,
                        cur.waypoints.begin() + static_cast<std::ptrdiff_t>(j));
    seg.erase(seg.begin() + static_cast<std::ptrdiff_t>(i) + 1, seg.begin() + static_cast<std::ptrdiff_t>(j));
    seg[i] = direct;
    failures = 0;
  }
  return make_path(map, std::move(cur.waypoints), lambda);
}

PlanResult plan(PlannerKind planner, SamplerKind sampler, const GridMap& map, const PlanQuery& query, Rng& rng,
                const LearnedDensity* density, const SamplerParams& params) {
  validate_query(map, query);
  if (sampler == SamplerKind::Learned &&
      (!density || density->width() != map.width() || density->height() != map.height()))
    throw InvalidArgument("learned sampling needs a density matching the map");
  const Deadline total(query.budget);
  const double step = query.step > 0.0 ? query.step : kDefaultStepCells * map.resolution();
  const double tolerance = kGoalToleranceCells * map.resolution();

  std::vector<int> order(query.goals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return distance(query.start, query.goals[a]) < distance(query.start, query.goals[b]);
  });

  PlanResult result;
  bool any_timeout = false;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (total.expired()) {
      any_timeout = true;
      break;
    }
    const int gi = order[k];
    const Vec2 goal = query.goals[gi];
    std::optional<std::vector<Vec2>> raw;
    Outcome outcome = Outcome::NoPath;
    if (distance(query.start, goal) <= tolerance && validate_edge(map, query.start, goal)) {
      raw = std::vector<Vec2>{query.start, goal};
    } else {
      const Deadline sub(total.remaining() / static_cast<double>(order.size() - k));
      Search search{map,     query.start, goal, step, query.lambda, sub, query.max_iterations,
                    sampler, density,     params, rng,  result.stats};
      raw = search.run(planner, outcome);
    }
    if (!raw) {
      if (outcome == Outcome::BudgetExhausted) any_timeout = true;
      continue;
    }
    Path path = make_path(map, std::move(*raw), query.lambda);
    if (query.smooth) path = smooth(map, path, query.lambda, total.remaining(), rng);
    result.outcome = Outcome::Success;
    result.path = std::move(path);
    result.goal_index = gi;
    result.stats.wall_time = total.elapsed();
    return result;
  }
  result.outcome = any_timeout ? Outcome::BudgetExhausted : Outcome::NoPath;
  result.stats.wall_time = total.elapsed();
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_path(std::ostream& os, const Path& p) {
  os << "PAIPPATH v1 " << p.waypoints.size() << ' ' << fmt(p.length) << ' ' << fmt(p.op_cost) << ' '
     << fmt(p.joint_cost) << '\n';
  for (Vec2 w : p.waypoints) os << fmt(w.x) << ' ' << fmt(w.y) << '\n';
}

Path read_path(std::istream& is) {
  std::string magic, version;
  std::size_t n = 0;
  Path p;
  if (!(is >> magic >> version >> n >> p.length >> p.op_cost >> p.joint_cost) || magic != "PAIPPATH" ||
      version != "v1")
    throw IoError("not a PAIPPATH v1 file");
  p.waypoints.resize(n);
  for (auto& w : p.waypoints)
    if (!(is >> w.x >> w.y)) throw IoError("path file truncated");
  return p;
}

void save_path(const std::string& file, const Path& path) {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write " + file);
  write_path(os, path);
}

Path load_path(const std::string& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot read " + file);
  return read_path(is);
}

}  // namespace paip::planning
