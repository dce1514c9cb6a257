#include "paip/gridmap.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "paip/error.hpp"

namespace paip::gridmap {

Cell GridGeometry::cell_of(Vec2 p) const {
  int cx = static_cast<int>(std::floor(p.x / resolution));
  int cy = static_cast<int>(std::floor(p.y / resolution));
  if (cx == width && p.x <= extent_x()) cx = width - 1;
  if (cy == height && p.y <= extent_y()) cy = height - 1;
  return {cx, cy};
}

GridMap::GridMap(int width, int height, double resolution, double fill)
    : GridMap(GridGeometry{width, height, resolution}, fill) {}

GridMap::GridMap(GridGeometry geometry, double fill) : geom_(geometry) {
  if (geom_.width <= 0 || geom_.height <= 0 || !(geom_.resolution > 0.0) || !std::isfinite(geom_.resolution))
    throw InvalidArgument("grid map needs positive width, height and resolution");
  if (!(fill >= 0.0 && fill <= 1.0)) throw InvalidParameter("grid cost outside [0,1]");
  cost_.assign(geom_.size(), fill);
}

void GridMap::set(Cell c, double value) {
  if (!(value >= 0.0 && value <= 1.0)) throw InvalidParameter("grid cost outside [0,1]");
  cost_[geom_.index(c)] = value;
}

void GridMap::fill(double value) {
  if (!(value >= 0.0 && value <= 1.0)) throw InvalidParameter("grid cost outside [0,1]");
  std::fill(cost_.begin(), cost_.end(), value);
}

bool GridMap::is_binary() const {
  return std::all_of(cost_.begin(), cost_.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

double difficulty(const ThetaEstimate& theta, const ThetaEstimate& theta_max) {
  const auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
  if (bad(theta.k) || bad(theta.c) || bad(theta.fc))
    throw InvalidParameter("interaction parameters must be finite and non-negative");
  if (!(theta_max.k > 0.0 && theta_max.c > 0.0 && theta_max.fc > 0.0) || !std::isfinite(theta_max.k) ||
      !std::isfinite(theta_max.c) || !std::isfinite(theta_max.fc))
    throw InvalidParameter("capability limits must be finite and positive");
  if (theta.k > theta_max.k || theta.c > theta_max.c || theta.fc > theta_max.fc) return 1.0;
  const double d = (theta.k + theta.c + theta.fc) / (theta_max.k + theta_max.c + theta_max.fc);
  return std::min(1.0, d);
}

bool ObjectRecord::covers(Cell c) const { return std::binary_search(footprint.begin(), footprint.end(), c); }

double record_difficulty(const ObjectRecord& record, const ThetaEstimate& theta_max) {
  if (record.fixed || !record.theta) return 1.0;
  return difficulty(*record.theta, theta_max);
}

MemoryPool::MemoryPool(GridGeometry geometry, double association_radius)
    : geom_(geometry), radius_(association_radius) {
  if (!(radius_ > 0.0) || !std::isfinite(radius_)) throw InvalidParameter("association radius must be positive");
  if (geom_.width <= 0 || geom_.height <= 0 || !(geom_.resolution > 0.0))
    throw InvalidArgument("pool geometry must be non-empty");
}

int MemoryPool::associate_hit(Vec2 point, std::int64_t tick) {
  if (!is_finite(point)) throw InvalidParameter("hit position must be finite");
  int best = -1;
  double best_d2 = radius_ * radius_;
  for (const auto& r : records_) {
    const double d2 = (r.centroid - point).squared_norm();
    // Records are in ascending id order, so strict comparison keeps the lowest id on ties.
    if (d2 < best_d2 || (best < 0 && d2 == best_d2)) {
      best = r.id;
      best_d2 = d2;
    }
  }
  if (best >= 0) return best;

  Cell c = geom_.cell_of(point);
  c.x = std::clamp(c.x, 0, geom_.width - 1);
  c.y = std::clamp(c.y, 0, geom_.height - 1);
  ObjectRecord r;
  r.id = next_id_++;
  r.centroid = point;
  r.footprint = {c};
  r.last_update = tick;
  r.observations = 1;
  records_.push_back(std::move(r));
  translation_residue_.push_back({});
  return records_.back().id;
}

ObjectRecord& MemoryPool::mutable_record(int id) {
  auto it = std::lower_bound(records_.begin(), records_.end(), id,
                             [](const ObjectRecord& r, int v) { return r.id < v; });
  if (it == records_.end() || it->id != id) throw InvalidArgument("unknown record id " + std::to_string(id));
  return *it;
}

const ObjectRecord* MemoryPool::find(int id) const {
  auto it = std::lower_bound(records_.begin(), records_.end(), id,
                             [](const ObjectRecord& r, int v) { return r.id < v; });
  if (it == records_.end() || it->id != id) return nullptr;
  return &*it;
}

const ObjectRecord& MemoryPool::record(int id) const {
  const auto* r = find(id);
  if (!r) throw InvalidArgument("unknown record id " + std::to_string(id));
  return *r;
}

void MemoryPool::observe(int id, Vec2 point, std::int64_t tick) {
  auto& r = mutable_record(id);
  Cell c = geom_.cell_of(point);
  c.x = std::clamp(c.x, 0, geom_.width - 1);
  c.y = std::clamp(c.y, 0, geom_.height - 1);
  auto it = std::lower_bound(r.footprint.begin(), r.footprint.end(), c);
  if (it == r.footprint.end() || *it != c) r.footprint.insert(it, c);
  r.centroid = (r.centroid * r.observations + point) / (r.observations + 1);
  ++r.observations;
  r.last_update = tick;
}

void MemoryPool::set_theta(int id, const ThetaEstimate& theta, double covariance_trace, std::int64_t tick) {
  if (!(covariance_trace >= 0.0)) throw InvalidParameter("covariance trace must be non-negative");
  auto& r = mutable_record(id);
  r.theta = theta;
  r.covariance_trace = covariance_trace;
  r.last_update = tick;
}

void MemoryPool::mark_fixed(int id, bool fixed) { mutable_record(id).fixed = fixed; }

void MemoryPool::translate(int id, Vec2 delta) {
  auto& r = mutable_record(id);
  const auto pos = static_cast<std::size_t>(&r - records_.data());
  r.centroid += delta;
  Vec2& residue = translation_residue_[pos];
  residue += delta;
  const int sx = static_cast<int>(std::trunc(residue.x / geom_.resolution));
  const int sy = static_cast<int>(std::trunc(residue.y / geom_.resolution));
  if (sx == 0 && sy == 0) return;
  residue -= Vec2{sx * geom_.resolution, sy * geom_.resolution};

  std::vector<Cell> moved;
  moved.reserve(r.footprint.size());
  for (Cell c : r.footprint) {
    Cell m{c.x + sx, c.y + sy};
    if (geom_.contains(m)) moved.push_back(m);
  }
  if (moved.empty()) {
    Cell c = geom_.cell_of(r.centroid);
    c.x = std::clamp(c.x, 0, geom_.width - 1);
    c.y = std::clamp(c.y, 0, geom_.height - 1);
    moved.push_back(c);
  }
  std::sort(moved.begin(), moved.end());
  r.footprint = std::move(moved);
}

GridMap MemoryPool::observed_map() const {
  GridMap m(geom_, 0.0);
  for (const auto& r : records_)
    for (Cell c : r.footprint) m.set(c, 1.0);
  return m;
}

void MemoryPool::insert(ObjectRecord record) {
  if (record.footprint.empty()) throw InvalidArgument("record footprint must be non-empty");
  for (Cell c : record.footprint)
    if (!geom_.contains(c)) throw InvalidArgument("record footprint outside map");
  if (find(record.id)) throw InvalidArgument("duplicate record id " + std::to_string(record.id));
  std::sort(record.footprint.begin(), record.footprint.end());
  record.footprint.erase(std::unique(record.footprint.begin(), record.footprint.end()), record.footprint.end());
  next_id_ = std::max(next_id_, record.id + 1);
  auto it = std::lower_bound(records_.begin(), records_.end(), record.id,
                             [](const ObjectRecord& r, int v) { return r.id < v; });
  const auto pos = it - records_.begin();
  records_.insert(it, std::move(record));
  translation_residue_.insert(translation_residue_.begin() + pos, Vec2{});
}

GridMap build_cost_map(const MemoryPool& pool, const GridMap& predicted, const ThetaEstimate& theta_max,
                       double p_occ) {
  if (!(predicted.geometry() == pool.geometry()))
    throw InvalidArgument("prediction and pool dimensions differ");
  const auto& g = pool.geometry();
  GridMap out(g, 0.0);
  std::vector<char> claimed(g.size(), 0);
  for (const auto& r : pool.records()) {
    const double d = record_difficulty(r, theta_max);
    for (Cell c : r.footprint) {
      const auto i = g.index(c);
      if (!claimed[i] || d > out.at(c)) out.set(c, d);
      claimed[i] = 1;
    }
  }
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const Cell c{x, y};
      if (!claimed[g.index(c)] && predicted.at(c) >= p_occ) out.set(c, 1.0);
    }
  return out;
}

namespace {

std::string format_cost(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void expect_token(std::istream& is, const std::string& want) {
  std::string tok;
  if (!(is >> tok) || tok != want) throw IoError("expected '" + want + "', got '" + tok + "'");
}

}  // namespace

void write_map(std::ostream& os, const GridMap& map) {
  os << "PAIPMAP v1 " << map.width() << ' ' << map.height() << ' ' << format_real(map.resolution()) << '\n';
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      if (x) os << ' ';
      os << format_cost(map.at(x, y));
    }
    os << '\n';
  }
}

GridMap read_map(std::istream& is) {
  expect_token(is, "PAIPMAP");
  expect_token(is, "v1");
  int w = 0, h = 0;
  double res = 0.0;
  if (!(is >> w >> h >> res)) throw IoError("malformed map header");
  GridMap map(w, h, res);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      if (!(is >> v)) throw IoError("map body truncated");
      map.set(x, y, v);
    }
  return map;
}

void save_map(const std::string& path, const GridMap& map) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  write_map(os, map);
}

GridMap load_map(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return read_map(is);
}

void write_pool(std::ostream& os, const MemoryPool& pool) {
  const auto& g = pool.geometry();
  os << "PAIPPOOL v1 " << g.width << ' ' << g.height << ' ' << format_real(g.resolution) << ' '
     << format_real(pool.association_radius()) << ' ' << pool.size() << '\n';
  for (const auto& r : pool.records()) {
    os << r.id << ' ' << format_real(r.centroid.x) << ' ' << format_real(r.centroid.y) << ' ' << (r.fixed ? 1 : 0);
    if (r.theta)
      os << ' ' << format_real(r.theta->k) << ' ' << format_real(r.theta->c) << ' ' << format_real(r.theta->fc);
    else
      os << " nan nan nan";
    os << ' ' << format_real(r.covariance_trace) << '\n';
  }
}

MemoryPool read_pool(std::istream& is) {
  expect_token(is, "PAIPPOOL");
  expect_token(is, "v1");
  GridGeometry g;
  double radius = 0.0;
  std::size_t n = 0;
  if (!(is >> g.width >> g.height >> g.resolution >> radius >> n)) throw IoError("malformed pool header");
  MemoryPool pool(g, radius);
  std::string line;
  std::getline(is, line);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw IoError("pool snapshot truncated");
    std::istringstream ls(line);
    ObjectRecord r;
    int fixed = 0;
    std::string k, c, fc, cov;
    if (!(ls >> r.id >> r.centroid.x >> r.centroid.y >> fixed >> k >> c >> fc >> cov))
      throw IoError("malformed pool record: " + line);
    r.fixed = fixed != 0;
    if (k != "nan") r.theta = ThetaEstimate{std::stod(k), std::stod(c), std::stod(fc)};
    r.covariance_trace = std::stod(cov);
    Cell cell = g.cell_of(r.centroid);
    cell.x = std::clamp(cell.x, 0, g.width - 1);
    cell.y = std::clamp(cell.y, 0, g.height - 1);
    r.footprint = {cell};
    r.observations = 1;
    pool.insert(std::move(r));
  }
  return pool;
}

}  // namespace paip::gridmap
