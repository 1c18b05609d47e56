#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "seqground/navsim.hpp"

namespace seqground::navsim {

std::string_view to_string(NavErrc code) {
  switch (code) {
    case NavErrc::NoFreeSpace: return "NoFreeSpace";
    case NavErrc::Unreachable: return "Unreachable";
    case NavErrc::OutOfBounds: return "OutOfBounds";
    case NavErrc::NoValidStart: return "NoValidStart";
    case NavErrc::UnreachableTarget: return "UnreachableTarget";
    case NavErrc::AgentFault: return "AgentFault";
    case NavErrc::BadParams: return "BadParams";
    case NavErrc::MalformedInput: return "MalformedInput";
  }
  return "Unknown";
}

Footprint Footprint::of(const scene::Aabb& box) {
  return {box.center.x - box.size.x / 2, box.center.y - box.size.y / 2, box.center.x + box.size.x / 2,
          box.center.y + box.size.y / 2};
}

double Footprint::distance(const Point& p) const {
  const double dx = std::max({min_x - p.x, 0.0, p.x - max_x});
  const double dy = std::max({min_y - p.y, 0.0, p.y - max_y});
  return std::hypot(dx, dy);
}

OccupancyGrid::OccupancyGrid(double resolution, Point origin, int width, int height,
                             std::vector<std::uint8_t> occupied, double inflation_radius)
    : resolution_(resolution),
      origin_(origin),
      width_(width),
      height_(height),
      occupied_(std::move(occupied)),
      inflation_(inflation_radius) {
  if (!(resolution_ > 0.0) || width_ <= 0 || height_ <= 0 ||
      occupied_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_)) {
    throw NavError(NavErrc::BadParams, "grid needs positive resolution and width*height cells");
  }
  if (free_count() == 0) throw NavError(NavErrc::NoFreeSpace, "grid has no free cell");
}

Cell OccupancyGrid::cell_at(std::size_t index) const {
  return {static_cast<int>(index % static_cast<std::size_t>(width_)),
          static_cast<int>(index / static_cast<std::size_t>(width_))};
}

Cell OccupancyGrid::cell_of(const Point& p) const {
  return {static_cast<int>(std::floor((p.x - origin_.x) / resolution_)),
          static_cast<int>(std::floor((p.y - origin_.y) / resolution_))};
}

Point OccupancyGrid::center(Cell c) const {
  return {origin_.x + (c.x + 0.5) * resolution_, origin_.y + (c.y + 0.5) * resolution_};
}

std::size_t OccupancyGrid::free_count() const {
  return static_cast<std::size_t>(std::count(occupied_.begin(), occupied_.end(), std::uint8_t{0}));
}

std::string OccupancyGrid::render() const {
  std::string out;
  for (int y = height_ - 1; y >= 0; --y) {
    for (int x = 0; x < width_; ++x) out += free({x, y}) ? '.' : '#';
    out += '\n';
  }
  return out;
}

OccupancyGrid OccupancyGrid::from_ascii(const std::vector<std::string>& rows, double resolution, Point origin) {
  if (rows.empty() || rows.front().empty()) throw NavError(NavErrc::BadParams, "empty ascii grid");
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.front().size());
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  for (int r = 0; r < h; ++r) {
    if (static_cast<int>(rows[static_cast<std::size_t>(r)].size()) != w) {
      throw NavError(NavErrc::BadParams, "ragged ascii grid");
    }
    const int y = h - 1 - r;
    for (int x = 0; x < w; ++x) {
      occ[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
          rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(x)] == '#' ? 1 : 0;
    }
  }
  return OccupancyGrid(resolution, origin, w, h, std::move(occ));
}

OccupancyGrid build_grid_from_scene(const scene::SceneGraph& scene, const GridConfig& config) {
  if (!(config.resolution > 0.0) || config.inflation_radius < 0.0 || config.margin < 0.0) {
    throw NavError(NavErrc::BadParams, "resolution must be positive, inflation and margin non-negative");
  }
  std::vector<scene::Aabb> boxes;
  for (const auto& [id, node] : scene.objects()) {
    if (node.bbox) boxes.push_back(*node.bbox);
  }
  if (boxes.empty()) {
    if (!config.empty_room_fallback) throw NavError(NavErrc::NoFreeSpace, "scene has no boxes: " + scene.scene_id());
    const int n = static_cast<int>(std::ceil(config.fallback_extent / config.resolution));
    const double half = n * config.resolution / 2;
    return OccupancyGrid(config.resolution, {-half, -half}, n, n,
                         std::vector<std::uint8_t>(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0),
                         config.inflation_radius);
  }

  double floor_z = std::numeric_limits<double>::infinity();
  for (const auto& b : boxes) floor_z = std::min(floor_z, b.center.z - b.size.z / 2);
  double min_x = std::numeric_limits<double>::infinity(), min_y = min_x;
  double max_x = -min_x, max_y = -min_x;
  std::vector<Footprint> blocking;
  for (const auto& b : boxes) {
    const auto fp = Footprint::of(b);
    min_x = std::min(min_x, fp.min_x);
    min_y = std::min(min_y, fp.min_y);
    max_x = std::max(max_x, fp.max_x);
    max_y = std::max(max_y, fp.max_y);
    if (b.center.z - b.size.z / 2 - floor_z <= config.agent_height) blocking.push_back(fp);
  }
  const Point origin{min_x - config.margin, min_y - config.margin};
  const int w = std::max(1, static_cast<int>(std::ceil((max_x - min_x + 2 * config.margin) / config.resolution)));
  const int h = std::max(1, static_cast<int>(std::ceil((max_y - min_y + 2 * config.margin) / config.resolution)));
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Point c{origin.x + (x + 0.5) * config.resolution, origin.y + (y + 0.5) * config.resolution};
      for (const auto& fp : blocking) {
        if (fp.distance(c) <= config.inflation_radius) {
          occ[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = 1;
          break;
        }
      }
    }
  }
  return OccupancyGrid(config.resolution, origin, w, h, std::move(occ), config.inflation_radius);
}

double PathCount::cells() const { return straight + diagonal * std::sqrt(2.0); }

namespace {

constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};

bool can_move(const OccupancyGrid& g, Cell from, int k) {
  const Cell to{from.x + kDx[k], from.y + kDy[k]};
  if (!g.free(to)) return false;
  if (k < 4) return true;
  return g.free({from.x + kDx[k], from.y}) && g.free({from.x, from.y + kDy[k]});
}

}  // namespace

DistanceField::DistanceField(const OccupancyGrid& grid, const std::vector<Cell>& sources)
    : grid_(&grid), counts_(grid.size()), reached_(grid.size(), 0), parent_(grid.size(), -1) {
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  std::vector<double> best(grid.size(), std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> settled(grid.size(), 0);
  for (const auto& s : sources) {
    if (!grid.free(s)) continue;
    const auto i = grid.index(s);
    best[i] = 0.0;
    counts_[i] = {};
    parent_[i] = static_cast<std::int32_t>(i);
    queue.push({0.0, i});
  }
  while (!queue.empty()) {
    const auto [d, i] = queue.top();
    queue.pop();
    if (settled[i]) continue;
    settled[i] = 1;
    reached_[i] = 1;
    const Cell c = grid.cell_at(i);
    for (int k = 0; k < 8; ++k) {
      if (!can_move(grid, c, k)) continue;
      const auto j = grid.index({c.x + kDx[k], c.y + kDy[k]});
      if (settled[j]) continue;
      PathCount next = counts_[i];
      (k < 4 ? next.straight : next.diagonal) += 1;
      const double v = next.cells();
      if (v < best[j]) {
        best[j] = v;
        counts_[j] = next;
        parent_[j] = static_cast<std::int32_t>(i);
        queue.push({v, j});
      }
    }
  }
}

bool DistanceField::reachable(Cell c) const { return grid_->in_bounds(c) && reached_[grid_->index(c)] != 0; }

PathCount DistanceField::count(Cell c) const {
  if (!reachable(c)) throw NavError(NavErrc::Unreachable, "cell not connected to the sources");
  return counts_[grid_->index(c)];
}

double DistanceField::meters(Cell c) const { return grid_->resolution() * count(c).cells(); }

double DistanceField::meters(const Point& p) const {
  const Cell c = grid_->cell_of(p);
  const Point m = grid_->center(c);
  return std::hypot(p.x - m.x, p.y - m.y) + meters(c);
}

Cell DistanceField::downhill(Cell c) const {
  if (!reachable(c)) throw NavError(NavErrc::Unreachable, "cell not connected to the sources");
  return grid_->cell_at(static_cast<std::size_t>(parent_[grid_->index(c)]));
}

PathCount geodesic_cells(const OccupancyGrid& grid, Cell a, Cell b) {
  if (!grid.in_bounds(a) || !grid.in_bounds(b)) throw NavError(NavErrc::OutOfBounds, "point outside grid");
  if (!grid.free(a) || !grid.free(b)) throw NavError(NavErrc::Unreachable, "endpoint in occupied cell");
  return DistanceField(grid, {b}).count(a);
}

double geodesic(const OccupancyGrid& grid, const Point& a, const Point& b) {
  const Cell ca = grid.cell_of(a), cb = grid.cell_of(b);
  if (!grid.in_bounds(ca) || !grid.in_bounds(cb)) throw NavError(NavErrc::OutOfBounds, "point outside grid");
  if (!grid.free(ca) || !grid.free(cb)) throw NavError(NavErrc::Unreachable, "endpoint in occupied cell");
  if (ca == cb) return std::hypot(a.x - b.x, a.y - b.y);
  const Point ma = grid.center(ca), mb = grid.center(cb);
  return std::hypot(a.x - ma.x, a.y - ma.y) + grid.resolution() * geodesic_cells(grid, ca, cb).cells() +
         std::hypot(b.x - mb.x, b.y - mb.y);
}

std::vector<Cell> viewpoints(const OccupancyGrid& grid, const Footprint& target, double radius) {
  std::vector<Cell> out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Cell c = grid.cell_at(i);
    if (grid.free(c) && target.distance(grid.center(c)) <= radius) out.push_back(c);
  }
  return out;
}

std::vector<int> components(const OccupancyGrid& grid) {
  std::vector<int> label(grid.size(), -1);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (label[i] != -1 || !grid.free(grid.cell_at(i))) continue;
    label[i] = next;
    stack.push_back(i);
    while (!stack.empty()) {
      const Cell c = grid.cell_at(stack.back());
      stack.pop_back();
      for (int k = 0; k < 4; ++k) {
        const Cell n{c.x + kDx[k], c.y + kDy[k]};
        if (!grid.free(n)) continue;
        const auto j = grid.index(n);
        if (label[j] == -1) {
          label[j] = next;
          stack.push_back(j);
        }
      }
    }
    ++next;
  }
  return label;
}

}  // namespace seqground::navsim
