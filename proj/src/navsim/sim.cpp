#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>

#include "seqground/navsim.hpp"

namespace seqground::navsim {

std::string_view to_string(NavAction a) {
  switch (a) {
    case NavAction::MoveForward: return "MoveForward";
    case NavAction::TurnLeft: return "TurnLeft";
    case NavAction::TurnRight: return "TurnRight";
    case NavAction::Stop: return "Stop";
  }
  return "Unknown";
}

namespace {

Point forward_vector(int heading) {
  const double rad = heading * std::numbers::pi / 180.0;
  return {std::cos(rad), -std::sin(rad)};
}

// Sampled sweep; consecutive samples may change cell only to a neighbour, and a diagonal
// change must not squeeze between two occupied side cells.
bool sweep_clear(const OccupancyGrid& grid, const Point& from, const Point& to) {
  const double len = std::hypot(to.x - from.x, to.y - from.y);
  const int n = std::max(1, static_cast<int>(std::ceil(len / (grid.resolution() / 4))));
  Cell prev = grid.cell_of(from);
  if (!grid.free(prev)) return false;
  for (int k = 1; k <= n; ++k) {
    const double t = static_cast<double>(k) / n;
    const Cell c = grid.cell_of({from.x + t * (to.x - from.x), from.y + t * (to.y - from.y)});
    if (!grid.free(c)) return false;
    const int dx = c.x - prev.x, dy = c.y - prev.y;
    if (std::abs(dx) > 1 || std::abs(dy) > 1) return false;
    if (dx != 0 && dy != 0 && !(grid.free({prev.x + dx, prev.y}) && grid.free({prev.x, prev.y + dy}))) return false;
    prev = c;
  }
  return true;
}

}  // namespace

SimStep step_sim(const OccupancyGrid& grid, const AgentPose& pose, NavAction action) {
  SimStep out{pose, false, 0.0};
  switch (action) {
    case NavAction::TurnLeft: out.pose.heading = (pose.heading + 360 - kTurnDegrees) % 360; break;
    case NavAction::TurnRight: out.pose.heading = (pose.heading + kTurnDegrees) % 360; break;
    case NavAction::Stop: break;
    case NavAction::MoveForward: {
      const Point f = forward_vector(pose.heading);
      const Point to{pose.x + kForwardStep * f.x, pose.y + kForwardStep * f.y};
      if (sweep_clear(grid, pose.point(), to)) {
        out.pose.x = to.x;
        out.pose.y = to.y;
        out.translated = kForwardStep;
      } else {
        out.collided = true;
      }
      break;
    }
  }
  return out;
}

std::optional<std::vector<NavAction>> plan_actions(const OccupancyGrid& grid, const AgentPose& pose,
                                                   const std::function<bool(const Point&)>& goal) {
  if (goal(pose.point())) return std::vector<NavAction>{};
  if (!grid.free_at(pose.point())) return std::nullopt;
  // Lattice of half cells x 12 headings. Each state remembers the exact pose that first
  // reached it at its final cost, so replaying the actions reproduces the poses bit for bit.
  const double q = grid.resolution() / 2;
  const int w = grid.width() * 2, h = grid.height() * 2;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 12;
  auto key = [&](const AgentPose& p) -> std::optional<std::size_t> {
    const int ix = static_cast<int>(std::floor((p.x - grid.origin().x) / q));
    const int iy = static_cast<int>(std::floor((p.y - grid.origin().y) / q));
    if (ix < 0 || iy < 0 || ix >= w || iy >= h) return std::nullopt;
    return (static_cast<std::size_t>(iy) * static_cast<std::size_t>(w) + static_cast<std::size_t>(ix)) * 12 +
           static_cast<std::size_t>(p.heading / kTurnDegrees);
  };
  constexpr std::int64_t kForwardCost = 1000, kTurnCost = 1;
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max();
  std::vector<std::int64_t> cost(n, kInf);
  std::vector<AgentPose> poses(n);
  std::vector<std::size_t> parent(n, n);
  std::vector<NavAction> via(n, NavAction::Stop);
  std::vector<std::uint8_t> settled(n, 0);
  using Entry = std::pair<std::int64_t, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  const auto start = key(pose);
  if (!start) return std::nullopt;
  cost[*start] = 0;
  poses[*start] = pose;
  queue.push({0, *start});
  constexpr std::array<NavAction, 3> kMoves = {NavAction::MoveForward, NavAction::TurnLeft, NavAction::TurnRight};
  while (!queue.empty()) {
    const auto [c, s] = queue.top();
    queue.pop();
    if (settled[s]) continue;
    settled[s] = 1;
    if (goal(poses[s].point())) {
      std::vector<NavAction> plan;
      for (std::size_t at = s; at != *start; at = parent[at]) plan.push_back(via[at]);
      std::reverse(plan.begin(), plan.end());
      return plan;
    }
    for (NavAction a : kMoves) {
      const SimStep next = step_sim(grid, poses[s], a);
      if (next.collided) continue;
      const auto t = key(next.pose);
      if (!t || settled[*t]) continue;
      const std::int64_t nc = c + (a == NavAction::MoveForward ? kForwardCost : kTurnCost);
      if (nc < cost[*t]) {
        cost[*t] = nc;
        poses[*t] = next.pose;
        parent[*t] = s;
        via[*t] = a;
        queue.push({nc, *t});
      }
    }
  }
  return std::nullopt;
}

double step_geodesic(const OccupancyGrid& grid, const Point& p, const Footprint& target) {
  if (target.distance(p) <= kSuccessRadius) return kSuccessRadius;
  return DistanceField(grid, viewpoints(grid, target)).meters(p);
}

std::vector<StepTarget> step_targets(const scene::SceneGraph& scene, const taskgen::Task& task) {
  std::vector<StepTarget> out;
  for (const auto& step : task.steps) {
    const auto* node = scene.find(step.target_id);
    if (node && node->bbox) {
      out.push_back({step.target_id, Footprint::of(*node->bbox), {node->bbox->center.x, node->bbox->center.y}, false});
    } else if (out.empty()) {
      throw NavError(NavErrc::UnreachableTarget,
                     task.task_id + ": first step target has no box in scene: " + step.target_id);
    } else {
      StepTarget prev = out.back();
      prev.inherited = true;
      out.push_back(prev);
    }
  }
  if (out.empty()) throw NavError(NavErrc::UnreachableTarget, task.task_id + ": task has no steps");
  return out;
}

Episode sample_episode(const scene::SceneGraph& scene, const taskgen::Task& task, const OccupancyGrid& grid,
                       std::uint64_t seed, int index, double min_geodesic, double max_geodesic) {
  Episode ep;
  ep.scene_id = scene.scene_id();
  ep.task = task;
  ep.seed = seed;
  ep.episode_id = task.task_id + "/ep" + std::to_string(index);
  ep.targets = step_targets(scene, task);

  const auto labels = components(grid);
  std::vector<int> allowed;  // components holding a viewpoint of every target
  bool first = true;
  std::vector<Cell> first_views;
  for (const auto& t : ep.targets) {
    const auto views = viewpoints(grid, t.footprint);
    if (views.empty()) {
      throw NavError(NavErrc::UnreachableTarget, ep.episode_id + ": no free viewpoint near " + t.target_id);
    }
    std::vector<int> here;
    for (const auto& c : views) here.push_back(labels[grid.index(c)]);
    std::sort(here.begin(), here.end());
    here.erase(std::unique(here.begin(), here.end()), here.end());
    if (first) {
      allowed = here;
      first_views = views;
      first = false;
    } else {
      std::vector<int> both;
      std::set_intersection(allowed.begin(), allowed.end(), here.begin(), here.end(), std::back_inserter(both));
      allowed = std::move(both);
    }
  }
  if (allowed.empty()) {
    throw NavError(NavErrc::UnreachableTarget, ep.episode_id + ": targets lie in disconnected free space");
  }

  const DistanceField field(grid, first_views);
  std::vector<Cell> candidates;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Cell c = grid.cell_at(i);
    if (!grid.free(c) || !field.reachable(c)) continue;
    if (!std::binary_search(allowed.begin(), allowed.end(), labels[i])) continue;
    const double d = field.meters(c);
    if (d >= min_geodesic && d <= max_geodesic) candidates.push_back(c);
  }
  if (candidates.empty()) throw NavError(NavErrc::NoValidStart, ep.episode_id + ": no start cell in range");

  std::mt19937_64 rng(mix_seed(seed, fnv1a64(ep.episode_id)));
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  std::uniform_int_distribution<int> turn(0, 360 / kTurnDegrees - 1);
  const Point at = grid.center(candidates[pick(rng)]);
  ep.start = {at.x, at.y, turn(rng) * kTurnDegrees};
  return ep;
}

json Episode::to_json() const {
  return {{"episode_id", episode_id},
          {"scene_id", scene_id},
          {"task_id", task.task_id},
          {"start", {{"x", start.x}, {"y", start.y}, {"heading", start.heading}}},
          {"seed", seed}};
}

Episode Episode::from_json(const json& doc, const taskgen::Task& task, const scene::SceneGraph& scene) {
  Episode ep;
  try {
    ep.episode_id = doc.at("episode_id").get<std::string>();
    ep.scene_id = doc.at("scene_id").get<std::string>();
    const auto& s = doc.at("start");
    ep.start = {s.at("x").get<double>(), s.at("y").get<double>(), s.at("heading").get<int>()};
    ep.seed = doc.value("seed", std::uint64_t{0});
    if (doc.at("task_id").get<std::string>() != task.task_id) {
      throw NavError(NavErrc::MalformedInput, ep.episode_id + ": task id does not match");
    }
  } catch (const json::exception& e) {
    throw NavError(NavErrc::MalformedInput, std::string("episode record: ") + e.what());
  }
  if (ep.start.heading < 0 || ep.start.heading >= 360 || ep.start.heading % kTurnDegrees != 0) {
    throw NavError(NavErrc::MalformedInput, ep.episode_id + ": heading must be a multiple of 30 in [0, 330]");
  }
  ep.task = task;
  ep.targets = step_targets(scene, task);
  return ep;
}

std::vector<json> TrajectoryLog::to_records() const {
  std::vector<json> out;
  for (const auto& s : steps) {
    out.push_back({{"episode_id", episode_id},
                   {"scene_id", scene_id},
                   {"step_index", s.step_index + 1},
                   {"S", s.success ? 1 : 0},
                   {"p", s.path_length},
                   {"l", s.geodesic},
                   {"timesteps", s.timesteps}});
  }
  return out;
}

bool TrajectoryLog::task_success() const {
  return !steps.empty() && std::all_of(steps.begin(), steps.end(), [](const StepLog& s) { return s.success; });
}

namespace {

double safe_geodesic(const OccupancyGrid& grid, const Point& p, const Footprint& fp) {
  try {
    return step_geodesic(grid, p, fp);
  } catch (const NavError&) {
    // Not reachable from here; the straight-line gap is the best available reference.
    return std::max(kSuccessRadius, fp.distance(p));
  }
}

}  // namespace

TrajectoryLog run_agent(const Episode& episode, const scene::SceneGraph& scene, const OccupancyGrid& grid,
                        Agent& agent, bool use_context) {
  if (!grid.free_at(episode.start.point())) {
    throw NavError(NavErrc::MalformedInput, episode.episode_id + ": start pose is not in free space");
  }
  TrajectoryLog log;
  log.episode_id = episode.episode_id;
  log.scene_id = episode.scene_id;
  const EpisodeContext ctx{&grid, &scene, &episode, use_context};
  try {
    agent.begin_episode(ctx);
  } catch (const std::exception& e) {
    throw NavError(NavErrc::AgentFault, episode.episode_id + ": " + e.what());
  }
  AgentPose pose = episode.start;
  bool collided = false;
  for (std::size_t i = 0; i < episode.targets.size(); ++i) {
    const auto& fp = episode.targets[i].footprint;
    StepLog step;
    step.step_index = i;
    step.geodesic = safe_geodesic(grid, pose.point(), fp);
    while (!log.budget_exhausted) {
      if (log.timesteps >= episode.budget) {
        log.budget_exhausted = true;
        break;
      }
      NavAction action;
      try {
        action = agent.act({pose, i, &episode.task, collided, log.timesteps});
      } catch (const std::exception& e) {
        throw NavError(NavErrc::AgentFault, episode.episode_id + ": " + e.what());
      }
      ++log.timesteps;
      ++step.timesteps;
      step.actions.push_back(action);
      if (action == NavAction::Stop) {
        step.success = fp.distance(pose.point()) <= kSuccessRadius;
        break;
      }
      const SimStep next = step_sim(grid, pose, action);
      pose = next.pose;
      collided = next.collided;
      step.path_length += next.translated;
    }
    log.steps.push_back(std::move(step));
  }
  return log;
}

namespace {

bool stopword(const std::string& w) {
  static const std::array<std::string_view, 16> kStop = {"a",  "an",  "the", "to",   "it",   "of", "on",   "at",
                                                         "in", "and", "with", "this", "that", "is", "here", "its"};
  return std::find(kStop.begin(), kStop.end(), w) != kStop.end();
}

}  // namespace

std::vector<double> text_embedding(std::string_view text, int dim) {
  if (dim <= 0) throw NavError(NavErrc::BadParams, "embedding width must be positive");
  std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
  for (const auto& w : word_tokens(text)) {
    if (!stopword(w)) v[fnv1a64(w) % static_cast<std::uint64_t>(dim)] += 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace seqground::navsim
