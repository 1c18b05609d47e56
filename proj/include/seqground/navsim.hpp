#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "seqground/common.hpp"
#include "seqground/error.hpp"
#include "seqground/scenegraph.hpp"
#include "seqground/taskgen.hpp"

namespace seqground::navsim {

enum class NavErrc { NoFreeSpace, Unreachable, OutOfBounds, NoValidStart, UnreachableTarget, AgentFault, BadParams,
                     MalformedInput };
constexpr std::string_view module_name(NavErrc) { return "navsim"; }
std::string_view to_string(NavErrc code);
using NavError = ModuleError<NavErrc>;

constexpr double kForwardStep = 0.25;
constexpr int kTurnDegrees = 30;
constexpr double kSuccessRadius = 1.0;
constexpr int kEpisodeBudget = 5000;

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Axis-aligned xy rectangle.
struct Footprint {
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
  static Footprint of(const scene::Aabb& box);
  double distance(const Point& p) const;  // 0 inside
  Point center() const { return {(min_x + max_x) / 2, (min_y + max_y) / 2}; }
  friend bool operator==(const Footprint&, const Footprint&) = default;
};

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct GridConfig {
  double resolution = 0.125;
  double inflation_radius = 0.20;  // agent radius
  double margin = 1.0;             // free border around the union of footprints
  double agent_height = 1.5;       // boxes whose bottom is above this do not block
  bool empty_room_fallback = false;
  double fallback_extent = 10.0;  // side of the empty room used by the fallback
};

/// Cell (x, y) covers [origin + x*res, origin + (x+1)*res) on each axis.
class OccupancyGrid {
 public:
  /// `occupied` is row-major, y-major: index = y * width + x. Throws NoFreeSpace, BadParams.
  OccupancyGrid(double resolution, Point origin, int width, int height, std::vector<std::uint8_t> occupied,
                double inflation_radius = 0.0);

  double resolution() const noexcept { return resolution_; }
  Point origin() const noexcept { return origin_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  double inflation_radius() const noexcept { return inflation_; }

  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  bool free(Cell c) const { return in_bounds(c) && occupied_[index(c)] == 0; }
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.y) * static_cast<std::size_t>(width_) + c.x; }
  Cell cell_at(std::size_t index) const;
  /// May be out of bounds.
  Cell cell_of(const Point& p) const;
  Point center(Cell c) const;
  bool free_at(const Point& p) const { return free(cell_of(p)); }
  std::size_t size() const { return occupied_.size(); }
  std::size_t free_count() const;

  /// ASCII rendering, '#' occupied, '.' free, top row = largest y.
  std::string render() const;
  /// Inverse of render(); rows top to bottom.
  static OccupancyGrid from_ascii(const std::vector<std::string>& rows, double resolution, Point origin = {});

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;

 private:
  double resolution_;
  Point origin_;
  int width_;
  int height_;
  std::vector<std::uint8_t> occupied_;
  double inflation_;
};

/// Footprints of boxed objects, inflated by the agent radius, become occupied.
OccupancyGrid build_grid_from_scene(const scene::SceneGraph& scene, const GridConfig& config = {});

/// Shortest 8-connected path in cell units: `straight` unit moves and `diagonal` moves.
/// Diagonals may not cut a corner (both side cells must be free).
struct PathCount {
  int straight = 0;
  int diagonal = 0;
  double cells() const;  // straight + diagonal * sqrt(2)
  friend bool operator==(const PathCount&, const PathCount&) = default;
};

/// Multi-source Dijkstra result over the whole grid.
class DistanceField {
 public:
  DistanceField(const OccupancyGrid& grid, const std::vector<Cell>& sources);

  bool reachable(Cell c) const;
  /// Throws Unreachable.
  PathCount count(Cell c) const;
  /// Meters from cell center to the nearest source. Throws Unreachable.
  double meters(Cell c) const;
  /// Point-level: offset to the point's cell center plus the cell distance.
  double meters(const Point& p) const;
  /// Next cell towards the sources (the cell itself when it is a source).
  Cell downhill(Cell c) const;

 private:
  const OccupancyGrid* grid_;
  std::vector<PathCount> counts_;
  std::vector<std::uint8_t> reached_;
  std::vector<std::int32_t> parent_;
};

/// Geodesic between points: straight-line when both fall in the same cell, otherwise
/// |a - center(a)| + cell path + |center(b) - b|. Throws OutOfBounds, Unreachable.
double geodesic(const OccupancyGrid& grid, const Point& a, const Point& b);
PathCount geodesic_cells(const OccupancyGrid& grid, Cell a, Cell b);

/// Free cells whose center lies within the success radius of the footprint.
std::vector<Cell> viewpoints(const OccupancyGrid& grid, const Footprint& target, double radius = kSuccessRadius);

/// 4-connected-safe components over free cells (same moves as the planner); -1 for occupied.
std::vector<int> components(const OccupancyGrid& grid);

/// Heading in degrees, multiple of 30 in [0, 330]. 0 faces +x; turning left decreases it,
/// so the forward vector is (cos h, -sin h).
struct AgentPose {
  double x = 0.0;
  double y = 0.0;
  int heading = 0;
  Point point() const { return {x, y}; }
  friend bool operator==(const AgentPose&, const AgentPose&) = default;
};

enum class NavAction { MoveForward, TurnLeft, TurnRight, Stop };
std::string_view to_string(NavAction a);

struct SimStep {
  AgentPose pose;
  bool collided = false;
  double translated = 0.0;
};

/// Turns always succeed; MoveForward leaves the pose unchanged when the swept segment
/// touches an occupied cell or cuts a corner. Stop changes nothing (success is judged by
/// the episode runner).
SimStep step_sim(const OccupancyGrid& grid, const AgentPose& pose, NavAction action);

struct StepTarget {
  std::string target_id;
  Footprint footprint;
  Point position;            // bbox center
  bool inherited = false;    // no scene object: reuses the previous target
  friend bool operator==(const StepTarget&, const StepTarget&) = default;
};

struct Episode {
  std::string episode_id;
  std::string scene_id;
  taskgen::Task task;
  AgentPose start;
  std::vector<StepTarget> targets;
  std::uint64_t seed = 0;
  int budget = kEpisodeBudget;

  /// File form: {episode_id, scene_id, task_id, start:{x,y,heading}, seed}.
  json to_json() const;
  /// Rebuilds targets from the task and scene. Throws MalformedInput, UnreachableTarget.
  static Episode from_json(const json& doc, const taskgen::Task& task, const scene::SceneGraph& scene);
  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Per-step targets for a task. Throws UnreachableTarget when the first step has no boxed object.
std::vector<StepTarget> step_targets(const scene::SceneGraph& scene, const taskgen::Task& task);

/// Start drawn uniformly from free cells with geodesic to the first target's viewpoints in
/// [min_geodesic, max_geodesic] and connected to every target's viewpoints.
/// Throws UnreachableTarget, NoValidStart.
Episode sample_episode(const scene::SceneGraph& scene, const taskgen::Task& task, const OccupancyGrid& grid,
                       std::uint64_t seed, int index = 0, double min_geodesic = 1.0, double max_geodesic = 30.0);

/// Geodesic from a point to a target's viewpoint set; the success radius when already
/// within it. Throws Unreachable.
double step_geodesic(const OccupancyGrid& grid, const Point& p, const Footprint& target);

struct Observation {
  AgentPose pose;
  std::size_t step_index = 0;  // 0-based
  const taskgen::Task* task = nullptr;
  bool collided = false;  // last action bumped
  int timestep = 0;
};

/// What an agent may read about the world: the map, the scene's object layout (for the
/// memory agent's sensing) and, for the oracle only, the gold targets.
struct EpisodeContext {
  const OccupancyGrid* grid = nullptr;
  const scene::SceneGraph* scene = nullptr;
  const Episode* episode = nullptr;
  bool use_context = true;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual void begin_episode(const EpisodeContext& ctx) = 0;
  virtual NavAction act(const Observation& obs) = 0;
};

enum class AgentKind { Oracle, Random, ModularMemory };
std::string_view to_string(AgentKind k);
AgentKind agent_kind_from_string(std::string_view name);  // "oracle" | "random" | "modular"; throws BadParams

struct AgentParams {
  std::uint64_t seed = 0;
  double sensing_radius = 2.0;       // memory agent: objects within this get recorded
  double match_threshold = 0.3;      // memory agent: explore while best similarity is below
  int embed_dim = 256;               // hashed bag-of-words width
};

/// Throws BadParams.
std::unique_ptr<Agent> make_agent(AgentKind kind, const AgentParams& params = {});

struct StepLog {
  std::size_t step_index = 0;  // 0-based
  bool success = false;
  double path_length = 0.0;
  double geodesic = 0.0;
  int timesteps = 0;
  std::vector<NavAction> actions;
  friend bool operator==(const StepLog&, const StepLog&) = default;
};

struct TrajectoryLog {
  std::string episode_id;
  std::string scene_id;
  std::vector<StepLog> steps;
  int timesteps = 0;
  bool budget_exhausted = false;

  /// One record per step: {episode_id, scene_id, step_index (1-based), S, p, l, timesteps}.
  std::vector<json> to_records() const;
  bool task_success() const;
  friend bool operator==(const TrajectoryLog&, const TrajectoryLog&) = default;
};

/// Runs the agent until every step has been stopped on or the budget is spent. A failed
/// Stop moves on to the next step from the current pose. Agent exceptions become AgentFault.
TrajectoryLog run_agent(const Episode& episode, const scene::SceneGraph& scene, const OccupancyGrid& grid,
                        Agent& agent, bool use_context = true);

/// Hashed bag-of-words embedding, L2-normalized (zero vector for empty text).
std::vector<double> text_embedding(std::string_view text, int dim);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

/// Minimum-forward-move action plan from `pose` until `goal` holds, searching poses on a
/// 1/2-cell lattice with the simulator's own kinematics. Empty optional when no plan exists.
std::optional<std::vector<NavAction>> plan_actions(const OccupancyGrid& grid, const AgentPose& pose,
                                                   const std::function<bool(const Point&)>& goal);

}  // namespace seqground::navsim
