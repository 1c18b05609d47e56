#include <algorithm>
#include <cmath>
#include <set>

#include "seqground/navsim.hpp"

namespace seqground::navsim {

std::string_view to_string(AgentKind k) {
  switch (k) {
    case AgentKind::Oracle: return "oracle";
    case AgentKind::Random: return "random";
    case AgentKind::ModularMemory: return "modular";
  }
  return "unknown";
}

AgentKind agent_kind_from_string(std::string_view name) {
  if (name == "oracle") return AgentKind::Oracle;
  if (name == "random") return AgentKind::Random;
  if (name == "modular") return AgentKind::ModularMemory;
  throw NavError(NavErrc::BadParams, "unknown agent: " + std::string(name));
}

namespace {

std::function<bool(const Point&)> reach(const Footprint& fp) {
  return [fp](const Point& p) { return fp.distance(p) <= kSuccessRadius; };
}

// Walks the gold path to each target and stops.
class OracleAgent : public Agent {
 public:
  void begin_episode(const EpisodeContext& ctx) override {
    ctx_ = ctx;
    planned_for_ = static_cast<std::size_t>(-1);
  }

  NavAction act(const Observation& obs) override {
    if (planned_for_ != obs.step_index || obs.collided) {
      planned_for_ = obs.step_index;
      plan_ = plan_actions(*ctx_.grid, obs.pose, reach(ctx_.episode->targets.at(obs.step_index).footprint))
                  .value_or(std::vector<NavAction>{});
      cursor_ = 0;
    }
    return cursor_ < plan_.size() ? plan_[cursor_++] : NavAction::Stop;
  }

 private:
  EpisodeContext ctx_;
  std::size_t planned_for_ = static_cast<std::size_t>(-1);
  std::vector<NavAction> plan_;
  std::size_t cursor_ = 0;
};

class RandomAgent : public Agent {
 public:
  explicit RandomAgent(std::uint64_t seed) : seed_(seed) {}
  void begin_episode(const EpisodeContext& ctx) override {
    rng_.seed(mix_seed(seed_, fnv1a64(ctx.episode->episode_id)));
  }
  NavAction act(const Observation&) override {
    std::uniform_int_distribution<int> pick(0, 3);
    return static_cast<NavAction>(pick(rng_));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 rng_;
};

// Frontier exploration that records objects it passes, then per step heads for the stored
// object whose text embedding best matches the step.
class ModularMemoryAgent : public Agent {
 public:
  explicit ModularMemoryAgent(AgentParams p) : params_(p) {}

  void begin_episode(const EpisodeContext& ctx) override {
    ctx_ = ctx;
    memory_.clear();
    selections_.clear();
    seen_.assign(ctx.grid->size(), 0);
    blacklist_.clear();
    mode_ = Mode::Decide;
    step_ = static_cast<std::size_t>(-1);
  }

  NavAction act(const Observation& obs) override {
    const bool grew = sense(obs.pose);
    if (obs.step_index != step_) {
      step_ = obs.step_index;
      mode_ = Mode::Decide;
      explore_attempts_ = 0;
    }
    if (mode_ == Mode::Goto) {
      if (!obs.collided && cursor_ < plan_.size()) return plan_[cursor_++];
      if (cursor_ >= plan_.size()) return finish();
      return go_to(obs.pose);  // bumped: replan to the same object
    }
    if (mode_ == Mode::Explore && !grew && !obs.collided && cursor_ < plan_.size()) return plan_[cursor_++];

    const auto [best, score] = best_match(obs);
    if (best && score >= params_.match_threshold) {
      choice_ = *best;
      return go_to(obs.pose);
    }
    if (auto a = explore(obs.pose)) return *a;
    // Nothing left to explore: fall back on the earlier choice when context allows it.
    if (ctx_.use_context && !selections_.empty() && score < params_.match_threshold) {
      choice_ = selections_.back();
      return go_to(obs.pose);
    }
    if (!best) return NavAction::Stop;
    choice_ = *best;
    return go_to(obs.pose);
  }

 private:
  enum class Mode { Decide, Explore, Goto };
  struct Entry {
    std::string id;
    std::vector<double> embedding;
    Footprint footprint;
  };

  bool sense(const AgentPose& pose) {
    const auto& grid = *ctx_.grid;
    const double r = params_.sensing_radius;
    const Cell lo = grid.cell_of({pose.x - r, pose.y - r}), hi = grid.cell_of({pose.x + r, pose.y + r});
    for (int y = std::max(0, lo.y); y <= std::min(grid.height() - 1, hi.y); ++y) {
      for (int x = std::max(0, lo.x); x <= std::min(grid.width() - 1, hi.x); ++x) {
        const Point c = grid.center({x, y});
        if (std::hypot(c.x - pose.x, c.y - pose.y) <= r) seen_[grid.index({x, y})] = 1;
      }
    }
    bool grew = false;
    for (const auto& [id, node] : ctx_.scene->objects()) {
      if (!node.bbox) continue;
      const auto fp = Footprint::of(*node.bbox);
      if (fp.distance(pose.point()) > r) continue;
      if (std::any_of(memory_.begin(), memory_.end(), [&](const Entry& e) { return e.id == id; })) continue;
      memory_.push_back({id, text_embedding(node.category + " " + node.caption, params_.embed_dim), fp});
      grew = true;
    }
    return grew;
  }

  std::pair<std::optional<std::string>, double> best_match(const Observation& obs) const {
    const auto query = text_embedding(obs.task->steps.at(obs.step_index).instruction, params_.embed_dim);
    std::optional<std::string> best;
    double best_rank = -1.0, best_score = 0.0;
    for (const auto& e : memory_) {
      const double s = cosine(query, e.embedding);
      // Context: earlier choices win ties among equally worded candidates.
      const bool earlier = ctx_.use_context &&
                           std::find(selections_.begin(), selections_.end(), e.id) != selections_.end();
      const double rank = s + (earlier ? 1e-3 : 0.0);
      if (rank > best_rank || (rank == best_rank && best && e.id < *best)) {
        best = e.id;
        best_rank = rank;
        best_score = s;
      }
    }
    return {best, best_score};
  }

  const Entry& entry(const std::string& id) const {
    return *std::find_if(memory_.begin(), memory_.end(), [&](const Entry& e) { return e.id == id; });
  }

  NavAction go_to(const AgentPose& pose) {
    mode_ = Mode::Goto;
    auto plan = plan_actions(*ctx_.grid, pose, reach(entry(choice_).footprint));
    plan_ = plan.value_or(std::vector<NavAction>{});
    cursor_ = 0;
    if (!plan || plan_.empty()) return finish();
    return plan_[cursor_++];
  }

  NavAction finish() {
    selections_.push_back(choice_);
    mode_ = Mode::Decide;
    return NavAction::Stop;
  }

  std::optional<NavAction> explore(const AgentPose& pose) {
    const auto& grid = *ctx_.grid;
    while (explore_attempts_ < 8) {
      const Cell here = grid.cell_of(pose.point());
      if (!grid.free(here)) return std::nullopt;
      const DistanceField field(grid, {here});
      std::optional<Cell> target;
      double nearest = 0.0;
      for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!seen_[i] || blacklist_.count(i)) continue;
        const Cell c = grid.cell_at(i);
        if (!grid.free(c) || !field.reachable(c) || !frontier(c)) continue;
        const double d = field.meters(c);
        if (!target || d < nearest) {
          target = c;
          nearest = d;
        }
      }
      if (!target) return std::nullopt;
      blacklist_.insert(grid.index(*target));
      ++explore_attempts_;
      const Point goal = grid.center(*target);
      auto plan = plan_actions(grid, pose, [goal](const Point& p) {
        return std::hypot(p.x - goal.x, p.y - goal.y) <= kForwardStep;
      });
      if (!plan || plan->empty()) continue;
      explore_attempts_ = 0;
      mode_ = Mode::Explore;
      plan_ = std::move(*plan);
      cursor_ = 0;
      return plan_[cursor_++];
    }
    return std::nullopt;
  }

  bool frontier(Cell c) const {
    const auto& grid = *ctx_.grid;
    constexpr int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const Cell n{c.x + dx[k], c.y + dy[k]};
      if (grid.in_bounds(n) && !seen_[grid.index(n)]) return true;
    }
    return false;
  }

  AgentParams params_;
  EpisodeContext ctx_;
  std::vector<Entry> memory_;
  std::vector<std::string> selections_;
  std::vector<std::uint8_t> seen_;
  std::set<std::size_t> blacklist_;
  Mode mode_ = Mode::Decide;
  std::size_t step_ = static_cast<std::size_t>(-1);
  std::string choice_;
  std::vector<NavAction> plan_;
  std::size_t cursor_ = 0;
  int explore_attempts_ = 0;
};

}  // namespace

std::unique_ptr<Agent> make_agent(AgentKind kind, const AgentParams& params) {
  if (!(params.sensing_radius > 0.0) || params.embed_dim <= 0 || params.match_threshold < -1.0 ||
      params.match_threshold > 1.0) {
    throw NavError(NavErrc::BadParams, "sensing radius and embedding width must be positive, threshold in [-1, 1]");
  }
  switch (kind) {
    case AgentKind::Oracle: return std::make_unique<OracleAgent>();
    case AgentKind::Random: return std::make_unique<RandomAgent>(params.seed);
    case AgentKind::ModularMemory: return std::make_unique<ModularMemoryAgent>(params);
  }
  throw NavError(NavErrc::BadParams, "unknown agent kind");
}

}  // namespace seqground::navsim
