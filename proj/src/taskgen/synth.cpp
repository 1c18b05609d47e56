#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "seqground/taskgen.hpp"

namespace seqground::taskgen {

namespace {

struct Shape {
  std::string_view name;
  double sx, sy, sz;
};

// Categories that appear several times per scene; instances differ only by color.
constexpr std::array<Shape, 8> kRepeated = {{{"table", 1.2, 0.8, 0.75},
                                             {"chair", 0.5, 0.5, 0.9},
                                             {"cabinet", 0.9, 0.5, 1.2},
                                             {"sofa", 1.8, 0.9, 0.8},
                                             {"desk", 1.4, 0.7, 0.75},
                                             {"shelf", 1.0, 0.4, 1.6},
                                             {"nightstand", 0.5, 0.45, 0.6},
                                             {"stool", 0.4, 0.4, 0.6}}};

// Categories that appear once per scene.
constexpr std::array<Shape, 14> kUnique = {{{"cup", 0.1, 0.1, 0.12},
                                            {"plate", 0.25, 0.25, 0.03},
                                            {"remote", 0.2, 0.06, 0.03},
                                            {"towel", 0.4, 0.3, 0.05},
                                            {"lamp", 0.3, 0.3, 0.5},
                                            {"book", 0.25, 0.18, 0.04},
                                            {"pillow", 0.5, 0.35, 0.15},
                                            {"kettle", 0.25, 0.2, 0.25},
                                            {"vase", 0.2, 0.2, 0.35},
                                            {"laptop", 0.35, 0.25, 0.03},
                                            {"bottle", 0.08, 0.08, 0.3},
                                            {"basket", 0.45, 0.35, 0.3},
                                            {"plant", 0.4, 0.4, 0.8},
                                            {"clock", 0.3, 0.08, 0.3}}};

constexpr std::array<std::string_view, 8> kColors = {"red",   "blue",  "green", "white",
                                                     "black", "brown", "yellow", "grey"};
constexpr std::array<std::string_view, 4> kMaterials = {"wooden", "metal", "plastic", "leather"};
constexpr std::array<std::string_view, 6> kItemTraits = {"small", "large", "round", "square", "old", "shiny"};

constexpr std::array<std::string_view, 4> kApproach = {"Walk to the", "Go to the", "Head to the", "Approach the"};
constexpr std::array<std::string_view, 4> kPick = {"Pick up the", "Grab the", "Take the", "Fetch the"};
constexpr std::array<std::string_view, 3> kCarry = {"Bring it to the", "Carry it over to the", "Take it to the"};
constexpr std::array<std::string_view, 4> kReturn = {"Go back to the", "Return to the", "Walk back to the",
                                                     "Head back to the"};
constexpr std::array<std::string_view, 3> kPlace = {"Put it down here.", "Place it here.", "Leave it here."};
constexpr std::array<std::string_view, 3> kGoal = {"Use the {item} at the {cat}.", "Bring the {item} over to the {cat}.",
                                                   "Tidy up the {item} near the {cat}."};

struct Placed {
  std::string id;
  std::string category;
  std::string color;
  scene::Aabb box;
};

template <typename T, std::size_t N>
const T& pick(const std::array<T, N>& items, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, N - 1);
  return items[dist(rng)];
}

std::string fill(std::string_view pattern, const std::string& item, const std::string& cat) {
  std::string out(pattern);
  out.replace(out.find("{item}"), 6, item);
  out.replace(out.find("{cat}"), 5, cat);
  return out;
}

bool overlaps(const scene::Aabb& a, const scene::Aabb& b, double gap) {
  return std::abs(a.center.x - b.center.x) < (a.size.x + b.size.x) / 2 + gap &&
         std::abs(a.center.y - b.center.y) < (a.size.y + b.size.y) / 2 + gap;
}

}  // namespace

SynthCorpus synth_context_corpus(const SynthConfig& config) {
  if (config.min_distractors < 2 || config.max_distractors > 5 ||
      config.min_distractors > config.max_distractors) {
    throw TaskgenError(TaskgenErrc::BadConfig, "distractor range must lie within [2, 5]");
  }
  if (config.n_scenes <= 0 || config.tasks_per_scene <= 0 || config.room_size < 4.0) {
    throw TaskgenError(TaskgenErrc::BadConfig, "n_scenes and tasks_per_scene must be positive, room >= 4 m");
  }

  SynthCorpus corpus;
  for (int s = 0; s < config.n_scenes; ++s) {
    std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(s)));
    const std::string scene_id = "synth" + std::to_string(config.seed) + "-" + std::to_string(s);

    // Two repeated categories and four unique ones.
    std::array<std::size_t, kRepeated.size()> rep_order{};
    for (std::size_t i = 0; i < rep_order.size(); ++i) rep_order[i] = i;
    std::shuffle(rep_order.begin(), rep_order.end(), rng);
    std::array<std::size_t, kUnique.size()> uni_order{};
    for (std::size_t i = 0; i < uni_order.size(); ++i) uni_order[i] = i;
    std::shuffle(uni_order.begin(), uni_order.end(), rng);

    struct Spec {
      const Shape* shape;
      std::string color;
      std::string caption;
    };
    std::vector<Spec> specs;
    std::uniform_int_distribution<int> count_dist(config.min_distractors, config.max_distractors);
    for (int r = 0; r < 2; ++r) {
      const auto& shape = kRepeated[rep_order[static_cast<std::size_t>(r)]];
      const int count = count_dist(rng);
      auto colors = kColors;
      std::shuffle(colors.begin(), colors.end(), rng);
      const auto& material = pick(kMaterials, rng);
      for (int k = 0; k < count; ++k) {
        const std::string color(colors[static_cast<std::size_t>(k)]);
        specs.push_back({&shape, color,
                         "A " + color + " " + std::string(material) + " " + std::string(shape.name) + "."});
      }
    }
    for (int u = 0; u < 4; ++u) {
      const auto& shape = kUnique[uni_order[static_cast<std::size_t>(u)]];
      specs.push_back({&shape, "", "A " + std::string(pick(kItemTraits, rng)) + " " + std::string(shape.name) + "."});
    }

    // Instance numbers are a random permutation so ids carry no ordering signal.
    std::vector<int> numbers(specs.size());
    for (std::size_t i = 0; i < numbers.size(); ++i) numbers[i] = static_cast<int>(i) + 1;
    std::shuffle(numbers.begin(), numbers.end(), rng);

    // Rejection sampling; a dead end restarts the whole layout.
    std::vector<Placed> placed;
    std::uniform_real_distribution<double> coord(0.0, 1.0);
    std::uniform_int_distribution<int> quarter(0, 1);
    bool laid_out = false;
    for (int layout = 0; layout < 100 && !laid_out; ++layout) {
      placed.clear();
      laid_out = true;
      for (std::size_t i = 0; i < specs.size() && laid_out; ++i) {
        const auto& spec = specs[i];
        scene::Aabb box;
        const bool rotated = quarter(rng) == 1;
        box.size = {rotated ? spec.shape->sy : spec.shape->sx, rotated ? spec.shape->sx : spec.shape->sy,
                    spec.shape->sz};
        bool ok = false;
        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
          const double margin = 0.5;
          box.center.x = margin + box.size.x / 2 + coord(rng) * (config.room_size - 2 * margin - box.size.x);
          box.center.y = margin + box.size.y / 2 + coord(rng) * (config.room_size - 2 * margin - box.size.y);
          box.center.z = box.size.z / 2;
          ok = std::none_of(placed.begin(), placed.end(),
                            [&](const Placed& p) { return overlaps(p.box, box, 0.8); });
        }
        if (!ok) {
          laid_out = false;
          break;
        }
        placed.push_back(Placed{std::string(spec.shape->name) + "-" + std::to_string(numbers[i]),
                                std::string(spec.shape->name), spec.color, box});
      }
    }
    if (!laid_out) throw TaskgenError(TaskgenErrc::BadConfig, "room too small to place objects");

    std::map<std::string, scene::ObjectNode> nodes;
    for (std::size_t i = 0; i < placed.size(); ++i) {
      const auto& p = placed[i];
      scene::ObjectNode node;
      node.id = p.id;
      node.category = p.category;
      node.instance_number = numbers[i];
      node.caption = specs[i].caption;
      node.bbox = p.box;
      std::size_t nearest = i;
      double best = 1e18;
      for (std::size_t j = 0; j < placed.size(); ++j) {
        if (j == i) continue;
        const double d = scene::euclidean_center_distance(p.box.center, placed[j].box.center);
        if (d < best) {
          best = d;
          nearest = j;
        }
      }
      if (nearest != i) node.relations.push_back({"near", placed[nearest].id});
      nodes.emplace(node.id, std::move(node));
    }
    corpus.scenes.emplace_back(scene_id, "synthetic", std::move(nodes));

    // Tasks.
    std::vector<std::vector<const Placed*>> repeated(2);
    std::vector<const Placed*> unique;
    for (const auto& p : placed) {
      if (p.category == kRepeated[rep_order[0]].name) {
        repeated[0].push_back(&p);
      } else if (p.category == kRepeated[rep_order[1]].name) {
        repeated[1].push_back(&p);
      } else {
        unique.push_back(&p);
      }
    }
    for (int q = 0; q < config.tasks_per_scene; ++q) {
      const auto& group = repeated[static_cast<std::size_t>(q % 2)];
      std::uniform_int_distribution<std::size_t> which(0, group.size() - 1);
      const Placed& target = *group[which(rng)];
      auto items = unique;
      std::shuffle(items.begin(), items.end(), rng);
      const Placed& item1 = *items[0];
      const Placed& item2 = *items[1];
      const std::string& cat = target.category;

      Task task;
      task.task_id = scene_id + "_" + std::to_string(q);
      task.scene_id = scene_id;
      task.description = fill(pick(kGoal, rng), item1.category, cat);
      auto add = [&](std::string text, const Placed& obj) {
        task.steps.push_back(TaskStep{static_cast<int>(task.steps.size()) + 1, std::move(text), obj.id});
      };
      auto add_return = [&] {
        add(std::string(pick(kReturn, rng)) + " " + cat + ".", target);
        task.ambiguous_steps.push_back(static_cast<int>(task.steps.size()));
      };
      std::uniform_int_distribution<int> coin(0, 1);
      if (coin(rng) == 0) {
        add(std::string(pick(kApproach, rng)) + " " + target.color + " " + cat + ".", target);
        add(std::string(pick(kPick, rng)) + " " + item1.category + ".", item1);
        if (coin(rng) == 1) add(std::string(pick(kCarry, rng)) + " " + item2.category + ".", item2);
        add_return();
        if (coin(rng) == 1) add(std::string(pick(kPlace, rng)), target);
      } else {
        add(std::string(pick(kPick, rng)) + " " + item1.category + ".", item1);
        add(std::string(pick(kApproach, rng)) + " " + target.color + " " + cat + ".", target);
        add(std::string(pick(kPlace, rng)), target);
        add(std::string(pick(kPick, rng)) + " " + item2.category + ".", item2);
        add_return();
      }
      corpus.tasks.push_back(std::move(task));
    }
  }
  return corpus;
}

}  // namespace seqground::taskgen
