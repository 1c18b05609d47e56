#include "seqground/scenegraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace seqground::scene {

std::string_view to_string(SceneErrc code) {
  switch (code) {
    case SceneErrc::MalformedDocument: return "MalformedDocument";
    case SceneErrc::DanglingRelation: return "DanglingRelation";
    case SceneErrc::BadId: return "BadId";
    case SceneErrc::DegenerateBox: return "DegenerateBox";
    case SceneErrc::EmptyCorpus: return "EmptyCorpus";
  }
  return "Unknown";
}

std::optional<ObjectId> parse_object_id(std::string_view id) {
  const auto dash = id.rfind('-');
  if (dash == std::string_view::npos || dash == 0 || dash + 1 >= id.size()) return std::nullopt;
  const auto digits = id.substr(dash + 1);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::nullopt;
  }
  if (digits.size() > 9 || digits.front() == '0') return std::nullopt;
  const auto category = id.substr(0, dash);
  if (trim(category) != category) return std::nullopt;
  int instance = 0;
  for (char c : digits) instance = instance * 10 + (c - '0');
  if (instance <= 0) return std::nullopt;
  return ObjectId{std::string(category), instance};
}

SceneGraph::SceneGraph(std::string scene_id, std::string source,
                       std::map<std::string, ObjectNode> objects)
    : scene_id_(std::move(scene_id)), source_(std::move(source)), objects_(std::move(objects)) {}

bool SceneGraph::contains(std::string_view id) const { return find(id) != nullptr; }

const ObjectNode* SceneGraph::find(std::string_view id) const {
  const auto it = objects_.find(std::string(id));
  return it == objects_.end() ? nullptr : &it->second;
}

const ObjectNode& SceneGraph::at(std::string_view id) const {
  if (const auto* node = find(id)) return *node;
  throw SceneError(SceneErrc::DanglingRelation,
                   "object '" + std::string(id) + "' not in scene " + scene_id_);
}

bool SceneGraph::has_boxes() const {
  return std::any_of(objects_.begin(), objects_.end(),
                     [](const auto& kv) { return kv.second.bbox.has_value(); });
}

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw SceneError(SceneErrc::MalformedDocument, what);
}

Vec3 parse_vec3(const json& value, const std::string& context) {
  if (!value.is_array() || value.size() != 3) malformed(context + ": expected [x, y, z]");
  Vec3 v;
  double* slots[3] = {&v.x, &v.y, &v.z};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!value[i].is_number()) malformed(context + ": non-numeric component");
    *slots[i] = value[i].get<double>();
    if (!std::isfinite(*slots[i])) malformed(context + ": non-finite component");
  }
  return v;
}

// The target is the longest known id that ends the phrase after a space.
Relation parse_relation(const std::string& text, const json& objects, const std::string& owner) {
  const std::string phrase = trim(text);
  const std::string* best = nullptr;
  for (const auto& [candidate, _] : objects.items()) {
    if (candidate.size() > phrase.size()) continue;
    if (phrase.compare(phrase.size() - candidate.size(), candidate.size(), candidate) != 0) continue;
    const auto boundary = phrase.size() - candidate.size();
    if (boundary != 0 && phrase[boundary - 1] != ' ') continue;
    if (best == nullptr || candidate.size() > best->size()) best = &candidate;
  }
  if (best == nullptr) {
    throw SceneError(SceneErrc::DanglingRelation,
                     "relation '" + phrase + "' of " + owner + " names no object in the scene");
  }
  return Relation{trim(phrase.substr(0, phrase.size() - best->size())), *best};
}

}  // namespace

SceneGraph load_scene_json(const json& document, std::string_view fallback_scene_id) {
  if (!document.is_object()) malformed("scene document must be an object map");
  std::string scene_id(fallback_scene_id);
  std::string source = "unknown";
  const json* objects = &document;
  if (document.contains("objects")) {
    objects = &document.at("objects");
    if (document.contains("scene_id")) {
      if (!document["scene_id"].is_string()) malformed("scene_id must be a string");
      scene_id = document["scene_id"].get<std::string>();
    }
    if (document.contains("source")) {
      if (!document["source"].is_string()) malformed("source must be a string");
      source = document["source"].get<std::string>();
    }
  }
  if (!objects->is_object()) malformed("objects must be an object map");
  if (objects->empty()) malformed("scene " + scene_id + " has no objects");

  std::map<std::string, ObjectNode> nodes;
  for (const auto& [id, entry] : objects->items()) {
    const auto parsed = parse_object_id(id);
    if (!parsed) throw SceneError(SceneErrc::BadId, "'" + id + "' is not <category>-<ID>");
    if (!entry.is_object()) malformed(id + ": entry must be an object");
    if (!entry.contains("caption") || !entry["caption"].is_string()) {
      malformed(id + ": missing string field 'caption'");
    }
    if (!entry.contains("relations") || !entry["relations"].is_array()) {
      malformed(id + ": missing list field 'relations'");
    }
    ObjectNode node;
    node.id = id;
    node.category = parsed->category;
    node.instance_number = parsed->instance;
    node.caption = entry["caption"].get<std::string>();
    for (const auto& rel : entry["relations"]) {
      if (!rel.is_string()) malformed(id + ": relations must be strings");
      node.relations.push_back(parse_relation(rel.get<std::string>(), *objects, id));
    }
    if (entry.contains("bbox") && !entry["bbox"].is_null()) {
      const auto& box = entry["bbox"];
      if (!box.is_object() || !box.contains("position") || !box.contains("size")) {
        malformed(id + ": bbox needs 'position' and 'size'");
      }
      Aabb aabb{parse_vec3(box["position"], id + ".bbox.position"),
                parse_vec3(box["size"], id + ".bbox.size")};
      if (aabb.size.x <= 0 || aabb.size.y <= 0 || aabb.size.z <= 0) {
        throw SceneError(SceneErrc::DegenerateBox, id + ": bbox size must be positive");
      }
      node.bbox = aabb;
    }
    nodes.emplace(id, std::move(node));
  }
  return SceneGraph(std::move(scene_id), std::move(source), std::move(nodes));
}

SceneGraph load_scene(std::string_view document, std::string_view fallback_scene_id) {
  json parsed;
  try {
    parsed = json::parse(document);
  } catch (const json::parse_error& e) {
    malformed(std::string("syntax: ") + e.what());
  }
  return load_scene_json(parsed, fallback_scene_id);
}

ordered_json scene_to_json(const SceneGraph& scene, bool include_bbox) {
  ordered_json objects = ordered_json::object();
  for (const auto& [id, node] : scene.objects()) {
    ordered_json entry;
    ordered_json relations = ordered_json::array();
    for (const auto& rel : node.relations) {
      relations.push_back(rel.predicate.empty() ? rel.target_id
                                                : rel.predicate + " " + rel.target_id);
    }
    entry["relations"] = std::move(relations);
    entry["caption"] = node.caption;
    if (include_bbox && node.bbox) {
      const auto& b = *node.bbox;
      entry["bbox"] = ordered_json{{"position", {b.center.x, b.center.y, b.center.z}},
                                   {"size", {b.size.x, b.size.y, b.size.z}}};
    }
    objects[id] = std::move(entry);
  }
  if (!include_bbox) return objects;
  ordered_json wrapped;
  wrapped["scene_id"] = scene.scene_id();
  wrapped["source"] = scene.source();
  wrapped["objects"] = std::move(objects);
  return wrapped;
}

std::string scene_to_prompt_graph(const SceneGraph& scene, bool include_bbox) {
  return scene_to_json(scene, include_bbox).dump();
}

std::vector<SceneGraph> load_corpus(const std::filesystem::path& path) {
  std::vector<SceneGraph> scenes;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      scenes.push_back(load_scene(read_text_file(file), file.stem().string()));
    }
    return scenes;
  }
  std::size_t line_no = 0;
  for (const auto& line : split_lines(read_text_file(path))) {
    ++line_no;
    if (trim(line).empty()) continue;
    scenes.push_back(load_scene(line, "scene-line-" + std::to_string(line_no)));
  }
  return scenes;
}

std::string corpus_to_jsonl(const std::vector<SceneGraph>& scenes) {
  std::string out;
  for (const auto& s : scenes) {
    out += scene_to_prompt_graph(s, true);
    out += '\n';
  }
  return out;
}

double euclidean_center_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double euclidean_center_distance(const ObjectNode& a, const ObjectNode& b) {
  if (!a.bbox || !b.bbox) {
    throw SceneError(SceneErrc::DegenerateBox, "distance needs boxes on " + a.id + " and " + b.id);
  }
  return euclidean_center_distance(a.bbox->center, b.bbox->center);
}

std::string SceneStats::avg_report() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", avg_objects_per_scene);
  return buf;
}

SceneStats compute_scene_stats(const std::vector<SceneGraph>& corpus) {
  if (corpus.empty()) throw SceneError(SceneErrc::EmptyCorpus, "scene corpus is empty");
  SceneStats stats;
  stats.num_scenes = corpus.size();
  for (const auto& s : corpus) stats.total_objects += s.size();
  stats.avg_objects_per_scene =
      static_cast<double>(stats.total_objects) / static_cast<double>(stats.num_scenes);
  return stats;
}

}  // namespace seqground::scene
