#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seqground/common.hpp"
#include "seqground/error.hpp"

namespace seqground::scene {

enum class SceneErrc { MalformedDocument, DanglingRelation, BadId, DegenerateBox, EmptyCorpus };

constexpr std::string_view module_name(SceneErrc) { return "scenegraph"; }
std::string_view to_string(SceneErrc code);

using SceneError = ModuleError<SceneErrc>;

/// Meters. Axis-aligned, z-up.
struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

/// Center plus full extents.
struct Aabb {
  Vec3 center;
  Vec3 size;

  friend bool operator==(const Aabb&, const Aabb&) = default;
};

struct Relation {
  std::string predicate;
  std::string target_id;

  friend bool operator==(const Relation&, const Relation&) = default;
};

struct ObjectId {
  std::string category;
  int instance = 0;
};

/// Splits "coffee maker-16" into {"coffee maker", 16}. Returns nullopt when the
/// text is not of the form `<category>-<positive integer>`.
std::optional<ObjectId> parse_object_id(std::string_view id);

struct ObjectNode {
  std::string id;
  std::string category;
  int instance_number = 0;
  std::string caption;
  std::vector<Relation> relations;
  std::optional<Aabb> bbox;

  friend bool operator==(const ObjectNode&, const ObjectNode&) = default;
};

/// Immutable after load. Objects are keyed (and iterated) by id.
class SceneGraph {
 public:
  SceneGraph() = default;
  SceneGraph(std::string scene_id, std::string source, std::map<std::string, ObjectNode> objects);

  const std::string& scene_id() const noexcept { return scene_id_; }
  const std::string& source() const noexcept { return source_; }
  const std::map<std::string, ObjectNode>& objects() const noexcept { return objects_; }
  std::size_t size() const noexcept { return objects_.size(); }

  bool contains(std::string_view id) const;
  const ObjectNode& at(std::string_view id) const;
  const ObjectNode* find(std::string_view id) const;
  bool has_boxes() const;

  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;

 private:
  std::string scene_id_;
  std::string source_;
  std::map<std::string, ObjectNode> objects_;
};

/// Parses a scene document. Accepts either the bare object map keyed by id, or a
/// wrapper `{"scene_id", "source", "objects": {...}}`. `fallback_scene_id` names
/// bare maps.
SceneGraph load_scene(std::string_view document, std::string_view fallback_scene_id = "scene");
SceneGraph load_scene_json(const json& document, std::string_view fallback_scene_id = "scene");

/// With bbox: the wrapper form, which round-trips through load_scene. Without:
/// the generation-prompt shape `{id: {relations, caption}}`.
std::string scene_to_prompt_graph(const SceneGraph& scene, bool include_bbox);
ordered_json scene_to_json(const SceneGraph& scene, bool include_bbox);

/// Corpus on disk: a directory of *.json scene documents (sorted by filename) or
/// a line-delimited file with one wrapped scene per line.
std::vector<SceneGraph> load_corpus(const std::filesystem::path& path);
std::string corpus_to_jsonl(const std::vector<SceneGraph>& scenes);

double euclidean_center_distance(const Vec3& a, const Vec3& b);
double euclidean_center_distance(const ObjectNode& a, const ObjectNode& b);

struct SceneStats {
  std::size_t num_scenes = 0;
  std::size_t total_objects = 0;
  double avg_objects_per_scene = 0.0;

  /// One-decimal rendering used in reports.
  std::string avg_report() const;
};

SceneStats compute_scene_stats(const std::vector<SceneGraph>& corpus);

}  // namespace seqground::scene
