#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seqground/common.hpp"
#include "seqground/error.hpp"
#include "seqground/llm_client.hpp"
#include "seqground/scenegraph.hpp"

namespace seqground::taskgen {

enum class TaskgenErrc { EmptyCorpus, BadConfig, MalformedRecord };

constexpr std::string_view module_name(TaskgenErrc) { return "taskgen"; }
std::string_view to_string(TaskgenErrc code);

using TaskgenError = ModuleError<TaskgenErrc>;

constexpr std::size_t kMaxStepsPerTask = 10;
constexpr int kDefaultTasksPerScene = 5;

struct TaskStep {
  int index = 0;  // 1-based
  std::string instruction;
  std::string target_id;

  friend bool operator==(const TaskStep&, const TaskStep&) = default;
};

struct Task {
  std::string task_id;
  std::string scene_id;
  std::string description;
  std::vector<TaskStep> steps;
  /// 1-based indices of steps whose target can only be resolved from earlier
  /// context. Populated by the synthetic generator; empty otherwise.
  std::vector<int> ambiguous_steps;

  bool is_ambiguous(int step_index) const;
  friend bool operator==(const Task&, const Task&) = default;
};

json task_to_json(const Task& task);
Task task_from_json(const json& record);
std::vector<Task> load_tasks(const std::filesystem::path& path);
std::string tasks_to_jsonl(const std::vector<Task>& tasks);

struct PromptBundle {
  std::string system_text;
  std::string user_text;
  int expected_task_count = kDefaultTasksPerScene;

  std::vector<llm::ChatMessage> messages() const;
};

/// The in-context example block embedded in the generation system prompt.
std::string_view in_context_examples();
/// Explanation of the scene graph format shared by the generation and the plan
/// scoring prompts (ends with the worked sofa/armchair/table example).
std::string_view scene_graph_primer();

PromptBundle build_generation_prompt(const scene::SceneGraph& scene,
                                     int tasks_per_scene = kDefaultTasksPerScene);

enum class RejectReason { FormatError, MissingTarget, TooManySteps, EmptySteps };
std::string_view to_string(RejectReason reason);

struct GenReject {
  std::string raw_block;
  RejectReason reason = RejectReason::FormatError;
  std::string detail;
};

/// One "Task: ... Steps: ..." block before any filtering.
struct ParsedBlock {
  std::string description;
  std::vector<TaskStep> steps;
};

struct BlockParse {
  std::optional<ParsedBlock> block;  // nullopt on FormatError
  std::string error;
};

BlockParse parse_block(std::string_view block_text);

/// Splits on lines consisting of "===". Blank blocks between separators are
/// dropped; a response with no non-blank block yields one empty block.
std::vector<std::string> split_blocks(std::string_view response);

/// Checks, in order: EmptySteps, TooManySteps, then MissingTarget.
std::optional<RejectReason> filter_block(const ParsedBlock& block, const scene::SceneGraph& scene,
                                         std::string* detail = nullptr);

/// Full Task validation (indices, instruction text, target existence, length).
std::optional<RejectReason> validate_task(const Task& task, const scene::SceneGraph& scene,
                                          std::string* detail = nullptr);

struct GenerationResult {
  std::vector<Task> tasks;
  std::vector<GenReject> rejects;
};

/// Task ids are `<scene_id>_<block index>`.
GenerationResult parse_generation_response(std::string_view text, const scene::SceneGraph& scene);

GenerationResult request_tasks(llm::ChatEndpoint& endpoint, const scene::SceneGraph& scene,
                               const llm::RetryPolicy& policy,
                               int tasks_per_scene = kDefaultTasksPerScene);

/// Offline stand-in for the generation service: reads the scene graph from the
/// user message and writes well-formed tasks over its objects.
std::string simulated_generation_reply(const std::vector<llm::ChatMessage>& messages);

struct CorpusStats {
  std::size_t num_tasks = 0;
  std::size_t num_steps = 0;
  std::size_t num_words = 0;
  double avg_steps_per_task = 0.0;
  double avg_task_words = 0.0;

  json to_json() const;
};

/// Whitespace word count after removing `[category-ID]` annotations.
std::size_t count_words(std::string_view text);
CorpusStats corpus_stats(const std::vector<Task>& tasks);

struct SynthConfig {
  std::uint64_t seed = 7;
  int n_scenes = 200;
  /// Same-category instances per repeated category, sampled uniformly in range.
  int min_distractors = 2;
  int max_distractors = 4;
  int tasks_per_scene = 4;
  double room_size = 8.0;
};

struct SynthCorpus {
  std::vector<scene::SceneGraph> scenes;
  std::vector<Task> tasks;
};

/// Deterministic corpus where each task has at least one back-reference step
/// ("go back to the table") resolvable only through an earlier step.
SynthCorpus synth_context_corpus(const SynthConfig& config);

}  // namespace seqground::taskgen
