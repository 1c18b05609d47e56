#pragma once

#include "seqground/llm_client.hpp"
#include "seqground/scenegraph.hpp"
#include "seqground/taskgen.hpp"

namespace seqground::grounder {

/// Few-shot prompt asking a chat model for one target id per step.
std::vector<llm::ChatMessage> build_baseline_prompt(const scene::SceneGraph& scene, const taskgen::Task& task);

/// Scene as an id -> {position, size} map (objects without a box map to {}).
std::string baseline_scene_json(const scene::SceneGraph& scene);

/// Reads "i. <id>" lines. Entry i-1 is empty when step i has no parseable line.
std::vector<std::string> parse_baseline_response(std::string_view reply, std::size_t n_steps);

/// Throws llm::LlmError(ServiceUnavailable) when retries run out.
std::vector<std::string> llm_baseline_ground(llm::ChatEndpoint& endpoint, const scene::SceneGraph& scene,
                                             const taskgen::Task& task, const llm::RetryPolicy& policy = {});

/// Offline stand-in for the chat service: names the object whose category appears in the
/// step text, falling back to the previous answer; deterministic.
std::string baseline_mock_reply(const std::vector<llm::ChatMessage>& messages);

}  // namespace seqground::grounder
