#include <algorithm>
#include <cctype>
#include <set>

#include "seqground/taskgen.hpp"

namespace seqground::taskgen {

std::string_view to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::FormatError: return "FormatError";
    case RejectReason::MissingTarget: return "MissingTarget";
    case RejectReason::TooManySteps: return "TooManySteps";
    case RejectReason::EmptySteps: return "EmptySteps";
  }
  return "Unknown";
}

namespace {

bool starts_with_ci(std::string_view text, std::string_view prefix) {
  if (text.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(text[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

struct StepLine {
  int number = 0;
  std::string instruction;
  std::string target;
};

// "<n>. text [target]" or "<n>) text [target]".
std::optional<StepLine> parse_step_line(const std::string& line, std::string& error) {
  std::size_t pos = 0;
  int number = 0;
  std::size_t digits = 0;
  while (pos < line.size() && std::isdigit(static_cast<unsigned char>(line[pos]))) {
    if (digits < 6) number = number * 10 + (line[pos] - '0');
    ++pos;
    ++digits;
  }
  if (digits == 0 || digits > 3 || pos >= line.size() || (line[pos] != '.' && line[pos] != ')')) {
    error = "not a numbered step: '" + line + "'";
    return std::nullopt;
  }
  const std::string rest = trim(std::string_view(line).substr(pos + 1));
  const auto open = rest.rfind('[');
  if (rest.empty() || rest.back() != ']' || open == std::string::npos) {
    error = "step " + std::to_string(number) + " has no bracketed target";
    return std::nullopt;
  }
  StepLine step;
  step.number = number;
  step.instruction = trim(std::string_view(rest).substr(0, open));
  step.target = trim(std::string_view(rest).substr(open + 1, rest.size() - open - 2));
  if (step.instruction.find_first_of("[]") != std::string::npos ||
      step.target.find_first_of("[]") != std::string::npos) {
    error = "step " + std::to_string(number) + " names more than one target";
    return std::nullopt;
  }
  if (step.instruction.empty()) {
    error = "step " + std::to_string(number) + " has no instruction";
    return std::nullopt;
  }
  if (step.target.find(',') != std::string::npos || step.target.find(';') != std::string::npos) {
    error = "step " + std::to_string(number) + " lists several ids in one bracket";
    return std::nullopt;
  }
  if (!scene::parse_object_id(step.target)) {
    error = "step " + std::to_string(number) + " target '" + step.target + "' is not <category>-<ID>";
    return std::nullopt;
  }
  return step;
}

}  // namespace

std::vector<std::string> split_blocks(std::string_view response) {
  std::vector<std::string> blocks;
  std::string current;
  auto flush = [&] {
    if (!trim(current).empty()) blocks.push_back(current);
    current.clear();
  };
  for (const auto& line : split_lines(response)) {
    if (trim(line) == "===") {
      flush();
    } else {
      current += line;
      current += '\n';
    }
  }
  flush();
  if (blocks.empty()) blocks.emplace_back(response);
  return blocks;
}

BlockParse parse_block(std::string_view block_text) {
  BlockParse result;
  std::vector<std::string> lines;
  for (const auto& raw : split_lines(block_text)) {
    auto line = trim(raw);
    if (!line.empty()) lines.push_back(std::move(line));
  }
  if (lines.empty()) {
    result.error = "empty block";
    return result;
  }
  if (!starts_with_ci(lines[0], "task:")) {
    result.error = "block does not start with 'Task:'";
    return result;
  }
  ParsedBlock block;
  block.description = trim(std::string_view(lines[0]).substr(5));
  if (block.description.empty()) {
    result.error = "empty task description";
    return result;
  }
  if (lines.size() < 2 || !starts_with_ci(lines[1], "steps:") || !trim(lines[1].substr(6)).empty()) {
    result.error = "missing 'Steps:' header";
    return result;
  }
  for (std::size_t i = 2; i < lines.size(); ++i) {
    std::string error;
    auto step = parse_step_line(lines[i], error);
    if (!step) {
      result.error = error;
      return result;
    }
    const int expected = static_cast<int>(block.steps.size()) + 1;
    if (step->number != expected) {
      result.error = "step numbering breaks at " + std::to_string(step->number) + " (expected " +
                     std::to_string(expected) + ")";
      return result;
    }
    block.steps.push_back(TaskStep{step->number, std::move(step->instruction), std::move(step->target)});
  }
  result.block = std::move(block);
  return result;
}

std::optional<RejectReason> filter_block(const ParsedBlock& block, const scene::SceneGraph& scene,
                                         std::string* detail) {
  if (block.steps.empty()) {
    if (detail) *detail = "no steps";
    return RejectReason::EmptySteps;
  }
  if (block.steps.size() > kMaxStepsPerTask) {
    if (detail) *detail = std::to_string(block.steps.size()) + " steps exceeds the limit of 10";
    return RejectReason::TooManySteps;
  }
  for (const auto& step : block.steps) {
    if (!scene.contains(step.target_id)) {
      if (detail) *detail = "step " + std::to_string(step.index) + " target " + step.target_id + " not in scene";
      return RejectReason::MissingTarget;
    }
  }
  return std::nullopt;
}

std::optional<RejectReason> validate_task(const Task& task, const scene::SceneGraph& scene,
                                          std::string* detail) {
  if (trim(task.description).empty()) {
    if (detail) *detail = "empty description";
    return RejectReason::FormatError;
  }
  for (std::size_t i = 0; i < task.steps.size(); ++i) {
    const auto& step = task.steps[i];
    if (step.index != static_cast<int>(i) + 1) {
      if (detail) *detail = "step indices must be contiguous from 1";
      return RejectReason::FormatError;
    }
    if (trim(step.instruction).empty()) {
      if (detail) *detail = "step " + std::to_string(step.index) + " has no instruction";
      return RejectReason::FormatError;
    }
    if (!scene::parse_object_id(step.target_id)) {
      if (detail) *detail = "step " + std::to_string(step.index) + " target is not <category>-<ID>";
      return RejectReason::FormatError;
    }
  }
  return filter_block(ParsedBlock{task.description, task.steps}, scene, detail);
}

GenerationResult parse_generation_response(std::string_view text, const scene::SceneGraph& scene) {
  GenerationResult result;
  const auto blocks = split_blocks(text);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto parsed = parse_block(blocks[b]);
    if (!parsed.block) {
      result.rejects.push_back(GenReject{blocks[b], RejectReason::FormatError, parsed.error});
      continue;
    }
    std::string detail;
    if (auto reason = filter_block(*parsed.block, scene, &detail)) {
      result.rejects.push_back(GenReject{blocks[b], *reason, detail});
      continue;
    }
    Task task;
    task.task_id = scene.scene_id() + "_" + std::to_string(b);
    task.scene_id = scene.scene_id();
    task.description = std::move(parsed.block->description);
    task.steps = std::move(parsed.block->steps);
    result.tasks.push_back(std::move(task));
  }
  return result;
}

GenerationResult request_tasks(llm::ChatEndpoint& endpoint, const scene::SceneGraph& scene,
                               const llm::RetryPolicy& policy, int tasks_per_scene) {
  const auto prompt = build_generation_prompt(scene, tasks_per_scene);
  const auto reply = llm::complete_with_retry(endpoint, prompt.messages(), policy);
  return parse_generation_response(reply, scene);
}

}  // namespace seqground::taskgen
