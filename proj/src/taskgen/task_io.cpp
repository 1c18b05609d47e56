#include <algorithm>
#include <regex>

#include "seqground/taskgen.hpp"

namespace seqground::taskgen {

std::string_view to_string(TaskgenErrc code) {
  switch (code) {
    case TaskgenErrc::EmptyCorpus: return "EmptyCorpus";
    case TaskgenErrc::BadConfig: return "BadConfig";
    case TaskgenErrc::MalformedRecord: return "MalformedRecord";
  }
  return "Unknown";
}

bool Task::is_ambiguous(int step_index) const {
  return std::find(ambiguous_steps.begin(), ambiguous_steps.end(), step_index) != ambiguous_steps.end();
}

json task_to_json(const Task& task) {
  json record;
  record["task_id"] = task.task_id;
  record["scene_id"] = task.scene_id;
  record["description"] = task.description;
  record["steps"] = json::array();
  for (const auto& s : task.steps) {
    record["steps"].push_back({{"index", s.index}, {"instruction", s.instruction}, {"target_id", s.target_id}});
  }
  if (!task.ambiguous_steps.empty()) record["ambiguous_steps"] = task.ambiguous_steps;
  return record;
}

Task task_from_json(const json& record) {
  try {
    Task task;
    task.task_id = record.at("task_id").get<std::string>();
    task.scene_id = record.at("scene_id").get<std::string>();
    task.description = record.at("description").get<std::string>();
    for (const auto& s : record.at("steps")) {
      task.steps.push_back(TaskStep{s.at("index").get<int>(), s.at("instruction").get<std::string>(),
                                    s.at("target_id").get<std::string>()});
    }
    if (record.contains("ambiguous_steps")) {
      task.ambiguous_steps = record["ambiguous_steps"].get<std::vector<int>>();
    }
    return task;
  } catch (const json::exception& e) {
    throw TaskgenError(TaskgenErrc::MalformedRecord, std::string("task record: ") + e.what());
  }
}

std::vector<Task> load_tasks(const std::filesystem::path& path) {
  std::vector<Task> tasks;
  for (const auto& record : read_jsonl(path)) tasks.push_back(task_from_json(record));
  return tasks;
}

std::string tasks_to_jsonl(const std::vector<Task>& tasks) {
  std::string out;
  for (const auto& t : tasks) {
    out += task_to_json(t).dump();
    out += '\n';
  }
  return out;
}

json CorpusStats::to_json() const {
  return json{{"num_tasks", num_tasks},
              {"num_steps", num_steps},
              {"num_words", num_words},
              {"avg_steps_per_task", avg_steps_per_task},
              {"avg_task_words", avg_task_words}};
}

std::size_t count_words(std::string_view text) {
  static const std::regex annotation(R"(\[[^\[\]]*-[0-9]+\])");
  const std::string stripped = std::regex_replace(std::string(text), annotation, " ");
  std::size_t words = 0;
  bool in_word = false;
  for (char c : stripped) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

CorpusStats corpus_stats(const std::vector<Task>& tasks) {
  if (tasks.empty()) throw TaskgenError(TaskgenErrc::EmptyCorpus, "task corpus is empty");
  CorpusStats stats;
  stats.num_tasks = tasks.size();
  for (const auto& task : tasks) {
    stats.num_steps += task.steps.size();
    stats.num_words += count_words(task.description);
    for (const auto& step : task.steps) stats.num_words += count_words(step.instruction);
  }
  const auto n = static_cast<double>(stats.num_tasks);
  stats.avg_steps_per_task = static_cast<double>(stats.num_steps) / n;
  stats.avg_task_words = static_cast<double>(stats.num_words) / n;
  return stats;
}

}  // namespace seqground::taskgen
