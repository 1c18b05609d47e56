#include <sstream>

#include "seqground/taskgen.hpp"

namespace seqground::taskgen {

namespace {

int requested_task_count(const std::string& system_text) {
  const std::string marker = "Generate ";
  const auto pos = system_text.rfind(marker);
  if (pos == std::string::npos) return kDefaultTasksPerScene;
  try {
    return std::max(1, std::stoi(system_text.substr(pos + marker.size())));
  } catch (const std::exception&) {
    return kDefaultTasksPerScene;
  }
}

}  // namespace

std::string simulated_generation_reply(const std::vector<llm::ChatMessage>& messages) {
  std::string system_text;
  std::string user_text;
  for (const auto& m : messages) {
    if (m.role == "system") system_text = m.content;
    if (m.role == "user") user_text = m.content;
  }
  const json graph = json::parse(user_text, nullptr, false);
  if (graph.is_discarded() || !graph.is_object() || graph.empty()) return "";

  std::vector<std::pair<std::string, std::string>> objects;  // id, category
  for (const auto& [id, _] : graph.items()) {
    const auto parsed = scene::parse_object_id(id);
    objects.emplace_back(id, parsed ? parsed->category : id);
  }
  const auto n = objects.size();
  const auto base = static_cast<std::size_t>(fnv1a64(user_text) % n);
  const int count = requested_task_count(system_text);

  static constexpr std::string_view kVerbs[] = {"Walk to", "Go to", "Head over to", "Approach"};
  static constexpr std::string_view kGoals[] = {"Tidy up around the", "Spend some time at the",
                                                "Get things ready near the", "Take a short break by the"};
  std::ostringstream out;
  for (int k = 0; k < count; ++k) {
    const auto& a = objects[(base + 3 * static_cast<std::size_t>(k)) % n];
    const auto& b = objects[(base + 3 * static_cast<std::size_t>(k) + 1) % n];
    const auto& c = objects[(base + 3 * static_cast<std::size_t>(k) + 2) % n];
    if (k > 0) out << "===\n";
    out << "Task: " << kGoals[k % 4] << ' ' << a.second << ".\n";
    out << "Steps:\n";
    out << "1. " << kVerbs[k % 4] << " the " << a.second << ". [" << a.first << "]\n";
    out << "2. Look at the " << b.second << " near it. [" << b.first << "]\n";
    out << "3. Come back to the " << a.second << ". [" << a.first << "]\n";
    out << "4. Finish at the " << c.second << ". [" << c.first << "]\n";
  }
  return out.str();
}

}  // namespace seqground::taskgen
