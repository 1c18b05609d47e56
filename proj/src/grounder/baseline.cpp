#include <algorithm>
#include <cmath>
#include <regex>

#include "seqground/grounder/baseline.hpp"

namespace seqground::grounder {

namespace {

const char* const kSystem =
    "You are tasked with identifying the target object for each step in a given task. Each scene contains "
    "various objects, and your response should provide the target object for each step in the format "
    "<label-id>, maintaining the sequence of steps. For example:";

const char* const kExampleTask =
    "Task: Make me a cup of coffee and serve it on a plate.\n"
    "Steps:\n"
    "1. Go to the long desk against the wall.\n"
    "2. Fetch a plate from a bunch of steel plates below the picture frame.\n"
    "3. Walk to the table close to a cabinet.\n"
    "4. Put the plate on it.\n"
    "5. Return to the long desk.\n"
    "6. Choose a cup from those white, plastic cups on the desk.\n"
    "7. Fill it with coffee at the coffee maker.\n"
    "8. Go back to the table.\n"
    "9. Put down the cup of coffee.";

const char* const kExampleScene = R"({
    "table-24": {
        "position": [
            -4.91,
            2.25,
            -0.97
        ],
        "size": [
            2.03,
            1.25,
            0.84
        ]
    }
})";

const char* const kExampleResponse =
    "1. desk-15\n2. plates-17\n3. table-23\n4. table-23\n5. desk-15\n6. cups-19\n7. coffee maker-16\n"
    "8. table-23\n9. table-23";

std::string task_block(const taskgen::Task& task) {
  std::string out = "Task: " + task.description + "\nSteps:";
  for (const auto& s : task.steps) out += "\n" + std::to_string(s.index) + ". " + s.instruction;
  return out;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

std::string baseline_scene_json(const scene::SceneGraph& scene) {
  ordered_json doc = ordered_json::object();
  for (const auto& [id, node] : scene.objects()) {
    ordered_json entry = ordered_json::object();
    if (node.bbox) {
      const auto& b = *node.bbox;
      entry["position"] = {round2(b.center.x), round2(b.center.y), round2(b.center.z)};
      entry["size"] = {round2(b.size.x), round2(b.size.y), round2(b.size.z)};
    }
    doc[id] = entry;
  }
  return doc.dump(4);
}

std::vector<llm::ChatMessage> build_baseline_prompt(const scene::SceneGraph& scene, const taskgen::Task& task) {
  return {{"system", kSystem},
          {"user", kExampleTask},
          {"user", kExampleScene},
          {"assistant", kExampleResponse},
          {"user", task_block(task)},
          {"user", baseline_scene_json(scene)}};
}

std::vector<std::string> parse_baseline_response(std::string_view reply, std::size_t n_steps) {
  static const std::regex line_re(R"(^\s*(\d+)\s*[.):]\s*(.*?)\s*$)");
  std::vector<std::string> out(n_steps);
  for (const auto& line : split_lines(reply)) {
    std::smatch m;
    if (!std::regex_match(line, m, line_re)) continue;
    std::size_t index = 0;
    try {
      index = std::stoul(m[1].str());
    } catch (const std::exception&) {
      continue;
    }
    if (index == 0 || index > n_steps || !out[index - 1].empty()) continue;
    std::string id = m[2].str();
    // Tolerate decorations such as <desk-15>, [desk-15] or `desk-15`.
    while (!id.empty() && std::string_view("<[`'\"").find(id.front()) != std::string_view::npos) id.erase(0, 1);
    while (!id.empty() && std::string_view(">]`'\".,").find(id.back()) != std::string_view::npos) id.pop_back();
    id = trim(id);
    if (scene::parse_object_id(id)) out[index - 1] = id;
  }
  return out;
}

std::vector<std::string> llm_baseline_ground(llm::ChatEndpoint& endpoint, const scene::SceneGraph& scene,
                                             const taskgen::Task& task, const llm::RetryPolicy& policy) {
  const auto reply = llm::complete_with_retry(endpoint, build_baseline_prompt(scene, task), policy);
  return parse_baseline_response(reply, task.steps.size());
}

std::string baseline_mock_reply(const std::vector<llm::ChatMessage>& messages) {
  if (messages.size() < 2) return "";
  json scene_doc;
  try {
    scene_doc = json::parse(messages.back().content);
  } catch (const json::exception&) {
    return "";
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> objects;  // id, category words
  for (const auto& [id, entry] : scene_doc.items()) {
    if (auto parsed = scene::parse_object_id(id)) objects.emplace_back(id, word_tokens(parsed->category));
  }
  static const std::regex step_re(R"(^\s*(\d+)\.\s*(.*)$)");
  std::string reply;
  std::string previous = objects.empty() ? "" : objects.front().first;
  for (const auto& line : split_lines(messages[messages.size() - 2].content)) {
    std::smatch m;
    if (!std::regex_match(line, m, step_re)) continue;
    const auto words = word_tokens(m[2].str());
    std::string best;
    std::size_t best_len = 0;
    for (const auto& [id, cat] : objects) {
      const bool all = std::all_of(cat.begin(), cat.end(), [&](const std::string& w) {
        return std::find(words.begin(), words.end(), w) != words.end();
      });
      if (all && cat.size() > best_len) {
        best = id;
        best_len = cat.size();
      }
    }
    if (!best.empty()) previous = best;
    reply += m[1].str() + ". " + previous + "\n";
  }
  return reply;
}

}  // namespace seqground::grounder
