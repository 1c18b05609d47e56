#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <random>
#include <sstream>

#include "seqground/taskgen.hpp"

using namespace seqground;
using namespace seqground::taskgen;

namespace {

scene::SceneGraph fixture_scene(const std::string& name) {
  return scene::load_scene(read_text_file(std::string(SG_FIXTURE_DIR) + "/" + name), "example");
}

llm::RetryPolicy no_sleep(int retries, std::vector<long long>* waits = nullptr) {
  llm::RetryPolicy policy;
  policy.retries = retries;
  policy.sleep = [waits](std::chrono::milliseconds ms) {
    if (waits) waits->push_back(ms.count());
  };
  return policy;
}

}  // namespace

TEST_CASE("generation prompt embeds the template, examples and scene") {
  const auto scene = fixture_scene("fig_a2_scene.json");
  const auto bundle = build_generation_prompt(scene);
  CHECK(bundle.expected_task_count == 5);
  CHECK(bundle.system_text.find("separate these tasks by") != std::string::npos);
  CHECK(bundle.system_text.find("Generate 5 different tasks") != std::string::npos);
  CHECK(bundle.system_text.find("Use pronouns") != std::string::npos);
  CHECK(bundle.system_text.find(std::string(in_context_examples())) != std::string::npos);
  CHECK(bundle.user_text == scene::scene_to_prompt_graph(scene, false));
  CHECK(bundle.user_text.find("armchair-2") != std::string::npos);
  CHECK(build_generation_prompt(scene, 3).system_text.find("Generate 3 different tasks") != std::string::npos);
  const auto messages = bundle.messages();
  REQUIRE(messages.size() == 2);
  CHECK(messages[0].role == "system");
  CHECK(messages[1].role == "user");
}

TEST_CASE("example block text parses into the expected steps") {
  const auto blocks = split_blocks(in_context_examples());
  REQUIRE(blocks.size() == 5);
  std::vector<std::size_t> counts;
  for (const auto& b : blocks) {
    const auto parsed = parse_block(b);
    REQUIRE(parsed.block);
    counts.push_back(parsed.block->steps.size());
  }
  CHECK(counts == std::vector<std::size_t>{9, 7, 13, 5, 7});
  const auto coffee = parse_block(blocks[0]).block.value();
  CHECK(coffee.description == "Make me a cup of coffee.");
  CHECK(coffee.steps[2].target_id == "coffee maker-16");
  CHECK(coffee.steps[4].target_id == "table-23");
  CHECK(coffee.steps[4].instruction == "Put the cup down.");
  CHECK(coffee.steps[6].target_id == "plates-17");
  CHECK(coffee.steps[8].target_id == "table-23");
}

TEST_CASE("filters reject with the first failing reason") {
  const auto scene = fixture_scene("fig_a3_scene.json");
  const auto result = parse_generation_response(in_context_examples(), scene);
  CHECK(result.tasks.size() == 4);
  REQUIRE(result.rejects.size() == 1);
  CHECK(result.rejects[0].reason == RejectReason::TooManySteps);
  CHECK(result.rejects[0].raw_block.find("Clean the mirror") != std::string::npos);

  const auto missing = parse_generation_response(
      "Task: Ride.\nSteps:\n1. Go to the desk. [desk-15]\n2. Mount it. [unicorn-99]\n", scene);
  REQUIRE(missing.rejects.size() == 1);
  CHECK(missing.rejects[0].reason == RejectReason::MissingTarget);

  const auto empty = parse_generation_response("", scene);
  CHECK(empty.tasks.empty());
  REQUIRE(empty.rejects.size() == 1);
  CHECK(empty.rejects[0].reason == RejectReason::FormatError);

  const auto no_steps = parse_generation_response("Task: Nothing.\nSteps:\n", scene);
  REQUIRE(no_steps.rejects.size() == 1);
  CHECK(no_steps.rejects[0].reason == RejectReason::EmptySteps);
}

TEST_CASE("format drift tolerance and format errors") {
  const auto scene = fixture_scene("fig_a3_scene.json");
  const auto ok = parse_generation_response(
      "  Task: Sit.\n  Steps:\n  1) Walk to the sofa. [sofa-14]\n   2. Sit on it. [sofa-14]\n", scene);
  REQUIRE(ok.tasks.size() == 1);
  CHECK(ok.tasks[0].steps.size() == 2);
  CHECK(ok.tasks[0].task_id == "scannet-demo_0");

  auto reason_of = [&](const std::string& text) {
    const auto r = parse_generation_response(text, scene);
    return r.rejects.empty() ? std::string("accepted") : std::string(to_string(r.rejects[0].reason));
  };
  CHECK(reason_of("Task: Sit.\nSteps:\n1. Walk to the sofa.\n") == "FormatError");
  CHECK(reason_of("Task: Sit.\nSteps:\n1. Walk to the sofa. [sofa-14, bed-20]\n") == "FormatError");
  CHECK(reason_of("Task: Sit.\nSteps:\n1. Walk [bed-20] to the sofa. [sofa-14]\n") == "FormatError");
  CHECK(reason_of("Task: Sit.\nSteps:\n1. Walk. [sofa-14]\n3. Sit. [sofa-14]\n") == "FormatError");
  CHECK(reason_of("Task: Sit.\n1. Walk. [sofa-14]\n") == "FormatError");
  CHECK(reason_of("Steps:\n1. Walk. [sofa-14]\n") == "FormatError");
  CHECK(reason_of("Task: Sit.\nSteps:\n1. [sofa-14]\n") == "FormatError");
  CHECK(reason_of("Task: Sit.\nSteps:\n1. Walk. [sofa]\n") == "FormatError");
}

TEST_CASE("eleven-step task is rejected; ten steps accepted") {
  const auto scene = fixture_scene("fig_a3_scene.json");
  auto make = [](int n) {
    std::string text = "Task: Pace.\nSteps:\n";
    for (int i = 1; i <= n; ++i) text += std::to_string(i) + ". Walk to the bed. [bed-20]\n";
    return text;
  };
  CHECK(parse_generation_response(make(10), scene).tasks.size() == 1);
  const auto r = parse_generation_response(make(11), scene);
  REQUIRE(r.rejects.size() == 1);
  CHECK(r.rejects[0].reason == RejectReason::TooManySteps);
}

TEST_CASE("request_tasks composes prompt, transport and parser") {
  const auto scene = fixture_scene("fig_a3_scene.json");
  auto mock = llm::ScriptedChatEndpoint::always(std::string(in_context_examples()));
  const auto oracle = parse_generation_response(in_context_examples(), scene);
  const auto result = request_tasks(*mock, scene, no_sleep(0));
  CHECK(result.tasks.size() == oracle.tasks.size());
  CHECK(result.tasks == oracle.tasks);
  CHECK(result.rejects.size() == 1);
  REQUIRE(mock->calls() == 1);
  const auto sent = mock->requests()[0];
  CHECK(sent[1].content == scene::scene_to_prompt_graph(scene, false));

  auto blank = llm::ScriptedChatEndpoint::always("");
  const auto none = request_tasks(*blank, scene, no_sleep(0));
  CHECK(none.tasks.empty());
  REQUIRE(none.rejects.size() == 1);
  CHECK(none.rejects[0].reason == RejectReason::FormatError);
}

TEST_CASE("transport failures retry with exponential backoff") {
  const auto scene = fixture_scene("fig_a2_scene.json");
  auto down = llm::ScriptedChatEndpoint::unreachable();
  std::vector<long long> waits;
  try {
    request_tasks(*down, scene, no_sleep(2, &waits));
    FAIL("expected ServiceUnavailable");
  } catch (const llm::LlmError& e) {
    CHECK(e.kind() == llm::LlmErrc::ServiceUnavailable);
  }
  CHECK(down->calls() == 3);
  CHECK(waits == std::vector<long long>{200, 400});

  llm::ScriptedChatEndpoint flaky({std::nullopt, std::string("Task: Sit.\nSteps:\n1. Sit. [sofa-1]\n")});
  const auto result = request_tasks(flaky, scene, no_sleep(2));
  CHECK(result.tasks.size() == 1);
  CHECK(flaky.calls() == 2);
}

TEST_CASE("simulated generation service yields valid tasks") {
  const auto scene = fixture_scene("fig_a3_scene.json");
  llm::FunctionChatEndpoint sim(simulated_generation_reply);
  const auto result = request_tasks(sim, scene, no_sleep(0));
  CHECK(result.tasks.size() == 5);
  CHECK(result.rejects.empty());
  for (const auto& t : result.tasks) CHECK_FALSE(validate_task(t, scene));
  const auto again = request_tasks(sim, scene, no_sleep(0));
  CHECK(again.tasks == result.tasks);
}

TEST_CASE("corpus stats") {
  auto task_with = [](int steps) {
    Task t;
    t.description = "Do it.";
    for (int i = 1; i <= steps; ++i) t.steps.push_back({i, "Walk there. [table-3]", "table-3"});
    return t;
  };
  CHECK(corpus_stats({task_with(4), task_with(6)}).avg_steps_per_task == 5.0);
  Task go;
  go.description = "Go. ";
  go.steps.push_back({1, "Walk to the table.", "table-1"});
  const auto stats = corpus_stats({go});
  CHECK(stats.avg_task_words == 5.0);
  CHECK(count_words("Put it down. [coffee maker-16]") == 3);
  CHECK_THROWS_AS(corpus_stats({}), TaskgenError);

  // Totals match a brute-force recount over the serialized corpus.
  const auto corpus = synth_context_corpus({.seed = 3, .n_scenes = 10});
  std::size_t steps = 0, words = 0;
  for (const auto& line : split_lines(tasks_to_jsonl(corpus.tasks))) {
    const auto record = json::parse(line);
    std::istringstream d(record["description"].get<std::string>());
    for (std::string w; d >> w;) ++words;
    for (const auto& s : record["steps"]) {
      ++steps;
      std::istringstream in(s["instruction"].get<std::string>());
      for (std::string w; in >> w;) ++words;
    }
  }
  const auto synth_stats = corpus_stats(corpus.tasks);
  CHECK(synth_stats.num_steps == steps);
  CHECK(synth_stats.num_words == words);
}

TEST_CASE("synthetic context corpus") {
  const auto a = synth_context_corpus({.seed = 7, .n_scenes = 20});
  const auto b = synth_context_corpus({.seed = 7, .n_scenes = 20});
  CHECK(tasks_to_jsonl(a.tasks) == tasks_to_jsonl(b.tasks));
  CHECK(scene::corpus_to_jsonl(a.scenes) == scene::corpus_to_jsonl(b.scenes));
  CHECK(tasks_to_jsonl(synth_context_corpus({.seed = 8, .n_scenes = 20}).tasks) != tasks_to_jsonl(a.tasks));

  std::map<std::string, const scene::SceneGraph*> by_id;
  for (const auto& s : a.scenes) by_id[s.scene_id()] = &s;
  for (const auto& task : a.tasks) {
    const auto& scene = *by_id.at(task.scene_id);
    CHECK_FALSE(validate_task(task, scene));
    REQUIRE_FALSE(task.ambiguous_steps.empty());
    for (int idx : task.ambiguous_steps) {
      const auto& step = task.steps[static_cast<std::size_t>(idx - 1)];
      const auto& category = scene.at(step.target_id).category;
      int same = 0;
      for (const auto& [id, node] : scene.objects()) same += node.category == category;
      CHECK(same >= 2);
      CHECK(step.instruction.find(category) != std::string::npos);
      // The same target was visited earlier in the task.
      bool earlier = false;
      for (int j = 0; j + 1 < idx; ++j) earlier |= task.steps[static_cast<std::size_t>(j)].target_id == step.target_id;
      CHECK(earlier);
    }
  }
  CHECK_THROWS_AS(synth_context_corpus({.min_distractors = 1}), TaskgenError);
  CHECK_THROWS_AS(synth_context_corpus({.max_distractors = 6}), TaskgenError);
}

TEST_CASE("two-instance ambiguity gives chance one half") {
  const auto corpus = synth_context_corpus({.seed = 11, .n_scenes = 10, .min_distractors = 2, .max_distractors = 2});
  for (const auto& task : corpus.tasks) {
    const auto& scene = *std::find_if(corpus.scenes.begin(), corpus.scenes.end(),
                                      [&](const auto& s) { return s.scene_id() == task.scene_id; });
    for (int idx : task.ambiguous_steps) {
      const auto& category = scene.at(task.steps[static_cast<std::size_t>(idx - 1)].target_id).category;
      int candidates = 0;
      for (const auto& [id, node] : scene.objects()) candidates += node.category == category;
      CHECK(1.0 / candidates == 0.5);
    }
  }
}

TEST_CASE("task records round-trip") {
  const auto corpus = synth_context_corpus({.seed = 5, .n_scenes = 3});
  for (const auto& t : corpus.tasks) CHECK(task_from_json(task_to_json(t)) == t);
  CHECK_THROWS_AS(task_from_json(json{{"task_id", "x"}}), TaskgenError);
}
