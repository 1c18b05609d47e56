#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "seqground/metrics.hpp"

using namespace seqground;
using namespace seqground::metrics;

namespace {

GroundVerdicts random_verdicts(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_tasks(1, 30), n_steps(1, 12);
  std::bernoulli_distribution correct(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
  GroundVerdicts v(static_cast<std::size_t>(n_tasks(rng)));
  for (auto& t : v) {
    t.resize(static_cast<std::size_t>(n_steps(rng)));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = correct(rng);
  }
  return v;
}

// Independent recount: flatten first, then count by index.
struct Recount {
  double s_acc, s_macro, t_acc;
};
Recount recount(const GroundVerdicts& v) {
  std::vector<int> flat;
  std::vector<int> owner;
  for (std::size_t t = 0; t < v.size(); ++t) {
    for (bool b : v[t]) {
      flat.push_back(b ? 1 : 0);
      owner.push_back(static_cast<int>(t));
    }
  }
  int hits = 0;
  for (int x : flat) hits += x;
  std::vector<int> per_hits(v.size(), 0), per_total(v.size(), 0);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    per_hits[static_cast<std::size_t>(owner[i])] += flat[i];
    per_total[static_cast<std::size_t>(owner[i])] += 1;
  }
  double macro = 0.0;
  int perfect = 0;
  for (std::size_t t = 0; t < v.size(); ++t) {
    macro += static_cast<double>(per_hits[t]) / per_total[t];
    if (per_hits[t] == per_total[t]) ++perfect;
  }
  return {static_cast<double>(hits) / static_cast<double>(flat.size()), macro / static_cast<double>(v.size()),
          static_cast<double>(perfect) / static_cast<double>(v.size())};
}

}  // namespace

TEST_CASE("step and task accuracy examples") {
  CHECK(step_accuracy({{true, true, false}}) == doctest::Approx(2.0 / 3.0));
  GroundVerdicts unbalanced{{true}, std::vector<bool>(9, false)};
  CHECK(step_accuracy(unbalanced) == doctest::Approx(0.1));
  CHECK(step_accuracy_macro(unbalanced) == doctest::Approx(0.5));
  CHECK(task_accuracy({{true, true, true}, {true, false}}) == 0.5);
  CHECK(task_accuracy({{true}, {true, true}}) == 1.0);
  CHECK(step_accuracy({{true}, {true, true}}) == 1.0);
  CHECK_THROWS_AS(step_accuracy({}), MetricsError);
  CHECK_THROWS_AS(task_accuracy({{true}, {}}), MetricsError);
}

TEST_CASE("accuracy matches a brute-force recount on random verdicts") {
  std::mt19937_64 rng(1234);
  for (int i = 0; i < 1000; ++i) {
    const auto v = random_verdicts(rng);
    const auto r = recount(v);
    CHECK(step_accuracy(v) == doctest::Approx(r.s_acc).epsilon(1e-12));
    CHECK(step_accuracy_macro(v) == doctest::Approx(r.s_macro).epsilon(1e-12));
    CHECK(task_accuracy(v) == doctest::Approx(r.t_acc).epsilon(1e-12));
    CHECK(task_accuracy(v) <= step_accuracy_macro(v) + 1e-12);
    CHECK((task_accuracy(v) == 1.0) == (step_accuracy(v) == 1.0));
  }
}

TEST_CASE("navigation rates") {
  auto one = nav_rates({{{true, 5.0, 4.0}}});
  CHECK(one.spl == doctest::Approx(0.8));
  CHECK(one.s_sr == 1.0);
  CHECK(one.t_sr == 1.0);
  CHECK(nav_rates({{{false, 1.0, 4.0}}}).spl == 0.0);
  CHECK(nav_rates({{{true, 2.0, 4.0}}}).spl == 1.0);  // shorter than geodesic clamps at 1
  const auto mixed = nav_rates({{{true, 4.0, 4.0}, {false, 3.0, 2.0}}, {{true, 10.0, 5.0}}});
  CHECK(mixed.s_sr == doctest::Approx(2.0 / 3.0));
  CHECK(mixed.t_sr == doctest::Approx(0.5));
  CHECK(mixed.spl == doctest::Approx((1.0 + 0.0 + 0.5) / 3.0));
  CHECK(mixed.spl_episode == doctest::Approx((0.5 + 0.5) / 2.0));
  CHECK_THROWS_AS(nav_rates({}), MetricsError);
  CHECK_THROWS_AS(nav_rates({{{true, 1.0, 0.0}}}), MetricsError);

  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> len(0.1, 20.0);
  std::bernoulli_distribution coin(0.6);
  for (int i = 0; i < 1000; ++i) {
    NavOutcomes o(1 + static_cast<std::size_t>(i % 7));
    double expect_spl = 0.0, expect_sr = 0.0;
    int n = 0;
    for (auto& ep : o) {
      for (int k = 0; k < 1 + i % 5; ++k) {
        StepOutcome s{coin(rng), len(rng), len(rng)};
        if (s.success) {
          expect_sr += 1.0;
          expect_spl += s.geodesic / std::max(s.path_length, s.geodesic);
        }
        ++n;
        ep.push_back(s);
      }
    }
    const auto r = nav_rates(o);
    CHECK(r.spl <= r.s_sr + 1e-12);
    CHECK(r.spl == doctest::Approx(expect_spl / n).epsilon(1e-12));
    CHECK(r.s_sr == doctest::Approx(expect_sr / n).epsilon(1e-12));
  }
}

TEST_CASE("grounding report from prediction records") {
  std::vector<taskgen::Task> gold = {
      {"a", "s1", "d", {{1, "x", "cup-1"}, {2, "y", "table-2"}, {3, "z", "table-2"}}, {3}},
      {"b", "s2", "d", {{1, "x", "sink-1"}, {2, "y", "cup-3"}}, {}}};
  std::vector<PredictionRecord> preds = {{"a", 1, "cup-1"}, {"a", 2, "table-2"}, {"a", 3, "table-9"},
                                         {"b", 1, "sink-1"}, {"b", 2, std::nullopt}};
  const auto r = grounding_report(gold, preds, "full", {{"s1", "ScanNet"}, {"s2", "3RScan"}});
  CHECK(r.metrics.at("s_acc") == doctest::Approx(3.0 / 5.0));
  CHECK(r.metrics.at("t_acc") == 0.0);
  CHECK(r.metrics.at("s_acc_ambiguous") == 0.0);
  CHECK(r.counts.at("unanswered_steps") == 1);
  CHECK(r.counts.at("ambiguous_steps") == 1);
  CHECK(r.breakdown.at("ScanNet").at("s_acc") == doctest::Approx(2.0 / 3.0));
  CHECK(r.breakdown.at("3RScan").at("s_acc") == doctest::Approx(0.5));

  const auto back = MetricsReport::from_json(json::parse(r.to_json().dump()));
  CHECK(back == r);
  CHECK_THROWS_AS(MetricsReport::from_json(json{{"kind", "grounding"}}), MetricsError);

  // No predictions at all: every step counts as wrong.
  const auto none = grounding_report(gold, {}, "full");
  CHECK(none.metrics.at("s_acc") == 0.0);
  CHECK(none.breakdown.count("unknown") == 1);
}

TEST_CASE("navigation report groups steps by episode") {
  std::vector<NavRecord> recs = {{"e1", "s1", 2, {false, 3.0, 2.0}},
                                 {"e1", "s1", 1, {true, 4.0, 4.0}},
                                 {"e2", "s1", 1, {true, 10.0, 5.0}}};
  const auto r = navigation_report(recs, "oracle");
  CHECK(r.metrics.at("s_sr") == doctest::Approx(2.0 / 3.0));
  CHECK(r.metrics.at("t_sr") == doctest::Approx(0.5));
  CHECK(r.metrics.at("spl") == doctest::Approx(0.5));
  CHECK(r.counts.at("episodes") == 2);
  CHECK(NavRecord::from_json(recs[0].to_json()).outcome.geodesic == 2.0);
  const auto short_form =
      NavRecord::from_json(json{{"episode_id", "e9"}, {"step_index", 1}, {"S", 1}, {"p", 2.5}, {"l", 2.0}});
  CHECK(short_form.outcome.success);
  CHECK(short_form.outcome.path_length == 2.5);
  CHECK(MetricsReport::from_json(r.to_json()) == r);
}

TEST_CASE("ablation deltas") {
  MetricsReport full{"grounding", "full", {{"t_acc", 0.30}, {"s_acc", 0.6}}, {{"tasks", 10}, {"steps", 40}}, {}, ""};
  MetricsReport iso{"grounding", "no-context", {{"t_acc", 0.18}, {"s_acc", 0.6}}, {{"tasks", 10}, {"steps", 40}}, {}, ""};
  const auto d = ablation_delta(full, iso);
  CHECK(d.at("t_acc").absolute == doctest::Approx(0.12));
  CHECK(*d.at("t_acc").relative == doctest::Approx(0.40));
  CHECK(d.at("s_acc").absolute == 0.0);
  for (const auto& [name, delta] : ablation_delta(full, full)) {
    CHECK(delta.absolute == 0.0);
    CHECK(*delta.relative == 0.0);
  }
  MetricsReport zero = full;
  zero.metrics["t_acc"] = 0.0;
  CHECK_FALSE(ablation_delta(zero, iso).at("t_acc").relative.has_value());
  MetricsReport other = iso;
  other.counts["tasks"] = 11;
  CHECK_THROWS_AS(ablation_delta(full, other), MetricsError);
  other = iso;
  other.kind = "navigation";
  CHECK_THROWS_AS(ablation_delta(full, other), MetricsError);
  CHECK(deltas_to_json(d)["t_acc"]["full"] == 0.30);
}

TEST_CASE("plan quality scoring") {
  const auto scene = scene::load_scene(R"({"cup-1": {"relations": ["near sink-2"], "caption": "A cup."},
                                           "sink-2": {"relations": [], "caption": "A sink."}})",
                                       "kitchen");
  taskgen::Task gold{"t", "kitchen", "Wash the cup.", {{1, "Pick up the cup.", "cup-1"}, {2, "Go to the sink.", "sink-2"}}, {}};
  const PredictedPlan pred{{"Pick up the cup.", "Go to the sink."}};

  const auto msgs = build_plan_score_prompt(scene, gold, pred);
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0].content.find("between 1 and 5") != std::string::npos);
  CHECK(msgs[1].content.find("Ground truth object id: 1. cup-1 2. sink-2") != std::string::npos);
  CHECK(msgs[1].content.find("Predicted task planning text: 1. Pick up the cup. 2. Go to the sink.") !=
        std::string::npos);

  auto five = llm::ScriptedChatEndpoint::always("Your mark: 5");
  CHECK(plan_gpt_score(*five, scene, gold, pred).mark == 5);
  auto seven = llm::ScriptedChatEndpoint::always("Your mark: 7");
  CHECK_THROWS_AS(plan_gpt_score(*seven, scene, gold, pred), MetricsError);
  CHECK(parse_mark("```Your mark: 1```") == 1);
  CHECK_THROWS_AS(parse_mark("Your mark: 0"), MetricsError);
  CHECK_THROWS_AS(parse_mark("mark five"), MetricsError);

  llm::FunctionChatEndpoint mock(plan_score_mock_reply);
  CHECK(plan_gpt_score(mock, scene, gold, pred).mark == 5);
  CHECK(plan_gpt_score(mock, scene, gold, PredictedPlan{{"Dance wildly."}}).mark == 1);

  const auto summary = summarize_plan_scores({{"a", 1, ""}, {"b", 3, ""}});
  CHECK(summary.mean == 2.0);
  CHECK(summary.stddev == 1.0);
  CHECK_THROWS_AS(summarize_plan_scores({}), MetricsError);
}
