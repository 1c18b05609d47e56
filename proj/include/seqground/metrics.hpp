#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqground/common.hpp"
#include "seqground/error.hpp"
#include "seqground/llm_client.hpp"
#include "seqground/scenegraph.hpp"
#include "seqground/taskgen.hpp"

namespace seqground::metrics {

enum class MetricsErrc { Empty, NonPositiveGeodesic, CorpusMismatch, ParseError, MalformedInput };
std::string_view to_string(MetricsErrc code);
constexpr std::string_view module_name(MetricsErrc) { return "metrics"; }
using MetricsError = ModuleError<MetricsErrc>;

/// Per task, step correctness in step order.
using GroundVerdicts = std::vector<std::vector<bool>>;

/// Pooled over all steps of all tasks.
double step_accuracy(const GroundVerdicts& v);
/// Mean over tasks of each task's step accuracy.
double step_accuracy_macro(const GroundVerdicts& v);
/// Fraction of tasks whose steps are all correct.
double task_accuracy(const GroundVerdicts& v);

struct StepOutcome {
  bool success = false;
  double path_length = 0.0;  // p_i, metres travelled
  double geodesic = 0.0;     // l_i, shortest-path metres
};
/// Per episode, per step.
using NavOutcomes = std::vector<std::vector<StepOutcome>>;

struct NavRates {
  double s_sr = 0.0;
  double t_sr = 0.0;
  double spl = 0.0;          // mean over steps of S*l/max(p,l)
  double spl_episode = 0.0;  // mean over episodes of the per-episode step mean
};
/// Throws Empty, NonPositiveGeodesic.
NavRates nav_rates(const NavOutcomes& o);

struct MetricsReport {
  std::string kind;  // "grounding" or "navigation"
  std::string mode;  // "Full" or "NoContext"
  std::map<std::string, double> metrics;
  std::map<std::string, long> counts;
  std::map<std::string, std::map<std::string, double>> breakdown;  // per source tag
  std::string tool_version;

  json to_json() const;
  static MetricsReport from_json(const json& doc);
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// One line of a grounding prediction file.
struct PredictionRecord {
  std::string task_id;
  int step_index = 0;
  std::optional<std::string> predicted_id;
  static PredictionRecord from_json(const json& doc);
};

/// Scores predictions against gold tasks; missing predictions count as wrong. `source_of_scene`
/// maps scene ids to a dataset tag for the breakdown (unknown scenes fall under "unknown").
MetricsReport grounding_report(const std::vector<taskgen::Task>& gold, const std::vector<PredictionRecord>& predictions,
                               const std::string& mode,
                               const std::map<std::string, std::string>& source_of_scene = {});

/// One line of a navigation outcome file.
struct NavRecord {
  std::string episode_id;
  std::string scene_id;
  int step_index = 0;
  StepOutcome outcome;
  json to_json() const;
  static NavRecord from_json(const json& doc);
};

MetricsReport navigation_report(const std::vector<NavRecord>& records, const std::string& mode,
                                const std::map<std::string, std::string>& source_of_scene = {});

struct MetricDelta {
  double full = 0.0;
  double nocontext = 0.0;
  double absolute = 0.0;
  std::optional<double> relative;  // absent when the full value is 0
};
/// Metrics both reports carry. Throws CorpusMismatch when kinds or counts differ.
std::map<std::string, MetricDelta> ablation_delta(const MetricsReport& full, const MetricsReport& nocontext);
json deltas_to_json(const std::map<std::string, MetricDelta>& deltas);

struct PlanScore {
  std::string task_id;
  int mark = 0;
  std::string raw;
  json to_json() const;
};

struct PredictedPlan {
  std::vector<std::string> step_texts;
};

std::vector<llm::ChatMessage> build_plan_score_prompt(const scene::SceneGraph& scene, const taskgen::Task& gold,
                                                      const PredictedPlan& predicted);
/// Reads "Your mark: N"; throws ParseError when missing or outside 1..5.
int parse_mark(std::string_view reply);
PlanScore plan_gpt_score(llm::ChatEndpoint& endpoint, const scene::SceneGraph& scene, const taskgen::Task& gold,
                         const PredictedPlan& predicted, const llm::RetryPolicy& policy = {});
/// Offline scorer: word overlap between the two plans, mapped to 1..5.
std::string plan_score_mock_reply(const std::vector<llm::ChatMessage>& messages);

struct PlanScoreSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t count = 0;
};
PlanScoreSummary summarize_plan_scores(const std::vector<PlanScore>& scores);

}  // namespace seqground::metrics
