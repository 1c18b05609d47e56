#include "seqground/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>

namespace seqground::metrics {

std::string_view to_string(MetricsErrc code) {
  switch (code) {
    case MetricsErrc::Empty: return "Empty";
    case MetricsErrc::NonPositiveGeodesic: return "NonPositiveGeodesic";
    case MetricsErrc::CorpusMismatch: return "CorpusMismatch";
    case MetricsErrc::ParseError: return "ParseError";
    case MetricsErrc::MalformedInput: return "MalformedInput";
  }
  return "Unknown";
}

namespace {

void require_steps(const GroundVerdicts& v) {
  if (v.empty()) throw MetricsError(MetricsErrc::Empty, "no tasks");
  for (const auto& t : v) {
    if (t.empty()) throw MetricsError(MetricsErrc::Empty, "task without steps");
  }
}

}  // namespace

double step_accuracy(const GroundVerdicts& v) {
  require_steps(v);
  long correct = 0, total = 0;
  for (const auto& t : v) {
    correct += std::count(t.begin(), t.end(), true);
    total += static_cast<long>(t.size());
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double step_accuracy_macro(const GroundVerdicts& v) {
  require_steps(v);
  double sum = 0.0;
  for (const auto& t : v) sum += static_cast<double>(std::count(t.begin(), t.end(), true)) / static_cast<double>(t.size());
  return sum / static_cast<double>(v.size());
}

double task_accuracy(const GroundVerdicts& v) {
  require_steps(v);
  const auto ok = std::count_if(v.begin(), v.end(), [](const std::vector<bool>& t) {
    return std::all_of(t.begin(), t.end(), [](bool b) { return b; });
  });
  return static_cast<double>(ok) / static_cast<double>(v.size());
}

NavRates nav_rates(const NavOutcomes& o) {
  if (o.empty()) throw MetricsError(MetricsErrc::Empty, "no episodes");
  NavRates r;
  long steps = 0, successes = 0, full_episodes = 0;
  double spl_sum = 0.0;
  for (const auto& ep : o) {
    if (ep.empty()) throw MetricsError(MetricsErrc::Empty, "episode without steps");
    bool all = true;
    double ep_spl = 0.0;
    for (const auto& s : ep) {
      if (!(s.geodesic > 0.0)) throw MetricsError(MetricsErrc::NonPositiveGeodesic, "geodesic distance must be positive");
      if (s.path_length < 0.0) throw MetricsError(MetricsErrc::MalformedInput, "negative path length");
      const double contrib = s.success ? s.geodesic / std::max(s.path_length, s.geodesic) : 0.0;
      spl_sum += contrib;
      ep_spl += contrib;
      successes += s.success ? 1 : 0;
      all = all && s.success;
      ++steps;
    }
    full_episodes += all ? 1 : 0;
    r.spl_episode += ep_spl / static_cast<double>(ep.size());
  }
  r.s_sr = static_cast<double>(successes) / static_cast<double>(steps);
  r.t_sr = static_cast<double>(full_episodes) / static_cast<double>(o.size());
  r.spl = spl_sum / static_cast<double>(steps);
  r.spl_episode /= static_cast<double>(o.size());
  return r;
}

// ---------------------------------------------------------------- reports

json MetricsReport::to_json() const {
  json doc{{"kind", kind}, {"mode", mode}, {"metrics", metrics}, {"counts", counts}, {"tool_version", tool_version}};
  doc["breakdown"] = json::object();
  for (const auto& [source, values] : breakdown) doc["breakdown"][source] = values;
  return doc;
}

MetricsReport MetricsReport::from_json(const json& doc) {
  try {
    MetricsReport r;
    r.kind = doc.at("kind").get<std::string>();
    r.mode = doc.at("mode").get<std::string>();
    r.metrics = doc.at("metrics").get<std::map<std::string, double>>();
    r.counts = doc.at("counts").get<std::map<std::string, long>>();
    if (doc.contains("breakdown")) {
      r.breakdown = doc.at("breakdown").get<std::map<std::string, std::map<std::string, double>>>();
    }
    r.tool_version = doc.value("tool_version", "");
    return r;
  } catch (const json::exception& e) {
    throw MetricsError(MetricsErrc::MalformedInput, std::string("bad report: ") + e.what());
  }
}

PredictionRecord PredictionRecord::from_json(const json& doc) {
  try {
    PredictionRecord r;
    r.task_id = doc.at("task_id").get<std::string>();
    r.step_index = doc.at("step_index").get<int>();
    if (doc.contains("predicted_id") && doc["predicted_id"].is_string()) {
      r.predicted_id = doc["predicted_id"].get<std::string>();
    }
    return r;
  } catch (const json::exception& e) {
    throw MetricsError(MetricsErrc::MalformedInput, std::string("bad prediction record: ") + e.what());
  }
}

MetricsReport grounding_report(const std::vector<taskgen::Task>& gold, const std::vector<PredictionRecord>& predictions,
                               const std::string& mode, const std::map<std::string, std::string>& source_of_scene) {
  if (gold.empty()) throw MetricsError(MetricsErrc::Empty, "no gold tasks");
  std::map<std::pair<std::string, int>, std::optional<std::string>> pred;
  for (const auto& p : predictions) pred.emplace(std::make_pair(p.task_id, p.step_index), p.predicted_id);

  GroundVerdicts all;
  std::map<std::string, GroundVerdicts> by_source;
  long unanswered = 0, ambiguous = 0, ambiguous_ok = 0;
  for (const auto& task : gold) {
    std::vector<bool> verdicts;
    for (const auto& step : task.steps) {
      auto it = pred.find({task.task_id, step.index});
      const bool answered = it != pred.end() && it->second.has_value();
      const bool ok = answered && *it->second == step.target_id;
      unanswered += answered ? 0 : 1;
      if (task.is_ambiguous(step.index)) {
        ++ambiguous;
        ambiguous_ok += ok ? 1 : 0;
      }
      verdicts.push_back(ok);
    }
    all.push_back(verdicts);
    auto src = source_of_scene.find(task.scene_id);
    by_source[src == source_of_scene.end() ? "unknown" : src->second].push_back(verdicts);
  }

  MetricsReport r;
  r.kind = "grounding";
  r.mode = mode;
  r.tool_version = std::string(tool_version());
  r.metrics["s_acc"] = step_accuracy(all);
  r.metrics["s_acc_macro"] = step_accuracy_macro(all);
  r.metrics["t_acc"] = task_accuracy(all);
  if (ambiguous > 0) r.metrics["s_acc_ambiguous"] = static_cast<double>(ambiguous_ok) / static_cast<double>(ambiguous);
  long steps = 0, correct = 0, tasks_ok = 0;
  for (const auto& t : all) {
    steps += static_cast<long>(t.size());
    correct += std::count(t.begin(), t.end(), true);
    tasks_ok += std::all_of(t.begin(), t.end(), [](bool b) { return b; }) ? 1 : 0;
  }
  r.counts = {{"tasks", static_cast<long>(all.size())},
              {"steps", steps},
              {"correct_steps", correct},
              {"correct_tasks", tasks_ok},
              {"unanswered_steps", unanswered},
              {"ambiguous_steps", ambiguous}};
  for (const auto& [source, v] : by_source) {
    r.breakdown[source] = {{"s_acc", step_accuracy(v)}, {"t_acc", task_accuracy(v)},
                           {"tasks", static_cast<double>(v.size())}};
  }
  return r;
}

json NavRecord::to_json() const {
  return {{"episode_id", episode_id}, {"scene_id", scene_id},           {"step_index", step_index},
          {"success", outcome.success}, {"path_length", outcome.path_length}, {"geodesic", outcome.geodesic}};
}

NavRecord NavRecord::from_json(const json& doc) {
  try {
    NavRecord r;
    r.episode_id = doc.at("episode_id").get<std::string>();
    r.scene_id = doc.value("scene_id", "");
    r.step_index = doc.at("step_index").get<int>();
    // Trajectory logs use the short names S, p, l.
    if (doc.contains("S")) {
      r.outcome.success = doc.at("S").get<int>() != 0;
      r.outcome.path_length = doc.at("p").get<double>();
      r.outcome.geodesic = doc.at("l").get<double>();
    } else {
      r.outcome.success = doc.at("success").get<bool>();
      r.outcome.path_length = doc.at("path_length").get<double>();
      r.outcome.geodesic = doc.at("geodesic").get<double>();
    }
    return r;
  } catch (const json::exception& e) {
    throw MetricsError(MetricsErrc::MalformedInput, std::string("bad navigation record: ") + e.what());
  }
}

MetricsReport navigation_report(const std::vector<NavRecord>& records, const std::string& mode,
                                const std::map<std::string, std::string>& source_of_scene) {
  if (records.empty()) throw MetricsError(MetricsErrc::Empty, "no navigation records");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const NavRecord*>> episodes;
  for (const auto& r : records) {
    if (!episodes.count(r.episode_id)) order.push_back(r.episode_id);
    episodes[r.episode_id].push_back(&r);
  }
  NavOutcomes all;
  std::map<std::string, NavOutcomes> by_source;
  for (const auto& id : order) {
    auto steps = episodes[id];
    std::stable_sort(steps.begin(), steps.end(),
                     [](const NavRecord* a, const NavRecord* b) { return a->step_index < b->step_index; });
    std::vector<StepOutcome> ep;
    for (const auto* s : steps) ep.push_back(s->outcome);
    all.push_back(ep);
    auto src = source_of_scene.find(steps.front()->scene_id);
    by_source[src == source_of_scene.end() ? "unknown" : src->second].push_back(ep);
  }
  const auto rates = nav_rates(all);
  MetricsReport r;
  r.kind = "navigation";
  r.mode = mode;
  r.tool_version = std::string(tool_version());
  r.metrics = {{"s_sr", rates.s_sr}, {"t_sr", rates.t_sr}, {"spl", rates.spl}, {"spl_episode", rates.spl_episode}};
  r.counts = {{"episodes", static_cast<long>(all.size())}, {"steps", static_cast<long>(records.size())}};
  for (const auto& [source, o] : by_source) {
    const auto sr = nav_rates(o);
    r.breakdown[source] = {{"s_sr", sr.s_sr}, {"t_sr", sr.t_sr}, {"spl", sr.spl},
                           {"episodes", static_cast<double>(o.size())}};
  }
  return r;
}

std::map<std::string, MetricDelta> ablation_delta(const MetricsReport& full, const MetricsReport& nocontext) {
  if (full.kind != nocontext.kind) {
    throw MetricsError(MetricsErrc::CorpusMismatch, "reports measure different things: " + full.kind + " vs " +
                                                        nocontext.kind);
  }
  for (const char* key : {"tasks", "steps", "episodes"}) {
    auto a = full.counts.find(key);
    auto b = nocontext.counts.find(key);
    if ((a == full.counts.end()) != (b == nocontext.counts.end()) ||
        (a != full.counts.end() && a->second != b->second)) {
      throw MetricsError(MetricsErrc::CorpusMismatch, std::string("reports disagree on ") + key);
    }
  }
  std::map<std::string, MetricDelta> out;
  for (const auto& [name, value] : full.metrics) {
    auto it = nocontext.metrics.find(name);
    if (it == nocontext.metrics.end()) continue;
    MetricDelta d{value, it->second, value - it->second, std::nullopt};
    if (value != 0.0) d.relative = d.absolute / value;
    out.emplace(name, d);
  }
  return out;
}

json deltas_to_json(const std::map<std::string, MetricDelta>& deltas) {
  json doc = json::object();
  for (const auto& [name, d] : deltas) {
    doc[name] = {{"full", d.full},
                 {"nocontext", d.nocontext},
                 {"absolute", d.absolute},
                 {"relative", d.relative ? json(*d.relative) : json(nullptr)}};
  }
  return doc;
}

// ---------------------------------------------------------------- plan scoring

json PlanScore::to_json() const { return {{"task_id", task_id}, {"mark", mark}, {"raw", raw}}; }

namespace {

const char* const kPlanSystem =
    "You are a helpful assistant that can evaluate the quality of task planning given a scene, a task "
    "description, a ground truth task planning, and a predicted task planning.\n"
    "To mark a response, you should output a single integer between 1 and 5 (including 1, 5), with format "
    "```Your mark: number```.\n"
    "5 means that the predicted task planning perfectly solves the problem described in the task and matches "
    "the ground truth task planning.\n"
    "1 means that the predicted task planning is completely irrelevant to the task description and does not "
    "match the ground truth task planning.\n\n";

const char* const kPlanExample =
    "Scene graph: {'cup-1': {'relations': ['on table-2'], 'caption': 'A white ceramic cup.'}, "
    "'table-2': {'relations': [], 'caption': 'A wooden table.'}, 'sink-3': {'relations': [], 'caption': "
    "'A steel sink.'}}\n"
    "Task description: Wash the cup.\n"
    "Ground truth task planning text: 1. Go to the table. 2. Pick up the cup. 3. Carry it to the sink.\n"
    "Ground truth object id: 1. table-2 2. cup-1 3. sink-3\n"
    "Predicted task planning text: 1. Go to the table. 2. Take the cup. 3. Bring it to the sink.\n"
    "Your mark: 5";

std::string numbered(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(i + 1) + ". " + lines[i];
  }
  return out;
}

std::string section(std::string_view text, std::string_view label) {
  const auto at = text.rfind(label);
  if (at == std::string_view::npos) return "";
  const auto start = at + label.size();
  const auto end = text.find('\n', start);
  return std::string(text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
}

}  // namespace

std::vector<llm::ChatMessage> build_plan_score_prompt(const scene::SceneGraph& scene, const taskgen::Task& gold,
                                                      const PredictedPlan& predicted) {
  std::string system = kPlanSystem;
  system += taskgen::scene_graph_primer();
  system += "\n\nUsing the provided scene graph, you should decide whether predicted task planning can solve the "
            "problem described in task description.\nHere are some examples:\n```\n";
  system += kPlanExample;
  system += "\n```";
  std::vector<std::string> gold_text, gold_ids;
  for (const auto& s : gold.steps) {
    gold_text.push_back(s.instruction);
    gold_ids.push_back(s.target_id);
  }
  std::string user = "Your Turn, output with format ```Your mark: number```.\n\n";
  user += "Scene graph: " + scene::scene_to_prompt_graph(scene, false) + "\n\n";
  user += "Task description: " + gold.description + "\n\n";
  user += "Ground truth task planning text: " + numbered(gold_text) + "\n\n";
  user += "Ground truth object id: " + numbered(gold_ids) + "\n\n";
  user += "Predicted task planning text: " + numbered(predicted.step_texts);
  return {{"system", system}, {"user", user}};
}

int parse_mark(std::string_view reply) {
  static const std::regex mark_re(R"(Your mark:\s*(-?\d+))", std::regex::icase);
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(reply.begin(), reply.end(), m, mark_re)) {
    throw MetricsError(MetricsErrc::ParseError, "no 'Your mark: N' in reply");
  }
  long mark = 0;
  try {
    mark = std::stol(m[1].str());
  } catch (const std::exception&) {
    throw MetricsError(MetricsErrc::ParseError, "unreadable mark");
  }
  if (mark < 1 || mark > 5) throw MetricsError(MetricsErrc::ParseError, "mark " + std::to_string(mark) + " outside 1..5");
  return static_cast<int>(mark);
}

PlanScore plan_gpt_score(llm::ChatEndpoint& endpoint, const scene::SceneGraph& scene, const taskgen::Task& gold,
                         const PredictedPlan& predicted, const llm::RetryPolicy& policy) {
  PlanScore score;
  score.task_id = gold.task_id;
  score.raw = llm::complete_with_retry(endpoint, build_plan_score_prompt(scene, gold, predicted), policy);
  score.mark = parse_mark(score.raw);
  return score;
}

std::string plan_score_mock_reply(const std::vector<llm::ChatMessage>& messages) {
  if (messages.empty()) return "Your mark: 1";
  const auto& text = messages.back().content;
  auto words = [](const std::string& s) {
    std::set<std::string> out;
    for (auto& w : word_tokens(s)) {
      if (!std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; })) out.insert(std::move(w));
    }
    return out;
  };
  const auto gold = words(section(text, "Ground truth task planning text: "));
  const auto pred = words(section(text, "Predicted task planning text: "));
  std::size_t shared = 0;
  for (const auto& w : pred) shared += gold.count(w);
  const std::size_t uni = gold.size() + pred.size() - shared;
  const double jaccard = uni == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(uni);
  const int mark = 1 + static_cast<int>(std::lround(4.0 * jaccard));
  return "```Your mark: " + std::to_string(mark) + "```";
}

PlanScoreSummary summarize_plan_scores(const std::vector<PlanScore>& scores) {
  if (scores.empty()) throw MetricsError(MetricsErrc::Empty, "no plan scores");
  PlanScoreSummary s;
  s.count = scores.size();
  for (const auto& p : scores) s.mean += p.mark;
  s.mean /= static_cast<double>(s.count);
  for (const auto& p : scores) s.stddev += (p.mark - s.mean) * (p.mark - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(s.count));
  return s;
}

}  // namespace seqground::metrics
