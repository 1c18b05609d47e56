// seqground: command-line entry point for the whole pipeline.
#include <cstdlib>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "seqground/grounder/baseline.hpp"
#include "seqground/grounder/training.hpp"
#include "seqground/metrics.hpp"
#include "seqground/navsim.hpp"
#include "seqground/verify.hpp"

using namespace seqground;
namespace fs = std::filesystem;

namespace {

enum class CliErrc { UnknownCommand, BadFlag, Io };
std::string_view to_string(CliErrc c) {
  switch (c) {
    case CliErrc::UnknownCommand: return "UnknownCommand";
    case CliErrc::BadFlag: return "BadFlag";
    case CliErrc::Io: return "Io";
  }
  return "Unknown";
}
constexpr std::string_view module_name(CliErrc) { return "cli"; }
using CliError = ModuleError<CliErrc>;

ArtifactMeta meta_for(const std::string& command, std::uint64_t seed, const json& config) {
  return {seed, config_hash(config), command};
}

// Line-delimited and binary artifacts carry their provenance in a sidecar file.
void write_artifact(const fs::path& path, std::string_view contents, const ArtifactMeta& meta) {
  write_text_file(path, contents);
  write_text_file(path.string() + ".meta.json", meta.to_json().dump(2) + "\n");
}

// JSON documents embed it.
void write_json_artifact(const fs::path& path, json doc, const ArtifactMeta& meta) {
  doc["meta"] = meta.to_json();
  write_text_file(path, doc.dump(2) + "\n");
}

std::map<std::string, scene::SceneGraph> index_scenes(const std::vector<scene::SceneGraph>& scenes) {
  std::map<std::string, scene::SceneGraph> out;
  for (const auto& s : scenes) out.emplace(s.scene_id(), s);
  return out;
}

std::map<std::string, std::string> source_map(const std::vector<scene::SceneGraph>& scenes) {
  std::map<std::string, std::string> out;
  for (const auto& s : scenes) out.emplace(s.scene_id(), s.source().empty() ? "unknown" : s.source());
  return out;
}

const scene::SceneGraph& scene_for(const std::map<std::string, scene::SceneGraph>& scenes, const taskgen::Task& t) {
  auto it = scenes.find(t.scene_id);
  if (it == scenes.end()) {
    throw taskgen::TaskgenError(taskgen::TaskgenErrc::MalformedRecord, t.task_id + ": unknown scene " + t.scene_id);
  }
  return it->second;
}

std::unique_ptr<llm::ChatEndpoint> chat_endpoint(bool mock, llm::FunctionChatEndpoint::Responder responder,
                                                 const std::string& url, const std::string& model) {
  if (mock) return std::make_unique<llm::FunctionChatEndpoint>(std::move(responder));
  // Flags win over the environment.
  if (!url.empty()) {
    const char* key = std::getenv("SG_LLM_API_KEY");
    if (!key || !*key) throw llm::LlmError(llm::LlmErrc::AuthMissing, "SG_LLM_API_KEY is not set");
    return std::make_unique<llm::HttpChatEndpoint>(url, key, model.empty() ? "gpt-4" : model);
  }
  return llm::HttpChatEndpoint::from_env();
}

std::string mode_tag(bool no_context) { return no_context ? "NoContext" : "Full"; }

// Config file values override flags: nested {"<subcommand>": {...}} entries must name an
// option of that subcommand, top-level entries apply wherever the option exists.
void apply_run_config(CLI::App& sub, const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw CliError(CliErrc::BadFlag, "run config " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw CliError(CliErrc::BadFlag, "run config must be a JSON object");
  auto set = [&](const std::string& key, const json& value, bool strict) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt) {
      if (strict) throw CliError(CliErrc::BadFlag, "run config: " + sub.get_name() + " has no option --" + key);
      return;
    }
    opt->clear();
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(v.is_string() ? v.get<std::string>() : v.dump());
    } else {
      opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
    }
    opt->run_callback();
  };
  for (const auto& [key, value] : doc.items()) {
    if (value.is_object()) continue;
    set(key, value, false);
  }
  if (doc.contains(sub.get_name()) && doc[sub.get_name()].is_object()) {
    for (const auto& [key, value] : doc[sub.get_name()].items()) set(key, value, true);
  }
}

// ------------------------------------------------------------------ subcommands

struct SynthOpts {
  std::uint64_t seed = 7;
  int n_scenes = 200, tasks_per_scene = 4, min_distractors = 2, max_distractors = 4;
  double room_size = 8.0;
  std::string out;
};

int run_synth(const SynthOpts& o) {
  taskgen::SynthConfig cfg{o.seed, o.n_scenes, o.min_distractors, o.max_distractors, o.tasks_per_scene, o.room_size};
  const auto corpus = taskgen::synth_context_corpus(cfg);
  const json config{{"seed", o.seed},
                    {"n_scenes", o.n_scenes},
                    {"tasks_per_scene", o.tasks_per_scene},
                    {"min_distractors", o.min_distractors},
                    {"max_distractors", o.max_distractors},
                    {"room_size", o.room_size}};
  const auto meta = meta_for("synth", o.seed, config);
  write_artifact(fs::path(o.out) / "scenes.jsonl", scene::corpus_to_jsonl(corpus.scenes), meta);
  write_artifact(fs::path(o.out) / "tasks.jsonl", taskgen::tasks_to_jsonl(corpus.tasks), meta);
  std::cout << "synth: " << corpus.scenes.size() << " scenes, " << corpus.tasks.size() << " tasks -> " << o.out << "\n";
  return 0;
}

struct GenerateOpts {
  std::string scenes, out, endpoint, model;
  bool mock = false;
  int tasks_per_scene = taskgen::kDefaultTasksPerScene;
  int retries = 2;
  std::uint64_t seed = 7;
};

int run_generate(const GenerateOpts& o) {
  const auto scenes = scene::load_corpus(o.scenes);
  auto endpoint = chat_endpoint(o.mock, taskgen::simulated_generation_reply, o.endpoint, o.model);
  llm::RetryPolicy policy;
  policy.retries = o.retries;
  std::vector<taskgen::Task> tasks;
  std::vector<json> rejects;
  for (const auto& s : scenes) {
    auto result = taskgen::request_tasks(*endpoint, s, policy, o.tasks_per_scene);
    for (auto& t : result.tasks) tasks.push_back(std::move(t));
    for (const auto& r : result.rejects) {
      rejects.push_back({{"scene_id", s.scene_id()},
                         {"reason", taskgen::to_string(r.reason)},
                         {"detail", r.detail},
                         {"raw_block", r.raw_block}});
    }
  }
  const json config{{"seed", o.seed}, {"tasks_per_scene", o.tasks_per_scene}, {"mock", o.mock}, {"model", o.model}};
  const auto meta = meta_for("generate", o.seed, config);
  write_artifact(o.out, taskgen::tasks_to_jsonl(tasks), meta);
  write_artifact(o.out + ".rejects.jsonl", to_jsonl(rejects), meta);
  std::cout << "generate: " << tasks.size() << " tasks kept, " << rejects.size() << " blocks rejected\n";
  return 0;
}

struct StatsOpts {
  std::string tasks, scenes, out;
};

int run_stats(const StatsOpts& o) {
  json doc{{"tasks", taskgen::corpus_stats(taskgen::load_tasks(o.tasks)).to_json()}};
  if (!o.scenes.empty()) {
    const auto st = scene::compute_scene_stats(scene::load_corpus(o.scenes));
    doc["scenes"] = {{"num_scenes", st.num_scenes},
                     {"total_objects", st.total_objects},
                     {"avg_objects_per_scene", st.avg_report()}};
  }
  std::cout << doc.dump(2) << "\n";
  if (!o.out.empty()) write_json_artifact(o.out, doc, meta_for("stats", 0, json::object()));
  return 0;
}

struct ServeOpts {
  std::string store, host = "127.0.0.1", scenes, tasks;
  int port = 8080;
};

int run_serve(const ServeOpts& o) {
  verify::ReviewService service(o.store);
  if (!o.tasks.empty()) {
    if (o.scenes.empty()) throw CliError(CliErrc::BadFlag, "--tasks needs --scenes");
    const auto added = service.store().import(scene::load_corpus(o.scenes), taskgen::load_tasks(o.tasks));
    std::cout << "serve: imported " << added << " tasks\n";
  }
  std::cout << "serve: listening on http://" << o.host << ":" << o.port << std::endl;
  service.run(o.host, o.port);
  return 0;
}

struct ExportOpts {
  std::string store, out;
};

int run_export(const ExportOpts& o) {
  const verify::ReviewStore store(o.store);
  const auto tasks = store.export_verified();
  write_artifact(o.out, taskgen::tasks_to_jsonl(tasks), meta_for("export", 0, json::object()));
  std::cout << "export: " << tasks.size() << " verified tasks -> " << o.out << "\n";
  return 0;
}

struct TrainOpts {
  std::string scenes, tasks, config, out;
  std::uint64_t seed = 7;
  int epochs = -1, batch = -1, embed_dim = -1, layers = -1, heads = -1;
  double lr = -1.0;
  bool no_context = false;
};

int run_train(const TrainOpts& o) {
  grounder::ModelConfig model;
  grounder::TrainHyper hyper;
  if (!o.config.empty()) {
    const auto doc = json::parse(read_text_file(o.config));
    if (doc.contains("model")) model = grounder::ModelConfig::from_json(doc["model"]);
    if (doc.contains("hyper")) hyper = grounder::TrainHyper::from_json(doc["hyper"]);
  }
  model.seed = o.seed;
  if (o.embed_dim > 0) model.embed_dim = o.embed_dim;
  if (o.layers > 0) model.n_layers = o.layers;
  if (o.heads > 0) model.n_heads = o.heads;
  if (o.epochs > 0) hyper.epochs = o.epochs;
  if (o.batch > 0) hyper.batch = o.batch;
  if (o.lr > 0) hyper.lr = o.lr;
  if (o.no_context) hyper.mode = grounder::ContextMode::NoContext;

  const auto scenes = scene::load_corpus(o.scenes);
  const auto tasks = taskgen::load_tasks(o.tasks);
  auto result = grounder::train(scenes, tasks, model, hyper, [](const grounder::EpochReport& r, const auto&) {
    std::cout << "epoch " << r.epoch << " loss " << r.mean_loss << " (grounding " << r.grounding << ", text "
              << r.instruction << ")\n";
    return true;
  });
  const json config{{"model", result.state.config.to_json()}, {"hyper", hyper.to_json()}};
  json curve = json::array();
  for (const auto& r : result.curve) {
    curve.push_back({{"epoch", r.epoch}, {"loss", r.mean_loss}, {"grounding", r.grounding}, {"text", r.instruction}});
  }
  const auto meta = meta_for("train", o.seed, config);
  write_artifact(o.out, grounder::checkpoint_bytes(result.state), meta);
  write_json_artifact(o.out + ".curve.json", {{"config", config}, {"curve", curve}}, meta);
  std::cout << "train: " << tasks.size() << " tasks, " << result.curve.size() << " epochs -> " << o.out << "\n";
  return 0;
}

struct EvalGroundOpts {
  std::string ckpt, tasks, scenes, out, report, plans_out, baseline = "model", endpoint, model;
  bool no_context = false, mock = false, plan = false;
  int beam = 5;
  std::uint64_t seed = 7;
};

int run_eval_ground(const EvalGroundOpts& o) {
  const auto scene_list = scene::load_corpus(o.scenes);
  const auto scenes = index_scenes(scene_list);
  const auto tasks = taskgen::load_tasks(o.tasks);
  if (o.baseline != "model" && o.baseline != "llm") throw CliError(CliErrc::BadFlag, "--baseline is model or llm");
  if (o.plan && o.baseline == "llm") throw CliError(CliErrc::BadFlag, "--plan needs the trained model");
  if (o.plan && o.no_context) throw CliError(CliErrc::BadFlag, "--plan decodes from the task description, drop --no-context");

  std::vector<json> lines, plan_lines;
  std::vector<metrics::PredictionRecord> records;
  long failed = 0;
  auto keep = [&](const taskgen::Task& task, const std::vector<std::string>& predicted) {
    for (const auto& p : grounder::to_step_predictions(task, predicted)) {
      lines.push_back(p.to_json());
      records.push_back({p.task_id, p.step_index,
                         p.predicted_id.empty() ? std::nullopt : std::optional<std::string>(p.predicted_id)});
    }
  };

  json config{{"baseline", o.baseline}, {"mode", mode_tag(o.no_context)}, {"plan", o.plan}, {"beam", o.beam},
              {"mock", o.mock}};
  if (o.baseline == "model") {
    if (o.ckpt.empty()) throw CliError(CliErrc::BadFlag, "--ckpt is required for the model baseline");
    const auto state = grounder::load_checkpoint(o.ckpt);
    config["model"] = state.config.to_json();
    const grounder::PredictOptions popts{o.no_context ? grounder::ContextMode::NoContext : grounder::ContextMode::Full,
                                         o.plan, o.beam};
    for (const auto& task : tasks) {
      const auto& sc = scene_for(scenes, task);
      std::vector<std::string> predicted;
      try {
        const auto out = grounder::predict_sequence(state, sc, task, popts);
        const auto ids = grounder::featurize_objects(state, sc).ids;
        for (int p : out.predicted) predicted.push_back(ids.at(static_cast<std::size_t>(p)));
        if (o.plan) plan_lines.push_back({{"task_id", task.task_id}, {"step_texts", out.step_texts}});
      } catch (const grounder::GrounderError& e) {
        ++failed;
        std::cerr << "warning: " << task.task_id << ": " << e.qualified_code() << ": " << e.what() << "\n";
      }
      keep(task, predicted);
    }
  } else {
    auto endpoint = chat_endpoint(o.mock, grounder::baseline_mock_reply, o.endpoint, o.model);
    for (const auto& task : tasks) {
      const auto& sc = scene_for(scenes, task);
      std::vector<std::string> predicted;
      if (o.no_context) {
        // Each step alone, as if it were a one-step task without a description.
        for (const auto& step : task.steps) {
          taskgen::Task single{task.task_id, task.scene_id, "", {{1, step.instruction, step.target_id}}, {}};
          predicted.push_back(grounder::llm_baseline_ground(*endpoint, sc, single).front());
        }
      } else {
        predicted = grounder::llm_baseline_ground(*endpoint, sc, task);
      }
      keep(task, predicted);
    }
  }

  auto report = metrics::grounding_report(tasks, records, mode_tag(o.no_context), source_map(scene_list));
  report.tool_version = std::string(tool_version());
  report.counts["failed_tasks"] = failed;
  const auto meta = meta_for("eval-ground", o.seed, config);
  write_artifact(o.out, to_jsonl(lines), meta);
  const std::string report_path = o.report.empty() ? o.out + ".report.json" : o.report;
  write_json_artifact(report_path, report.to_json(), meta);
  if (o.plan) write_artifact(o.plans_out.empty() ? o.out + ".plans.jsonl" : o.plans_out, to_jsonl(plan_lines), meta);
  std::cout << "eval-ground [" << report.mode << "]: s_acc " << report.metrics.at("s_acc") << ", t_acc "
            << report.metrics.at("t_acc") << " over " << report.counts.at("tasks") << " tasks -> " << report_path
            << "\n";
  return 0;
}

struct EvalNavOpts {
  std::string scenes, tasks, out, report, episodes_out, agent = "oracle";
  bool no_context = false;
  int episodes_per_task = 1, max_tasks = 0;
  std::uint64_t seed = 7;
  double resolution = 0.125, inflation = 0.20;
};

int run_eval_nav(const EvalNavOpts& o) {
  if (o.episodes_per_task <= 0) throw CliError(CliErrc::BadFlag, "--episodes-per-task must be positive");
  const auto scene_list = scene::load_corpus(o.scenes);
  const auto scenes = index_scenes(scene_list);
  auto tasks = taskgen::load_tasks(o.tasks);
  if (o.max_tasks > 0 && static_cast<std::size_t>(o.max_tasks) < tasks.size()) tasks.resize(static_cast<std::size_t>(o.max_tasks));
  const auto kind = navsim::agent_kind_from_string(o.agent);
  auto agent = navsim::make_agent(kind, {.seed = o.seed});
  navsim::GridConfig gcfg;
  gcfg.resolution = o.resolution;
  gcfg.inflation_radius = o.inflation;

  std::map<std::string, navsim::OccupancyGrid> grids;
  std::vector<json> traj, episodes;
  std::vector<metrics::NavRecord> records;
  long skipped = 0;
  for (const auto& task : tasks) {
    const auto& sc = scene_for(scenes, task);
    auto g = grids.find(sc.scene_id());
    if (g == grids.end()) g = grids.emplace(sc.scene_id(), navsim::build_grid_from_scene(sc, gcfg)).first;
    for (int k = 0; k < o.episodes_per_task; ++k) {
      navsim::Episode ep;
      try {
        ep = navsim::sample_episode(sc, task, g->second, o.seed, k);
      } catch (const navsim::NavError& e) {
        ++skipped;
        std::cerr << "warning: " << task.task_id << ": " << e.qualified_code() << ": " << e.what() << "\n";
        continue;
      }
      const auto log = navsim::run_agent(ep, sc, g->second, *agent, !o.no_context);
      episodes.push_back(ep.to_json());
      for (auto& rec : log.to_records()) {
        records.push_back(metrics::NavRecord::from_json(rec));
        traj.push_back(std::move(rec));
      }
    }
  }
  if (records.empty()) throw navsim::NavError(navsim::NavErrc::NoValidStart, "no episode could be sampled");
  auto report = metrics::navigation_report(records, mode_tag(o.no_context), source_map(scene_list));
  report.tool_version = std::string(tool_version());
  report.counts["skipped_episodes"] = skipped;
  const json config{{"agent", o.agent}, {"mode", mode_tag(o.no_context)}, {"episodes_per_task", o.episodes_per_task},
                    {"seed", o.seed}, {"resolution", o.resolution}, {"inflation", o.inflation},
                    {"max_tasks", o.max_tasks}};
  const auto meta = meta_for("eval-nav", o.seed, config);
  write_artifact(o.out, to_jsonl(traj), meta);
  write_artifact(o.episodes_out.empty() ? o.out + ".episodes.jsonl" : o.episodes_out, to_jsonl(episodes), meta);
  const std::string report_path = o.report.empty() ? o.out + ".report.json" : o.report;
  json doc = report.to_json();
  doc["agent"] = o.agent;
  write_json_artifact(report_path, doc, meta);
  std::cout << "eval-nav [" << o.agent << ", " << report.mode << "]: s_sr " << report.metrics.at("s_sr") << ", t_sr "
            << report.metrics.at("t_sr") << ", spl " << report.metrics.at("spl") << " over "
            << report.counts.at("episodes") << " episodes -> " << report_path << "\n";
  return 0;
}

struct ReportOpts {
  std::string predictions, gold, scenes, out, mode = "Full";
  bool nav = false;
};

int run_report(const ReportOpts& o) {
  std::map<std::string, std::string> sources;
  if (!o.scenes.empty()) sources = source_map(scene::load_corpus(o.scenes));
  const auto lines = read_jsonl(o.predictions);
  metrics::MetricsReport report;
  if (o.nav) {
    std::vector<metrics::NavRecord> records;
    for (const auto& l : lines) records.push_back(metrics::NavRecord::from_json(l));
    report = metrics::navigation_report(records, o.mode, sources);
  } else {
    if (o.gold.empty()) throw CliError(CliErrc::BadFlag, "--gold is required for grounding reports");
    std::vector<metrics::PredictionRecord> records;
    for (const auto& l : lines) records.push_back(metrics::PredictionRecord::from_json(l));
    report = metrics::grounding_report(taskgen::load_tasks(o.gold), records, o.mode, sources);
  }
  report.tool_version = std::string(tool_version());
  write_json_artifact(o.out, report.to_json(), meta_for("report", 0, {{"nav", o.nav}, {"mode", o.mode}}));
  for (const auto& [k, v] : report.metrics) std::cout << k << " " << v << "\n";
  return 0;
}

struct AblateOpts {
  std::string full, nocontext, out;
};

int run_ablate(const AblateOpts& o) {
  const auto full = metrics::MetricsReport::from_json(json::parse(read_text_file(o.full)));
  const auto iso = metrics::MetricsReport::from_json(json::parse(read_text_file(o.nocontext)));
  const auto deltas = metrics::ablation_delta(full, iso);
  write_json_artifact(o.out, {{"kind", full.kind}, {"deltas", metrics::deltas_to_json(deltas)}},
                      meta_for("ablate", 0, json::object()));
  for (const auto& [name, d] : deltas) {
    std::cout << name << ": full " << d.full << ", no-context " << d.nocontext << ", drop " << d.absolute;
    if (d.relative) std::cout << " (" << *d.relative * 100.0 << "% relative)";
    std::cout << "\n";
  }
  return 0;
}

struct ScorePlansOpts {
  std::string scenes, gold, pred, out, endpoint, model;
  bool mock = false;
  std::uint64_t seed = 7;
};

int run_score_plans(const ScorePlansOpts& o) {
  const auto scenes = index_scenes(scene::load_corpus(o.scenes));
  std::map<std::string, taskgen::Task> gold;
  for (auto& t : taskgen::load_tasks(o.gold)) gold.emplace(t.task_id, std::move(t));
  auto endpoint = chat_endpoint(o.mock, metrics::plan_score_mock_reply, o.endpoint, o.model);
  std::vector<metrics::PlanScore> scores;
  std::vector<json> lines;
  for (const auto& l : read_jsonl(o.pred)) {
    const auto id = l.at("task_id").get<std::string>();
    auto it = gold.find(id);
    if (it == gold.end()) {
      throw metrics::MetricsError(metrics::MetricsErrc::CorpusMismatch, "plan for unknown task " + id);
    }
    const metrics::PredictedPlan plan{l.at("step_texts").get<std::vector<std::string>>()};
    auto s = metrics::plan_gpt_score(*endpoint, scene_for(scenes, it->second), it->second, plan);
    lines.push_back(s.to_json());
    scores.push_back(std::move(s));
  }
  const auto summary = metrics::summarize_plan_scores(scores);
  const json config{{"mock", o.mock}, {"model", o.model}};
  const auto meta = meta_for("score-plans", o.seed, config);
  write_artifact(o.out, to_jsonl(lines), meta);
  write_json_artifact(o.out + ".summary.json",
                      {{"mean", summary.mean}, {"stddev", summary.stddev}, {"count", summary.count}}, meta);
  std::cout << "score-plans: mean " << summary.mean << " (sd " << summary.stddev << ") over " << summary.count
            << " plans\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential grounding toolkit: task synthesis, verification, grounding, navigation, metrics."};
  app.set_version_flag("--version", std::string(tool_version()));
  app.require_subcommand(1);
  std::string run_config;
  app.add_option("--run-config", run_config, "JSON file whose values override flags")->check(CLI::ExistingFile);

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic context-dependent corpus");
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--n-scenes", synth.n_scenes);
  c_synth->add_option("--tasks-per-scene", synth.tasks_per_scene);
  c_synth->add_option("--min-distractors", synth.min_distractors);
  c_synth->add_option("--max-distractors", synth.max_distractors);
  c_synth->add_option("--room-size", synth.room_size);
  c_synth->add_option("--out", synth.out, "Output directory")->required();

  GenerateOpts gen;
  auto* c_gen = app.add_subcommand("generate", "Generate tasks from scene graphs with a chat model");
  c_gen->add_option("--scenes", gen.scenes)->required();
  c_gen->add_option("--out", gen.out)->required();
  c_gen->add_flag("--mock", gen.mock, "Use the offline simulated generator");
  c_gen->add_option("--tasks-per-scene", gen.tasks_per_scene);
  c_gen->add_option("--retries", gen.retries);
  c_gen->add_option("--endpoint", gen.endpoint, "Overrides SG_LLM_ENDPOINT");
  c_gen->add_option("--model", gen.model);
  c_gen->add_option("--seed", gen.seed);

  StatsOpts stats;
  auto* c_stats = app.add_subcommand("stats", "Corpus statistics");
  c_stats->add_option("--tasks", stats.tasks)->required();
  c_stats->add_option("--scenes", stats.scenes);
  c_stats->add_option("--out", stats.out);

  ServeOpts serve;
  auto* c_serve = app.add_subcommand("serve", "Run the review service");
  c_serve->add_option("--store", serve.store)->required();
  c_serve->add_option("--port", serve.port);
  c_serve->add_option("--host", serve.host);
  c_serve->add_option("--scenes", serve.scenes, "Import these scenes");
  c_serve->add_option("--tasks", serve.tasks, "Import these tasks as pending");

  ExportOpts exp;
  auto* c_export = app.add_subcommand("export", "Write the verified tasks of a review store");
  c_export->add_option("--store", exp.store)->required();
  c_export->add_option("--out", exp.out)->required();

  TrainOpts train;
  auto* c_train = app.add_subcommand("train", "Train the grounding model");
  c_train->add_option("--scenes", train.scenes)->required();
  c_train->add_option("--tasks", train.tasks)->required();
  c_train->add_option("--config", train.config, "JSON with optional \"model\" and \"hyper\" objects");
  c_train->add_option("--out", train.out, "Checkpoint path")->required();
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--epochs", train.epochs);
  c_train->add_option("--batch", train.batch);
  c_train->add_option("--lr", train.lr);
  c_train->add_option("--embed-dim", train.embed_dim);
  c_train->add_option("--layers", train.layers);
  c_train->add_option("--heads", train.heads);
  c_train->add_flag("--no-context", train.no_context, "Train with every step isolated");

  EvalGroundOpts eg;
  auto* c_eg = app.add_subcommand("eval-ground", "Ground task steps and score them");
  c_eg->add_option("--ckpt", eg.ckpt);
  c_eg->add_option("--tasks", eg.tasks)->required();
  c_eg->add_option("--scenes", eg.scenes)->required();
  c_eg->add_option("--out", eg.out, "Prediction records")->required();
  c_eg->add_option("--report", eg.report, "Defaults to <out>.report.json");
  c_eg->add_option("--baseline", eg.baseline, "model or llm")->check(CLI::IsMember({"model", "llm"}));
  c_eg->add_flag("--no-context", eg.no_context);
  c_eg->add_flag("--mock", eg.mock, "Offline stand-in for the chat baseline");
  c_eg->add_flag("--plan", eg.plan, "Decode step texts from the description");
  c_eg->add_option("--plans-out", eg.plans_out, "Defaults to <out>.plans.jsonl");
  c_eg->add_option("--beam", eg.beam);
  c_eg->add_option("--endpoint", eg.endpoint);
  c_eg->add_option("--model", eg.model);
  c_eg->add_option("--seed", eg.seed);

  EvalNavOpts en;
  auto* c_en = app.add_subcommand("eval-nav", "Run navigation episodes");
  c_en->add_option("--scenes", en.scenes)->required();
  c_en->add_option("--tasks", en.tasks)->required();
  c_en->add_option("--out", en.out, "Trajectory records")->required();
  c_en->add_option("--agent", en.agent)->check(CLI::IsMember({"oracle", "random", "modular"}));
  c_en->add_flag("--no-context", en.no_context);
  c_en->add_option("--episodes-per-task", en.episodes_per_task);
  c_en->add_option("--max-tasks", en.max_tasks, "0 = all");
  c_en->add_option("--seed", en.seed);
  c_en->add_option("--resolution", en.resolution);
  c_en->add_option("--inflation", en.inflation);
  c_en->add_option("--report", en.report, "Defaults to <out>.report.json");
  c_en->add_option("--episodes-out", en.episodes_out, "Defaults to <out>.episodes.jsonl");

  ReportOpts rep;
  auto* c_rep = app.add_subcommand("report", "Score prediction or trajectory records");
  c_rep->add_option("--predictions", rep.predictions)->required();
  c_rep->add_option("--gold", rep.gold);
  c_rep->add_option("--scenes", rep.scenes, "For the per-source breakdown");
  c_rep->add_option("--mode", rep.mode, "Mode tag written into the report");
  c_rep->add_flag("--nav", rep.nav);
  c_rep->add_option("--out", rep.out)->required();

  AblateOpts abl;
  auto* c_abl = app.add_subcommand("ablate", "Compare a full-context report with a no-context one");
  c_abl->add_option("--full", abl.full)->required();
  c_abl->add_option("--nocontext", abl.nocontext)->required();
  c_abl->add_option("--out", abl.out)->required();

  ScorePlansOpts sp;
  auto* c_sp = app.add_subcommand("score-plans", "Rate predicted plans 1-5 with a chat model");
  c_sp->add_option("--scenes", sp.scenes)->required();
  c_sp->add_option("--gold", sp.gold)->required();
  c_sp->add_option("--pred", sp.pred)->required();
  c_sp->add_option("--out", sp.out)->required();
  c_sp->add_flag("--mock", sp.mock);
  c_sp->add_option("--endpoint", sp.endpoint);
  c_sp->add_option("--model", sp.model);
  c_sp->add_option("--seed", sp.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    // A bare word where the subcommand should be is an unknown command, anything else a bad flag.
    bool stray_word = false;
    for (int i = 1; i < argc; ++i) {
      const std::string_view a = argv[i];
      if (a == "--run-config") {
        ++i;
      } else if (!a.starts_with("-")) {
        stray_word = true;
        break;
      }
    }
    const auto code = app.get_subcommands().empty() && stray_word ? CliErrc::UnknownCommand : CliErrc::BadFlag;
    std::cerr << "error: cli/" << to_string(code) << ": " << e.what() << "\n\n" << app.help();
    return 64;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!run_config.empty()) apply_run_config(*sub, run_config);
    const std::string name = sub->get_name();
    if (name == "synth") return run_synth(synth);
    if (name == "generate") return run_generate(gen);
    if (name == "stats") return run_stats(stats);
    if (name == "serve") return run_serve(serve);
    if (name == "export") return run_export(exp);
    if (name == "train") return run_train(train);
    if (name == "eval-ground") return run_eval_ground(eg);
    if (name == "eval-nav") return run_eval_nav(en);
    if (name == "report") return run_report(rep);
    if (name == "ablate") return run_ablate(abl);
    if (name == "score-plans") return run_score_plans(sp);
    throw CliError(CliErrc::UnknownCommand, name);
  } catch (const Error& e) {
    std::cerr << "error: " << e.qualified_code() << ": " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: cli/BadInput: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: cli/Io: " << e.what() << "\n";
    return 2;
  }
}
