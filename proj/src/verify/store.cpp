#include <algorithm>
#include <fstream>
#include <set>

#include "seqground/verify.hpp"

namespace seqground::verify {

std::string_view to_string(VerifyErrc code) {
  switch (code) {
    case VerifyErrc::IncompleteRecord: return "IncompleteRecord";
    case VerifyErrc::UnknownTask: return "UnknownTask";
    case VerifyErrc::UnknownScene: return "UnknownScene";
    case VerifyErrc::ConcurrentEdit: return "ConcurrentEdit";
    case VerifyErrc::NotInReviseQueue: return "NotInReviseQueue";
    case VerifyErrc::ValidationFailed: return "ValidationFailed";
    case VerifyErrc::MalformedLog: return "MalformedLog";
    case VerifyErrc::MalformedRequest: return "MalformedRequest";
    case VerifyErrc::Io: return "Io";
  }
  return "Unknown";
}

std::string_view to_string(DispositionKind k) {
  switch (k) {
    case DispositionKind::Accept: return "Accept";
    case DispositionKind::Revise: return "Revise";
    case DispositionKind::Discard: return "Discard";
  }
  return "Unknown";
}

std::string_view to_string(Queue q) {
  switch (q) {
    case Queue::Pending: return "pending";
    case Queue::Revise: return "revise";
    case Queue::Discarded: return "discarded";
    case Queue::Verified: return "verified";
  }
  return "unknown";
}

std::optional<Queue> queue_from_string(std::string_view name) {
  for (Queue q : {Queue::Pending, Queue::Revise, Queue::Discarded, Queue::Verified}) {
    if (to_string(q) == name) return q;
  }
  return std::nullopt;
}

json Disposition::to_json() const { return {{"kind", to_string(kind)}, {"incorrect_count", incorrect_count}}; }

json AnnotationRecord::to_json() const {
  json v = json::array();
  for (const auto& s : verdicts) {
    v.push_back({{"step_index", s.step_index},
                 {"verdict", s.verdict == Verdict::Correct ? "correct" : "incorrect"},
                 {"note", s.note}});
  }
  return {{"task_id", task_id}, {"annotator_id", annotator_id}, {"verdicts", v}, {"timestamp", timestamp}};
}

AnnotationRecord AnnotationRecord::from_json(const json& doc) {
  AnnotationRecord r;
  try {
    r.task_id = doc.at("task_id").get<std::string>();
    r.annotator_id = doc.at("annotator_id").get<std::string>();
    r.timestamp = doc.value("timestamp", std::string());
    for (const auto& v : doc.at("verdicts")) {
      StepVerdict s;
      s.step_index = v.at("step_index").get<int>();
      const auto word = v.at("verdict").get<std::string>();
      if (word == "correct") {
        s.verdict = Verdict::Correct;
      } else if (word == "incorrect") {
        s.verdict = Verdict::Incorrect;
      } else {
        throw VerifyError(VerifyErrc::MalformedRequest, "verdict must be \"correct\" or \"incorrect\": " + word);
      }
      s.note = v.value("note", std::string());
      r.verdicts.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw VerifyError(VerifyErrc::MalformedRequest, std::string("annotation record: ") + e.what());
  }
  return r;
}

Disposition disposition_of(const std::vector<Verdict>& verdicts) {
  const int bad = static_cast<int>(std::count(verdicts.begin(), verdicts.end(), Verdict::Incorrect));
  if (bad == 0) return {DispositionKind::Accept, 0};
  if (bad == 1) return {DispositionKind::Revise, 1};
  return {DispositionKind::Discard, bad};
}

Disposition disposition_of(const AnnotationRecord& record, std::size_t n_steps) {
  if (record.verdicts.size() != n_steps || n_steps == 0) {
    throw VerifyError(VerifyErrc::IncompleteRecord, record.task_id + ": expected " + std::to_string(n_steps) +
                                                        " verdicts, got " + std::to_string(record.verdicts.size()));
  }
  std::vector<Verdict> ordered(n_steps);
  std::vector<bool> seen(n_steps, false);
  for (const auto& v : record.verdicts) {
    if (v.step_index < 1 || static_cast<std::size_t>(v.step_index) > n_steps || seen[v.step_index - 1]) {
      throw VerifyError(VerifyErrc::IncompleteRecord,
                        record.task_id + ": step " + std::to_string(v.step_index) + " missing, repeated or out of range");
    }
    seen[v.step_index - 1] = true;
    ordered[v.step_index - 1] = v.verdict;
  }
  return disposition_of(ordered);
}

json Event::to_json() const {
  switch (kind) {
    case Kind::Scene: return {{"type", "scene"}, {"scene", scene::scene_to_json(*scene, true)}};
    case Kind::Import: return {{"type", "import"}, {"task", taskgen::task_to_json(*task)}};
    case Kind::Annotation: return {{"type", "annotation"}, {"record", record->to_json()}};
    case Kind::Revision: return {{"type", "revision"}, {"task", taskgen::task_to_json(*task)}};
  }
  return {};
}

Event Event::from_json(const json& doc) {
  Event e;
  try {
    const auto type = doc.at("type").get<std::string>();
    if (type == "scene") {
      e.kind = Kind::Scene;
      e.scene = scene::load_scene_json(doc.at("scene"));
    } else if (type == "import" || type == "revision") {
      e.kind = type == "import" ? Kind::Import : Kind::Revision;
      e.task = taskgen::task_from_json(doc.at("task"));
    } else if (type == "annotation") {
      e.kind = Kind::Annotation;
      e.record = AnnotationRecord::from_json(doc.at("record"));
    } else {
      throw VerifyError(VerifyErrc::MalformedLog, "unknown event type: " + type);
    }
  } catch (const VerifyError&) {
    throw;
  } catch (const std::exception& ex) {
    throw VerifyError(VerifyErrc::MalformedLog, std::string("event: ") + ex.what());
  }
  return e;
}

std::map<Queue, std::size_t> StoreState::queue_counts() const {
  std::map<Queue, std::size_t> out{{Queue::Pending, 0}, {Queue::Revise, 0}, {Queue::Discarded, 0}, {Queue::Verified, 0}};
  for (const auto& [id, entry] : tasks) ++out[entry.queue];
  return out;
}

namespace {

Queue queue_for(DispositionKind k) {
  switch (k) {
    case DispositionKind::Accept: return Queue::Verified;
    case DispositionKind::Revise: return Queue::Revise;
    case DispositionKind::Discard: return Queue::Discarded;
  }
  return Queue::Pending;
}

TaskEntry& entry_of(StoreState& state, const std::string& id) {
  auto it = state.tasks.find(id);
  if (it == state.tasks.end()) throw VerifyError(VerifyErrc::UnknownTask, "unknown task: " + id);
  return it->second;
}

}  // namespace

void apply(StoreState& state, const Event& event) {
  switch (event.kind) {
    case Event::Kind::Scene: state.scenes.insert_or_assign(event.scene->scene_id(), *event.scene); break;
    case Event::Kind::Import: state.tasks.insert_or_assign(event.task->task_id, TaskEntry{*event.task, Queue::Pending, 0, std::nullopt}); break;
    case Event::Kind::Annotation: {
      auto& entry = entry_of(state, event.record->task_id);
      entry.queue = queue_for(disposition_of(*event.record, entry.task.steps.size()).kind);
      entry.last_record = *event.record;
      ++entry.revision;
      break;
    }
    case Event::Kind::Revision: {
      auto& entry = entry_of(state, event.task->task_id);
      entry.task = *event.task;
      entry.queue = Queue::Verified;
      ++entry.revision;
      break;
    }
  }
}

StoreState fold(const std::vector<Event>& log) {
  StoreState state;
  for (std::size_t i = 0; i < log.size(); ++i) {
    try {
      apply(state, log[i]);
    } catch (const VerifyError& e) {
      throw VerifyError(VerifyErrc::MalformedLog, "event " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return state;
}

std::vector<Event> read_log(const std::filesystem::path& path) {
  std::vector<Event> out;
  if (!std::filesystem::exists(path)) return out;
  const std::string text = read_text_file(path);
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string::npos) break;  // torn tail
    ++line_no;
    const std::string line = trim(std::string_view(text).substr(start, nl - start));
    start = nl + 1;
    if (line.empty()) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::exception& e) {
      throw VerifyError(VerifyErrc::MalformedLog, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(Event::from_json(doc));
  }
  return out;
}

ReviewStore::ReviewStore(std::filesystem::path dir) : log_path_(dir / "log.jsonl") {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw VerifyError(VerifyErrc::Io, "cannot create store directory " + dir.string() + ": " + ec.message());
  state_ = fold(read_log(log_path_));
  // Drop a torn tail so the next append starts on a fresh line.
  if (std::filesystem::exists(log_path_)) {
    const std::string text = read_text_file(log_path_);
    const auto keep = text.rfind('\n');
    const std::size_t size = keep == std::string::npos ? 0 : keep + 1;
    if (size != text.size()) std::filesystem::resize_file(log_path_, size);
  }
}

void ReviewStore::append(const Event& event) {
  // apply() validates before it mutates, so a throw here leaves both state and log untouched.
  apply(state_, event);
  std::ofstream out(log_path_, std::ios::app | std::ios::binary);
  out << event.to_json().dump() << '\n';
  out.flush();
  if (!out) {
    state_ = fold(read_log(log_path_));
    throw VerifyError(VerifyErrc::Io, "cannot append to " + log_path_.string());
  }
}

std::size_t ReviewStore::import(const std::vector<scene::SceneGraph>& scenes, const std::vector<taskgen::Task>& tasks) {
  std::map<std::string, const scene::SceneGraph*> incoming;
  for (const auto& s : scenes) incoming.emplace(s.scene_id(), &s);
  std::vector<const taskgen::Task*> fresh;
  std::set<std::string> fresh_ids;
  for (const auto& t : tasks) {
    if (state_.tasks.count(t.task_id) || fresh_ids.count(t.task_id)) continue;
    const scene::SceneGraph* sc = nullptr;
    if (auto it = state_.scenes.find(t.scene_id); it != state_.scenes.end()) {
      sc = &it->second;
    } else if (auto jt = incoming.find(t.scene_id); jt != incoming.end()) {
      sc = jt->second;
    } else {
      throw VerifyError(VerifyErrc::UnknownScene, t.task_id + ": unknown scene " + t.scene_id);
    }
    std::string detail;
    if (auto reason = taskgen::validate_task(t, *sc, &detail)) {
      throw VerifyError(VerifyErrc::ValidationFailed,
                        t.task_id + ": " + std::string(taskgen::to_string(*reason)) + " " + detail);
    }
    fresh.push_back(&t);
    fresh_ids.insert(t.task_id);
  }
  for (const auto& s : scenes) {
    if (!state_.scenes.count(s.scene_id())) append(Event{Event::Kind::Scene, s, std::nullopt, std::nullopt});
  }
  for (const auto* t : fresh) append(Event{Event::Kind::Import, std::nullopt, *t, std::nullopt});
  return fresh.size();
}

Disposition ReviewStore::record_annotation(const AnnotationRecord& record, std::optional<long> expected_revision) {
  auto it = state_.tasks.find(record.task_id);
  if (it == state_.tasks.end()) throw VerifyError(VerifyErrc::UnknownTask, "unknown task: " + record.task_id);
  const TaskEntry& entry = it->second;
  const Disposition d = disposition_of(record, entry.task.steps.size());
  if (entry.last_record && entry.last_record->annotator_id == record.annotator_id &&
      entry.last_record->verdicts == record.verdicts) {
    return d;
  }
  if (expected_revision && *expected_revision != entry.revision) {
    throw VerifyError(VerifyErrc::ConcurrentEdit, record.task_id + ": revision " + std::to_string(*expected_revision) +
                                                      " is stale (now " + std::to_string(entry.revision) + ")");
  }
  append(Event{Event::Kind::Annotation, std::nullopt, std::nullopt, record});
  return d;
}

void ReviewStore::merge_revision(const std::string& task_id, const taskgen::Task& edited,
                                 std::optional<long> expected_revision) {
  auto it = state_.tasks.find(task_id);
  if (it == state_.tasks.end()) throw VerifyError(VerifyErrc::UnknownTask, "unknown task: " + task_id);
  const TaskEntry& entry = it->second;
  if (entry.queue != Queue::Revise) {
    throw VerifyError(VerifyErrc::NotInReviseQueue, task_id + " is in the " + std::string(to_string(entry.queue)) +
                                                        " queue");
  }
  if (expected_revision && *expected_revision != entry.revision) {
    throw VerifyError(VerifyErrc::ConcurrentEdit, task_id + ": stale revision");
  }
  taskgen::Task task = edited;
  task.task_id = task_id;
  if (task.scene_id.empty()) task.scene_id = entry.task.scene_id;
  if (task.scene_id != entry.task.scene_id) {
    throw VerifyError(VerifyErrc::ValidationFailed, task_id + ": a revision cannot move the task to another scene");
  }
  auto sc = state_.scenes.find(task.scene_id);
  if (sc == state_.scenes.end()) throw VerifyError(VerifyErrc::UnknownScene, "unknown scene: " + task.scene_id);
  std::string detail;
  if (auto reason = taskgen::validate_task(task, sc->second, &detail)) {
    throw VerifyError(VerifyErrc::ValidationFailed,
                      task_id + ": " + std::string(taskgen::to_string(*reason)) + " " + detail);
  }
  append(Event{Event::Kind::Revision, std::nullopt, task, std::nullopt});
}

std::vector<taskgen::Task> ReviewStore::export_verified() const {
  std::vector<taskgen::Task> out;
  for (const auto& [id, entry] : state_.tasks) {
    if (entry.queue == Queue::Verified) out.push_back(entry.task);
  }
  return out;
}

}  // namespace seqground::verify
