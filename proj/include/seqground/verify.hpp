#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "seqground/common.hpp"
#include "seqground/error.hpp"
#include "seqground/scenegraph.hpp"
#include "seqground/taskgen.hpp"

namespace seqground::verify {

enum class VerifyErrc { IncompleteRecord, UnknownTask, UnknownScene, ConcurrentEdit, NotInReviseQueue,
                        ValidationFailed, MalformedLog, MalformedRequest, Io };
constexpr std::string_view module_name(VerifyErrc) { return "verify"; }
std::string_view to_string(VerifyErrc code);
using VerifyError = ModuleError<VerifyErrc>;

enum class Verdict { Correct, Incorrect };

struct StepVerdict {
  int step_index = 0;  // 1-based
  Verdict verdict = Verdict::Correct;
  std::string note;    // free text, e.g. the rule the annotator applied
  friend bool operator==(const StepVerdict&, const StepVerdict&) = default;
};

struct AnnotationRecord {
  std::string task_id;
  std::string annotator_id;
  std::vector<StepVerdict> verdicts;
  std::string timestamp;

  json to_json() const;
  /// Throws MalformedRequest.
  static AnnotationRecord from_json(const json& doc);
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

enum class DispositionKind { Accept, Revise, Discard };
std::string_view to_string(DispositionKind k);

struct Disposition {
  DispositionKind kind = DispositionKind::Accept;
  int incorrect_count = 0;
  json to_json() const;
  friend bool operator==(const Disposition&, const Disposition&) = default;
};

/// Throws IncompleteRecord unless the verdicts cover steps 1..n_steps exactly once.
Disposition disposition_of(const AnnotationRecord& record, std::size_t n_steps);
/// Rule only, for a verdict vector already known to be complete.
Disposition disposition_of(const std::vector<Verdict>& verdicts);

enum class Queue { Pending, Revise, Discarded, Verified };
std::string_view to_string(Queue q);
std::optional<Queue> queue_from_string(std::string_view name);

struct TaskEntry {
  taskgen::Task task;  // current payload (the edited one after a revision)
  Queue queue = Queue::Pending;
  long revision = 0;   // bumped by every applied annotation or revision
  std::optional<AnnotationRecord> last_record;
  friend bool operator==(const TaskEntry&, const TaskEntry&) = default;
};

/// One log line.
struct Event {
  enum class Kind { Scene, Import, Annotation, Revision } kind = Kind::Import;
  std::optional<scene::SceneGraph> scene;
  std::optional<taskgen::Task> task;           // Import, Revision
  std::optional<AnnotationRecord> record;      // Annotation

  json to_json() const;
  static Event from_json(const json& doc);
};

/// Queues and payloads derived from the log.
struct StoreState {
  std::map<std::string, scene::SceneGraph> scenes;
  std::map<std::string, TaskEntry> tasks;

  std::map<Queue, std::size_t> queue_counts() const;
  friend bool operator==(const StoreState&, const StoreState&) = default;
};

/// Applies one already-validated event.
void apply(StoreState& state, const Event& event);
StoreState fold(const std::vector<Event>& log);

/// Reads a log file. A final line without its newline is a torn write and is ignored;
/// any other unreadable line throws MalformedLog.
std::vector<Event> read_log(const std::filesystem::path& path);

/// Append-only store in `<dir>/log.jsonl`. Not thread-safe; the service serializes writers.
class ReviewStore {
 public:
  /// Creates the directory when missing and replays the existing log.
  explicit ReviewStore(std::filesystem::path dir);

  const StoreState& state() const noexcept { return state_; }
  const std::filesystem::path& log_path() const noexcept { return log_path_; }

  /// Adds scenes and pending tasks that are not yet known; known ids are skipped.
  /// Returns the number of tasks added. Throws UnknownScene, ValidationFailed.
  std::size_t import(const std::vector<scene::SceneGraph>& scenes, const std::vector<taskgen::Task>& tasks);

  /// Identical re-submission of the task's latest record (same annotator and verdicts) is a
  /// no-op. `expected_revision`, when given, must equal the task's revision.
  /// Throws UnknownTask, IncompleteRecord, ConcurrentEdit.
  Disposition record_annotation(const AnnotationRecord& record, std::optional<long> expected_revision = {});

  /// Throws UnknownTask, NotInReviseQueue, ValidationFailed, ConcurrentEdit.
  void merge_revision(const std::string& task_id, const taskgen::Task& edited,
                      std::optional<long> expected_revision = {});

  /// Verified tasks in task_id order.
  std::vector<taskgen::Task> export_verified() const;

 private:
  void append(const Event& event);

  std::filesystem::path log_path_;
  StoreState state_;
};

/// HTTP front end for the review UI. Routes:
///   GET  /scenes/{id}            scene document with boxes
///   GET  /tasks?scene=&queue=    task list (both filters optional)
///   GET  /tasks/{id}             task, queue, revision, latest record
///   POST /annotations            AnnotationRecord (+ optional "revision") -> disposition
///   POST /tasks/{id}/revision    {"task": Task, "revision"?} or a bare Task
///   GET  /queues                 counts per queue
/// Errors answer {"error": {"code": "verify/<Code>", "message"}} with 400/404/409/422.
class ReviewService {
 public:
  explicit ReviewService(std::filesystem::path store_dir);
  ~ReviewService();
  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port. Returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

  ReviewStore& store() { return store_; }

 private:
  struct Impl;
  ReviewStore store_;
  std::shared_mutex mutex_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace seqground::verify
