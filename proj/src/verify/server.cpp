#include <chrono>
#include <ctime>
#include <thread>

#include "httplib.h"
#include "seqground/verify.hpp"

namespace seqground::verify {

namespace {

int status_for(VerifyErrc code) {
  switch (code) {
    case VerifyErrc::UnknownTask:
    case VerifyErrc::UnknownScene: return 404;
    case VerifyErrc::ConcurrentEdit:
    case VerifyErrc::NotInReviseQueue: return 409;
    case VerifyErrc::ValidationFailed:
    case VerifyErrc::IncompleteRecord: return 422;
    case VerifyErrc::MalformedRequest: return 400;
    default: return 500;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_header("Access-Control-Allow-Origin", "*");
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

json task_view(const TaskEntry& e) {
  json doc = taskgen::task_to_json(e.task);
  doc["queue"] = to_string(e.queue);
  doc["revision"] = e.revision;
  return doc;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<long> revision_of(const json& body) {
  if (!body.is_object() || !body.contains("revision") || body["revision"].is_null()) return std::nullopt;
  if (!body["revision"].is_number_integer()) {
    throw VerifyError(VerifyErrc::MalformedRequest, "revision must be an integer");
  }
  return body["revision"].get<long>();
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw VerifyError(VerifyErrc::MalformedRequest, std::string("request body is not JSON: ") + e.what());
  }
}

}  // namespace

struct ReviewService::Impl {
  httplib::Server server;
  std::thread thread;
};

ReviewService::ReviewService(std::filesystem::path store_dir)
    : store_(std::move(store_dir)), impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;

  // Every handler runs inside this wrapper so module errors map onto HTTP statuses.
  auto guarded = [](auto fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const VerifyError& e) {
        send_error(res, status_for(e.kind()), e.qualified_code(), e.what());
      } catch (const Error& e) {
        send_error(res, 422, e.qualified_code(), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "verify/Internal", e.what());
      }
    };
  };

  srv.Get(R"(/scenes/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::shared_lock lock(mutex_);
            const auto& scenes = store_.state().scenes;
            auto it = scenes.find(req.matches[1].str());
            if (it == scenes.end()) throw VerifyError(VerifyErrc::UnknownScene, "unknown scene: " + req.matches[1].str());
            send_json(res, 200, scene::scene_to_json(it->second, true));
          }));

  srv.Get("/tasks", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::optional<Queue> queue;
            if (req.has_param("queue")) {
              queue = queue_from_string(req.get_param_value("queue"));
              if (!queue) throw VerifyError(VerifyErrc::MalformedRequest, "unknown queue: " + req.get_param_value("queue"));
            }
            const std::string scene = req.has_param("scene") ? req.get_param_value("scene") : "";
            std::shared_lock lock(mutex_);
            json list = json::array();
            for (const auto& [id, e] : store_.state().tasks) {
              if (queue && e.queue != *queue) continue;
              if (!scene.empty() && e.task.scene_id != scene) continue;
              list.push_back(task_view(e));
            }
            send_json(res, 200, {{"tasks", list}});
          }));

  srv.Get(R"(/tasks/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::shared_lock lock(mutex_);
            const auto& tasks = store_.state().tasks;
            auto it = tasks.find(req.matches[1].str());
            if (it == tasks.end()) throw VerifyError(VerifyErrc::UnknownTask, "unknown task: " + req.matches[1].str());
            json doc = task_view(it->second);
            const auto& rec = it->second.last_record;
            doc["record"] = rec ? rec->to_json() : json(nullptr);
            doc["disposition"] = rec ? disposition_of(*rec, it->second.task.steps.size()).to_json() : json(nullptr);
            send_json(res, 200, doc);
          }));

  srv.Post("/annotations", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             AnnotationRecord record = AnnotationRecord::from_json(body);
             if (record.timestamp.empty()) record.timestamp = utc_now();
             const auto expected = revision_of(body);
             std::unique_lock lock(mutex_);
             const Disposition d = store_.record_annotation(record, expected);
             const auto& e = store_.state().tasks.at(record.task_id);
             send_json(res, 200, {{"task_id", record.task_id},
                                  {"disposition", d.to_json()},
                                  {"queue", to_string(e.queue)},
                                  {"revision", e.revision}});
           }));

  srv.Post(R"(/tasks/([^/]+)/revision)", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const json& doc = body.is_object() && body.contains("task") ? body["task"] : body;
             taskgen::Task edited;
             try {
               edited = taskgen::task_from_json(doc);
             } catch (const Error& e) {
               throw VerifyError(VerifyErrc::MalformedRequest, std::string("edited task: ") + e.what());
             }
             const auto expected = body.is_object() && body.contains("task") ? revision_of(body) : std::nullopt;
             const std::string id = req.matches[1].str();
             std::unique_lock lock(mutex_);
             store_.merge_revision(id, edited, expected);
             send_json(res, 200, task_view(store_.state().tasks.at(id)));
           }));

  srv.Get("/queues", guarded([this](const httplib::Request&, httplib::Response& res) {
            std::shared_lock lock(mutex_);
            json doc = json::object();
            for (const auto& [q, n] : store_.state().queue_counts()) doc[std::string(to_string(q))] = n;
            send_json(res, 200, doc);
          }));

  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

ReviewService::~ReviewService() { stop(); }

int ReviewService::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw VerifyError(VerifyErrc::Io, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void ReviewService::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw VerifyError(VerifyErrc::Io, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

void ReviewService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace seqground::verify
