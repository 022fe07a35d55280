#include "aegle/service.hpp"

#include "aegle/errors.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <condition_variable>
#include <thread>

namespace aegle {

struct SessionRegistry::Entry {
  // Held for the duration of a round; serializes every Session mutation.
  std::mutex run_mutex;
  std::unique_ptr<Session> session;

  // Guards the event log and the latest state snapshot; never held across
  // a model call, so readers are not blocked by a running round.
  mutable std::mutex log_mutex;
  mutable std::condition_variable log_cv;
  std::vector<SessionEvent> events;
  ClinicalState latest;
  bool closed = false;
};

SessionRegistry::SessionRegistry(SessionConfig config) : config_(std::move(config)) { config_.validate(); }

SessionRegistry::~SessionRegistry() = default;

std::shared_ptr<SessionRegistry::Entry> SessionRegistry::find(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session_id);
  return it == sessions_.end() ? nullptr : it->second;
}

SessionRegistry::Created SessionRegistry::create(const std::string& department, const std::string& label) {
  if (trim(department).empty()) throw ValidationError("department is required");
  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = "s" + std::to_string(++counter_);
  }
  auto entry = std::make_shared<Entry>();
  entry->session = std::make_unique<Session>(id, label.empty() ? id : label, department, config_);
  Entry* raw = entry.get();
  entry->session->set_event_sink([raw](const SessionEvent& e) {
    {
      std::lock_guard lock(raw->log_mutex);
      raw->events.push_back(e);
      if (e.event == "session_closed") raw->closed = true;
    }
    raw->log_cv.notify_all();
  });
  entry->session->set_state_observer([raw](const ClinicalState& s) {
    std::lock_guard lock(raw->log_mutex);
    raw->latest = s;
  });
  std::string question;
  {
    std::lock_guard run(entry->run_mutex);
    {
      std::lock_guard lock(entry->log_mutex);
      entry->latest = entry->session->state();
    }
    entry->session->start();
    question = entry->session->last_question();
  }
  {
    std::lock_guard lock(mutex_);
    sessions_.emplace(id, entry);
  }
  return Created{id, question};
}

SessionRegistry::PostResult SessionRegistry::post_message(const std::string& session_id, const std::string& text) {
  auto entry = find(session_id);
  if (!entry) return PostResult{PostStatus::UnknownSession, "unknown session " + session_id};
  if (trim(text).empty()) return PostResult{PostStatus::Invalid, "empty message"};
  std::lock_guard run(entry->run_mutex);
  Session& s = *entry->session;
  if (!s.awaiting_patient()) {
    return PostResult{PostStatus::Closed, "session " + session_id + " no longer accepts patient messages (stage " +
                                              std::string(to_string(s.state().stage)) + ")"};
  }
  s.submit_patient_text(text);
  if (s.ready_for_synthesis()) s.run_diagnostic_synthesis();
  PostResult result;
  result.body = Json{{"session_id", session_id},
                     {"stage", to_string(s.state().stage)},
                     {"closed", s.closed()},
                     {"stop_reason", to_string(s.stop_reason())},
                     {"revision", s.state().revision}};
  if (s.awaiting_patient()) result.body["question"] = s.last_question();
  return result;
}

std::optional<std::vector<SessionEvent>> SessionRegistry::events_after(const std::string& session_id,
                                                                       std::uint64_t after) const {
  auto entry = find(session_id);
  if (!entry) return std::nullopt;
  std::lock_guard lock(entry->log_mutex);
  std::vector<SessionEvent> out;
  for (const auto& e : entry->events) {
    if (e.seq > after) out.push_back(e);
  }
  return out;
}

bool SessionRegistry::wait_for_events(const std::string& session_id, std::uint64_t after,
                                      std::chrono::milliseconds timeout) const {
  auto entry = find(session_id);
  if (!entry) return false;
  std::unique_lock lock(entry->log_mutex);
  entry->log_cv.wait_for(lock, timeout, [&] {
    return entry->closed || (!entry->events.empty() && entry->events.back().seq > after);
  });
  return true;
}

std::optional<bool> SessionRegistry::closed(const std::string& session_id) const {
  auto entry = find(session_id);
  if (!entry) return std::nullopt;
  std::lock_guard lock(entry->log_mutex);
  return entry->closed;
}

std::optional<std::string> SessionRegistry::ipn(const std::string& session_id) const {
  auto entry = find(session_id);
  if (!entry) return std::nullopt;
  std::lock_guard lock(entry->log_mutex);
  return render_ipn(entry->latest);
}

std::optional<Transcript> SessionRegistry::transcript(const std::string& session_id) const {
  auto entry = find(session_id);
  if (!entry) return std::nullopt;
  std::lock_guard run(entry->run_mutex);
  return entry->session->transcript();
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, Json{{"error", message}});
}

std::string ndjson(const std::vector<SessionEvent>& events) {
  std::string out;
  for (const auto& e : events) out += to_json(e).dump() + "\n";
  return out;
}

}  // namespace

struct HttpService::Impl {
  explicit Impl(SessionConfig config) : registry(std::move(config)) { routes(); }

  void routes() {
    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      Json body = Json::object();
      if (!req.body.empty()) {
        try {
          body = Json::parse(req.body);
        } catch (const Json::exception&) {
          return send_error(res, 400, "malformed JSON body");
        }
      }
      if (!body.is_object()) return send_error(res, 400, "body must be a JSON object");
      try {
        const auto created = registry.create(body.value("department", std::string("gastroenterology")),
                                             body.value("label", std::string()));
        send_json(res, 201, Json{{"session_id", created.session_id}, {"question", created.question}});
      } catch (const Error& e) {
        send_error(res, 400, e.what());
      }
    });

    server.Post(R"(/sessions/([^/]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      Json body;
      try {
        body = Json::parse(req.body);
      } catch (const Json::exception&) {
        return send_error(res, 400, "malformed JSON body");
      }
      if (!body.is_object() || !body.contains("text") || !body.at("text").is_string()) {
        return send_error(res, 400, "body must be {\"text\": string}");
      }
      const auto result = registry.post_message(id, body.at("text").get<std::string>());
      switch (result.status) {
        case SessionRegistry::PostStatus::Accepted: return send_json(res, 200, result.body);
        case SessionRegistry::PostStatus::UnknownSession: return send_error(res, 404, result.message);
        case SessionRegistry::PostStatus::Closed: return send_error(res, 409, result.message);
        case SessionRegistry::PostStatus::Invalid: return send_error(res, 400, result.message);
      }
    });

    server.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      std::uint64_t from = 0;
      if (req.has_param("from")) {
        try {
          from = std::stoull(req.get_param_value("from"));
        } catch (const std::exception&) {
          return send_error(res, 400, "from must be a non-negative integer");
        }
      }
      const auto snapshot = registry.events_after(id, from);
      if (!snapshot) return send_error(res, 404, "unknown session " + id);
      if (req.get_param_value("wait") == "0") {
        res.set_content(ndjson(*snapshot), "application/x-ndjson");
        return;
      }
      auto cursor = std::make_shared<std::uint64_t>(from);
      res.set_chunked_content_provider(
          "application/x-ndjson", [this, id, cursor](std::size_t, httplib::DataSink& sink) {
            if (stopping) {
              sink.done();
              return true;
            }
            registry.wait_for_events(id, *cursor, std::chrono::milliseconds(250));
            const auto events = registry.events_after(id, *cursor);
            if (!events) return false;
            if (!events->empty()) {
              const auto chunk = ndjson(*events);
              if (!sink.write(chunk.data(), chunk.size())) return false;
              *cursor = events->back().seq;
            }
            if (registry.closed(id).value_or(true) && registry.events_after(id, *cursor)->empty()) {
              sink.done();
            }
            return sink.is_writable();
          });
    });

    server.Get(R"(/sessions/([^/]+)/ipn)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto note = registry.ipn(id);
      if (!note) return send_error(res, 404, "unknown session " + id);
      res.set_content(*note, "text/markdown; charset=utf-8");
    });

    server.Get(R"(/sessions/([^/]+)/transcript)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto t = registry.transcript(id);
      if (!t) return send_error(res, 404, "unknown session " + id);
      send_json(res, 200, to_json(*t));
    });
  }

  SessionRegistry registry;
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> stopping{false};
};

HttpService::HttpService(SessionConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpService::~HttpService() { stop(); }

SessionRegistry& HttpService::registry() { return impl_->registry; }

namespace {

int bind_server(httplib::Server& server, const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

}  // namespace

int HttpService::start(const std::string& host, int port) {
  const int bound = bind_server(impl_->server, host, port);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  spdlog::info("serving on {}:{}", host, bound);
  return bound;
}

void HttpService::run(const std::string& host, int port, const std::function<void(int)>& on_bound) {
  const int bound = bind_server(impl_->server, host, port);
  spdlog::info("serving on {}:{}", host, bound);
  if (on_bound) on_bound(bound);
  if (!impl_->server.listen_after_bind() && !impl_->stopping)
    throw Error("cannot listen on " + host + ":" + std::to_string(bound));
}

void HttpService::stop() {
  if (!impl_) return;
  impl_->stopping = true;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace aegle
