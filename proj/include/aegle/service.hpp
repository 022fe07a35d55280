#pragma once

#include "aegle/consultation_engine.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace aegle {

/// Live sessions driven by a human patient. Each session has its own lock, so
/// sessions progress independently; within one session all mutations are
/// serialized.
class SessionRegistry {
public:
  explicit SessionRegistry(SessionConfig config);
  ~SessionRegistry();

  struct Created {
    std::string session_id;
    std::string question;
  };
  /// Throws ValidationError for an empty department.
  Created create(const std::string& department, const std::string& label = {});

  enum class PostStatus { Accepted, UnknownSession, Closed, Invalid };
  struct PostResult {
    PostStatus status = PostStatus::Accepted;
    std::string message;
    Json body = Json::object();
  };
  /// Runs one history-taking round, and diagnostic synthesis when history
  /// taking ends.
  PostResult post_message(const std::string& session_id, const std::string& text);

  /// Events with seq > `after`. Nullopt for an unknown session.
  std::optional<std::vector<SessionEvent>> events_after(const std::string& session_id, std::uint64_t after) const;
  /// Blocks until an event with seq > `after` exists, the session closes or
  /// the timeout passes. Returns false for an unknown session.
  bool wait_for_events(const std::string& session_id, std::uint64_t after, std::chrono::milliseconds timeout) const;
  std::optional<bool> closed(const std::string& session_id) const;
  std::optional<std::string> ipn(const std::string& session_id) const;
  std::optional<Transcript> transcript(const std::string& session_id) const;

private:
  struct Entry;
  std::shared_ptr<Entry> find(const std::string& session_id) const;

  SessionConfig config_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t counter_ = 0;
};

/// HTTP front end:
///   POST /sessions                      {"department": ...} -> {"session_id", "question"}
///   POST /sessions/{id}/messages        {"text": ...}  (409 once closed)
///   GET  /sessions/{id}/events?from=N   NDJSON stream of events with seq > N;
///                                       wait=0 returns the current snapshot
///   GET  /sessions/{id}/ipn             text/markdown
///   GET  /sessions/{id}/transcript      aegle_transcript_v1 JSON
/// Unknown sessions answer 404.
class HttpService {
public:
  explicit HttpService(SessionConfig config);
  ~HttpService();

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port; throws Error when binding fails.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop(). `on_bound` sees the bound
  /// port before the first request is accepted.
  void run(const std::string& host, int port, const std::function<void(int)>& on_bound = {});
  void stop();

  SessionRegistry& registry();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace aegle
