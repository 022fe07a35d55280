#pragma once

#include "aegle/util.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

namespace aegle {

enum class ChatRole { System, User, Assistant };

std::string_view to_string(ChatRole role);
ChatRole chat_role_from_string(std::string_view text);

struct ChatMessage {
  ChatRole role = ChatRole::User;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

/// Role tags name the prompt asset a request was rendered from:
/// orchestrator, specialist:<id>, aggregator_write, aggregator_speak, patient, judge.
namespace role_tags {
inline constexpr std::string_view kOrchestrator = "orchestrator";
inline constexpr std::string_view kAggregatorWrite = "aggregator_write";
inline constexpr std::string_view kAggregatorSpeak = "aggregator_speak";
inline constexpr std::string_view kPatient = "patient";
inline constexpr std::string_view kJudge = "judge";
inline constexpr std::string_view kSpecialistPrefix = "specialist:";

std::string specialist(std::string_view id);
/// Asset name for a role tag ("specialist:cardiology" -> "specialist").
/// Throws UnknownRoleTagError.
std::string asset_for(std::string_view role_tag);
}  // namespace role_tags

struct ModelRequest {
  std::vector<ChatMessage> messages;
  std::string role_tag;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string session_id;
  int round = 0;
};

struct ModelResponse {
  std::string text;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  std::string backend_id;
  std::int64_t latency_ms = 0;
  bool truncated = false;
};

Json to_json(const ChatMessage& message);
Json to_json(const ModelRequest& request);
Json to_json(const ModelResponse& response);
ModelRequest model_request_from_json(const Json& doc);
ModelResponse model_response_from_json(const Json& doc);

/// Digest over the message list only (scripted-table keying).
std::string messages_digest(const std::vector<ChatMessage>& messages);
/// Digest over every request field (replay-archive keying).
std::string request_digest(const ModelRequest& request);

/// A language-model backend. Implementations must be safe to call from
/// several threads at once.
class Backend {
public:
  virtual ~Backend() = default;
  virtual ModelResponse complete(const ModelRequest& request) = 0;
  virtual std::string id() const = 0;
};

using BackendHandle = std::shared_ptr<Backend>;

/// Validates the request and forwards to `backend`. Logs a warning when the
/// response is flagged truncated.
ModelResponse complete(const ModelRequest& request, Backend& backend);

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// One row of a script table. Unset selectors match anything; a role tag
/// ending in '*' matches by prefix. The most specific matching row wins, and
/// ties go to the row declared first.
struct ScriptEntry {
  std::string role_tag;
  std::optional<std::string> session_id;
  std::optional<int> round;
  std::optional<std::string> digest;
  /// Substring that must occur in the concatenated message contents.
  std::optional<std::string> contains;
  std::string response;
  /// When set, the response is the rest of the line that follows the last
  /// occurrence of this marker in the messages.
  std::optional<std::string> echo_after;
};

class ScriptedBackend : public Backend {
public:
  explicit ScriptedBackend(std::vector<ScriptEntry> entries, std::string id = "scripted");

  static std::shared_ptr<ScriptedBackend> from_json(const Json& doc);
  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  ModelResponse complete(const ModelRequest& request) override;
  std::string id() const override { return id_; }

  void add(ScriptEntry entry);

private:
  std::vector<ScriptEntry> entries_;
  std::string id_;
  mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Remote chat-completion backend
// ---------------------------------------------------------------------------

struct HttpResult {
  int status = 0;
  std::string body;
};

/// Posts `body` to `url`. Throws NetworkError on transport failure.
using HttpTransport = std::function<HttpResult(const std::string& url,
                                               const std::vector<std::pair<std::string, std::string>>& headers,
                                               const std::string& body)>;

HttpTransport default_http_transport(std::chrono::seconds timeout = std::chrono::seconds(120));

struct RemoteConfig {
  std::string base_url = "https://api.openai.com";
  std::string endpoint_path = "/v1/chat/completions";
  std::string model;
  std::string api_key;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_factor = 2.0;
  int max_concurrent_requests = 8;
};

class RemoteChatBackend : public Backend {
public:
  explicit RemoteChatBackend(RemoteConfig config, HttpTransport transport = {});

  ModelResponse complete(const ModelRequest& request) override;
  std::string id() const override { return "remote:" + config_.model; }

  Json build_body(const ModelRequest& request) const;

private:
  RemoteConfig config_;
  HttpTransport transport_;
  std::counting_semaphore<1024> slots_;
};

// ---------------------------------------------------------------------------
// Record / replay
// ---------------------------------------------------------------------------

/// Forwards to an inner backend and appends each (digest, request, response)
/// record to a JSONL archive.
class RecordingBackend : public Backend {
public:
  RecordingBackend(BackendHandle inner, std::filesystem::path archive);

  ModelResponse complete(const ModelRequest& request) override;
  std::string id() const override { return inner_->id(); }

private:
  BackendHandle inner_;
  std::filesystem::path archive_;
  std::mutex mutex_;
};

/// Serves responses from a JSONL archive. A request absent from the archive
/// raises ReplayMissError; there is no network fallback.
class ReplayBackend : public Backend {
public:
  explicit ReplayBackend(const std::filesystem::path& archive);

  ModelResponse complete(const ModelRequest& request) override;
  std::string id() const override { return "replay"; }
  std::size_t size() const { return records_.size(); }

private:
  std::map<std::string, ModelResponse> records_;
};

// ---------------------------------------------------------------------------
// Prompt assets
// ---------------------------------------------------------------------------

struct PromptTemplate {
  std::string system;
  std::string user;
};

/// Prompt templates loaded from `<assets>/prompts/<version>/<asset>.txt`.
/// Each file holds a "### system" block followed by a "### user" block;
/// placeholders are written `{name}`.
class PromptLibrary {
public:
  static PromptLibrary load(const std::filesystem::path& directory);
  void set(std::string asset, PromptTemplate tmpl);
  bool has(std::string_view asset) const;
  const PromptTemplate& get(std::string_view asset) const;

private:
  std::map<std::string, PromptTemplate, std::less<>> templates_;
};

/// Substitutes every `{name}` in `text`. Throws MissingPlaceholderError for an
/// unbound name.
std::string substitute(std::string_view text, const std::map<std::string, std::string>& vars);

/// Renders the prompt asset for `role_tag`. `vars` supplies the state
/// snapshot, history and instructions; specialist tags additionally bind
/// {department}.
std::vector<ChatMessage> render_prompt(const PromptLibrary& library, std::string_view role_tag,
                                       std::map<std::string, std::string> vars);

/// Directory holding the shipped assets (overridable by AEGLE_ASSETS_DIR).
std::filesystem::path default_assets_dir();

}  // namespace aegle
