#include "aegle/model_gateway.hpp"

#include "aegle/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#ifndef AEGLE_DEFAULT_ASSETS_DIR
#define AEGLE_DEFAULT_ASSETS_DIR "assets"
#endif

namespace aegle {

std::string_view to_string(ChatRole role) {
  switch (role) {
    case ChatRole::System: return "system";
    case ChatRole::User: return "user";
    case ChatRole::Assistant: return "assistant";
  }
  return "user";
}

ChatRole chat_role_from_string(std::string_view text) {
  if (text == "system") return ChatRole::System;
  if (text == "user") return ChatRole::User;
  if (text == "assistant") return ChatRole::Assistant;
  throw ValidationError("unknown chat role '" + std::string(text) + "'");
}

namespace role_tags {

std::string specialist(std::string_view id) { return std::string(kSpecialistPrefix) + std::string(id); }

std::string asset_for(std::string_view role_tag) {
  if (role_tag == kOrchestrator || role_tag == kAggregatorWrite || role_tag == kAggregatorSpeak ||
      role_tag == kPatient || role_tag == kJudge) {
    return std::string(role_tag);
  }
  if (role_tag.starts_with(kSpecialistPrefix) && role_tag.size() > kSpecialistPrefix.size()) {
    return "specialist";
  }
  throw UnknownRoleTagError("unknown role tag '" + std::string(role_tag) + "'");
}

}  // namespace role_tags

// ---------------------------------------------------------------------------
// Serialization and digests
// ---------------------------------------------------------------------------

Json to_json(const ChatMessage& message) {
  return Json{{"role", to_string(message.role)}, {"content", message.content}};
}

Json to_json(const ModelRequest& request) {
  Json messages = Json::array();
  for (const auto& m : request.messages) {
    messages.push_back(to_json(m));
  }
  return Json{{"role_tag", request.role_tag},
              {"session_id", request.session_id},
              {"round", request.round},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens},
              {"messages", std::move(messages)}};
}

Json to_json(const ModelResponse& response) {
  return Json{{"text", response.text},
              {"prompt_tokens", response.prompt_tokens},
              {"completion_tokens", response.completion_tokens},
              {"backend_id", response.backend_id},
              {"latency_ms", response.latency_ms},
              {"truncated", response.truncated}};
}

ModelRequest model_request_from_json(const Json& doc) {
  ModelRequest r;
  r.role_tag = doc.at("role_tag").get<std::string>();
  r.session_id = doc.value("session_id", std::string());
  r.round = doc.value("round", 0);
  r.temperature = doc.value("temperature", 0.0);
  r.max_tokens = doc.value("max_tokens", 1024);
  for (const auto& m : doc.at("messages")) {
    r.messages.push_back(
        ChatMessage{chat_role_from_string(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  }
  return r;
}

ModelResponse model_response_from_json(const Json& doc) {
  ModelResponse r;
  r.text = doc.at("text").get<std::string>();
  r.prompt_tokens = doc.value("prompt_tokens", 0);
  r.completion_tokens = doc.value("completion_tokens", 0);
  r.backend_id = doc.value("backend_id", std::string());
  r.latency_ms = doc.value("latency_ms", std::int64_t{0});
  r.truncated = doc.value("truncated", false);
  return r;
}

std::string messages_digest(const std::vector<ChatMessage>& messages) {
  Json doc = Json::array();
  for (const auto& m : messages) {
    doc.push_back(to_json(m));
  }
  return sha256_hex(canonical_dump(doc));
}

std::string request_digest(const ModelRequest& request) { return sha256_hex(canonical_dump(to_json(request))); }

ModelResponse complete(const ModelRequest& request, Backend& backend) {
  role_tags::asset_for(request.role_tag);
  if (request.messages.empty()) {
    throw ValidationError("model request without messages");
  }
  for (const auto& m : request.messages) {
    if (m.role != ChatRole::System && m.content.empty()) {
      throw ValidationError("empty " + std::string(to_string(m.role)) + " message");
    }
  }
  if (request.temperature < 0.0 || request.max_tokens <= 0) {
    throw ValidationError("invalid sampling parameters");
  }
  auto response = backend.complete(request);
  if (response.truncated) {
    spdlog::warn("response for {} (session {}, round {}) was truncated", request.role_tag,
                 request.session_id, request.round);
  }
  return response;
}

// ---------------------------------------------------------------------------
// ScriptedBackend
// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<ScriptEntry> entries, std::string id)
    : entries_(std::move(entries)), id_(std::move(id)) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(const Json& doc) {
  const Json& rows = doc.is_array() ? doc : doc.at("entries");
  std::vector<ScriptEntry> entries;
  for (const auto& row : rows) {
    ScriptEntry e;
    e.role_tag = row.at("role_tag").get<std::string>();
    if (row.contains("session_id")) e.session_id = row.at("session_id").get<std::string>();
    if (row.contains("round")) e.round = row.at("round").get<int>();
    if (row.contains("digest")) e.digest = row.at("digest").get<std::string>();
    if (row.contains("contains")) e.contains = row.at("contains").get<std::string>();
    if (row.contains("echo_after")) e.echo_after = row.at("echo_after").get<std::string>();
    if (row.contains("response")) {
      const auto& r = row.at("response");
      e.response = r.is_string() ? r.get<std::string>() : canonical_dump(r);
    } else if (!e.echo_after) {
      throw ValidationError("script entry for " + e.role_tag + " has no response");
    }
    entries.push_back(std::move(e));
  }
  const std::string id = doc.is_object() ? doc.value("id", std::string("scripted")) : "scripted";
  return std::make_shared<ScriptedBackend>(std::move(entries), id);
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  return from_json(Json::parse(read_file(path)));
}

void ScriptedBackend::add(ScriptEntry entry) {
  std::lock_guard lock(mutex_);
  entries_.push_back(std::move(entry));
}

ModelResponse ScriptedBackend::complete(const ModelRequest& request) {
  std::string joined;
  for (const auto& m : request.messages) {
    joined += m.content;
    joined.push_back('\n');
  }
  const auto digest = messages_digest(request.messages);

  std::lock_guard lock(mutex_);
  const ScriptEntry* best = nullptr;
  int best_score = -1;
  for (const auto& e : entries_) {
    int score = 0;
    if (!e.role_tag.empty() && e.role_tag.back() == '*') {
      if (!request.role_tag.starts_with(std::string_view(e.role_tag).substr(0, e.role_tag.size() - 1))) {
        continue;
      }
    } else if (e.role_tag != request.role_tag) {
      continue;
    } else {
      score += 1;
    }
    if (e.session_id) {
      if (*e.session_id != request.session_id) continue;
      score += 2;
    }
    if (e.round) {
      if (*e.round != request.round) continue;
      score += 2;
    }
    if (e.contains) {
      if (joined.find(*e.contains) == std::string::npos) continue;
      score += 2;
    }
    if (e.digest) {
      if (*e.digest != digest) continue;
      score += 8;
    }
    if (score > best_score) {
      best = &e;
      best_score = score;
    }
  }
  if (best == nullptr) {
    throw ScriptMissError("no script entry for role " + request.role_tag + ", session '" +
                          request.session_id + "', round " + std::to_string(request.round));
  }
  ModelResponse response;
  response.backend_id = id_;
  if (best->echo_after) {
    const auto pos = joined.rfind(*best->echo_after);
    if (pos == std::string::npos) {
      throw ScriptMissError("echo marker '" + *best->echo_after + "' absent for role " + request.role_tag);
    }
    const auto start = pos + best->echo_after->size();
    const auto end = joined.find('\n', start);
    response.text = trim(std::string_view(joined).substr(start, end - start));
  } else {
    response.text = best->response;
  }
  response.completion_tokens = static_cast<int>(response.text.size() / 4);
  return response;
}

// ---------------------------------------------------------------------------
// RemoteChatBackend
// ---------------------------------------------------------------------------

RemoteChatBackend::RemoteChatBackend(RemoteConfig config, HttpTransport transport)
    : config_(std::move(config)),
      transport_(transport ? std::move(transport) : default_http_transport()),
      slots_(std::max(1, config_.max_concurrent_requests)) {
  if (config_.max_attempts < 1 || config_.max_attempts > 3) {
    throw ValidationError("remote backend max_attempts must be within [1, 3]");
  }
}

Json RemoteChatBackend::build_body(const ModelRequest& request) const {
  Json messages = Json::array();
  for (const auto& m : request.messages) {
    messages.push_back(to_json(m));
  }
  return Json{{"model", config_.model},
              {"messages", std::move(messages)},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens}};
}

ModelResponse RemoteChatBackend::complete(const ModelRequest& request) {
  const auto body = canonical_dump(build_body(request));
  std::vector<std::pair<std::string, std::string>> headers = {{"Content-Type", "application/json"}};
  if (!config_.api_key.empty()) {
    headers.emplace_back("Authorization", "Bearer " + config_.api_key);
  }
  const auto url = config_.base_url + config_.endpoint_path;

  auto delay = config_.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1 && delay.count() > 0) {
      std::this_thread::sleep_for(delay);
      delay = std::chrono::milliseconds(static_cast<std::int64_t>(delay.count() * config_.backoff_factor));
    }
    const auto started = std::chrono::steady_clock::now();
    HttpResult result;
    try {
      slots_.acquire();
      struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
      } release{slots_};
      result = transport_(url, headers, body);
    } catch (const NetworkError& e) {
      last_error = e.what();
      spdlog::warn("{} attempt {}/{} failed: {}", request.role_tag, attempt, config_.max_attempts, last_error);
      continue;
    }
    if (result.status == 401 || result.status == 403) {
      throw AuthError("backend rejected credentials (HTTP " + std::to_string(result.status) + ")");
    }
    if (result.status == 429 || result.status >= 500) {
      last_error = "HTTP " + std::to_string(result.status);
      spdlog::warn("{} attempt {}/{} failed: {}", request.role_tag, attempt, config_.max_attempts, last_error);
      continue;
    }
    if (result.status < 200 || result.status >= 300) {
      throw BackendError("backend returned HTTP " + std::to_string(result.status) + ": " + result.body);
    }
    auto doc = Json::parse(result.body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("choices") || doc["choices"].empty()) {
      throw BackendError("malformed chat-completion response");
    }
    const auto& choice = doc["choices"][0];
    ModelResponse response;
    const auto& content = choice.at("message").at("content");
    response.text = content.is_string() ? content.get<std::string>() : std::string();
    response.truncated = choice.value("finish_reason", std::string()) == "length";
    if (doc.contains("usage")) {
      response.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
      response.completion_tokens = doc["usage"].value("completion_tokens", 0);
    }
    response.backend_id = id();
    response.latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
    return response;
  }
  throw NetworkError("backend unreachable after " + std::to_string(config_.max_attempts) +
                     " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Record / replay
// ---------------------------------------------------------------------------

RecordingBackend::RecordingBackend(BackendHandle inner, std::filesystem::path archive)
    : inner_(std::move(inner)), archive_(std::move(archive)) {
  if (archive_.has_parent_path()) {
    std::filesystem::create_directories(archive_.parent_path());
  }
}

ModelResponse RecordingBackend::complete(const ModelRequest& request) {
  auto response = inner_->complete(request);
  Json record{{"digest", request_digest(request)}, {"request", to_json(request)}, {"response", to_json(response)}};
  const auto line = canonical_dump(record) + "\n";
  std::lock_guard lock(mutex_);
  std::ofstream out(archive_, std::ios::binary | std::ios::app);
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.flush();
  if (!out) {
    throw Error("cannot append to replay archive " + archive_.string());
  }
  return response;
}

ReplayBackend::ReplayBackend(const std::filesystem::path& archive) {
  std::ifstream in(archive, std::ios::binary);
  if (!in) {
    throw Error("cannot open replay archive " + archive.string());
  }
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    auto doc = Json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      throw ValidationError(archive.string() + ":" + std::to_string(line_no) + ": malformed record");
    }
    records_.emplace(doc.at("digest").get<std::string>(), model_response_from_json(doc.at("response")));
  }
}

ModelResponse ReplayBackend::complete(const ModelRequest& request) {
  const auto it = records_.find(request_digest(request));
  if (it == records_.end()) {
    throw ReplayMissError("request for " + request.role_tag + " (session " + request.session_id + ", round " +
                          std::to_string(request.round) + ") is not in the replay archive");
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

PromptLibrary PromptLibrary::load(const std::filesystem::path& directory) {
  if (!std::filesystem::is_directory(directory)) {
    throw Error("prompt directory not found: " + directory.string());
  }
  PromptLibrary library;
  for (const auto& entry : std::filesystem::directory_iterator(directory)) {
    if (entry.path().extension() != ".txt") {
      continue;
    }
    const auto text = read_file(entry.path());
    const auto sys = text.find("### system\n");
    const auto usr = text.find("### user\n");
    if (sys == std::string::npos || usr == std::string::npos || usr < sys) {
      throw ValidationError(entry.path().string() + ": expected '### system' then '### user' blocks");
    }
    PromptTemplate tmpl;
    tmpl.system = trim(text.substr(sys + 11, usr - sys - 11));
    tmpl.user = trim(text.substr(usr + 9));
    library.set(entry.path().stem().string(), std::move(tmpl));
  }
  return library;
}

void PromptLibrary::set(std::string asset, PromptTemplate tmpl) { templates_[std::move(asset)] = std::move(tmpl); }

bool PromptLibrary::has(std::string_view asset) const { return templates_.find(asset) != templates_.end(); }

const PromptTemplate& PromptLibrary::get(std::string_view asset) const {
  const auto it = templates_.find(asset);
  if (it == templates_.end()) {
    throw UnknownRoleTagError("no prompt asset '" + std::string(asset) + "'");
  }
  return it->second;
}

std::string substitute(std::string_view text, const std::map<std::string, std::string>& vars) {
  static const std::regex placeholder(R"(\{([a-z_][a-z0-9_]*)\})");
  std::string out;
  std::string source(text);
  auto begin = std::sregex_iterator(source.begin(), source.end(), placeholder);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& match = *it;
    const auto name = match[1].str();
    const auto found = vars.find(name);
    if (found == vars.end()) {
      throw MissingPlaceholderError("unbound placeholder {" + name + "}");
    }
    out.append(source, last, static_cast<std::size_t>(match.position(0)) - last);
    out += found->second;
    last = static_cast<std::size_t>(match.position(0) + match.length(0));
  }
  out.append(source, last, std::string::npos);
  return out;
}

std::vector<ChatMessage> render_prompt(const PromptLibrary& library, std::string_view role_tag,
                                       std::map<std::string, std::string> vars) {
  const auto asset = role_tags::asset_for(role_tag);
  if (asset == "specialist") {
    auto department = std::string(role_tag.substr(role_tags::kSpecialistPrefix.size()));
    std::replace(department.begin(), department.end(), '_', ' ');
    vars.emplace("department", department);
  }
  const auto& tmpl = library.get(asset);
  std::vector<ChatMessage> messages;
  messages.push_back(ChatMessage{ChatRole::System, substitute(tmpl.system, vars)});
  messages.push_back(ChatMessage{ChatRole::User, substitute(tmpl.user, vars)});
  return messages;
}

std::filesystem::path default_assets_dir() {
  if (const char* env = std::getenv("AEGLE_ASSETS_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return AEGLE_DEFAULT_ASSETS_DIR;
}

}  // namespace aegle
