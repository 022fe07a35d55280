#include "aegle/backend_profile.hpp"

#include "aegle/errors.hpp"

#include <cstdlib>
#include <map>
#include <set>

namespace aegle {
namespace {

class Builder {
public:
  Builder(std::filesystem::path base, HttpTransport transport)
      : base_(std::move(base)), transport_(std::move(transport)) {}

  BackendHandle build(const Json& entry, const std::string& role) {
    if (!entry.is_object()) {
      throw ValidationError("backend entry for " + role + " must be an object");
    }
    const auto key = canonical_dump(entry);
    if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
    auto backend = make(entry, role);
    cache_.emplace(key, backend);
    return backend;
  }

private:
  std::filesystem::path resolve(const Json& entry, const char* field, const std::string& role) const {
    if (!entry.contains(field) || !entry.at(field).is_string()) {
      throw ValidationError("backend entry for " + role + " needs \"" + field + "\"");
    }
    std::filesystem::path p = entry.at(field).get<std::string>();
    return p.is_absolute() ? p : base_ / p;
  }

  BackendHandle make(const Json& entry, const std::string& role) {
    const auto type = entry.value("type", std::string());
    if (type == "scripted") {
      return ScriptedBackend::from_file(resolve(entry, "script", role));
    }
    if (type == "replay") {
      return std::make_shared<ReplayBackend>(resolve(entry, "archive", role));
    }
    if (type == "record") {
      if (!entry.contains("inner")) {
        throw ValidationError("record entry for " + role + " needs \"inner\"");
      }
      return std::make_shared<RecordingBackend>(build(entry.at("inner"), role), resolve(entry, "archive", role));
    }
    if (type == "remote") {
      RemoteConfig cfg;
      cfg.model = entry.value("model", std::string());
      if (cfg.model.empty()) {
        throw ValidationError("remote entry for " + role + " needs \"model\"");
      }
      cfg.base_url = entry.value("base_url", cfg.base_url);
      cfg.endpoint_path = entry.value("endpoint_path", cfg.endpoint_path);
      cfg.max_attempts = entry.value("max_attempts", cfg.max_attempts);
      cfg.max_concurrent_requests = entry.value("max_concurrent_requests", cfg.max_concurrent_requests);
      const auto env = entry.value("api_key_env", std::string(kApiKeyEnv));
      const char* key = std::getenv(env.c_str());
      if (key == nullptr || *key == '\0') {
        throw ValidationError("remote backend for " + role + " needs credentials in $" + env);
      }
      cfg.api_key = key;
      return std::make_shared<RemoteChatBackend>(std::move(cfg), transport_);
    }
    throw ValidationError("unknown backend type '" + type + "' for " + role);
  }

  std::filesystem::path base_;
  HttpTransport transport_;
  std::map<std::string, BackendHandle> cache_;
};

SamplingConfig sampling_from_json(const Json& doc) {
  SamplingConfig s;
  s.orchestrator = doc.value("orchestrator", s.orchestrator);
  s.specialist = doc.value("specialist", s.specialist);
  s.aggregator_write = doc.value("aggregator_write", s.aggregator_write);
  s.aggregator_speak = doc.value("aggregator_speak", s.aggregator_speak);
  s.patient = doc.value("patient", s.patient);
  s.judge = doc.value("judge", s.judge);
  s.max_tokens = doc.value("max_tokens", s.max_tokens);
  return s;
}

}  // namespace

BackendProfile backend_profile_from_json(const Json& doc, const std::filesystem::path& base_dir,
                                         HttpTransport transport) {
  if (!doc.is_object()) throw ValidationError("backend profile must be a JSON object");
  static const std::set<std::string> known{"default",          "orchestrator", "specialist", "aggregator_write",
                                           "aggregator_speak", "patient",      "judge",      "sampling"};
  for (const auto& [k, v] : doc.items()) {
    if (!known.count(k)) throw ValidationError("unknown key '" + k + "' in backend profile");
  }
  Builder builder(base_dir, std::move(transport));
  const auto bind = [&](const char* role, bool use_default) -> BackendHandle {
    if (doc.contains(role)) return builder.build(doc.at(role), role);
    if (use_default && doc.contains("default")) return builder.build(doc.at("default"), role);
    return nullptr;
  };
  BackendProfile profile;
  profile.bindings.orchestrator = bind("orchestrator", true);
  profile.bindings.specialist = bind("specialist", true);
  profile.bindings.aggregator_write = bind("aggregator_write", true);
  profile.bindings.aggregator_speak = bind("aggregator_speak", true);
  profile.bindings.patient = bind("patient", false);
  profile.bindings.judge = bind("judge", true);
  if (doc.contains("sampling")) profile.sampling = sampling_from_json(doc.at("sampling"));
  return profile;
}

BackendProfile load_backend_profile(const std::filesystem::path& path, HttpTransport transport) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw ValidationError("malformed backend profile " + path.string() + ": " + e.what());
  }
  return backend_profile_from_json(doc, path.parent_path(), std::move(transport));
}

bool profile_uses_remote(const Json& doc) {
  if (doc.is_object()) {
    if (doc.value("type", std::string()) == "remote") return true;
    for (const auto& [k, v] : doc.items()) {
      if (profile_uses_remote(v)) return true;
    }
  }
  return false;
}

}  // namespace aegle
