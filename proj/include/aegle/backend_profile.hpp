#pragma once

#include "aegle/consultation_engine.hpp"

#include <filesystem>
#include <optional>

namespace aegle {

inline constexpr std::string_view kApiKeyEnv = "AEGLE_API_KEY";

/// Per-role backend bindings read from a JSON profile:
///
///   { "default": {"type": "scripted", "script": "script.json"},
///     "judge":   {"type": "remote", "model": "gpt-4o-mini"},
///     "patient": {"type": "replay", "archive": "patient.jsonl"} }
///
/// Types: scripted (script path), remote (model, base_url, endpoint_path,
/// max_attempts, max_concurrent_requests; key from AEGLE_API_KEY or the env
/// variable named by api_key_env), replay (archive), record (inner entry,
/// archive). Relative paths resolve against the profile's directory. Roles
/// without an entry use "default", except the patient, which stays scripted
/// unless bound explicitly. Identical entries share one backend instance.
struct BackendProfile {
  BackendBindings bindings;
  std::optional<SamplingConfig> sampling;
};

/// Throws ValidationError for unknown types, missing fields or a remote entry
/// without credentials.
BackendProfile backend_profile_from_json(const Json& doc, const std::filesystem::path& base_dir,
                                         HttpTransport transport = {});
BackendProfile load_backend_profile(const std::filesystem::path& path, HttpTransport transport = {});

/// True when any bound backend is remote (directly or behind record).
bool profile_uses_remote(const Json& doc);

}  // namespace aegle
