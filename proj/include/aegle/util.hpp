#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aegle {

/// Insertion-ordered JSON. Every artifact the library writes uses it so that
/// key order is stable across runs.
using Json = nlohmann::ordered_json;

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Compact serialization used for hashing and JSONL lines.
std::string canonical_dump(const Json& value);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// ASCII case-fold.
std::string to_lower(std::string_view text);
std::string trim(std::string_view text);

/// Lowercase, punctuation replaced by spaces, whitespace collapsed.
std::string normalize_words(std::string_view text);

/// Lowercase with all punctuation and whitespace removed.
std::string normalize_compact(std::string_view text);

std::vector<std::string> split_sentences(std::string_view text);

/// True when `keyword` occurs in `normalized_text` starting at a word boundary.
/// Both arguments are expected in `normalize_words` form.
bool contains_phrase(std::string_view normalized_text, std::string_view keyword);

/// Extracts the first top-level JSON object embedded in free text (handles
/// fenced code blocks and surrounding prose). Returns nullopt when none parses.
std::optional<Json> extract_json_object(std::string_view text);

}  // namespace aegle
