#pragma once

#include "aegle/roster.hpp"
#include "aegle/util.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace aegle {

inline constexpr std::string_view kCaseSchema = "aegle_case_v1";
inline constexpr std::string_view kRunSchema = "aegle_run_v1";

/// One gold note section. Either free text or field-level values keyed by the
/// case-template field names, never both.
struct GoldSection {
  std::string name;
  std::string text;
  std::vector<std::pair<std::string, std::string>> fields;
  bool operator==(const GoldSection&) const = default;
};

struct CaseRecord {
  std::string case_id;
  std::string department;
  /// Object with at least "age" and "sex"; extra keys are carried through.
  Json demographics = Json::object();
  std::vector<GoldSection> gold_subjective;
  std::vector<GoldSection> gold_objective;
  std::string gold_assessment;
  std::string gold_plan;
  std::string gold_diagnosis_label;
  std::vector<std::string> aliases;
  /// Topic keys ("hpi.onset") the patient explicitly cannot answer.
  std::vector<std::string> unavailable_topics;
  /// Unrecognized top-level keys, preserved for round-trips.
  Json extra = Json::object();
  bool operator==(const CaseRecord&) const = default;

  std::string age() const;
  std::string sex() const;
  /// Gold SOAP note in the same Markdown layout as the generated note.
  std::string gold_note() const;
};

/// Throws ValidationError describing the first problem found.
void validate_case(const CaseRecord& record);

Json to_json(const CaseRecord& record);
/// Native schema. Throws ValidationError.
CaseRecord case_from_json(const Json& doc);
/// ClinicalBench-style record (flat English keys). Throws ValidationError.
CaseRecord case_from_clinicalbench(const Json& doc);

enum class CaseAdapter { AegleNative, ClinicalBenchJson };
CaseAdapter case_adapter_from_string(std::string_view name);

struct LoadIssue {
  std::string source;
  std::string message;
};

struct LoadResult {
  std::vector<CaseRecord> cases;
  std::vector<LoadIssue> errors;
  std::vector<std::string> warnings;
  /// Departments outside the roster, registered in first-seen order.
  std::vector<std::string> extension_departments;

  std::map<std::string, int> department_histogram() const;
};

/// Loads a directory of case files (verifying manifest.json checksums when
/// present), a JSON file holding one case or an array, or a JSONL file.
/// Malformed records become per-record errors; a checksum mismatch throws
/// ChecksumMismatchError and nothing is loaded.
LoadResult load_cases(const std::filesystem::path& path, CaseAdapter adapter = CaseAdapter::AegleNative,
                      const Roster& roster = Roster::defaults());

struct DatasetManifest {
  std::string name;
  std::string version;
  int case_count = 0;
  std::map<std::string, int> department_histogram;
  std::map<std::string, std::string> checksums;
  bool operator==(const DatasetManifest&) const = default;
};

Json to_json(const DatasetManifest& manifest);
DatasetManifest dataset_manifest_from_json(const Json& doc);

/// Writes one `<case_id>.json` per case plus manifest.json into a new
/// directory. Throws RunExistsError when `dir` exists.
DatasetManifest export_cases(const std::vector<CaseRecord>& cases, const std::filesystem::path& dir,
                             const std::string& name, const std::string& version);

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

struct RunExport {
  std::string name;
  std::vector<Json> transcripts;
  std::optional<Json> reports;
  std::string reports_csv;
  Json config = Json::object();
};

/// Writes transcripts.jsonl, config.json, reports.json / reports.csv (when
/// present) and manifest.json. Refuses (RunExistsError) to touch an existing
/// directory. Returns the manifest.
Json export_run(const RunExport& run, const std::filesystem::path& out_dir);

struct LoadedRun {
  Json manifest;
  Json config;
  std::vector<Json> transcripts;
  std::optional<Json> reports;
};

/// Reads a run directory back, verifying every checksum in its manifest.
LoadedRun load_run(const std::filesystem::path& dir);

/// Reads a transcripts JSONL file.
std::vector<Json> read_jsonl(const std::filesystem::path& path);

}  // namespace aegle
