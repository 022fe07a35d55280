#pragma once

#include "aegle/util.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aegle {

// ---------------------------------------------------------------------------
// Case template: the enumerable field vocabulary shared by the state, the
// standardized patient and the fixed-template inquiry ablation.
// ---------------------------------------------------------------------------

struct FieldSpec {
  std::string name;
  std::string label;
  /// Question used when the field must be asked for explicitly.
  std::string question;
  /// Phrases (normalized form) that tie a question to this field.
  std::vector<std::string> keywords;
};

struct SectionSpec {
  std::string name;
  /// Short prefix used in topic keys, e.g. "hpi" in "hpi.duration".
  std::string key;
  std::string label;
  /// 'S' or 'O'.
  char soap_part = 'S';
  bool mandatory = false;
  std::vector<FieldSpec> fields;
};

struct TopicRef {
  std::string section;
  std::string field;
  std::string key;  // "<section key>.<field>"
};

class CaseTemplate {
public:
  static const std::vector<std::string>& mandatory_section_names();

  /// Shipped default: five mandatory sections with field-level granularity.
  static CaseTemplate defaults();
  static CaseTemplate from_json(const Json& doc);
  Json to_json() const;

  /// Validates uniqueness and presence of the mandatory sections.
  /// Throws ValidationError.
  void validate() const;

  CaseTemplate with_section(SectionSpec section) const;

  const std::vector<SectionSpec>& sections() const { return sections_; }
  const SectionSpec* find_section(std::string_view name) const;
  const FieldSpec* find_field(std::string_view section, std::string_view field) const;
  std::optional<TopicRef> resolve_topic(std::string_view topic_key) const;
  std::vector<TopicRef> topics() const;

private:
  std::vector<SectionSpec> sections_;
};

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

enum class FieldStatus { Empty, Populated, Unavailable };
enum class Stage { HistoryTaking, DiagnosticSynthesis, Closed };

std::string_view to_string(FieldStatus status);
std::string_view to_string(Stage stage);
FieldStatus field_status_from_string(std::string_view text);
Stage stage_from_string(std::string_view text);

inline constexpr std::string_view kPatientSource = "patient";
inline constexpr std::string_view kAggregatorSource = "aggregator";

struct Provenance {
  int turn = 0;
  std::string source;
  bool operator==(const Provenance&) const = default;
};

struct CaseFeatureField {
  std::string name;
  std::string label;
  std::string value;
  FieldStatus status = FieldStatus::Empty;
  std::vector<Provenance> provenance;
  bool operator==(const CaseFeatureField&) const = default;
};

struct FeatureSection {
  std::string name;
  std::string label;
  char soap_part = 'S';
  bool mandatory = false;
  std::vector<CaseFeatureField> fields;
  bool operator==(const FeatureSection&) const = default;

  const CaseFeatureField* find(std::string_view field) const;
};

struct CaseFeatures {
  std::vector<FeatureSection> sections;
  bool operator==(const CaseFeatures&) const = default;

  const FeatureSection* find_section(std::string_view name) const;
  const CaseFeatureField* find_field(std::string_view section, std::string_view field) const;
};

struct Differential {
  std::string diagnosis;
  std::string rationale;
  bool operator==(const Differential&) const = default;
};

struct DiagnosisPlan {
  std::string preliminary_diagnosis;
  std::string diagnostic_reasoning;
  std::vector<Differential> differentials;
  std::string treatment_plan;
  std::string follow_up;
  bool operator==(const DiagnosisPlan&) const = default;

  bool empty() const;
};

/// Immutable-by-convention snapshot of the shared consultation record. Every
/// mutating operation below takes a state by const reference and returns the
/// successor.
struct ClinicalState {
  CaseFeatures features;
  DiagnosisPlan plan;
  Stage stage = Stage::HistoryTaking;
  bool features_frozen = false;
  std::uint64_t revision = 0;
  /// False when the structured-state ablation replaces F with a scratchpad.
  bool structured = true;
  std::string scratchpad;
  bool operator==(const ClinicalState&) const = default;
};

/// A proposed write to one case-feature field. `unavailable` carries the
/// explicit marker; otherwise `value` is the new text.
struct FeatureUpdate {
  std::string section;
  std::string field;
  std::string value;
  bool unavailable = false;
  std::string source;
  int turn = 0;
  bool operator==(const FeatureUpdate&) const = default;

  bool from_patient() const { return source == kPatientSource; }
};

Json to_json(const FeatureUpdate& update);
FeatureUpdate feature_update_from_json(const Json& doc);

ClinicalState new_state(const CaseTemplate& tmpl = CaseTemplate::defaults());

/// Throws FrozenStateError, UnknownFieldError or IllegalTransitionError.
ClinicalState apply_feature_update(const ClinicalState& state, const FeatureUpdate& update);

/// Appends to the free-text scratchpad (structured-state ablation only).
ClinicalState append_scratchpad(const ClinicalState& state, std::string_view text);

/// Throws AlreadyFrozenError when called twice.
ClinicalState freeze_features(const ClinicalState& state);

bool is_history_complete(const ClinicalState& state);

/// Names of mandatory fields still Empty, as "section.field".
std::vector<std::pair<std::string, std::string>> pending_fields(const ClinicalState& state);

/// Throws StageError or EmptyDiagnosisError.
ClinicalState set_assessment_plan(const ClinicalState& state, const DiagnosisPlan& plan);

/// Markdown SOAP note. Draft renders mark Empty fields "[pending]"; closed
/// notes omit them.
std::string render_ipn(const ClinicalState& state);

inline constexpr std::string_view kStateSchema = "aegle_state_v1";
inline constexpr std::string_view kPendingMarker = "[pending]";
inline constexpr std::string_view kUnavailableMarker = "patient reports unavailable";

Json to_json(const ClinicalState& state);
ClinicalState state_from_json(const Json& doc);
Json to_json(const DiagnosisPlan& plan);
DiagnosisPlan plan_from_json(const Json& doc);

/// SHA-256 of the canonical serialization of the case features only.
std::string features_digest(const ClinicalState& state);

}  // namespace aegle
