#pragma once

#include "aegle/clinical_state.hpp"
#include "aegle/corpus.hpp"
#include "aegle/model_gateway.hpp"
#include "aegle/orchestration.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace aegle {

inline constexpr std::string_view kPatientSchema = "aegle_patient_v1";
inline constexpr std::string_view kWithheld = "[withheld]";

struct Persona {
  std::string age;
  std::string sex;
  std::string tone = "cooperative; answers plainly in everyday language";
  bool operator==(const Persona&) const = default;
};

/// What the standardized patient knows. Facts are keyed by topic
/// ("hpi.onset"); facts and unavailable_topics never share a key.
struct PatientScript {
  std::string case_id;
  std::map<std::string, std::string> facts;
  Persona persona;
  std::set<std::string> unavailable_topics;
  bool operator==(const PatientScript&) const = default;
};

Json to_json(const PatientScript& script);
PatientScript patient_script_from_json(const Json& doc);

struct PatientReply {
  std::string text;
  std::set<std::string> disclosed_topics;
  /// topic -> script text for every disclosed topic.
  std::map<std::string, std::string> disclosed_facts;
  std::set<std::string> declared_unavailable;
  bool fallback = false;
  /// Sentences removed by the truthfulness post-filter.
  std::vector<std::string> filtered_sentences;
};

/// Builds the script from the gold S/O sections only. Structured gold fields
/// map directly; free text is split into sentences and assigned by template
/// keywords (unmatched sentences go to the section's first field). Sentences
/// naming the gold diagnosis or an alias are withheld. Throws ValidationError
/// when the case has no subjective content.
PatientScript compile_script(const CaseRecord& record, const CaseTemplate& tmpl = CaseTemplate::defaults());

/// Topic keys whose template keywords occur in `question`, in template order.
std::vector<std::string> match_topics(std::string_view question, const CaseTemplate& tmpl);

/// True when `text` contains an "I don't know / not tested" style phrase.
bool declares_unavailable(std::string_view text);

/// Deterministic keyword lookup. Unknown topics are declared unavailable.
PatientReply answer_scripted(std::string_view question, const PatientScript& script, const CaseTemplate& tmpl);

struct PatientContext {
  /// Null selects scripted mode.
  BackendHandle backend;
  std::shared_ptr<const PromptLibrary> prompts;
  CaseTemplate case_template = CaseTemplate::defaults();
  double temperature = 0.7;
  int max_tokens = 1024;
  std::string session_id;
};

/// Model-backed answer with a post-filter that drops sentences unsupported by
/// the script. Falls back to `answer_scripted` on recoverable backend failure
/// or when nothing survives the filter. Throws ValidationError for an empty
/// question.
PatientReply answer(std::string_view question, const PatientScript& script, const DialogueHistory& history,
                    const PatientContext& ctx, int round);

/// Interprets free text typed by a human patient: topics targeted by the
/// question are declared unavailable when the reply says so, otherwise they
/// take the reply text as their value.
PatientReply interpret_free_text(std::string_view question, std::string_view reply, const CaseTemplate& tmpl);

}  // namespace aegle
