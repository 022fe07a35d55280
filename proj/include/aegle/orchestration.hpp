#pragma once

#include "aegle/clinical_state.hpp"
#include "aegle/model_gateway.hpp"
#include "aegle/roster.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace aegle {

// ---------------------------------------------------------------------------
// Dialogue history
// ---------------------------------------------------------------------------

inline constexpr std::string_view kSpeakerSystem = "system";
inline constexpr std::string_view kSpeakerPatient = "patient";
inline constexpr std::string_view kSpeakerAssistant = "assistant";

/// Assistant turns are inquiries (count against the budget), the transition
/// out of history taking, or the closing explanation.
inline constexpr std::string_view kTurnInquiry = "inquiry";
inline constexpr std::string_view kTurnTransition = "transition";
inline constexpr std::string_view kTurnClosing = "closing";
inline constexpr std::string_view kTurnReply = "reply";

struct DialogueTurn {
  int index = 0;
  std::string speaker;
  std::string text;
  std::string kind;
  int round = 0;
  bool operator==(const DialogueTurn&) const = default;
};

using DialogueHistory = std::vector<DialogueTurn>;

Json to_json(const DialogueTurn& turn);
DialogueTurn dialogue_turn_from_json(const Json& doc);

/// "Doctor: ...\nPatient: ..." transcript text for prompts.
std::string render_history(const DialogueHistory& history);

// ---------------------------------------------------------------------------
// Agent configuration shared by the three node types
// ---------------------------------------------------------------------------

struct SamplingConfig {
  double orchestrator = 0.0;
  double specialist = 0.7;
  double aggregator_write = 0.0;
  double aggregator_speak = 0.7;
  double patient = 0.7;
  double judge = 0.0;
  int max_tokens = 1024;
};

struct AgentContext {
  std::shared_ptr<const PromptLibrary> prompts;
  BackendHandle orchestrator;
  BackendHandle specialist;
  BackendHandle aggregator_write;
  BackendHandle aggregator_speak;
  Roster roster = Roster::defaults();
  CaseTemplate case_template = CaseTemplate::defaults();
  std::size_t k_max = 4;
  /// When false, field conflicts and Stage II reconciliation use the
  /// deterministic rules and never call the aggregator backend.
  bool backend_merge = true;
  SamplingConfig sampling;
  std::string session_id;
};

/// True for backend failures that indicate a broken configuration (missing
/// script row, rejected credentials, replay miss). These abort the session;
/// everything else degrades to a fallback.
bool is_configuration_failure(const std::exception& error);

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

struct ActivationDecision {
  std::vector<std::string> activated;
  std::map<std::string, std::string> instructions;
  std::string shared_instruction;
  std::string rationale;
  int round = 0;
  /// Set when parsing failed twice (or the backend failed) and the round
  /// fell back to an empty activation.
  bool fallback = false;
  std::vector<std::string> dropped;
  bool truncated = false;
  bool operator==(const ActivationDecision&) const = default;

  /// Per-specialist instruction, else the shared default.
  std::string instruction_for(const std::string& id) const;
};

Json to_json(const ActivationDecision& decision);
ActivationDecision activation_from_json(const Json& doc);

/// Parses an orchestrator reply. Returns nullopt when no JSON object with an
/// "activated" array is present. Unknown ids are dropped, repeats collapsed,
/// and the list cut to k_max in listed order.
std::optional<ActivationDecision> parse_activation(std::string_view text, const Roster& roster, std::size_t k_max);

ActivationDecision route(const DialogueHistory& history, const ClinicalState& state, const AgentContext& ctx,
                         int round);

// ---------------------------------------------------------------------------
// Specialists
// ---------------------------------------------------------------------------

enum class Confidence { Low, Medium, High };

std::string_view to_string(Confidence confidence);
std::optional<Confidence> confidence_from_string(std::string_view text);

struct Hypothesis {
  std::string diagnosis;
  Confidence confidence = Confidence::Low;
  std::string rationale;
  bool operator==(const Hypothesis&) const = default;
};

struct SpecialistProposal {
  std::string specialist;
  std::vector<FeatureUpdate> feature_updates;
  std::vector<std::string> follow_up_questions;
  std::vector<Hypothesis> hypotheses;
  std::vector<std::string> treatment_considerations;
  std::string raw_response;
  bool parse_failure = false;
  std::vector<std::string> violations;
  bool operator==(const SpecialistProposal&) const = default;
};

Json to_json(const SpecialistProposal& proposal);
SpecialistProposal proposal_from_json(const Json& doc);
/// SHA-256 of the canonical proposal JSON.
std::string proposal_digest(const SpecialistProposal& proposal);

/// Parses a specialist reply for `stage`. Stage-inconsistent content is
/// stripped and recorded as a violation; updates aimed at plan fields are
/// rejected here.
SpecialistProposal parse_proposal(std::string_view text, const std::string& specialist, Stage stage,
                                  const CaseTemplate& tmpl, int turn);

/// Runs one specialist against an immutable snapshot. `peers` is only used by
/// the coupled-reasoning ablation; the default path never sees peer output.
SpecialistProposal consult_specialist(const std::string& id, const ClinicalState& snapshot,
                                      const DialogueHistory& history, const std::string& instructions, Stage stage,
                                      const AgentContext& ctx, int round, int turn,
                                      const std::vector<SpecialistProposal>* peers = nullptr);

// ---------------------------------------------------------------------------
// Aggregator
// ---------------------------------------------------------------------------

struct RejectedUpdate {
  FeatureUpdate update;
  std::string reason;
  bool operator==(const RejectedUpdate&) const = default;
};

struct AggregationOutcome {
  ClinicalState next_state;
  std::vector<FeatureUpdate> accepted_updates;
  std::vector<RejectedUpdate> rejected_updates;
  std::vector<std::string> inquiry_agenda;
  std::string utterance;
  std::vector<std::string> notes;
  /// Scratchpad mode only: the aggregator judged history taking finished.
  bool declared_done = false;
};

/// Deduplicated follow-up questions ranked by how many specialists asked
/// them, ties by first appearance in activation order.
std::vector<std::string> build_inquiry_agenda(const std::vector<SpecialistProposal>& proposals);

/// Deterministic Stage II reconciliation: highest confidence wins, ties by
/// activation order, the remaining distinct diagnoses become differentials.
/// Throws EmptyReconciliationError when no proposal carries a hypothesis.
DiagnosisPlan reconcile_hypotheses(const std::vector<SpecialistProposal>& proposals);

/// Write phase. `proposals` must be in activation order. Stage must match
/// `state.stage` (StageError otherwise).
AggregationOutcome aggregate_write(const ClinicalState& state, const std::vector<SpecialistProposal>& proposals,
                                   Stage stage, const AgentContext& ctx, int round, int turn);

/// Write phase for the scratchpad ablation: folds the patient reply and the
/// proposals into free text and asks the aggregator whether history taking is
/// done.
AggregationOutcome aggregate_write_scratchpad(const ClinicalState& state,
                                              const std::vector<SpecialistProposal>& proposals,
                                              const std::string& patient_reply, const AgentContext& ctx, int round);

struct SpeakResult {
  std::string text;
  bool fallback = false;
};

/// Question the engine falls back to: the agenda head, else the first
/// pending mandatory field, else a generic open question.
std::string suggested_question(const ClinicalState& state, const std::vector<std::string>& agenda,
                               const CaseTemplate& tmpl);

/// Templated closing explanation built from the plan.
std::string closing_summary(const DiagnosisPlan& plan);

/// Speak phase. Sees only the rendered note and the agenda.
SpeakResult aggregate_speak(const ClinicalState& next_state, const std::vector<std::string>& agenda,
                            const AgentContext& ctx, int round);

}  // namespace aegle
