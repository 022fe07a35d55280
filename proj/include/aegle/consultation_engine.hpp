#pragma once

#include "aegle/clinical_state.hpp"
#include "aegle/corpus.hpp"
#include "aegle/model_gateway.hpp"
#include "aegle/orchestration.hpp"
#include "aegle/patient_sim.hpp"
#include "aegle/roster.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace aegle {

inline constexpr std::string_view kTranscriptSchema = "aegle_transcript_v1";

/// The four architectural switches. All on is the full system.
struct AblationFlags {
  bool structured_state = true;
  bool generative_inquiry = true;
  bool dynamic_topology = true;
  bool decoupled_reasoning = true;
  bool operator==(const AblationFlags&) const = default;
};

/// "full", "without-ss", "without-gi", "without-dt", "without-dr".
/// Throws ValidationError for anything else.
AblationFlags ablation_from_name(std::string_view name);
std::string ablation_name(const AblationFlags& flags);

struct BackendBindings {
  BackendHandle orchestrator;
  BackendHandle specialist;
  BackendHandle aggregator_write;
  BackendHandle aggregator_speak;
  /// Null keeps the standardized patient in scripted mode.
  BackendHandle patient;
  BackendHandle judge;
};

struct SessionConfig {
  int max_turns = 30;
  std::size_t k_max = 4;
  AblationFlags ablations;
  std::uint64_t seed = 0;
  BackendBindings backends;
  std::shared_ptr<const PromptLibrary> prompts;
  Roster roster = Roster::defaults();
  CaseTemplate case_template = CaseTemplate::defaults();
  bool backend_merge = true;
  /// Concurrent specialist calls within a round. Results are identical either
  /// way; sequential mode exists for debugging and single-core hosts.
  bool parallel_specialists = true;
  std::size_t static_panel_size = 3;
  /// Overrides the adjacency-table panel of the static-topology ablation.
  std::vector<std::string> static_panel;
  SamplingConfig sampling;
  std::string opening_question = "Hello, what brings you in today?";
  std::string transition_utterance =
      "Thank you, I have the information I need. The specialist team will now review your case.";

  /// Throws ValidationError.
  void validate() const;
  /// Snapshot recorded in transcripts (backend ids, not handles).
  Json to_json() const;
};

/// Questions asked in order when generative inquiry is ablated: every
/// template field question in template order.
std::vector<std::string> template_question_sequence(const CaseTemplate& tmpl);

enum class StopReason { None, Completeness, MaxTurns, AggregatorDone, Error };
std::string_view to_string(StopReason reason);
StopReason stop_reason_from_string(std::string_view text);

struct RoundRecord {
  int round = 0;
  Stage stage = Stage::HistoryTaking;
  int patient_turn = 0;
  ActivationDecision activation;
  /// Set on the all-roster retry after an empty Stage II reconciliation.
  bool reconciliation_retry = false;
  std::vector<SpecialistProposal> proposals;
  std::vector<FeatureUpdate> patient_updates;
  std::vector<RejectedUpdate> patient_rejected;
  std::vector<FeatureUpdate> accepted_updates;
  std::vector<RejectedUpdate> rejected_updates;
  std::vector<std::string> inquiry_agenda;
  std::uint64_t revision = 0;
  int utterance_turn = 0;
  std::vector<std::string> notes;
  bool operator==(const RoundRecord&) const = default;
};

struct SessionEvent {
  std::uint64_t seq = 0;
  std::string event;
  Json payload;
  bool operator==(const SessionEvent&) const = default;
};

Json to_json(const SessionEvent& event);
SessionEvent session_event_from_json(const Json& doc);

struct Transcript {
  std::string session_id;
  std::string case_id;
  std::string department;
  DialogueHistory turns;
  std::vector<RoundRecord> rounds;
  std::vector<SessionEvent> events;
  ClinicalState final_state;
  std::string final_ipn;
  StopReason stop_reason = StopReason::None;
  std::string error;
  Json config = Json::object();

  /// Assistant turns that asked the patient something.
  int inquiry_turns() const;
};

Json to_json(const RoundRecord& record);
RoundRecord round_record_from_json(const Json& doc);
Json to_json(const Transcript& transcript);
Transcript transcript_from_json(const Json& doc);

using EventSink = std::function<void(const SessionEvent&)>;
using StateObserver = std::function<void(const ClinicalState&)>;

/// One consultation. Single-writer: callers serialize access. Backend
/// failures never escape the public methods; they close the session with
/// stop_reason=error and keep the partial trace.
class Session {
public:
  Session(std::string session_id, std::string case_id, std::string department, SessionConfig config);

  void set_event_sink(EventSink sink) { sink_ = std::move(sink); }
  void set_state_observer(StateObserver observer) { observer_ = std::move(observer); }

  /// Emits session_started and the opening inquiry.
  void start();

  /// True while history taking waits for the next patient reply.
  bool awaiting_patient() const;
  bool closed() const { return closed_; }
  /// Most recent assistant inquiry.
  const std::string& last_question() const { return last_question_; }

  /// One Stage I round: ingest reply, route, consult, write, then speak or
  /// end history taking (freezing the features). Throws StageError when the
  /// session is not awaiting the patient.
  void step_history_taking(const PatientReply& reply);
  /// Human-typed reply; topics follow the last question.
  void submit_patient_text(std::string_view text);

  /// Stage II on frozen features. Throws StageError unless history taking
  /// has ended and the session is still open.
  void run_diagnostic_synthesis();
  bool ready_for_synthesis() const;

  const ClinicalState& state() const { return state_; }
  const DialogueHistory& history() const { return turns_; }
  const std::vector<SessionEvent>& events() const { return events_; }
  StopReason stop_reason() const { return stop_reason_; }
  Transcript transcript() const;

private:
  int add_turn(std::string_view speaker, std::string text, std::string_view kind, int round);
  void emit(std::string event, Json payload);
  void set_state(ClinicalState next);
  void ingest(const PatientReply& reply, int turn, RoundRecord& record);
  ActivationDecision select_specialists(int round);
  std::vector<SpecialistProposal> consult_all(const ActivationDecision& activation, Stage stage, int round, int turn);
  std::string next_inquiry(const std::vector<std::string>& agenda, int round);
  void end_history_taking(StopReason reason, int round, RoundRecord& record);
  void synthesis_round(RoundRecord& record, int round, bool retry);
  void fail(const std::string& message);

  std::string session_id_;
  std::string case_id_;
  std::string department_;
  SessionConfig config_;
  AgentContext ctx_;
  std::vector<std::string> static_panel_;
  std::vector<std::string> template_questions_;
  std::size_t template_cursor_ = 0;

  ClinicalState state_;
  DialogueHistory turns_;
  std::vector<RoundRecord> rounds_;
  std::optional<RoundRecord> pending_round_;
  std::vector<SessionEvent> events_;
  std::uint64_t seq_ = 0;
  int round_ = 0;
  int inquiries_ = 0;
  std::string last_question_;
  bool started_ = false;
  bool closed_ = false;
  StopReason stop_reason_ = StopReason::None;
  std::string error_;

  EventSink sink_;
  StateObserver observer_;
};

/// Runs a full consultation against the standardized patient compiled from
/// `record`. Deterministic under scripted backends.
Transcript run_consultation(const CaseRecord& record, const SessionConfig& config, EventSink sink = {},
                            StateObserver observer = {});

/// Runs every case with at most `parallelism` concurrent sessions. Output
/// order follows `cases`.
std::vector<Transcript> run_batch(const std::vector<CaseRecord>& cases, const SessionConfig& config,
                                  std::size_t parallelism = 1);

struct CaseActivation {
  std::string case_id;
  std::size_t unique_experts = 0;
  std::size_t activation_events = 0;
  std::size_t rounds = 0;
  double experts_per_round = 0.0;
};

struct ActivationStats {
  double experts_per_case = 0.0;
  double experts_per_round = 0.0;
  int cases = 0;
  int rounds_total = 0;
  std::vector<CaseActivation> per_case;
};

/// Per case: unique specialists activated, and activation events divided by
/// rounds. Both averaged over cases. Throws ValidationError when empty.
ActivationStats compute_activation_stats(const std::vector<Transcript>& transcripts);
Json to_json(const ActivationStats& stats);

}  // namespace aegle
