#include "aegle/consultation_engine.hpp"

#include "aegle/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <future>
#include <mutex>
#include <set>
#include <thread>

namespace aegle {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

AblationFlags ablation_from_name(std::string_view name) {
  AblationFlags f;
  if (name == "full" || name == "none") return f;
  if (name == "without-ss" || name == "wo-ss") {
    f.structured_state = false;
  } else if (name == "without-gi" || name == "wo-gi") {
    f.generative_inquiry = false;
  } else if (name == "without-dt" || name == "wo-dt") {
    f.dynamic_topology = false;
  } else if (name == "without-dr" || name == "wo-dr") {
    f.decoupled_reasoning = false;
  } else {
    throw ValidationError("unknown ablation '" + std::string(name) +
                          "' (expected full, without-ss, without-gi, without-dt or without-dr)");
  }
  return f;
}

std::string ablation_name(const AblationFlags& flags) {
  std::string out;
  const auto add = [&](bool on, const char* name) {
    if (!on) out += out.empty() ? name : std::string("+") + name;
  };
  add(flags.structured_state, "without-ss");
  add(flags.generative_inquiry, "without-gi");
  add(flags.dynamic_topology, "without-dt");
  add(flags.decoupled_reasoning, "without-dr");
  return out.empty() ? "full" : out;
}

void SessionConfig::validate() const {
  if (max_turns < 1) {
    throw ValidationError("max_turns must be at least 1");
  }
  if (k_max < 1) {
    throw ValidationError("k_max must be at least 1");
  }
  if (!prompts) {
    throw ValidationError("no prompt library configured");
  }
  if (!backends.aggregator_speak && ablations.generative_inquiry) {
    spdlog::debug("no speak backend bound; inquiries use the templated fallback");
  }
  if (ablations.dynamic_topology && !backends.orchestrator) {
    throw ValidationError("no orchestrator backend bound");
  }
  if (!backends.specialist) {
    throw ValidationError("no specialist backend bound");
  }
  for (const auto& id : static_panel) {
    if (!roster.contains(id)) {
      throw ValidationError("static panel member '" + id + "' is not on the roster");
    }
  }
  case_template.validate();
}

Json SessionConfig::to_json() const {
  const auto id_of = [](const BackendHandle& b) { return b ? Json(b->id()) : Json(nullptr); };
  return Json{{"max_turns", max_turns},
              {"k_max", k_max},
              {"ablations",
               {{"structured_state", ablations.structured_state},
                {"generative_inquiry", ablations.generative_inquiry},
                {"dynamic_topology", ablations.dynamic_topology},
                {"decoupled_reasoning", ablations.decoupled_reasoning}}},
              {"variant", ablation_name(ablations)},
              {"seed", seed},
              {"backend_merge", backend_merge},
              {"static_panel_size", static_panel_size},
              {"static_panel", static_panel},
              {"roster", roster.ids()},
              {"case_template_digest", sha256_hex(canonical_dump(case_template.to_json()))},
              {"sampling",
               {{"orchestrator", sampling.orchestrator},
                {"specialist", sampling.specialist},
                {"aggregator_write", sampling.aggregator_write},
                {"aggregator_speak", sampling.aggregator_speak},
                {"patient", sampling.patient},
                {"judge", sampling.judge},
                {"max_tokens", sampling.max_tokens}}},
              {"backends",
               {{"orchestrator", id_of(backends.orchestrator)},
                {"specialist", id_of(backends.specialist)},
                {"aggregator_write", id_of(backends.aggregator_write)},
                {"aggregator_speak", id_of(backends.aggregator_speak)},
                {"patient", id_of(backends.patient)}}}};
}

std::vector<std::string> template_question_sequence(const CaseTemplate& tmpl) {
  std::vector<std::string> out;
  for (const auto& s : tmpl.sections()) {
    for (const auto& f : s.fields) {
      if (!f.question.empty()) {
        out.push_back(f.question);
      }
    }
  }
  return out;
}

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::None: return "none";
    case StopReason::Completeness: return "completeness";
    case StopReason::MaxTurns: return "max_turns";
    case StopReason::AggregatorDone: return "aggregator_done";
    case StopReason::Error: return "error";
  }
  return "none";
}

StopReason stop_reason_from_string(std::string_view text) {
  for (auto r : {StopReason::None, StopReason::Completeness, StopReason::MaxTurns, StopReason::AggregatorDone,
                 StopReason::Error}) {
    if (to_string(r) == text) {
      return r;
    }
  }
  throw ValidationError("unknown stop reason '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

Json updates_json(const std::vector<FeatureUpdate>& updates) {
  Json out = Json::array();
  for (const auto& u : updates) out.push_back(to_json(u));
  return out;
}

Json rejected_json(const std::vector<RejectedUpdate>& rejected) {
  Json out = Json::array();
  for (const auto& r : rejected) out.push_back(Json{{"update", to_json(r.update)}, {"reason", r.reason}});
  return out;
}

std::vector<FeatureUpdate> updates_from(const Json& doc) {
  std::vector<FeatureUpdate> out;
  for (const auto& u : doc) out.push_back(feature_update_from_json(u));
  return out;
}

std::vector<RejectedUpdate> rejected_from(const Json& doc) {
  std::vector<RejectedUpdate> out;
  for (const auto& r : doc) {
    out.push_back(RejectedUpdate{feature_update_from_json(r.at("update")), r.at("reason").get<std::string>()});
  }
  return out;
}

Json proposal_summary(const SpecialistProposal& p) {
  return Json{{"specialist", p.specialist},
              {"digest", proposal_digest(p)},
              {"parse_failure", p.parse_failure},
              {"violations", p.violations}};
}

}  // namespace

Json to_json(const SessionEvent& event) {
  return Json{{"seq", event.seq}, {"event", event.event}, {"payload", event.payload}};
}

SessionEvent session_event_from_json(const Json& doc) {
  return SessionEvent{doc.at("seq").get<std::uint64_t>(), doc.at("event").get<std::string>(),
                      doc.value("payload", Json::object())};
}

Json to_json(const RoundRecord& r) {
  Json proposals = Json::array();
  for (const auto& p : r.proposals) {
    Json entry{{"digest", proposal_digest(p)}};
    const Json body = to_json(p);
    for (const auto& [k, v] : body.items()) entry[k] = v;
    proposals.push_back(std::move(entry));
  }
  return Json{{"round", r.round},
              {"stage", to_string(r.stage)},
              {"patient_turn", r.patient_turn},
              {"activation", to_json(r.activation)},
              {"reconciliation_retry", r.reconciliation_retry},
              {"proposals", std::move(proposals)},
              {"patient_updates", updates_json(r.patient_updates)},
              {"patient_rejected", rejected_json(r.patient_rejected)},
              {"accepted_updates", updates_json(r.accepted_updates)},
              {"rejected_updates", rejected_json(r.rejected_updates)},
              {"inquiry_agenda", r.inquiry_agenda},
              {"revision", r.revision},
              {"utterance_turn", r.utterance_turn},
              {"notes", r.notes}};
}

RoundRecord round_record_from_json(const Json& doc) {
  RoundRecord r;
  r.round = doc.at("round").get<int>();
  r.stage = stage_from_string(doc.at("stage").get<std::string>());
  r.patient_turn = doc.value("patient_turn", 0);
  r.activation = activation_from_json(doc.at("activation"));
  r.reconciliation_retry = doc.value("reconciliation_retry", false);
  for (const auto& p : doc.value("proposals", Json::array())) r.proposals.push_back(proposal_from_json(p));
  r.patient_updates = updates_from(doc.value("patient_updates", Json::array()));
  r.patient_rejected = rejected_from(doc.value("patient_rejected", Json::array()));
  r.accepted_updates = updates_from(doc.value("accepted_updates", Json::array()));
  r.rejected_updates = rejected_from(doc.value("rejected_updates", Json::array()));
  r.inquiry_agenda = doc.value("inquiry_agenda", std::vector<std::string>{});
  r.revision = doc.value("revision", std::uint64_t{0});
  r.utterance_turn = doc.value("utterance_turn", 0);
  r.notes = doc.value("notes", std::vector<std::string>{});
  return r;
}

int Transcript::inquiry_turns() const {
  return static_cast<int>(std::count_if(turns.begin(), turns.end(), [](const DialogueTurn& t) {
    return t.speaker == kSpeakerAssistant && t.kind == kTurnInquiry;
  }));
}

Json to_json(const Transcript& t) {
  Json turns = Json::array();
  for (const auto& x : t.turns) turns.push_back(to_json(x));
  Json rounds = Json::array();
  for (const auto& r : t.rounds) rounds.push_back(to_json(r));
  Json events = Json::array();
  for (const auto& e : t.events) events.push_back(to_json(e));
  return Json{{"schema", kTranscriptSchema},
              {"session_id", t.session_id},
              {"case_id", t.case_id},
              {"department", t.department},
              {"stop_reason", to_string(t.stop_reason)},
              {"error", t.error},
              {"config", t.config},
              {"turns", std::move(turns)},
              {"rounds", std::move(rounds)},
              {"events", std::move(events)},
              {"final_state", to_json(t.final_state)},
              {"final_ipn", t.final_ipn}};
}

Transcript transcript_from_json(const Json& doc) {
  if (doc.value("schema", std::string()) != kTranscriptSchema) {
    throw ValidationError("not an " + std::string(kTranscriptSchema) + " document");
  }
  Transcript t;
  t.session_id = doc.value("session_id", std::string());
  t.case_id = doc.at("case_id").get<std::string>();
  t.department = doc.value("department", std::string());
  t.stop_reason = stop_reason_from_string(doc.at("stop_reason").get<std::string>());
  t.error = doc.value("error", std::string());
  t.config = doc.value("config", Json::object());
  for (const auto& x : doc.at("turns")) t.turns.push_back(dialogue_turn_from_json(x));
  for (const auto& r : doc.at("rounds")) t.rounds.push_back(round_record_from_json(r));
  for (const auto& e : doc.value("events", Json::array())) t.events.push_back(session_event_from_json(e));
  t.final_state = state_from_json(doc.at("final_state"));
  t.final_ipn = doc.value("final_ipn", std::string());
  return t;
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

Session::Session(std::string session_id, std::string case_id, std::string department, SessionConfig config)
    : session_id_(std::move(session_id)),
      case_id_(std::move(case_id)),
      department_(std::move(department)),
      config_(std::move(config)) {
  config_.validate();
  ctx_.prompts = config_.prompts;
  ctx_.orchestrator = config_.backends.orchestrator;
  ctx_.specialist = config_.backends.specialist;
  ctx_.aggregator_write = config_.backends.aggregator_write;
  ctx_.aggregator_speak = config_.backends.aggregator_speak;
  ctx_.roster = config_.roster;
  ctx_.case_template = config_.case_template;
  ctx_.k_max = config_.k_max;
  ctx_.backend_merge = config_.backend_merge;
  ctx_.sampling = config_.sampling;
  ctx_.session_id = session_id_;

  static_panel_ = config_.static_panel.empty()
                      ? default_panel(department_, config_.roster, config_.static_panel_size)
                      : config_.static_panel;
  template_questions_ = template_question_sequence(config_.case_template);
  state_ = new_state(config_.case_template);
  state_.structured = config_.ablations.structured_state;
}

bool Session::awaiting_patient() const {
  return started_ && !closed_ && state_.stage == Stage::HistoryTaking && stop_reason_ == StopReason::None;
}

bool Session::ready_for_synthesis() const {
  return started_ && !closed_ && state_.stage == Stage::DiagnosticSynthesis;
}

int Session::add_turn(std::string_view speaker, std::string text, std::string_view kind, int round) {
  DialogueTurn t;
  t.index = static_cast<int>(turns_.size()) + 1;
  t.speaker = std::string(speaker);
  t.text = std::move(text);
  t.kind = std::string(kind);
  t.round = round;
  if (speaker == kSpeakerAssistant && kind == kTurnInquiry) {
    ++inquiries_;
    last_question_ = t.text;
  }
  turns_.push_back(t);
  emit(speaker == kSpeakerPatient ? "patient_turn" : "assistant_turn", Json{{"turn", to_json(t)}});
  return t.index;
}

void Session::emit(std::string event, Json payload) {
  SessionEvent e{++seq_, std::move(event), std::move(payload)};
  events_.push_back(e);
  if (sink_) {
    sink_(events_.back());
  }
}

void Session::set_state(ClinicalState next) {
  state_ = std::move(next);
  if (observer_) {
    observer_(state_);
  }
}

void Session::start() {
  if (started_) {
    throw StageError("session already started");
  }
  started_ = true;
  emit("session_started", Json{{"session_id", session_id_},
                               {"case_id", case_id_},
                               {"department", department_},
                               {"config", config_.to_json()},
                               {"state", to_json(state_)}});
  std::string opening = config_.opening_question;
  if (!config_.ablations.generative_inquiry && template_cursor_ < template_questions_.size()) {
    opening = template_questions_[template_cursor_++];
  }
  add_turn(kSpeakerAssistant, std::move(opening), kTurnInquiry, 0);
}

void Session::ingest(const PatientReply& reply, int turn, RoundRecord& record) {
  if (!state_.structured) {
    if (!trim(reply.text).empty()) {
      set_state(append_scratchpad(state_, "Patient: " + trim(reply.text)));
    }
    return;
  }
  for (const auto& ref : config_.case_template.topics()) {
    FeatureUpdate u;
    u.section = ref.section;
    u.field = ref.field;
    u.source = std::string(kPatientSource);
    u.turn = turn;
    const auto* field = state_.features.find_field(ref.section, ref.field);
    if (field == nullptr) {
      continue;
    }
    if (const auto it = reply.disclosed_facts.find(ref.key); it != reply.disclosed_facts.end()) {
      if (field->status == FieldStatus::Populated && field->value == it->second) {
        continue;
      }
      u.value = it->second;
    } else if (reply.declared_unavailable.count(ref.key) > 0) {
      if (field->status != FieldStatus::Empty) {
        continue;
      }
      u.unavailable = true;
    } else {
      continue;
    }
    try {
      set_state(apply_feature_update(state_, u));
      record.patient_updates.push_back(std::move(u));
    } catch (const Error& e) {
      record.patient_rejected.push_back(RejectedUpdate{std::move(u), std::string("invalid: ") + e.what()});
    }
  }
}

ActivationDecision Session::select_specialists(int round) {
  if (!config_.ablations.dynamic_topology) {
    ActivationDecision d;
    d.round = round;
    d.activated = static_panel_;
    d.rationale = "static panel";
    return d;
  }
  return route(turns_, state_, ctx_, round);
}

std::vector<SpecialistProposal> Session::consult_all(const ActivationDecision& activation, Stage stage, int round,
                                                     int turn) {
  const auto& ids = activation.activated;
  std::vector<SpecialistProposal> proposals;
  proposals.reserve(ids.size());
  if (!config_.ablations.decoupled_reasoning) {
    for (const auto& id : ids) {
      proposals.push_back(consult_specialist(id, state_, turns_, activation.instruction_for(id), stage, ctx_, round,
                                             turn, &proposals));
    }
    return proposals;
  }
  if (config_.parallel_specialists && ids.size() > 1) {
    // Every task reads the same immutable snapshot; nothing is shared between them.
    const ClinicalState snapshot = state_;
    const DialogueHistory history = turns_;
    std::vector<std::future<SpecialistProposal>> futures;
    futures.reserve(ids.size());
    for (const auto& id : ids) {
      futures.push_back(std::async(std::launch::async, [&, id] {
        return consult_specialist(id, snapshot, history, activation.instruction_for(id), stage, ctx_, round, turn);
      }));
    }
    std::exception_ptr failure;
    for (auto& f : futures) {
      try {
        proposals.push_back(f.get());
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) {
      std::rethrow_exception(failure);
    }
    return proposals;
  }
  for (const auto& id : ids) {
    proposals.push_back(consult_specialist(id, state_, turns_, activation.instruction_for(id), stage, ctx_, round, turn));
  }
  return proposals;
}

std::string Session::next_inquiry(const std::vector<std::string>& agenda, int round) {
  if (!config_.ablations.generative_inquiry) {
    if (template_cursor_ < template_questions_.size()) {
      return template_questions_[template_cursor_++];
    }
    return suggested_question(state_, {}, config_.case_template);
  }
  return aggregate_speak(state_, agenda, ctx_, round).text;
}

void Session::end_history_taking(StopReason reason, int round, RoundRecord& record) {
  stop_reason_ = reason;
  record.utterance_turn = add_turn(kSpeakerAssistant, config_.transition_utterance, kTurnTransition, round);
  rounds_.push_back(std::move(record));
  pending_round_.reset();
  const auto from = state_.stage;
  set_state(freeze_features(state_));
  emit("stage_changed", Json{{"from", to_string(from)},
                             {"to", to_string(state_.stage)},
                             {"revision", state_.revision},
                             {"stop_reason", to_string(reason)},
                             {"features_digest", features_digest(state_)}});
}

void Session::step_history_taking(const PatientReply& reply) {
  if (!awaiting_patient()) {
    throw StageError("session " + session_id_ + " is not awaiting a patient reply");
  }
  if (trim(reply.text).empty()) {
    throw ValidationError("empty patient reply");
  }
  try {
    const int round = ++round_;
    pending_round_ = RoundRecord{};
    RoundRecord& record = *pending_round_;
    record.round = round;
    record.stage = Stage::HistoryTaking;
    const int turn = add_turn(kSpeakerPatient, trim(reply.text), kTurnReply, round);
    record.patient_turn = turn;
    ingest(reply, turn, record);

    record.activation = select_specialists(round);
    emit("routing", Json{{"round", round},
                         {"stage", to_string(Stage::HistoryTaking)},
                         {"activation", to_json(record.activation)}});

    record.proposals = consult_all(record.activation, Stage::HistoryTaking, round, turn);
    Json summaries = Json::array();
    for (const auto& p : record.proposals) summaries.push_back(proposal_summary(p));
    emit("proposals_ready", Json{{"round", round}, {"proposals", std::move(summaries)}});

    AggregationOutcome outcome =
        state_.structured ? aggregate_write(state_, record.proposals, Stage::HistoryTaking, ctx_, round, turn)
                          : aggregate_write_scratchpad(state_, record.proposals, reply.text, ctx_, round);
    set_state(std::move(outcome.next_state));
    record.accepted_updates = std::move(outcome.accepted_updates);
    record.rejected_updates = std::move(outcome.rejected_updates);
    record.inquiry_agenda = std::move(outcome.inquiry_agenda);
    record.notes = std::move(outcome.notes);
    record.revision = state_.revision;
    emit("state_updated", Json{{"round", round},
                               {"stage", to_string(state_.stage)},
                               {"revision", state_.revision},
                               {"patient_updates", updates_json(record.patient_updates)},
                               {"accepted_updates", updates_json(record.accepted_updates)},
                               {"rejected_updates", rejected_json(record.rejected_updates)},
                               {"inquiry_agenda", record.inquiry_agenda},
                               {"state", to_json(state_)}});

    if (state_.structured && is_history_complete(state_)) {
      end_history_taking(StopReason::Completeness, round, record);
      return;
    }
    if (!state_.structured && outcome.declared_done) {
      end_history_taking(StopReason::AggregatorDone, round, record);
      return;
    }
    if (inquiries_ >= config_.max_turns) {
      end_history_taking(StopReason::MaxTurns, round, record);
      return;
    }
    record.utterance_turn = add_turn(kSpeakerAssistant, next_inquiry(record.inquiry_agenda, round), kTurnInquiry, round);
    rounds_.push_back(std::move(record));
    pending_round_.reset();
  } catch (const std::exception& e) {
    fail(e.what());
  }
}

void Session::submit_patient_text(std::string_view text) {
  step_history_taking(interpret_free_text(last_question_, text, config_.case_template));
}

void Session::synthesis_round(RoundRecord& record, int round, bool retry) {
  record.round = round;
  record.stage = Stage::DiagnosticSynthesis;
  record.reconciliation_retry = retry;
  if (retry) {
    record.activation.round = round;
    record.activation.activated = config_.roster.ids();
    record.activation.rationale = "empty reconciliation; retry with the full roster";
  } else {
    record.activation = select_specialists(round);
  }
  emit("routing", Json{{"round", round},
                       {"stage", to_string(Stage::DiagnosticSynthesis)},
                       {"activation", to_json(record.activation)}});
  const int turn = static_cast<int>(turns_.size());
  record.proposals = consult_all(record.activation, Stage::DiagnosticSynthesis, round, turn);
  Json summaries = Json::array();
  for (const auto& p : record.proposals) summaries.push_back(proposal_summary(p));
  emit("proposals_ready", Json{{"round", round}, {"proposals", std::move(summaries)}});
}

void Session::run_diagnostic_synthesis() {
  if (!ready_for_synthesis()) {
    throw StageError("session " + session_id_ + " is not ready for diagnostic synthesis");
  }
  try {
    const auto digest_before = features_digest(state_);
    int round = ++round_;
    pending_round_ = RoundRecord{};
    synthesis_round(*pending_round_, round, false);
    std::optional<AggregationOutcome> outcome;
    try {
      outcome = aggregate_write(state_, pending_round_->proposals, Stage::DiagnosticSynthesis, ctx_, round, 0);
    } catch (const EmptyReconciliationError&) {
      pending_round_->notes.push_back("empty reconciliation");
      pending_round_->revision = state_.revision;
      rounds_.push_back(std::move(*pending_round_));
      round = ++round_;
      pending_round_ = RoundRecord{};
      synthesis_round(*pending_round_, round, true);
      outcome = aggregate_write(state_, pending_round_->proposals, Stage::DiagnosticSynthesis, ctx_, round, 0);
    }
    RoundRecord& record = *pending_round_;
    const auto from = state_.stage;
    set_state(std::move(outcome->next_state));
    if (features_digest(state_) != digest_before) {
      throw FrozenStateError("case features changed during diagnostic synthesis");
    }
    record.rejected_updates = std::move(outcome->rejected_updates);
    record.notes.insert(record.notes.end(), outcome->notes.begin(), outcome->notes.end());
    record.revision = state_.revision;
    emit("state_updated", Json{{"round", round},
                               {"stage", to_string(state_.stage)},
                               {"revision", state_.revision},
                               {"plan", to_json(state_.plan)},
                               {"state", to_json(state_)}});
    emit("stage_changed", Json{{"from", to_string(from)}, {"to", to_string(state_.stage)}, {"revision", state_.revision}});
    const auto closing = aggregate_speak(state_, {}, ctx_, round);
    record.utterance_turn = add_turn(kSpeakerAssistant, closing.text, kTurnClosing, round);
    rounds_.push_back(std::move(record));
    pending_round_.reset();
    closed_ = true;
    emit("session_closed", Json{{"stop_reason", to_string(stop_reason_)}, {"revision", state_.revision}});
  } catch (const std::exception& e) {
    fail(e.what());
  }
}

void Session::fail(const std::string& message) {
  if (closed_) {
    return;
  }
  spdlog::error("session {} failed: {}", session_id_, message);
  if (pending_round_) {
    pending_round_->revision = state_.revision;
    pending_round_->notes.push_back("aborted: " + message);
    rounds_.push_back(std::move(*pending_round_));
    pending_round_.reset();
  }
  stop_reason_ = StopReason::Error;
  error_ = message;
  emit("error", Json{{"round", round_}, {"message", message}});
  closed_ = true;
  emit("session_closed", Json{{"stop_reason", to_string(stop_reason_)}, {"revision", state_.revision}});
}

Transcript Session::transcript() const {
  Transcript t;
  t.session_id = session_id_;
  t.case_id = case_id_;
  t.department = department_;
  t.turns = turns_;
  t.rounds = rounds_;
  if (pending_round_) {
    t.rounds.push_back(*pending_round_);
  }
  t.events = events_;
  t.final_state = state_;
  t.final_ipn = render_ipn(state_);
  t.stop_reason = stop_reason_;
  t.error = error_;
  t.config = config_.to_json();
  return t;
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

Transcript run_consultation(const CaseRecord& record, const SessionConfig& config, EventSink sink,
                            StateObserver observer) {
  Session session(record.case_id, record.case_id, record.department, config);
  session.set_event_sink(std::move(sink));
  session.set_state_observer(std::move(observer));

  PatientContext patient;
  patient.backend = config.backends.patient;
  patient.prompts = config.prompts;
  patient.case_template = config.case_template;
  patient.temperature = config.sampling.patient;
  patient.max_tokens = config.sampling.max_tokens;
  patient.session_id = record.case_id;

  session.start();
  PatientScript script;
  try {
    script = compile_script(record, config.case_template);
  } catch (const Error& e) {
    Transcript t = session.transcript();
    t.stop_reason = StopReason::Error;
    t.error = e.what();
    return t;
  }
  int round = 0;
  while (session.awaiting_patient()) {
    PatientReply reply;
    try {
      reply = answer(session.last_question(), script, session.history(), patient, ++round);
    } catch (const std::exception& e) {
      // Configuration failures from the patient backend end the session like
      // any other unrecoverable backend error.
      Transcript t = session.transcript();
      t.stop_reason = StopReason::Error;
      t.error = e.what();
      return t;
    }
    session.step_history_taking(reply);
  }
  if (session.ready_for_synthesis()) {
    session.run_diagnostic_synthesis();
  }
  return session.transcript();
}

std::vector<Transcript> run_batch(const std::vector<CaseRecord>& cases, const SessionConfig& config,
                                  std::size_t parallelism) {
  std::vector<Transcript> out(cases.size());
  parallelism = std::max<std::size_t>(1, parallelism);
  if (parallelism == 1 || cases.size() <= 1) {
    for (std::size_t i = 0; i < cases.size(); ++i) {
      out[i] = run_consultation(cases[i], config);
    }
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  std::mutex error_mutex;
  std::exception_ptr failure;
  for (std::size_t w = 0; w < std::min(parallelism, cases.size()); ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < cases.size(); i = next++) {
        try {
          out[i] = run_consultation(cases[i], config);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) {
    std::rethrow_exception(failure);
  }
  return out;
}

ActivationStats compute_activation_stats(const std::vector<Transcript>& transcripts) {
  if (transcripts.empty()) {
    throw ValidationError("activation statistics need at least one transcript");
  }
  ActivationStats stats;
  double sum_case = 0.0;
  double sum_round = 0.0;
  for (const auto& t : transcripts) {
    CaseActivation c;
    c.case_id = t.case_id;
    std::set<std::string> unique;
    for (const auto& r : t.rounds) {
      c.activation_events += r.activation.activated.size();
      unique.insert(r.activation.activated.begin(), r.activation.activated.end());
    }
    c.rounds = t.rounds.size();
    c.unique_experts = unique.size();
    if (c.rounds == 0) {
      spdlog::warn("transcript {} has no rounds; counted as zero activation", t.case_id);
      c.unique_experts = 0;
      c.experts_per_round = 0.0;
    } else {
      c.experts_per_round = static_cast<double>(c.activation_events) / static_cast<double>(c.rounds);
    }
    sum_case += static_cast<double>(c.unique_experts);
    sum_round += c.experts_per_round;
    stats.rounds_total += static_cast<int>(c.rounds);
    stats.per_case.push_back(std::move(c));
  }
  stats.cases = static_cast<int>(transcripts.size());
  stats.experts_per_case = sum_case / stats.cases;
  stats.experts_per_round = sum_round / stats.cases;
  return stats;
}

Json to_json(const ActivationStats& stats) {
  Json per_case = Json::array();
  for (const auto& c : stats.per_case) {
    per_case.push_back(Json{{"case_id", c.case_id},
                            {"unique_experts", c.unique_experts},
                            {"activation_events", c.activation_events},
                            {"rounds", c.rounds},
                            {"experts_per_round", c.experts_per_round}});
  }
  return Json{{"experts_per_case", stats.experts_per_case},
              {"experts_per_round", stats.experts_per_round},
              {"cases", stats.cases},
              {"rounds_total", stats.rounds_total},
              {"per_case", std::move(per_case)}};
}

}  // namespace aegle
