#include "aegle/orchestration.hpp"

#include "aegle/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <set>
#include <sstream>

namespace aegle {

// ---------------------------------------------------------------------------
// Dialogue history
// ---------------------------------------------------------------------------

Json to_json(const DialogueTurn& turn) {
  return Json{{"index", turn.index},
              {"speaker", turn.speaker},
              {"kind", turn.kind},
              {"round", turn.round},
              {"text", turn.text}};
}

DialogueTurn dialogue_turn_from_json(const Json& doc) {
  DialogueTurn t;
  t.index = doc.at("index").get<int>();
  t.speaker = doc.at("speaker").get<std::string>();
  t.kind = doc.value("kind", std::string());
  t.round = doc.value("round", 0);
  t.text = doc.at("text").get<std::string>();
  return t;
}

std::string render_history(const DialogueHistory& history) {
  if (history.empty()) {
    return "(no dialogue yet)";
  }
  std::string out;
  for (const auto& t : history) {
    if (t.speaker == kSpeakerPatient) {
      out += "Patient: ";
    } else if (t.speaker == kSpeakerAssistant) {
      out += "Doctor: ";
    } else {
      out += "System: ";
    }
    out += t.text;
    out.push_back('\n');
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

bool is_configuration_failure(const std::exception& error) {
  if (dynamic_cast<const AuthError*>(&error) != nullptr || dynamic_cast<const ScriptMissError*>(&error) != nullptr ||
      dynamic_cast<const ReplayMissError*>(&error) != nullptr) {
    return true;
  }
  return dynamic_cast<const BackendError*>(&error) == nullptr;
}

namespace {

Backend& require(const BackendHandle& backend, std::string_view role) {
  if (!backend) {
    throw ValidationError("no backend bound for " + std::string(role));
  }
  return *backend;
}

const PromptLibrary& prompts_of(const AgentContext& ctx) {
  if (!ctx.prompts) {
    throw ValidationError("agent context has no prompt library");
  }
  return *ctx.prompts;
}

ModelRequest make_request(std::vector<ChatMessage> messages, std::string role_tag, double temperature,
                          const AgentContext& ctx, int round) {
  ModelRequest r;
  r.messages = std::move(messages);
  r.role_tag = std::move(role_tag);
  r.temperature = temperature;
  r.max_tokens = ctx.sampling.max_tokens;
  r.session_id = ctx.session_id;
  r.round = round;
  return r;
}

/// Calls the backend, turning recoverable backend failures into nullopt.
std::optional<ModelResponse> call_recoverable(const ModelRequest& request, Backend& backend, std::string* failure) {
  try {
    return complete(request, backend);
  } catch (const BackendError& e) {
    if (is_configuration_failure(e)) {
      throw;
    }
    spdlog::warn("{} call failed in round {}: {}", request.role_tag, request.round, e.what());
    if (failure != nullptr) {
      *failure = e.what();
    }
    return std::nullopt;
  }
}

std::string string_or_dump(const Json& value) {
  if (value.is_string()) {
    return value.get<std::string>();
  }
  if (value.is_null()) {
    return {};
  }
  return canonical_dump(value);
}

std::vector<std::string> string_list(const Json& value) {
  std::vector<std::string> out;
  if (value.is_string()) {
    if (auto s = trim(value.get<std::string>()); !s.empty()) {
      out.push_back(std::move(s));
    }
    return out;
  }
  if (!value.is_array()) {
    return out;
  }
  for (const auto& item : value) {
    if (auto s = trim(string_or_dump(item)); !s.empty()) {
      out.push_back(std::move(s));
    }
  }
  return out;
}

const Json* first_key(const Json& doc, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (const auto it = doc.find(k); it != doc.end()) {
      return &*it;
    }
  }
  return nullptr;
}

std::string field_vocabulary(const CaseTemplate& tmpl) {
  std::string out;
  for (const auto& s : tmpl.sections()) {
    for (const auto& f : s.fields) {
      out += "- " + s.name + "." + f.name + " (" + f.label + ")\n";
    }
  }
  return out;
}

std::string pending_list(const ClinicalState& state) {
  if (!state.structured) {
    return "(free-text notes; no field list)";
  }
  std::string out;
  for (const auto& [section, field] : pending_fields(state)) {
    out += "- " + section + "." + field + "\n";
  }
  return out.empty() ? "(none)" : out;
}

std::string stage_task(Stage stage, const CaseTemplate& tmpl) {
  if (stage == Stage::HistoryTaking) {
    return "Stage: history taking. Suggest the follow-up questions the doctor should ask next, and record "
           "case-feature values that the patient has clearly stated. Do not propose diagnoses.\n"
           "Valid case-feature fields:\n" +
           field_vocabulary(tmpl) +
           "Reply with JSON only: {\"questions\": [\"...\"], \"updates\": [{\"section\": \"<section>\", "
           "\"field\": \"<field>\", \"value\": \"...\"}]}";
  }
  return "Stage: diagnostic synthesis. The case features are frozen. Propose diagnostic hypotheses and "
         "treatment considerations from the note as it stands. Do not ask questions and do not change case "
         "features.\n"
         "Reply with JSON only: {\"hypotheses\": [{\"diagnosis\": \"...\", \"confidence\": \"low|medium|high\", "
         "\"rationale\": \"...\"}], \"treatment\": [\"...\"]}";
}

constexpr std::string_view kRoutingRetry =
    "Your previous reply could not be parsed. Reply with a single JSON object of the form "
    "{\"activated\": [\"<department id>\"], \"instructions\": {\"<department id>\": \"<task>\"}, "
    "\"rationale\": \"...\"} and nothing else.";

}  // namespace

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

std::string ActivationDecision::instruction_for(const std::string& id) const {
  if (const auto it = instructions.find(id); it != instructions.end() && !it->second.empty()) {
    return it->second;
  }
  return shared_instruction;
}

Json to_json(const ActivationDecision& decision) {
  Json instructions = Json::object();
  for (const auto& [id, text] : decision.instructions) {
    instructions[id] = text;
  }
  return Json{{"round", decision.round},
              {"activated", decision.activated},
              {"instructions", std::move(instructions)},
              {"shared_instruction", decision.shared_instruction},
              {"rationale", decision.rationale},
              {"fallback", decision.fallback},
              {"dropped", decision.dropped},
              {"truncated", decision.truncated}};
}

ActivationDecision activation_from_json(const Json& doc) {
  ActivationDecision d;
  d.round = doc.value("round", 0);
  d.activated = doc.value("activated", std::vector<std::string>{});
  if (const auto it = doc.find("instructions"); it != doc.end()) {
    for (const auto& [id, text] : it->items()) {
      d.instructions[id] = text.get<std::string>();
    }
  }
  d.shared_instruction = doc.value("shared_instruction", std::string());
  d.rationale = doc.value("rationale", std::string());
  d.fallback = doc.value("fallback", false);
  d.dropped = doc.value("dropped", std::vector<std::string>{});
  d.truncated = doc.value("truncated", false);
  return d;
}

std::optional<ActivationDecision> parse_activation(std::string_view text, const Roster& roster, std::size_t k_max) {
  const auto doc = extract_json_object(text);
  if (!doc) {
    return std::nullopt;
  }
  const Json* listed = first_key(*doc, {"activated", "activate", "specialists"});
  if (listed == nullptr || !listed->is_array()) {
    return std::nullopt;
  }
  ActivationDecision d;
  for (const auto& item : *listed) {
    std::string id = item.is_object() ? item.value("id", std::string()) : string_or_dump(item);
    id = trim(id);
    if (!roster.contains(id)) {
      spdlog::info("routing dropped unknown specialist '{}'", id);
      d.dropped.push_back(id);
      continue;
    }
    if (std::find(d.activated.begin(), d.activated.end(), id) != d.activated.end()) {
      continue;
    }
    if (d.activated.size() >= k_max) {
      d.truncated = true;
      spdlog::info("routing truncated '{}' beyond the cap of {}", id, k_max);
      continue;
    }
    d.activated.push_back(std::move(id));
  }
  if (const Json* instr = first_key(*doc, {"instructions", "instruction"}); instr != nullptr) {
    if (instr->is_object()) {
      for (const auto& [id, task] : instr->items()) {
        if (std::find(d.activated.begin(), d.activated.end(), id) != d.activated.end()) {
          d.instructions[id] = string_or_dump(task);
        }
      }
    } else if (instr->is_string()) {
      d.shared_instruction = instr->get<std::string>();
    }
  }
  if (const Json* shared = first_key(*doc, {"shared_instruction", "shared_instructions"});
      shared != nullptr && shared->is_string()) {
    d.shared_instruction = shared->get<std::string>();
  }
  if (const Json* why = first_key(*doc, {"rationale", "reason"}); why != nullptr) {
    d.rationale = string_or_dump(*why);
  }
  return d;
}

ActivationDecision route(const DialogueHistory& history, const ClinicalState& state, const AgentContext& ctx,
                         int round) {
  if (ctx.roster.size() == 0) {
    throw ValidationError("empty specialist roster");
  }
  if (ctx.k_max < 1) {
    throw ValidationError("k_max must be at least 1");
  }
  Backend& backend = require(ctx.orchestrator, role_tags::kOrchestrator);
  std::string roster;
  for (const auto& id : ctx.roster.ids()) {
    roster += roster.empty() ? id : ", " + id;
  }
  auto messages = render_prompt(prompts_of(ctx), role_tags::kOrchestrator,
                                {{"roster", roster},
                                 {"k_max", std::to_string(ctx.k_max)},
                                 {"stage", std::string(to_string(state.stage))},
                                 {"ipn_draft", render_ipn(state)},
                                 {"pending_fields", pending_list(state)},
                                 {"history", render_history(history)}});
  auto request = make_request(std::move(messages), std::string(role_tags::kOrchestrator),
                              ctx.sampling.orchestrator, ctx, round);

  std::string failure = "unparseable routing reply";
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto response = call_recoverable(request, backend, &failure);
    if (!response) {
      break;
    }
    if (auto decision = parse_activation(response->text, ctx.roster, ctx.k_max)) {
      decision->round = round;
      return *decision;
    }
    spdlog::warn("orchestrator reply in round {} did not parse (attempt {})", round, attempt + 1);
    if (!trim(response->text).empty()) {
      request.messages.push_back(ChatMessage{ChatRole::Assistant, response->text});
    }
    request.messages.push_back(ChatMessage{ChatRole::User, std::string(kRoutingRetry)});
  }
  ActivationDecision fallback;
  fallback.round = round;
  fallback.fallback = true;
  fallback.rationale = "routing fallback: " + failure;
  return fallback;
}

// ---------------------------------------------------------------------------
// Specialists
// ---------------------------------------------------------------------------

std::string_view to_string(Confidence confidence) {
  switch (confidence) {
    case Confidence::Low: return "low";
    case Confidence::Medium: return "medium";
    case Confidence::High: return "high";
  }
  return "low";
}

std::optional<Confidence> confidence_from_string(std::string_view text) {
  const auto t = to_lower(trim(text));
  if (t == "low") return Confidence::Low;
  if (t == "medium" || t == "moderate") return Confidence::Medium;
  if (t == "high") return Confidence::High;
  return std::nullopt;
}

Json to_json(const SpecialistProposal& proposal) {
  Json updates = Json::array();
  for (const auto& u : proposal.feature_updates) {
    updates.push_back(to_json(u));
  }
  Json hypotheses = Json::array();
  for (const auto& h : proposal.hypotheses) {
    hypotheses.push_back(
        Json{{"diagnosis", h.diagnosis}, {"confidence", to_string(h.confidence)}, {"rationale", h.rationale}});
  }
  return Json{{"specialist", proposal.specialist},
              {"feature_updates", std::move(updates)},
              {"follow_up_questions", proposal.follow_up_questions},
              {"hypotheses", std::move(hypotheses)},
              {"treatment_considerations", proposal.treatment_considerations},
              {"raw_response", proposal.raw_response},
              {"parse_failure", proposal.parse_failure},
              {"violations", proposal.violations}};
}

SpecialistProposal proposal_from_json(const Json& doc) {
  SpecialistProposal p;
  p.specialist = doc.at("specialist").get<std::string>();
  for (const auto& u : doc.value("feature_updates", Json::array())) {
    p.feature_updates.push_back(feature_update_from_json(u));
  }
  p.follow_up_questions = doc.value("follow_up_questions", std::vector<std::string>{});
  for (const auto& h : doc.value("hypotheses", Json::array())) {
    p.hypotheses.push_back(Hypothesis{h.at("diagnosis").get<std::string>(),
                                      confidence_from_string(h.value("confidence", "low")).value_or(Confidence::Low),
                                      h.value("rationale", std::string())});
  }
  p.treatment_considerations = doc.value("treatment_considerations", std::vector<std::string>{});
  p.raw_response = doc.value("raw_response", std::string());
  p.parse_failure = doc.value("parse_failure", false);
  p.violations = doc.value("violations", std::vector<std::string>{});
  return p;
}

std::string proposal_digest(const SpecialistProposal& proposal) {
  return sha256_hex(canonical_dump(to_json(proposal)));
}

namespace {

bool targets_plan(std::string_view section, std::string_view field) {
  static const std::set<std::string, std::less<>> plan_sections = {
      "assessment", "plan", "diagnosis", "diagnosis_plan", "assessment_plan", "a", "p"};
  static const std::set<std::string, std::less<>> plan_fields = {
      "preliminary_diagnosis", "diagnostic_reasoning", "differentials", "differential_diagnosis",
      "treatment_plan",        "follow_up",            "diagnosis"};
  return plan_sections.count(to_lower(section)) > 0 || plan_fields.count(to_lower(field)) > 0;
}

}  // namespace

SpecialistProposal parse_proposal(std::string_view text, const std::string& specialist, Stage stage,
                                  const CaseTemplate& tmpl, int turn) {
  SpecialistProposal p;
  p.specialist = specialist;
  p.raw_response = std::string(text);
  const auto doc = extract_json_object(text);
  if (!doc) {
    p.parse_failure = true;
    p.violations.push_back("unparseable specialist reply");
    spdlog::warn("specialist {} reply did not parse", specialist);
    return p;
  }

  std::vector<std::string> questions;
  if (const Json* q = first_key(*doc, {"questions", "follow_up_questions"}); q != nullptr) {
    questions = string_list(*q);
  }

  std::vector<FeatureUpdate> updates;
  if (const Json* u = first_key(*doc, {"updates", "feature_updates"}); u != nullptr && u->is_array()) {
    for (const auto& item : *u) {
      if (!item.is_object()) {
        p.violations.push_back("malformed update dropped");
        continue;
      }
      std::string section = item.value("section", std::string());
      std::string field = item.value("field", std::string());
      if (const auto topic = item.find("topic"); topic != item.end() && topic->is_string()) {
        const auto key = topic->get<std::string>();
        if (const auto dot = key.find('.'); dot != std::string::npos) {
          section = key.substr(0, dot);
          field = key.substr(dot + 1);
        }
      }
      if (section.empty() || field.empty()) {
        p.violations.push_back("update without section or field dropped");
        continue;
      }
      if (targets_plan(section, field)) {
        p.violations.push_back("plan-target-rejected: " + section + "." + field);
        continue;
      }
      if (const auto* spec = tmpl.find_section(section); spec != nullptr) {
        section = spec->name;
      }
      FeatureUpdate fu;
      fu.section = std::move(section);
      fu.field = std::move(field);
      fu.unavailable = item.value("unavailable", false);
      if (!fu.unavailable) {
        fu.value = trim(string_or_dump(item.value("value", Json())));
      }
      fu.source = role_tags::specialist(specialist);
      fu.turn = turn;
      updates.push_back(std::move(fu));
    }
  }

  std::vector<Hypothesis> hypotheses;
  if (const Json* h = first_key(*doc, {"hypotheses", "diagnoses"}); h != nullptr && h->is_array()) {
    for (const auto& item : *h) {
      Hypothesis hyp;
      if (item.is_string()) {
        hyp.diagnosis = trim(item.get<std::string>());
      } else if (item.is_object()) {
        hyp.diagnosis = trim(string_or_dump(item.value("diagnosis", Json())));
        hyp.rationale = trim(string_or_dump(item.value("rationale", Json())));
        const auto label = string_or_dump(item.value("confidence", Json("low")));
        if (auto c = confidence_from_string(label)) {
          hyp.confidence = *c;
        } else {
          p.violations.push_back("unknown confidence '" + label + "' read as low");
        }
      }
      if (hyp.diagnosis.empty()) {
        p.violations.push_back("hypothesis without diagnosis dropped");
        continue;
      }
      hypotheses.push_back(std::move(hyp));
    }
  }

  std::vector<std::string> treatment;
  if (const Json* t = first_key(*doc, {"treatment", "treatment_considerations"}); t != nullptr) {
    treatment = string_list(*t);
  }

  if (stage == Stage::HistoryTaking) {
    p.follow_up_questions = std::move(questions);
    p.feature_updates = std::move(updates);
    if (!hypotheses.empty()) {
      p.violations.push_back("hypotheses stripped during history taking");
    }
    if (!treatment.empty()) {
      p.violations.push_back("treatment considerations stripped during history taking");
    }
  } else {
    p.hypotheses = std::move(hypotheses);
    p.treatment_considerations = std::move(treatment);
    if (!questions.empty()) {
      p.violations.push_back("questions stripped after freeze");
    }
    if (!updates.empty()) {
      p.violations.push_back("feature updates stripped after freeze");
    }
  }
  for (const auto& v : p.violations) {
    spdlog::info("specialist {}: {}", specialist, v);
  }
  return p;
}

SpecialistProposal consult_specialist(const std::string& id, const ClinicalState& snapshot,
                                      const DialogueHistory& history, const std::string& instructions, Stage stage,
                                      const AgentContext& ctx, int round, int turn,
                                      const std::vector<SpecialistProposal>* peers) {
  if (!ctx.roster.contains(id)) {
    throw ValidationError("specialist '" + id + "' is not on the roster");
  }
  Backend& backend = require(ctx.specialist, "specialists");
  std::string peer_section;
  if (peers != nullptr && !peers->empty()) {
    peer_section = "Proposals already made by other specialists this round:\n";
    for (const auto& peer : *peers) {
      Json content = to_json(peer);
      content.erase("raw_response");
      peer_section += canonical_dump(content) + "\n";
    }
  }
  const auto role_tag = role_tags::specialist(id);
  auto messages = render_prompt(prompts_of(ctx), role_tag,
                                {{"stage", std::string(to_string(stage))},
                                 {"stage_task", stage_task(stage, ctx.case_template)},
                                 {"ipn_draft", render_ipn(snapshot)},
                                 {"history", render_history(history)},
                                 {"instructions", instructions.empty() ? "(none)" : instructions},
                                 {"peer_section", peer_section}});
  const auto request = make_request(std::move(messages), role_tag, ctx.sampling.specialist, ctx, round);
  std::string failure;
  const auto response = call_recoverable(request, backend, &failure);
  if (!response) {
    SpecialistProposal p;
    p.specialist = id;
    p.parse_failure = true;
    p.violations.push_back("backend failure: " + failure);
    return p;
  }
  return parse_proposal(response->text, id, stage, ctx.case_template, turn);
}

// ---------------------------------------------------------------------------
// Aggregator: write
// ---------------------------------------------------------------------------

std::vector<std::string> build_inquiry_agenda(const std::vector<SpecialistProposal>& proposals) {
  struct Entry {
    std::string text;
    std::size_t askers = 0;
    std::size_t first_seen = 0;
  };
  std::vector<Entry> entries;
  std::map<std::string, std::size_t> index;
  std::size_t order = 0;
  for (const auto& p : proposals) {
    std::set<std::string> asked_here;
    for (const auto& q : p.follow_up_questions) {
      const auto key = normalize_words(q);
      if (key.empty()) {
        continue;
      }
      auto [it, inserted] = index.emplace(key, entries.size());
      if (inserted) {
        entries.push_back(Entry{q, 0, order++});
      }
      if (asked_here.insert(key).second) {
        ++entries[it->second].askers;
      }
    }
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.askers != b.askers) {
      return a.askers > b.askers;
    }
    return a.first_seen < b.first_seen;
  });
  std::vector<std::string> agenda;
  agenda.reserve(entries.size());
  for (auto& e : entries) {
    agenda.push_back(std::move(e.text));
  }
  return agenda;
}

DiagnosisPlan reconcile_hypotheses(const std::vector<SpecialistProposal>& proposals) {
  struct Ranked {
    const Hypothesis* hypothesis;
    const std::string* specialist;
  };
  std::vector<Ranked> ranked;
  for (const auto& p : proposals) {
    for (const auto& h : p.hypotheses) {
      ranked.push_back(Ranked{&h, &p.specialist});
    }
  }
  if (ranked.empty()) {
    throw EmptyReconciliationError("no specialist proposed a diagnostic hypothesis");
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    return static_cast<int>(a.hypothesis->confidence) > static_cast<int>(b.hypothesis->confidence);
  });
  const auto& winner = *ranked.front().hypothesis;
  DiagnosisPlan plan;
  plan.preliminary_diagnosis = winner.diagnosis;
  plan.diagnostic_reasoning = winner.rationale.empty()
                                  ? "Highest-confidence hypothesis from " + *ranked.front().specialist + "."
                                  : winner.rationale;
  std::set<std::string> seen{normalize_compact(winner.diagnosis)};
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    const auto& h = *ranked[i].hypothesis;
    if (seen.insert(normalize_compact(h.diagnosis)).second) {
      plan.differentials.push_back(Differential{h.diagnosis, h.rationale});
    }
  }
  std::set<std::string> seen_treatment;
  for (const auto& p : proposals) {
    for (const auto& t : p.treatment_considerations) {
      if (seen_treatment.insert(normalize_words(t)).second) {
        plan.treatment_plan += plan.treatment_plan.empty() ? t : "; " + t;
      }
    }
  }
  return plan;
}

namespace {

std::string conflict_payload(const FeatureUpdate& first, const std::vector<const FeatureUpdate*>& candidates,
                             const CaseTemplate& tmpl) {
  std::string label = first.field;
  if (const auto* f = tmpl.find_field(first.section, first.field); f != nullptr) {
    label = f->label;
  }
  std::string out = "FIELD: " + first.section + "." + first.field + " (" + label + ")\nCANDIDATES:\n";
  int n = 1;
  for (const auto* c : candidates) {
    out += std::to_string(n++) + ". [" + c->source + "] " + c->value + "\n";
  }
  return out;
}

std::optional<std::string> merge_with_backend(const ClinicalState& state, const FeatureUpdate& first,
                                              const std::vector<const FeatureUpdate*>& candidates,
                                              const AgentContext& ctx, int round) {
  if (!ctx.aggregator_write) {
    return std::nullopt;
  }
  auto messages = render_prompt(
      prompts_of(ctx), role_tags::kAggregatorWrite,
      {{"task",
        "Conflict merge. Several specialists proposed different values for one case-feature field. Merge them "
        "into a single value that keeps only what the patient actually reported."},
       {"ipn_draft", render_ipn(state)},
       {"payload", conflict_payload(first, candidates, ctx.case_template)},
       {"response_format", "{\"value\": \"<merged value>\"}"}});
  const auto request = make_request(std::move(messages), std::string(role_tags::kAggregatorWrite),
                                    ctx.sampling.aggregator_write, ctx, round);
  const auto response = call_recoverable(request, *ctx.aggregator_write, nullptr);
  if (!response) {
    return std::nullopt;
  }
  const auto doc = extract_json_object(response->text);
  if (!doc || !doc->contains("value")) {
    spdlog::warn("aggregator merge reply in round {} did not parse", round);
    return std::nullopt;
  }
  auto value = trim(string_or_dump(doc->at("value")));
  if (value.empty()) {
    return std::nullopt;
  }
  return value;
}

std::optional<DiagnosisPlan> synthesize_with_backend(const ClinicalState& state,
                                                     const std::vector<SpecialistProposal>& proposals,
                                                     const AgentContext& ctx, int round) {
  if (!ctx.aggregator_write) {
    return std::nullopt;
  }
  std::string payload = "SPECIALIST HYPOTHESES:\n";
  for (const auto& p : proposals) {
    for (const auto& h : p.hypotheses) {
      payload += "- [" + p.specialist + "] " + h.diagnosis + " (confidence: " + std::string(to_string(h.confidence)) +
                 ")";
      if (!h.rationale.empty()) {
        payload += ": " + h.rationale;
      }
      payload += "\n";
    }
  }
  payload += "TREATMENT CONSIDERATIONS:\n";
  for (const auto& p : proposals) {
    for (const auto& t : p.treatment_considerations) {
      payload += "- [" + p.specialist + "] " + t + "\n";
    }
  }
  auto messages = render_prompt(
      prompts_of(ctx), role_tags::kAggregatorWrite,
      {{"task",
        "Diagnostic synthesis. Reconcile the specialists' hypotheses into one assessment and plan. Resolve "
        "inconsistencies and rely only on the frozen case features in the note."},
       {"ipn_draft", render_ipn(state)},
       {"payload", payload},
       {"response_format",
        "{\"preliminary_diagnosis\": \"...\", \"diagnostic_reasoning\": \"...\", \"differentials\": "
        "[{\"diagnosis\": \"...\", \"rationale\": \"...\"}], \"treatment_plan\": \"...\", \"follow_up\": \"...\"}"}});
  const auto request = make_request(std::move(messages), std::string(role_tags::kAggregatorWrite),
                                    ctx.sampling.aggregator_write, ctx, round);
  const auto response = call_recoverable(request, *ctx.aggregator_write, nullptr);
  if (!response) {
    return std::nullopt;
  }
  const auto doc = extract_json_object(response->text);
  if (!doc) {
    spdlog::warn("aggregator synthesis reply in round {} did not parse", round);
    return std::nullopt;
  }
  DiagnosisPlan plan;
  plan.preliminary_diagnosis = trim(string_or_dump(doc->value("preliminary_diagnosis", Json())));
  plan.diagnostic_reasoning = trim(string_or_dump(doc->value("diagnostic_reasoning", Json())));
  plan.treatment_plan = trim(string_or_dump(doc->value("treatment_plan", Json())));
  plan.follow_up = trim(string_or_dump(doc->value("follow_up", Json())));
  for (const auto& d : doc->value("differentials", Json::array())) {
    Differential diff;
    if (d.is_string()) {
      diff.diagnosis = trim(d.get<std::string>());
    } else if (d.is_object()) {
      diff.diagnosis = trim(string_or_dump(d.value("diagnosis", Json())));
      diff.rationale = trim(string_or_dump(d.value("rationale", Json())));
    }
    if (!diff.diagnosis.empty()) {
      plan.differentials.push_back(std::move(diff));
    }
  }
  if (plan.preliminary_diagnosis.empty()) {
    return std::nullopt;
  }
  return plan;
}

}  // namespace

AggregationOutcome aggregate_write(const ClinicalState& state, const std::vector<SpecialistProposal>& proposals,
                                   Stage stage, const AgentContext& ctx, int round, int turn) {
  if (stage != state.stage) {
    throw StageError("aggregate_write stage " + std::string(to_string(stage)) + " does not match state stage " +
                     std::string(to_string(state.stage)));
  }
  if (stage == Stage::Closed) {
    throw StageError("aggregate_write on a closed state");
  }
  AggregationOutcome out;
  out.next_state = state;

  if (stage == Stage::DiagnosticSynthesis) {
    for (const auto& p : proposals) {
      for (const auto& u : p.feature_updates) {
        out.rejected_updates.push_back(RejectedUpdate{u, "features-frozen"});
      }
    }
    const bool any_hypothesis = std::any_of(proposals.begin(), proposals.end(),
                                            [](const SpecialistProposal& p) { return !p.hypotheses.empty(); });
    if (!any_hypothesis) {
      throw EmptyReconciliationError("no specialist proposed a diagnostic hypothesis");
    }
    std::optional<DiagnosisPlan> plan;
    if (ctx.backend_merge) {
      plan = synthesize_with_backend(state, proposals, ctx, round);
    }
    if (!plan) {
      plan = reconcile_hypotheses(proposals);
      out.notes.push_back("reconciled with the deterministic confidence rule");
    }
    out.next_state = set_assessment_plan(state, *plan);
    return out;
  }

  if (!state.structured) {
    throw ValidationError("structured aggregate_write called on a scratchpad state");
  }

  // Pre-validate and group by target field, keeping first-appearance order.
  struct Group {
    std::string key;
    std::vector<const FeatureUpdate*> candidates;
  };
  std::vector<Group> groups;
  std::map<std::string, std::size_t> group_index;
  for (const auto& p : proposals) {
    for (const auto& u : p.feature_updates) {
      const auto* field = state.features.find_field(u.section, u.field);
      if (field == nullptr) {
        out.rejected_updates.push_back(RejectedUpdate{u, "unknown-field"});
        continue;
      }
      if (u.unavailable) {
        out.rejected_updates.push_back(RejectedUpdate{u, "unavailable-requires-patient"});
        continue;
      }
      if (u.value.empty()) {
        out.rejected_updates.push_back(RejectedUpdate{u, "empty-value"});
        continue;
      }
      if (field->status == FieldStatus::Populated) {
        out.rejected_updates.push_back(RejectedUpdate{u, "already-populated"});
        continue;
      }
      if (field->status == FieldStatus::Unavailable) {
        out.rejected_updates.push_back(RejectedUpdate{u, "already-unavailable"});
        continue;
      }
      const auto key = u.section + "." + u.field;
      auto [it, inserted] = group_index.emplace(key, groups.size());
      if (inserted) {
        groups.push_back(Group{key, {}});
      }
      groups[it->second].candidates.push_back(&u);
    }
  }

  std::vector<FeatureUpdate> to_apply;
  for (const auto& g : groups) {
    const FeatureUpdate& first = *g.candidates.front();
    std::vector<const FeatureUpdate*> distinct{&first};
    for (std::size_t i = 1; i < g.candidates.size(); ++i) {
      const auto* c = g.candidates[i];
      const bool repeat = std::any_of(distinct.begin(), distinct.end(), [&](const FeatureUpdate* d) {
        return normalize_words(d->value) == normalize_words(c->value);
      });
      if (repeat) {
        out.rejected_updates.push_back(RejectedUpdate{*c, "duplicate"});
      } else {
        distinct.push_back(c);
      }
    }
    if (distinct.size() == 1) {
      to_apply.push_back(first);
      continue;
    }
    std::optional<std::string> merged;
    if (ctx.backend_merge) {
      merged = merge_with_backend(state, first, distinct, ctx, round);
    }
    if (merged) {
      for (const auto* c : distinct) {
        out.rejected_updates.push_back(RejectedUpdate{*c, "merged"});
      }
      FeatureUpdate m = first;
      m.value = *merged;
      m.source = std::string(kAggregatorSource);
      to_apply.push_back(std::move(m));
      out.notes.push_back("merged conflicting values for " + g.key);
    } else {
      to_apply.push_back(first);
      for (std::size_t i = 1; i < distinct.size(); ++i) {
        out.rejected_updates.push_back(RejectedUpdate{*distinct[i], "conflict-fallback"});
      }
      out.notes.push_back("conflict on " + g.key + " resolved by activation order");
    }
  }

  for (auto& u : to_apply) {
    u.turn = std::max(u.turn, turn);
    try {
      out.next_state = apply_feature_update(out.next_state, u);
      out.accepted_updates.push_back(std::move(u));
    } catch (const Error& e) {
      out.rejected_updates.push_back(RejectedUpdate{std::move(u), std::string("invalid: ") + e.what()});
    }
  }
  out.inquiry_agenda = build_inquiry_agenda(proposals);
  return out;
}

AggregationOutcome aggregate_write_scratchpad(const ClinicalState& state,
                                              const std::vector<SpecialistProposal>& proposals,
                                              const std::string& patient_reply, const AgentContext& ctx, int round) {
  if (state.structured || state.stage != Stage::HistoryTaking) {
    throw StageError("scratchpad write requires an unstructured history-taking state");
  }
  AggregationOutcome out;
  out.next_state = state;
  std::string folded;
  for (const auto& p : proposals) {
    for (const auto& u : p.feature_updates) {
      out.rejected_updates.push_back(RejectedUpdate{u, "folded-into-scratchpad"});
      if (!u.unavailable && !u.value.empty()) {
        std::string label = u.field;
        if (const auto* f = ctx.case_template.find_field(u.section, u.field); f != nullptr) {
          label = f->label;
        }
        folded += label + ": " + u.value + "\n";
      }
    }
  }

  std::optional<Json> reply;
  if (ctx.aggregator_write) {
    std::string payload = "PATIENT REPLY: " + patient_reply + "\nSPECIALIST NOTES:\n" +
                          (folded.empty() ? std::string("(none)\n") : folded);
    auto messages = render_prompt(
        prompts_of(ctx), role_tags::kAggregatorWrite,
        {{"task",
          "Scratchpad update. Add the new clinical information to the consultation notes and decide whether the "
          "history is sufficient to proceed to diagnosis."},
         {"ipn_draft", render_ipn(state)},
         {"payload", payload},
         {"response_format", "{\"notes\": \"<text to append>\", \"done\": false}"}});
    const auto request = make_request(std::move(messages), std::string(role_tags::kAggregatorWrite),
                                      ctx.sampling.aggregator_write, ctx, round);
    if (const auto response = call_recoverable(request, *ctx.aggregator_write, nullptr)) {
      reply = extract_json_object(response->text);
    }
  }
  std::string notes = folded;
  if (reply) {
    if (const auto it = reply->find("notes"); it != reply->end()) {
      notes = string_or_dump(*it);
    }
    out.declared_done = reply->value("done", false);
  }
  if (!trim(notes).empty()) {
    out.next_state = append_scratchpad(out.next_state, notes);
  }
  out.inquiry_agenda = build_inquiry_agenda(proposals);
  return out;
}

// ---------------------------------------------------------------------------
// Aggregator: speak
// ---------------------------------------------------------------------------

std::string suggested_question(const ClinicalState& state, const std::vector<std::string>& agenda,
                               const CaseTemplate& tmpl) {
  if (!agenda.empty()) {
    return agenda.front();
  }
  if (state.structured) {
    const auto pending = pending_fields(state);
    if (!pending.empty()) {
      if (const auto* f = tmpl.find_field(pending.front().first, pending.front().second);
          f != nullptr && !f->question.empty()) {
        return f->question;
      }
      return "Could you tell me about your " + pending.front().second + "?";
    }
  }
  return "Is there anything else about your health that you think I should know?";
}

std::string closing_summary(const DiagnosisPlan& plan) {
  std::string out = "Thank you for your patience. Based on our discussion, the preliminary diagnosis is " +
                    plan.preliminary_diagnosis + ".";
  if (!plan.treatment_plan.empty()) {
    out += " Recommended plan: " + plan.treatment_plan + ".";
  }
  if (!plan.follow_up.empty()) {
    out += " Follow-up: " + plan.follow_up + ".";
  }
  return out;
}

SpeakResult aggregate_speak(const ClinicalState& next_state, const std::vector<std::string>& agenda,
                            const AgentContext& ctx, int round) {
  const bool closing = next_state.stage == Stage::Closed;
  const std::string suggestion =
      closing ? closing_summary(next_state.plan) : suggested_question(next_state, agenda, ctx.case_template);
  std::string agenda_text;
  for (std::size_t i = 0; i < agenda.size(); ++i) {
    agenda_text += std::to_string(i + 1) + ". " + agenda[i] + "\n";
  }
  if (agenda_text.empty()) {
    agenda_text = "(empty)\n";
  }

  SpeakResult result;
  if (ctx.aggregator_speak) {
    auto messages = render_prompt(prompts_of(ctx), role_tags::kAggregatorSpeak,
                                  {{"stage", std::string(to_string(next_state.stage))},
                                   {"ipn_draft", render_ipn(next_state)},
                                   {"agenda", agenda_text},
                                   {"suggested_utterance", suggestion}});
    const auto request = make_request(std::move(messages), std::string(role_tags::kAggregatorSpeak),
                                      ctx.sampling.aggregator_speak, ctx, round);
    if (const auto response = call_recoverable(request, *ctx.aggregator_speak, nullptr)) {
      result.text = trim(response->text);
    }
  }
  if (result.text.empty()) {
    result.text = suggestion;
    result.fallback = true;
  }
  if (closing && !contains_phrase(normalize_words(result.text), normalize_words(next_state.plan.preliminary_diagnosis))) {
    result.text += " Preliminary diagnosis: " + next_state.plan.preliminary_diagnosis + ".";
  }
  return result;
}

}  // namespace aegle
