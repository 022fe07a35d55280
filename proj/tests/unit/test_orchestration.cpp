#include "aegle/errors.hpp"
#include "aegle/orchestration.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <mutex>

using namespace aegle;
using namespace aegle::testing;

namespace {

/// Scripted backend that keeps every request it serves.
class Capturing : public Backend {
public:
  explicit Capturing(std::vector<ScriptEntry> rows) : inner_(std::move(rows)) {}
  ModelResponse complete(const ModelRequest& r) override {
    {
      std::lock_guard lock(mutex_);
      seen.push_back(r);
    }
    return inner_.complete(r);
  }
  std::string id() const override { return "capturing"; }
  std::vector<ModelRequest> seen;

private:
  ScriptedBackend inner_;
  std::mutex mutex_;
};

ScriptEntry row(std::string role, std::string response, std::optional<std::string> contains = std::nullopt) {
  ScriptEntry e;
  e.role_tag = std::move(role);
  e.response = std::move(response);
  e.contains = std::move(contains);
  return e;
}

AgentContext context(BackendHandle b) {
  AgentContext ctx;
  ctx.prompts = shipped_prompts();
  ctx.orchestrator = ctx.specialist = ctx.aggregator_write = ctx.aggregator_speak = std::move(b);
  ctx.session_id = "unit";
  return ctx;
}

SpecialistProposal proposal(std::string id, std::vector<Hypothesis> h, std::vector<std::string> q = {}) {
  SpecialistProposal p;
  p.specialist = std::move(id);
  p.hypotheses = std::move(h);
  p.follow_up_questions = std::move(q);
  return p;
}

FeatureUpdate value_update(std::string section, std::string field, std::string value, std::string source) {
  return FeatureUpdate{std::move(section), std::move(field), std::move(value), false, std::move(source), 1};
}

}  // namespace

TEST_CASE("activation parsing drops unknown ids, collapses repeats and caps") {
  const auto roster = Roster::defaults();
  const auto d = parse_activation(
      R"(Plan: {"activated": ["cardiology", "astrology", "cardiology", "neurology", {"id": "urology"}],
                "instructions": {"cardiology": "check rhythm", "astrology": "x"}, "rationale": "chest pain"})",
      roster, 2);
  REQUIRE(d);
  CHECK(d->activated == std::vector<std::string>{"cardiology", "neurology"});
  CHECK(d->dropped == std::vector<std::string>{"astrology"});
  CHECK(d->truncated);
  CHECK(d->instruction_for("cardiology") == "check rhythm");
  CHECK(d->instructions.count("astrology") == 0);
  CHECK_FALSE(parse_activation("cardiology please", roster, 4));
  CHECK_FALSE(parse_activation(R"({"activated": "cardiology"})", roster, 4));
  const auto empty = parse_activation(R"({"activated": [], "shared_instruction": "wait"})", roster, 4);
  REQUIRE(empty);
  CHECK(empty->activated.empty());
  CHECK(empty->instruction_for("neurology") == "wait");
}

TEST_CASE("routing retries once, then falls back to an empty activation") {
  auto ok_second = std::make_shared<Capturing>(std::vector<ScriptEntry>{
      row("orchestrator", R"({"activated": ["neurology"]})", "could not be parsed"), row("orchestrator", "hmm")});
  const auto d = route({}, new_state(), context(ok_second), 3);
  CHECK(d.activated == std::vector<std::string>{"neurology"});
  CHECK(d.round == 3);
  CHECK(ok_second->seen.size() == 2);
  CHECK_FALSE(d.fallback);

  auto never = std::make_shared<Capturing>(std::vector<ScriptEntry>{row("orchestrator", "hmm")});
  const auto f = route({}, new_state(), context(never), 1);
  CHECK(f.fallback);
  CHECK(f.activated.empty());

  auto missing = std::make_shared<ScriptedBackend>(std::vector<ScriptEntry>{});
  CHECK_THROWS_AS(route({}, new_state(), context(missing), 1), ScriptMissError);
}

TEST_CASE("routing prompt carries the roster, cap and pending fields") {
  auto b = std::make_shared<Capturing>(std::vector<ScriptEntry>{row("orchestrator", R"({"activated": []})")});
  auto ctx = context(b);
  ctx.k_max = 2;
  route({}, new_state(), ctx, 1);
  const auto& text = b->seen.front().messages.front().content + b->seen.front().messages.back().content;
  CHECK(text.find("at most 2 specialists") != std::string::npos);
  CHECK(text.find("hepatobiliary_surgery") != std::string::npos);
  CHECK(text.find("history_of_present_illness.onset") != std::string::npos);
}

TEST_CASE("proposal parsing enforces stage content") {
  const auto tmpl = CaseTemplate::defaults();
  const std::string reply = R"({"questions": ["Any fever?"],
      "updates": [{"section": "history_of_present_illness", "field": "onset", "value": "2 days"},
                  {"topic": "hpi.severity", "value": "7/10"},
                  {"section": "assessment", "field": "preliminary_diagnosis", "value": "flu"}],
      "hypotheses": [{"diagnosis": "influenza", "confidence": "high"}], "treatment": ["rest"]})";
  const auto s1 = parse_proposal(reply, "infectious_diseases", Stage::HistoryTaking, tmpl, 4);
  CHECK(s1.follow_up_questions == std::vector<std::string>{"Any fever?"});
  REQUIRE(s1.feature_updates.size() == 2);
  CHECK(s1.feature_updates[1].field == "severity");
  CHECK(s1.feature_updates[0].source == "specialist:infectious_diseases");
  CHECK(s1.feature_updates[0].turn == 4);
  CHECK(s1.hypotheses.empty());
  CHECK(s1.treatment_considerations.empty());
  CHECK(s1.violations.size() >= 2);

  const auto s2 = parse_proposal(reply, "infectious_diseases", Stage::DiagnosticSynthesis, tmpl, 4);
  CHECK(s2.feature_updates.empty());
  CHECK(s2.follow_up_questions.empty());
  REQUIRE(s2.hypotheses.size() == 1);
  CHECK(s2.hypotheses[0].confidence == Confidence::High);
  CHECK(s2.treatment_considerations == std::vector<std::string>{"rest"});

  const auto bad = parse_proposal("I am not sure", "neurology", Stage::HistoryTaking, tmpl, 1);
  CHECK(bad.parse_failure);
  CHECK(proposal_from_json(to_json(s2)) == s2);
  CHECK(proposal_digest(s2) == proposal_digest(proposal_from_json(to_json(s2))));
}

TEST_CASE("specialists see no peers unless coupled") {
  auto b = std::make_shared<Capturing>(std::vector<ScriptEntry>{row("specialist:*", R"({"questions": []})")});
  const auto ctx = context(b);
  const std::vector<SpecialistProposal> peers{proposal("cardiology", {}, {"Any chest pain?"})};
  consult_specialist("neurology", new_state(), {}, "focus", Stage::HistoryTaking, ctx, 1, 1);
  consult_specialist("neurology", new_state(), {}, "focus", Stage::HistoryTaking, ctx, 1, 1, &peers);
  REQUIRE(b->seen.size() == 2);
  CHECK(b->seen[0].role_tag == "specialist:neurology");
  CHECK(b->seen[0].messages.back().content.find("Any chest pain?") == std::string::npos);
  CHECK(b->seen[1].messages.back().content.find("Any chest pain?") != std::string::npos);
  CHECK(b->seen[0].messages.front().content.find("neurology") != std::string::npos);
  CHECK_THROWS_AS(consult_specialist("astrology", new_state(), {}, "", Stage::HistoryTaking, ctx, 1, 1), ValidationError);
}

TEST_CASE("inquiry agenda ranks by demand then first appearance") {
  const auto agenda = build_inquiry_agenda({proposal("a", {}, {"Q1", "Q2"}), proposal("b", {}, {"Q3", "q2?"}),
                                            proposal("c", {}, {"Q3"})});
  REQUIRE(agenda.size() == 3);
  CHECK(agenda[0] == "Q2");
  CHECK(agenda[1] == "Q3");
  CHECK(agenda[2] == "Q1");
}

TEST_CASE("deterministic reconciliation") {
  const auto plan = reconcile_hypotheses(
      {proposal("gastroenterology", {{"gastritis", Confidence::Medium, "pain"}, {"GERD", Confidence::Low, ""}}),
       proposal("hepatobiliary_surgery", {{"cholecystitis", Confidence::High, "Murphy sign"}}),
       proposal("cardiology", {{"Gastritis", Confidence::High, ""}})});
  CHECK(plan.preliminary_diagnosis == "cholecystitis");
  CHECK(plan.diagnostic_reasoning == "Murphy sign");
  REQUIRE(plan.differentials.size() == 2);
  CHECK(plan.differentials[0].diagnosis == "Gastritis");
  CHECK(plan.differentials[1].diagnosis == "GERD");
  CHECK_THROWS_AS(reconcile_hypotheses({proposal("a", {})}), EmptyReconciliationError);
}

TEST_CASE("write phase admits only empty fields and resolves conflicts") {
  auto s = new_state();
  s = apply_feature_update(s, value_update("basic_information", "age", "40", "patient"));
  SpecialistProposal a = proposal("cardiology", {});
  a.feature_updates = {value_update("basic_information", "age", "41", "cardiology"),
                       value_update("history_of_present_illness", "onset", "yesterday", "cardiology"),
                       value_update("history_of_present_illness", "location", "chest", "cardiology")};
  SpecialistProposal b = proposal("gastroenterology", {});
  b.feature_updates = {value_update("history_of_present_illness", "onset", "last week", "gastroenterology"),
                       value_update("history_of_present_illness", "location", "Chest.", "gastroenterology")};

  auto merged_backend = std::make_shared<Capturing>(
      std::vector<ScriptEntry>{row("aggregator_write", R"({"value": "between yesterday and last week"})")});
  auto ctx = context(merged_backend);
  const auto out = aggregate_write(s, {a, b}, Stage::HistoryTaking, ctx, 1, 2);
  const auto& f = out.next_state.features;
  CHECK(f.find_field("basic_information", "age")->value == "40");
  CHECK(f.find_field("history_of_present_illness", "onset")->value == "between yesterday and last week");
  CHECK(f.find_field("history_of_present_illness", "onset")->provenance.back().source == "aggregator");
  CHECK(f.find_field("history_of_present_illness", "location")->value == "chest");
  std::map<std::string, int> reasons;
  for (const auto& r : out.rejected_updates) ++reasons[r.reason];
  CHECK(reasons["already-populated"] == 1);
  CHECK(reasons["duplicate"] == 1);
  CHECK(reasons["merged"] == 2);

  ctx.backend_merge = false;
  const auto det = aggregate_write(s, {a, b}, Stage::HistoryTaking, ctx, 1, 2);
  CHECK(det.next_state.features.find_field("history_of_present_illness", "onset")->value == "yesterday");
  CHECK(merged_backend->seen.size() == 1);
  CHECK_THROWS_AS(aggregate_write(s, {}, Stage::DiagnosticSynthesis, ctx, 1, 2), StageError);
}

TEST_CASE("synthesis write rejects feature edits and sets the plan") {
  auto s = new_state();
  for (const auto& t : CaseTemplate::defaults().topics()) s = apply_feature_update(s, value_update(t.section, t.field, "x", "patient"));
  s = freeze_features(s);
  auto p = proposal("cardiology", {{"angina", Confidence::Medium, "exertional"}});
  p.feature_updates = {value_update("basic_information", "age", "50", "cardiology")};
  auto ctx = context(std::make_shared<ScriptedBackend>(std::vector<ScriptEntry>{row("aggregator_write", "{}")}));
  const auto out = aggregate_write(s, {p}, Stage::DiagnosticSynthesis, ctx, 5, 0);
  CHECK(out.next_state.stage == Stage::Closed);
  CHECK(out.next_state.plan.preliminary_diagnosis == "angina");
  REQUIRE(out.rejected_updates.size() == 1);
  CHECK(out.rejected_updates[0].reason == "features-frozen");
  CHECK(features_digest(out.next_state) == features_digest(s));
  CHECK_THROWS_AS(aggregate_write(s, {proposal("x", {})}, Stage::DiagnosticSynthesis, ctx, 5, 0),
                  EmptyReconciliationError);

  auto synth = context(std::make_shared<ScriptedBackend>(std::vector<ScriptEntry>{
      row("aggregator_write", R"({"preliminary_diagnosis": "unstable angina", "treatment_plan": "admit"})")}));
  const auto via_backend = aggregate_write(s, {p}, Stage::DiagnosticSynthesis, synth, 5, 0);
  CHECK(via_backend.next_state.plan.preliminary_diagnosis == "unstable angina");
}

TEST_CASE("speak phase sees only the note and agenda") {
  auto b = std::make_shared<Capturing>(std::vector<ScriptEntry>{row("aggregator_speak", "")});
  auto ctx = context(b);
  const auto r = aggregate_speak(new_state(), {"Where is the pain?"}, ctx, 1);
  CHECK(r.fallback);
  CHECK(r.text == "Where is the pain?");
  const auto& msg = b->seen.front().messages.back().content;
  CHECK(msg.find("DIALOGUE") == std::string::npos);
  CHECK(msg.find("1. Where is the pain?") != std::string::npos);
  CHECK(suggested_question(new_state(), {}, CaseTemplate::defaults()) == "How old are you?");
}

TEST_CASE("closing utterance always names the diagnosis") {
  auto s = new_state();
  for (const auto& t : CaseTemplate::defaults().topics()) s = apply_feature_update(s, value_update(t.section, t.field, "x", "patient"));
  DiagnosisPlan plan;
  plan.preliminary_diagnosis = "migraine";
  const auto closed = set_assessment_plan(freeze_features(s), plan);
  auto ctx = context(std::make_shared<ScriptedBackend>(std::vector<ScriptEntry>{row("aggregator_speak", "Take care.")}));
  const auto r = aggregate_speak(closed, {}, ctx, 9);
  CHECK(r.text.find("migraine") != std::string::npos);
  CHECK(closing_summary(plan).find("migraine") != std::string::npos);
}

TEST_CASE("scratchpad write folds proposals and reads the done flag") {
  auto s = new_state();
  s.structured = false;
  SpecialistProposal p = proposal("neurology", {});
  p.feature_updates = {value_update("history_of_present_illness", "onset", "Monday", "neurology")};
  auto ctx = context(std::make_shared<ScriptedBackend>(
      std::vector<ScriptEntry>{row("aggregator_write", R"({"notes": "Onset Monday.", "done": true})")}));
  const auto out = aggregate_write_scratchpad(s, {p}, "It began Monday", ctx, 1);
  CHECK(out.declared_done);
  CHECK(out.next_state.scratchpad.find("Onset Monday.") != std::string::npos);
  CHECK(out.rejected_updates.size() == 1);
}

TEST_CASE("configuration failures are distinguished from transient ones") {
  CHECK(is_configuration_failure(ScriptMissError("x")));
  CHECK(is_configuration_failure(AuthError("x")));
  CHECK(is_configuration_failure(ReplayMissError("x")));
  CHECK_FALSE(is_configuration_failure(NetworkError("x")));
  CHECK_FALSE(is_configuration_failure(BackendError("x")));
}

TEST_CASE("dialogue rendering and round trip") {
  const DialogueHistory h{{1, "assistant", "Hello?", "inquiry", 0}, {2, "patient", "Hi.", "reply", 1}};
  CHECK(render_history(h) == "Doctor: Hello?\nPatient: Hi.\n");
  CHECK(render_history({}) == "(no dialogue yet)");
  CHECK(dialogue_turn_from_json(to_json(h[1])) == h[1]);
  ActivationDecision d;
  d.activated = {"cardiology"};
  d.instructions = {{"cardiology", "x"}};
  CHECK(activation_from_json(to_json(d)) == d);
}
