#include "aegle/consultation_engine.hpp"
#include "aegle/errors.hpp"
#include "property_harness.hpp"

#include <doctest.h>

#include <algorithm>
#include <chrono>

using namespace aegle;
using namespace aegle::testing;

TEST_CASE("fuzzed sessions keep the FSM invariants") {
  const auto start = std::chrono::steady_clock::now();
  int errors = 0;
  std::map<std::string, int> stops;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const auto fz = make_fuzzed_session(seed);
    const auto t = run_consultation(fz.record, fz.config);
    const auto fsm = fsm_violations(t, fz.config.max_turns);
    const auto order = write_then_speak_violations(t);
    INFO("seed " << seed << " stop " << to_string(t.stop_reason) << " error " << t.error);
    CHECK(fsm.empty());
    for (const auto& m : fsm) MESSAGE(m);
    CHECK(order.empty());
    for (const auto& m : order) MESSAGE(m);
    ++stops[std::string(to_string(t.stop_reason))];
    if (t.stop_reason == StopReason::Error) ++errors;
  }
  // The fuzz backend never raises configuration failures, so no session may
  // end in error.
  CHECK(errors == 0);
  CHECK(stops.size() >= 2);
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(60));
}

TEST_CASE("fuzzed sessions are deterministic regardless of specialist scheduling") {
  for (std::uint64_t seed : {3u, 17u, 42u}) {
    auto fz = make_fuzzed_session(seed);
    fz.config.parallel_specialists = true;
    const auto a = to_json(run_consultation(fz.record, fz.config));
    fz.config.parallel_specialists = false;
    const auto b = to_json(run_consultation(fz.record, fz.config));
    CHECK(canonical_dump(a) == canonical_dump(b));
  }
}

TEST_CASE("proposals are independent of execution order") {
  const auto& trio = decoupling_trio();
  const auto baseline = first_round_proposals(trio);
  REQUIRE(baseline.size() == 3);
  auto order = trio;
  std::sort(order.begin(), order.end());
  int permutations = 0;
  do {
    for (bool parallel : {true, false}) {
      CHECK(first_round_proposals(order, "full", parallel) == baseline);
    }
    ++permutations;
  } while (std::next_permutation(order.begin(), order.end()));
  CHECK(permutations == 6);
}

TEST_CASE("proposals are independent of which peers run") {
  const auto& trio = decoupling_trio();
  const auto baseline = first_round_proposals(trio);
  for (unsigned mask = 0; mask < 8; ++mask) {
    std::vector<std::string> subset;
    for (unsigned i = 0; i < 3; ++i)
      if (mask & (1u << i)) subset.push_back(trio[i]);
    const auto got = first_round_proposals(subset);
    CHECK(got.size() == subset.size());
    for (const auto& [id, proposal] : got) CHECK(proposal == baseline.at(id));
  }
}

TEST_CASE("coupled reasoning leaks peer proposals") {
  const auto& trio = decoupling_trio();
  const auto decoupled = first_round_proposals(trio);
  const auto coupled = first_round_proposals(trio, "without-dr");
  // The first specialist has no peers yet; the later ones see them.
  CHECK(coupled.at(trio[0]) == decoupled.at(trio[0]));
  CHECK(coupled.at(trio[1]) != decoupled.at(trio[1]));
  CHECK(coupled.at(trio[2]) != decoupled.at(trio[2]));
}

TEST_CASE("every template question targets its own field") {
  const auto tmpl = CaseTemplate::defaults();
  for (const auto& ref : tmpl.topics()) {
    const auto* f = tmpl.find_field(ref.section, ref.field);
    const auto topics = match_topics(f->question, tmpl);
    INFO(ref.key << ": " << f->question);
    CHECK(std::find(topics.begin(), topics.end(), ref.key) != topics.end());
  }
}

TEST_CASE("random update sequences never empty a field or thaw a frozen state") {
  std::mt19937_64 rng(7);
  const auto tmpl = CaseTemplate::defaults();
  const auto topics = tmpl.topics();
  for (int trial = 0; trial < 50; ++trial) {
    auto s = new_state(tmpl);
    for (int step = 0; step < 60; ++step) {
      const auto& t = topics[rng() % topics.size()];
      FeatureUpdate u{t.section, t.field, "v" + std::to_string(rng() % 3), rng() % 4 == 0,
                      rng() % 2 ? std::string(kPatientSource) : std::string("cardiology"), step};
      const auto before = s.features.find_field(t.section, t.field)->status;
      try {
        const auto next = apply_feature_update(s, u);
        CHECK(next.revision == s.revision + 1);
        const auto* after = next.features.find_field(t.section, t.field);
        CHECK(after->status != FieldStatus::Empty);
        CHECK(after->provenance.back() == Provenance{u.turn, u.source});
        if (before == FieldStatus::Unavailable || before == FieldStatus::Populated) CHECK(!u.unavailable);
        s = next;
      } catch (const Error&) {
      }
    }
    const auto frozen = freeze_features(s);
    const auto& t = topics.front();
    CHECK_THROWS_AS(apply_feature_update(frozen, FeatureUpdate{t.section, t.field, "late", false, "patient", 99}),
                    FrozenStateError);
    CHECK_THROWS_AS(freeze_features(frozen), AlreadyFrozenError);
  }
}

TEST_CASE("the invariant checkers flag corrupted transcripts") {
  const auto fz = make_fuzzed_session(5);
  const auto clean = run_consultation(fz.record, fz.config);
  REQUIRE(fsm_violations(clean, fz.config.max_turns).empty());
  REQUIRE(write_then_speak_violations(clean).empty());

  auto late_patient = clean;
  late_patient.events.push_back(SessionEvent{999, "patient_turn", Json{{"turn", Json::object()}}});
  CHECK_FALSE(fsm_violations(late_patient, fz.config.max_turns).empty());

  auto second_freeze = clean;
  for (const auto& e : clean.events)
    if (e.event == "stage_changed") second_freeze.events.push_back(e);
  CHECK_FALSE(fsm_violations(second_freeze, fz.config.max_turns).empty());

  CHECK_FALSE(fsm_violations(clean, clean.inquiry_turns() - 1).empty());

  auto early_plan = clean;
  for (auto& r : early_plan.rounds)
    if (r.stage == Stage::HistoryTaking && !r.proposals.empty()) {
      r.proposals.front().hypotheses.push_back({"leak", Confidence::High, ""});
      break;
    }
  bool has_stage_one_proposal = false;
  for (const auto& r : clean.rounds)
    if (r.stage == Stage::HistoryTaking && !r.proposals.empty()) has_stage_one_proposal = true;
  if (has_stage_one_proposal) CHECK_FALSE(fsm_violations(early_plan, fz.config.max_turns).empty());

  // Replaying the opening snapshot last empties every field filled since.
  std::uint64_t seed = 5;
  while (!make_fuzzed_session(seed).config.ablations.structured_state) ++seed;
  const auto structured = make_fuzzed_session(seed);
  auto emptied = run_consultation(structured.record, structured.config);
  REQUIRE(fsm_violations(emptied, structured.config.max_turns).empty());
  emptied.events.push_back(SessionEvent{999, "state_updated", emptied.events.front().payload});
  const auto emptied_v = fsm_violations(emptied, structured.config.max_turns);
  CHECK(std::any_of(emptied_v.begin(), emptied_v.end(),
                    [](const std::string& m) { return m.find("emptied") != std::string::npos; }));

  // Swapping the first write and speak events reverses their order.
  auto swapped = clean;
  const auto& r0 = swapped.rounds.front();
  std::size_t write = 0, speak = 0;
  for (std::size_t i = 0; i < swapped.events.size(); ++i) {
    const auto& e = swapped.events[i];
    if (!write && e.event == "state_updated" && e.payload.value("round", -1) == r0.round) write = i;
    if (e.event == "assistant_turn" && e.payload.at("turn").value("index", 0) == r0.utterance_turn) speak = i;
  }
  REQUIRE(write != 0);
  REQUIRE(speak != 0);
  std::swap(swapped.events[write].seq, swapped.events[speak].seq);
  CHECK_FALSE(write_then_speak_violations(swapped).empty());
}
