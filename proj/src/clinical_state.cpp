#include "aegle/clinical_state.hpp"

#include "aegle/errors.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace aegle {

namespace {

FieldSpec field(std::string name, std::string label, std::string question,
                std::vector<std::string> keywords) {
  return FieldSpec{std::move(name), std::move(label), std::move(question), std::move(keywords)};
}

}  // namespace

// ---------------------------------------------------------------------------
// CaseTemplate
// ---------------------------------------------------------------------------

const std::vector<std::string>& CaseTemplate::mandatory_section_names() {
  static const std::vector<std::string> names = {
      "basic_information", "history_of_present_illness", "past_medical_history",
      "physical_examination", "auxiliary_examination"};
  return names;
}

CaseTemplate CaseTemplate::defaults() {
  CaseTemplate t;
  t.sections_ = {
      SectionSpec{
          "basic_information", "basic", "Basic Information", 'S', true,
          {
              field("age", "Age", "How old are you?", {"age", "how old", "years old"}),
              field("sex", "Sex", "What is your sex?", {"sex", "gender", "male or female"}),
              field("chief_complaint", "Chief complaint", "What brings you in today?",
                    {"brings you", "chief complaint", "main problem", "main concern"}),
          }},
      SectionSpec{
          "history_of_present_illness", "hpi", "History of Present Illness", 'S', true,
          {
              field("onset", "Onset",
                    "When did this problem start, and did it come on suddenly or gradually?",
                    {"onset", "start", "begin", "began", "when did"}),
              field("location", "Location", "Where exactly do you feel it, and does it spread anywhere?",
                    {"where", "location", "spread", "radiat"}),
              field("quality", "Quality", "How would you describe the sensation?",
                    {"describe", "quality", "feel like", "what kind", "sensation", "character"}),
              field("severity", "Severity", "How severe is it on a scale from 0 to 10?",
                    {"severe", "severity", "how bad", "scale", "intensity"}),
              field("duration", "Duration",
                    "How long has this been going on, and how long does each episode last?",
                    {"how long", "duration", "last"}),
              field("modifying_factors", "Modifying factors", "Does anything make it better or worse?",
                    {"better", "worse", "relieve", "aggravat", "trigger", "modifying"}),
              field("associated_symptoms", "Associated symptoms",
                    "Have you noticed any other symptoms, such as fever, nausea or changes in appetite?",
                    {"other symptom", "associated", "fever", "nausea", "vomit", "appetite"}),
          }},
      SectionSpec{
          "past_medical_history", "pmh", "Past Medical History", 'S', true,
          {
              field("prior_conditions", "Past illnesses",
                    "Have you had any medical conditions or illnesses in the past?",
                    {"medical condition", "past illness", "illnesses", "medical history", "chronic"}),
              field("prior_treatment", "Prior evaluation and treatment",
                    "Have you already seen a doctor or had any treatment for this problem?",
                    {"seen a doctor", "treatment", "treated", "prior evaluation"}),
              field("medications", "Medications", "Are you currently taking any medications?",
                    {"medication", "medicine", "drug", "taking any"}),
              field("allergies", "Allergies", "Do you have any allergies?", {"allerg"}),
              field("surgical_history", "Surgical history", "Have you had any operations or injuries?",
                    {"surgery", "surgeries", "operation", "injur", "surgical"}),
              field("family_history", "Family history",
                    "Does anyone in your family have similar problems or hereditary diseases?",
                    {"family", "hereditary", "relatives", "parents"}),
              field("social_history", "Social history",
                    "Do you smoke or drink alcohol, and what do you do for work?",
                    {"smoke", "alcohol", "drink", "work", "occupation", "social"}),
          }},
      SectionSpec{
          "physical_examination", "exam", "Physical Examination", 'O', true,
          {
              field("vital_signs", "Vital signs",
                    "Do you have your recent vital signs, such as blood pressure, pulse and temperature?",
                    {"vital", "blood pressure", "pulse", "temperature", "heart rate"}),
              field("general_appearance", "General appearance",
                    "What did the examining clinician note about your general condition?",
                    {"general appearance", "general condition", "appearance"}),
              field("focused_exam", "Focused examination",
                    "What were the findings when the affected area was examined?",
                    {"examined", "physical exam", "exam finding", "findings when"}),
          }},
      SectionSpec{
          "auxiliary_examination", "aux", "Auxiliary Examination", 'O', true,
          {
              field("laboratory", "Laboratory tests",
                    "Have you had any blood tests or urine tests, and what were the results?",
                    {"laboratory", "lab test", "lab result", "blood test", "urine test", "blood work"}),
              field("imaging", "Imaging", "Have you had any scans such as ultrasound, X-ray, CT or MRI?",
                    {"imaging", "scan", "ultrasound", "x ray", "ct", "mri", "radiograph"}),
          }},
  };
  return t;
}

CaseTemplate CaseTemplate::from_json(const Json& doc) {
  CaseTemplate t;
  for (const auto& s : doc.at("sections")) {
    SectionSpec section;
    section.name = s.at("name").get<std::string>();
    section.key = s.value("key", section.name);
    section.label = s.value("label", section.name);
    const auto part = s.value("soap", std::string("S"));
    section.soap_part = part.empty() ? 'S' : part.front();
    const auto& mandatory = mandatory_section_names();
    const bool required = std::find(mandatory.begin(), mandatory.end(), section.name) != mandatory.end();
    section.mandatory = s.value("mandatory", required);
    for (const auto& f : s.at("fields")) {
      FieldSpec spec;
      if (f.is_string()) {
        spec.name = f.get<std::string>();
      } else {
        spec.name = f.at("name").get<std::string>();
        spec.label = f.value("label", std::string());
        spec.question = f.value("question", std::string());
        spec.keywords = f.value("keywords", std::vector<std::string>{});
      }
      if (spec.label.empty()) {
        spec.label = spec.name;
      }
      if (spec.question.empty()) {
        spec.question = "Can you tell me about your " + spec.label + "?";
      }
      if (spec.keywords.empty()) {
        spec.keywords.push_back(normalize_words(spec.label));
      }
      for (auto& k : spec.keywords) {
        k = normalize_words(k);
      }
      section.fields.push_back(std::move(spec));
    }
    t.sections_.push_back(std::move(section));
  }
  t.validate();
  return t;
}

Json CaseTemplate::to_json() const {
  Json sections = Json::array();
  for (const auto& s : sections_) {
    Json fields = Json::array();
    for (const auto& f : s.fields) {
      fields.push_back(Json{{"name", f.name},
                            {"label", f.label},
                            {"question", f.question},
                            {"keywords", f.keywords}});
    }
    sections.push_back(Json{{"name", s.name},
                            {"key", s.key},
                            {"label", s.label},
                            {"soap", std::string(1, s.soap_part)},
                            {"mandatory", s.mandatory},
                            {"fields", std::move(fields)}});
  }
  return Json{{"sections", std::move(sections)}};
}

void CaseTemplate::validate() const {
  std::set<std::string> section_names;
  std::set<std::string> keys;
  for (const auto& s : sections_) {
    if (!section_names.insert(s.name).second) {
      throw ValidationError("duplicate section '" + s.name + "'");
    }
    if (!keys.insert(s.key).second) {
      throw ValidationError("duplicate section key '" + s.key + "'");
    }
    if (s.soap_part != 'S' && s.soap_part != 'O') {
      throw ValidationError("section '" + s.name + "' must belong to S or O");
    }
    std::set<std::string> field_names;
    for (const auto& f : s.fields) {
      if (f.name.empty()) {
        throw ValidationError("empty field name in section '" + s.name + "'");
      }
      if (!field_names.insert(f.name).second) {
        throw ValidationError("duplicate field '" + f.name + "' in section '" + s.name + "'");
      }
    }
  }
  for (const auto& name : mandatory_section_names()) {
    const auto* s = find_section(name);
    if (s == nullptr) {
      throw ValidationError("template lacks mandatory section '" + name + "'");
    }
    if (!s->mandatory) {
      throw ValidationError("section '" + name + "' cannot be optional");
    }
  }
}

CaseTemplate CaseTemplate::with_section(SectionSpec section) const {
  CaseTemplate t = *this;
  t.sections_.push_back(std::move(section));
  t.validate();
  return t;
}

const SectionSpec* CaseTemplate::find_section(std::string_view name) const {
  for (const auto& s : sections_) {
    if (s.name == name || s.key == name) {
      return &s;
    }
  }
  return nullptr;
}

const FieldSpec* CaseTemplate::find_field(std::string_view section, std::string_view field_name) const {
  const auto* s = find_section(section);
  if (s == nullptr) {
    return nullptr;
  }
  for (const auto& f : s->fields) {
    if (f.name == field_name) {
      return &f;
    }
  }
  return nullptr;
}

std::optional<TopicRef> CaseTemplate::resolve_topic(std::string_view topic_key) const {
  const auto dot = topic_key.find('.');
  if (dot == std::string_view::npos) {
    return std::nullopt;
  }
  const auto* s = find_section(topic_key.substr(0, dot));
  if (s == nullptr || find_field(s->name, topic_key.substr(dot + 1)) == nullptr) {
    return std::nullopt;
  }
  const std::string field_name(topic_key.substr(dot + 1));
  return TopicRef{s->name, field_name, s->key + "." + field_name};
}

std::vector<TopicRef> CaseTemplate::topics() const {
  std::vector<TopicRef> out;
  for (const auto& s : sections_) {
    for (const auto& f : s.fields) {
      out.push_back(TopicRef{s.name, f.name, s.key + "." + f.name});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

std::string_view to_string(FieldStatus status) {
  switch (status) {
    case FieldStatus::Empty: return "empty";
    case FieldStatus::Populated: return "populated";
    case FieldStatus::Unavailable: return "unavailable";
  }
  return "empty";
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::HistoryTaking: return "history_taking";
    case Stage::DiagnosticSynthesis: return "diagnostic_synthesis";
    case Stage::Closed: return "closed";
  }
  return "history_taking";
}

FieldStatus field_status_from_string(std::string_view text) {
  if (text == "empty") return FieldStatus::Empty;
  if (text == "populated") return FieldStatus::Populated;
  if (text == "unavailable") return FieldStatus::Unavailable;
  throw ValidationError("unknown field status '" + std::string(text) + "'");
}

Stage stage_from_string(std::string_view text) {
  if (text == "history_taking") return Stage::HistoryTaking;
  if (text == "diagnostic_synthesis") return Stage::DiagnosticSynthesis;
  if (text == "closed") return Stage::Closed;
  throw ValidationError("unknown stage '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Lookups
// ---------------------------------------------------------------------------

const CaseFeatureField* FeatureSection::find(std::string_view field_name) const {
  for (const auto& f : fields) {
    if (f.name == field_name) {
      return &f;
    }
  }
  return nullptr;
}

const FeatureSection* CaseFeatures::find_section(std::string_view name) const {
  for (const auto& s : sections) {
    if (s.name == name) {
      return &s;
    }
  }
  return nullptr;
}

const CaseFeatureField* CaseFeatures::find_field(std::string_view section, std::string_view field_name) const {
  const auto* s = find_section(section);
  return s == nullptr ? nullptr : s->find(field_name);
}

bool DiagnosisPlan::empty() const {
  return preliminary_diagnosis.empty() && diagnostic_reasoning.empty() && differentials.empty() &&
         treatment_plan.empty() && follow_up.empty();
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

ClinicalState new_state(const CaseTemplate& tmpl) {
  tmpl.validate();
  ClinicalState state;
  for (const auto& s : tmpl.sections()) {
    FeatureSection section{s.name, s.label, s.soap_part, s.mandatory, {}};
    for (const auto& f : s.fields) {
      section.fields.push_back(CaseFeatureField{f.name, f.label, {}, FieldStatus::Empty, {}});
    }
    state.features.sections.push_back(std::move(section));
  }
  return state;
}

ClinicalState apply_feature_update(const ClinicalState& state, const FeatureUpdate& update) {
  if (state.features_frozen) {
    throw FrozenStateError("case features are frozen");
  }
  ClinicalState next = state;
  CaseFeatureField* target = nullptr;
  for (auto& s : next.features.sections) {
    if (s.name != update.section) {
      continue;
    }
    for (auto& f : s.fields) {
      if (f.name == update.field) {
        target = &f;
      }
    }
  }
  if (target == nullptr) {
    throw UnknownFieldError("unknown field " + update.section + "." + update.field);
  }
  if (!target->provenance.empty() && update.turn <= target->provenance.back().turn) {
    throw IllegalTransitionError("provenance turn must increase for " + update.section + "." +
                                 update.field);
  }
  if (update.unavailable) {
    if (target->status != FieldStatus::Empty) {
      throw IllegalTransitionError(std::string(to_string(target->status)) + " -> unavailable for " +
                                   update.section + "." + update.field);
    }
    if (!update.from_patient()) {
      throw IllegalTransitionError("only the patient may mark " + update.section + "." +
                                   update.field + " unavailable");
    }
    target->status = FieldStatus::Unavailable;
    target->value.clear();
  } else {
    auto value = trim(update.value);
    if (value.empty()) {
      throw IllegalTransitionError("a field cannot be set back to empty: " + update.section + "." +
                                   update.field);
    }
    if (target->status == FieldStatus::Populated && target->value == value) {
      throw IllegalTransitionError("no-op update for " + update.section + "." + update.field);
    }
    target->status = FieldStatus::Populated;
    target->value = std::move(value);
  }
  target->provenance.push_back(Provenance{update.turn, update.source});
  ++next.revision;
  return next;
}

ClinicalState append_scratchpad(const ClinicalState& state, std::string_view text) {
  if (state.features_frozen) {
    throw FrozenStateError("case features are frozen");
  }
  auto line = trim(text);
  if (line.empty()) {
    throw ValidationError("empty scratchpad entry");
  }
  ClinicalState next = state;
  if (!next.scratchpad.empty()) {
    next.scratchpad.push_back('\n');
  }
  next.scratchpad += line;
  ++next.revision;
  return next;
}

ClinicalState freeze_features(const ClinicalState& state) {
  if (state.features_frozen || state.stage != Stage::HistoryTaking) {
    throw AlreadyFrozenError("case features already frozen");
  }
  ClinicalState next = state;
  next.features_frozen = true;
  next.stage = Stage::DiagnosticSynthesis;
  ++next.revision;
  return next;
}

bool is_history_complete(const ClinicalState& state) {
  for (const auto& s : state.features.sections) {
    if (!s.mandatory) {
      continue;
    }
    for (const auto& f : s.fields) {
      if (f.status == FieldStatus::Empty) {
        return false;
      }
    }
  }
  return true;
}

std::vector<std::pair<std::string, std::string>> pending_fields(const ClinicalState& state) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : state.features.sections) {
    if (!s.mandatory) {
      continue;
    }
    for (const auto& f : s.fields) {
      if (f.status == FieldStatus::Empty) {
        out.emplace_back(s.name, f.name);
      }
    }
  }
  return out;
}

ClinicalState set_assessment_plan(const ClinicalState& state, const DiagnosisPlan& plan) {
  if (state.stage != Stage::DiagnosticSynthesis || !state.features_frozen) {
    throw StageError("assessment and plan require the diagnostic synthesis stage (current: " +
                     std::string(to_string(state.stage)) + ")");
  }
  if (trim(plan.preliminary_diagnosis).empty()) {
    throw EmptyDiagnosisError("preliminary diagnosis is empty");
  }
  ClinicalState next = state;
  next.plan = plan;
  next.stage = Stage::Closed;
  ++next.revision;
  return next;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace {

void render_part(std::ostringstream& out, const ClinicalState& state, char part, bool draft) {
  if (!state.structured) {
    out << "### Consultation notes\n";
    if (!state.scratchpad.empty()) {
      out << state.scratchpad << "\n";
    } else if (draft) {
      out << kPendingMarker << "\n";
    }
    out << "\n";
    return;
  }
  for (const auto& s : state.features.sections) {
    if (s.soap_part != part) {
      continue;
    }
    std::ostringstream body;
    for (const auto& f : s.fields) {
      switch (f.status) {
        case FieldStatus::Populated:
          body << "- " << f.label << ": " << f.value << "\n";
          break;
        case FieldStatus::Unavailable:
          body << "- " << f.label << ": " << kUnavailableMarker << "\n";
          break;
        case FieldStatus::Empty:
          if (draft) {
            body << "- " << f.label << ": " << kPendingMarker << "\n";
          }
          break;
      }
    }
    const auto text = body.str();
    if (!text.empty()) {
      out << "### " << s.label << "\n" << text << "\n";
    }
  }
}

void plan_line(std::ostringstream& out, std::string_view label, const std::string& value, bool draft) {
  if (!value.empty()) {
    out << "- " << label << ": " << value << "\n";
  } else if (draft) {
    out << "- " << label << ": " << kPendingMarker << "\n";
  }
}

}  // namespace

std::string render_ipn(const ClinicalState& state) {
  const bool draft = state.stage != Stage::Closed;
  std::ostringstream out;
  out << "# Integrated Patient Note\n\n";
  out << "## S: Subjective\n\n";
  render_part(out, state, 'S', draft);
  out << "## O: Objective\n\n";
  if (state.structured) {
    render_part(out, state, 'O', draft);
  }
  out << "## A: Assessment\n\n";
  plan_line(out, "Preliminary diagnosis", state.plan.preliminary_diagnosis, draft);
  plan_line(out, "Diagnostic reasoning", state.plan.diagnostic_reasoning, draft);
  if (!state.plan.differentials.empty()) {
    out << "- Differential diagnoses:\n";
    int rank = 1;
    for (const auto& d : state.plan.differentials) {
      out << "  " << rank++ << ". " << d.diagnosis;
      if (!d.rationale.empty()) {
        out << " (" << d.rationale << ")";
      }
      out << "\n";
    }
  } else if (draft) {
    out << "- Differential diagnoses: " << kPendingMarker << "\n";
  }
  out << "\n## P: Plan\n\n";
  plan_line(out, "Treatment plan", state.plan.treatment_plan, draft);
  plan_line(out, "Follow-up", state.plan.follow_up, draft);
  return out.str();
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

Json to_json(const FeatureUpdate& update) {
  Json out{{"section", update.section}, {"field", update.field}};
  if (update.unavailable) {
    out["unavailable"] = true;
  } else {
    out["value"] = update.value;
  }
  out["source"] = update.source;
  out["turn"] = update.turn;
  return out;
}

FeatureUpdate feature_update_from_json(const Json& doc) {
  FeatureUpdate u;
  u.section = doc.at("section").get<std::string>();
  u.field = doc.at("field").get<std::string>();
  u.unavailable = doc.value("unavailable", false);
  u.value = doc.value("value", std::string());
  u.source = doc.value("source", std::string());
  u.turn = doc.value("turn", 0);
  return u;
}

Json to_json(const DiagnosisPlan& plan) {
  Json differentials = Json::array();
  for (const auto& d : plan.differentials) {
    differentials.push_back(Json{{"diagnosis", d.diagnosis}, {"rationale", d.rationale}});
  }
  return Json{{"preliminary_diagnosis", plan.preliminary_diagnosis},
              {"diagnostic_reasoning", plan.diagnostic_reasoning},
              {"differentials", std::move(differentials)},
              {"treatment_plan", plan.treatment_plan},
              {"follow_up", plan.follow_up}};
}

DiagnosisPlan plan_from_json(const Json& doc) {
  DiagnosisPlan plan;
  plan.preliminary_diagnosis = doc.value("preliminary_diagnosis", std::string());
  plan.diagnostic_reasoning = doc.value("diagnostic_reasoning", std::string());
  if (doc.contains("differentials")) {
    for (const auto& d : doc.at("differentials")) {
      if (d.is_string()) {
        plan.differentials.push_back(Differential{d.get<std::string>(), {}});
      } else {
        plan.differentials.push_back(
            Differential{d.value("diagnosis", std::string()), d.value("rationale", std::string())});
      }
    }
  }
  plan.treatment_plan = doc.value("treatment_plan", std::string());
  plan.follow_up = doc.value("follow_up", std::string());
  return plan;
}

namespace {

Json features_json(const CaseFeatures& features) {
  Json sections = Json::array();
  for (const auto& s : features.sections) {
    Json fields = Json::array();
    for (const auto& f : s.fields) {
      Json provenance = Json::array();
      for (const auto& p : f.provenance) {
        provenance.push_back(Json{{"turn", p.turn}, {"source", p.source}});
      }
      fields.push_back(Json{{"name", f.name},
                            {"label", f.label},
                            {"status", to_string(f.status)},
                            {"value", f.value},
                            {"provenance", std::move(provenance)}});
    }
    sections.push_back(Json{{"name", s.name},
                            {"label", s.label},
                            {"soap", std::string(1, s.soap_part)},
                            {"mandatory", s.mandatory},
                            {"fields", std::move(fields)}});
  }
  return sections;
}

}  // namespace

Json to_json(const ClinicalState& state) {
  return Json{{"schema", kStateSchema},
              {"stage", to_string(state.stage)},
              {"features_frozen", state.features_frozen},
              {"revision", state.revision},
              {"structured", state.structured},
              {"scratchpad", state.scratchpad},
              {"features", features_json(state.features)},
              {"plan", to_json(state.plan)}};
}

ClinicalState state_from_json(const Json& doc) {
  if (doc.value("schema", std::string()) != kStateSchema) {
    throw ValidationError("expected schema " + std::string(kStateSchema));
  }
  ClinicalState state;
  state.stage = stage_from_string(doc.at("stage").get<std::string>());
  state.features_frozen = doc.at("features_frozen").get<bool>();
  state.revision = doc.at("revision").get<std::uint64_t>();
  state.structured = doc.value("structured", true);
  state.scratchpad = doc.value("scratchpad", std::string());
  for (const auto& s : doc.at("features")) {
    FeatureSection section;
    section.name = s.at("name").get<std::string>();
    section.label = s.value("label", section.name);
    const auto part = s.value("soap", std::string("S"));
    section.soap_part = part.empty() ? 'S' : part.front();
    section.mandatory = s.value("mandatory", false);
    for (const auto& f : s.at("fields")) {
      CaseFeatureField entry;
      entry.name = f.at("name").get<std::string>();
      entry.label = f.value("label", entry.name);
      entry.status = field_status_from_string(f.at("status").get<std::string>());
      entry.value = f.value("value", std::string());
      for (const auto& p : f.value("provenance", Json::array())) {
        entry.provenance.push_back(Provenance{p.at("turn").get<int>(), p.at("source").get<std::string>()});
      }
      section.fields.push_back(std::move(entry));
    }
    state.features.sections.push_back(std::move(section));
  }
  state.plan = plan_from_json(doc.at("plan"));
  return state;
}

std::string features_digest(const ClinicalState& state) {
  Json doc{{"features", features_json(state.features)}, {"scratchpad", state.scratchpad}};
  return sha256_hex(canonical_dump(doc));
}

}  // namespace aegle
