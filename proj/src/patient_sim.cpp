#include "aegle/patient_sim.hpp"

#include "aegle/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <regex>

namespace aegle {

Json to_json(const PatientScript& script) {
  Json facts = Json::object();
  for (const auto& [topic, text] : script.facts) {
    facts[topic] = text;
  }
  return Json{{"schema", kPatientSchema},
              {"case_id", script.case_id},
              {"persona", {{"age", script.persona.age}, {"sex", script.persona.sex}, {"tone", script.persona.tone}}},
              {"facts", std::move(facts)},
              {"unavailable_topics", script.unavailable_topics}};
}

PatientScript patient_script_from_json(const Json& doc) {
  if (doc.value("schema", std::string()) != kPatientSchema) {
    throw ValidationError("not an " + std::string(kPatientSchema) + " document");
  }
  PatientScript s;
  s.case_id = doc.at("case_id").get<std::string>();
  const auto& persona = doc.at("persona");
  s.persona.age = persona.value("age", std::string());
  s.persona.sex = persona.value("sex", std::string());
  s.persona.tone = persona.value("tone", Persona{}.tone);
  for (const auto& [topic, text] : doc.at("facts").items()) {
    s.facts[topic] = text.get<std::string>();
  }
  for (const auto& t : doc.value("unavailable_topics", Json::array())) {
    s.unavailable_topics.insert(t.get<std::string>());
  }
  for (const auto& t : s.unavailable_topics) {
    if (s.facts.count(t) > 0) {
      throw ValidationError("topic '" + t + "' is both a fact and unavailable");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Script compilation
// ---------------------------------------------------------------------------

namespace {

const std::regex& duration_pattern() {
  static const std::regex re(
      R"(\b(\d+(\.\d+)?|a few|several|one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|half an?)\s+(hour|day|week|month|year)s?\b)",
      std::regex::icase);
  return re;
}

void add_fact(std::map<std::string, std::string>& facts, const std::string& topic, const std::string& text) {
  auto value = trim(text);
  if (value.empty()) {
    return;
  }
  auto& slot = facts[topic];
  slot += slot.empty() ? value : " " + value;
}

/// Field of `section` whose keywords occur in `sentence`, else nullptr.
const FieldSpec* field_for_sentence(const SectionSpec& section, std::string_view sentence) {
  const auto normalized = normalize_words(sentence);
  for (const auto& f : section.fields) {
    for (const auto& k : f.keywords) {
      if (contains_phrase(normalized, k)) {
        return &f;
      }
    }
  }
  return nullptr;
}

void compile_section(const GoldSection& gold, const CaseTemplate& tmpl, std::map<std::string, std::string>& facts) {
  const auto* section = tmpl.find_section(gold.name);
  if (section == nullptr) {
    spdlog::warn("gold section '{}' is not in the case template; skipped", gold.name);
    return;
  }
  for (const auto& [field, value] : gold.fields) {
    if (tmpl.find_field(section->name, field) == nullptr) {
      spdlog::warn("gold field '{}.{}' is not in the case template; skipped", section->name, field);
      continue;
    }
    add_fact(facts, section->key + "." + field, value);
  }
  if (gold.text.empty() || section->fields.empty()) {
    return;
  }
  const bool has_duration_field = tmpl.find_field(section->name, "duration") != nullptr;
  std::string duration;
  for (const auto& sentence : split_sentences(gold.text)) {
    const auto* field = field_for_sentence(*section, sentence);
    if (field == nullptr) {
      field = &section->fields.front();
    }
    add_fact(facts, section->key + "." + field->name, sentence);
    std::smatch m;
    if (has_duration_field && duration.empty() && std::regex_search(sentence, m, duration_pattern())) {
      duration = m.str(0);
    }
  }
  const auto duration_topic = section->key + ".duration";
  if (!duration.empty() && facts.count(duration_topic) == 0) {
    facts[duration_topic] = duration;
  }
}

/// Removes every sentence that names a protected term (compact comparison).
std::string redact(const std::string& text, const std::vector<std::string>& protected_terms) {
  std::string out;
  bool withheld = false;
  for (const auto& sentence : split_sentences(text)) {
    const auto compact = normalize_compact(sentence);
    const bool leaks = std::any_of(protected_terms.begin(), protected_terms.end(),
                                   [&](const std::string& term) { return compact.find(term) != std::string::npos; });
    if (leaks) {
      withheld = true;
      continue;
    }
    out += out.empty() ? sentence : " " + sentence;
  }
  if (withheld && !out.empty()) {
    out += " " + std::string(kWithheld);
  }
  return out;
}

std::string lower_label(const CaseTemplate& tmpl, const std::string& topic) {
  if (const auto ref = tmpl.resolve_topic(topic)) {
    if (const auto* f = tmpl.find_field(ref->section, ref->field); f != nullptr) {
      return to_lower(f->label);
    }
  }
  return topic;
}

std::string label_of(const CaseTemplate& tmpl, const std::string& topic) {
  if (const auto ref = tmpl.resolve_topic(topic)) {
    if (const auto* f = tmpl.find_field(ref->section, ref->field); f != nullptr) {
      return f->label;
    }
  }
  return topic;
}

std::string unavailable_sentence(const CaseTemplate& tmpl, const std::string& topic) {
  return "I don't know about my " + lower_label(tmpl, topic) + "; it has not been tested or I was never told.";
}

}  // namespace

PatientScript compile_script(const CaseRecord& record, const CaseTemplate& tmpl) {
  if (record.gold_subjective.empty()) {
    throw ValidationError("case " + record.case_id + " has no subjective content");
  }
  PatientScript script;
  script.case_id = record.case_id;
  script.persona.age = record.age();
  script.persona.sex = record.sex();

  std::map<std::string, std::string> facts;
  for (const auto& s : record.gold_subjective) {
    compile_section(s, tmpl, facts);
  }
  for (const auto& s : record.gold_objective) {
    compile_section(s, tmpl, facts);
  }
  if (!script.persona.age.empty() && tmpl.resolve_topic("basic.age") && facts.count("basic.age") == 0) {
    facts["basic.age"] = script.persona.age;
  }
  if (!script.persona.sex.empty() && tmpl.resolve_topic("basic.sex") && facts.count("basic.sex") == 0) {
    facts["basic.sex"] = script.persona.sex;
  }

  std::vector<std::string> protected_terms;
  for (const auto& term : std::vector<std::string>{record.gold_diagnosis_label}) {
    if (auto c = normalize_compact(term); !c.empty()) protected_terms.push_back(std::move(c));
  }
  for (const auto& alias : record.aliases) {
    if (auto c = normalize_compact(alias); !c.empty()) protected_terms.push_back(std::move(c));
  }
  for (auto& [topic, text] : facts) {
    auto clean = redact(text, protected_terms);
    if (clean.empty() || clean == kWithheld) {
      continue;
    }
    script.facts.emplace(topic, std::move(clean));
  }

  for (const auto& t : record.unavailable_topics) {
    script.facts.erase(t);
    script.unavailable_topics.insert(t);
  }
  for (const auto& ref : tmpl.topics()) {
    if (script.facts.count(ref.key) == 0) {
      script.unavailable_topics.insert(ref.key);
    }
  }
  return script;
}

// ---------------------------------------------------------------------------
// Answering
// ---------------------------------------------------------------------------

std::vector<std::string> match_topics(std::string_view question, const CaseTemplate& tmpl) {
  const auto normalized = normalize_words(question);
  std::vector<std::string> out;
  for (const auto& s : tmpl.sections()) {
    for (const auto& f : s.fields) {
      const bool hit = std::any_of(f.keywords.begin(), f.keywords.end(),
                                   [&](const std::string& k) { return contains_phrase(normalized, k); });
      if (hit) {
        out.push_back(s.key + "." + f.name);
      }
    }
  }
  return out;
}

bool declares_unavailable(std::string_view text) {
  static const std::vector<std::string> phrases = {
      "don t know", "do not know", "not sure",     "no idea",       "not tested",   "never tested",
      "not been tested", "never checked", "not checked", "can t remember", "cannot remember", "don t remember",
      "unknown",    "not available", "never had it checked", "wasn t told", "was never told"};
  const auto normalized = normalize_words(text);
  return std::any_of(phrases.begin(), phrases.end(),
                     [&](const std::string& p) { return contains_phrase(normalized, p); });
}

PatientReply answer_scripted(std::string_view question, const PatientScript& script, const CaseTemplate& tmpl) {
  if (trim(question).empty()) {
    throw ValidationError("empty question");
  }
  PatientReply reply;
  std::vector<std::string> sentences;
  for (const auto& topic : match_topics(question, tmpl)) {
    if (const auto it = script.facts.find(topic); it != script.facts.end()) {
      reply.disclosed_topics.insert(topic);
      reply.disclosed_facts[topic] = it->second;
      auto sentence = label_of(tmpl, topic) + ": " + it->second;
      if (!sentence.empty() && std::string(".!?").find(sentence.back()) == std::string::npos) {
        sentence.push_back('.');
      }
      sentences.push_back(std::move(sentence));
    } else {
      reply.declared_unavailable.insert(topic);
      sentences.push_back(unavailable_sentence(tmpl, topic));
    }
  }
  if (sentences.empty()) {
    reply.text = "I'm sorry, I don't understand the question. Could you ask it another way?";
    return reply;
  }
  for (const auto& s : sentences) {
    reply.text += reply.text.empty() ? s : " " + s;
  }
  return reply;
}

namespace {

std::vector<std::string> content_tokens(std::string_view text) {
  static const std::set<std::string> stop = {
      "about", "after", "also", "been", "before", "could", "does", "doctor", "from", "have", "just", "like",
      "really", "since", "some", "that", "their", "them", "then", "there", "they", "this", "very", "were",
      "what", "when", "which", "with", "would", "your", "yours", "feel", "feeling", "think", "know", "well",
      "thank", "thanks", "sure", "yes", "okay"};
  std::vector<std::string> out;
  std::string word;
  const auto normalized = normalize_words(text) + " ";
  for (char c : normalized) {
    if (c == ' ') {
      if (word.size() >= 4 && stop.count(word) == 0) {
        out.push_back(word);
      }
      word.clear();
    } else {
      word.push_back(c);
    }
  }
  return out;
}

bool has_digit(std::string_view text) {
  return std::any_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

}  // namespace

PatientReply answer(std::string_view question, const PatientScript& script, const DialogueHistory& history,
                    const PatientContext& ctx, int round) {
  if (trim(question).empty()) {
    throw ValidationError("empty question");
  }
  if (!ctx.backend) {
    return answer_scripted(question, script, ctx.case_template);
  }
  if (!ctx.prompts) {
    throw ValidationError("patient context has no prompt library");
  }
  std::string facts;
  for (const auto& [topic, text] : script.facts) {
    facts += "- " + label_of(ctx.case_template, topic) + ": " + text + "\n";
  }
  std::string persona = "Age: " + (script.persona.age.empty() ? "unknown" : script.persona.age) +
                        "; sex: " + (script.persona.sex.empty() ? "unknown" : script.persona.sex) +
                        "; manner: " + script.persona.tone;
  ModelRequest request;
  request.messages = render_prompt(*ctx.prompts, role_tags::kPatient,
                                   {{"persona", persona},
                                    {"facts", facts.empty() ? "(none)" : facts},
                                    {"history", render_history(history)},
                                    {"question", std::string(question)}});
  request.role_tag = std::string(role_tags::kPatient);
  request.temperature = ctx.temperature;
  request.max_tokens = ctx.max_tokens;
  request.session_id = ctx.session_id;
  request.round = round;

  std::string raw;
  try {
    raw = complete(request, *ctx.backend).text;
  } catch (const BackendError& e) {
    if (is_configuration_failure(e)) {
      throw;
    }
    spdlog::warn("patient backend failed in round {}: {}; using the scripted answer", round, e.what());
    auto fallback = answer_scripted(question, script, ctx.case_template);
    fallback.fallback = true;
    return fallback;
  }

  std::set<std::string> vocabulary;
  for (const auto& [topic, text] : script.facts) {
    for (auto& t : content_tokens(text)) vocabulary.insert(std::move(t));
  }
  for (auto& t : content_tokens(question)) vocabulary.insert(std::move(t));
  for (auto& t : content_tokens(persona)) vocabulary.insert(std::move(t));

  PatientReply reply;
  for (const auto& sentence : split_sentences(raw)) {
    const auto tokens = content_tokens(sentence);
    const auto words = normalize_words(sentence);
    const auto word_count = static_cast<std::size_t>(std::count(words.begin(), words.end(), ' ') + 1);
    bool keep = declares_unavailable(sentence) || (word_count <= 6 && !has_digit(sentence));
    if (!keep && !tokens.empty()) {
      const auto supported = static_cast<double>(std::count_if(
          tokens.begin(), tokens.end(), [&](const std::string& t) { return vocabulary.count(t) > 0; }));
      keep = supported / static_cast<double>(tokens.size()) >= 0.6;
    }
    if (!keep) {
      reply.filtered_sentences.push_back(sentence);
      continue;
    }
    reply.text += reply.text.empty() ? sentence : " " + sentence;
  }
  if (!reply.filtered_sentences.empty()) {
    spdlog::info("patient post-filter removed {} sentence(s) in round {}", reply.filtered_sentences.size(), round);
  }

  const auto reply_norm = normalize_words(reply.text);
  std::set<std::string> reply_tokens;
  for (auto& t : content_tokens(reply.text)) reply_tokens.insert(std::move(t));
  const auto targeted = match_topics(question, ctx.case_template);
  for (const auto& [topic, text] : script.facts) {
    const auto fact_tokens = content_tokens(text);
    bool disclosed = contains_phrase(reply_norm, normalize_words(text));
    if (!disclosed && !fact_tokens.empty() &&
        std::find(targeted.begin(), targeted.end(), topic) != targeted.end()) {
      const auto hits = std::count_if(fact_tokens.begin(), fact_tokens.end(),
                                      [&](const std::string& t) { return reply_tokens.count(t) > 0; });
      disclosed = static_cast<double>(hits) / static_cast<double>(fact_tokens.size()) >= 0.5;
    }
    if (disclosed) {
      reply.disclosed_topics.insert(topic);
      reply.disclosed_facts[topic] = text;
    }
  }
  for (const auto& topic : targeted) {
    if (script.facts.count(topic) == 0) {
      reply.declared_unavailable.insert(topic);
      if (!declares_unavailable(reply.text)) {
        reply.text += (reply.text.empty() ? "" : " ") + unavailable_sentence(ctx.case_template, topic);
      }
    }
  }
  if (trim(reply.text).empty()) {
    auto fallback = answer_scripted(question, script, ctx.case_template);
    fallback.fallback = true;
    fallback.filtered_sentences = std::move(reply.filtered_sentences);
    return fallback;
  }
  return reply;
}

PatientReply interpret_free_text(std::string_view question, std::string_view reply, const CaseTemplate& tmpl) {
  PatientReply out;
  out.text = trim(reply);
  if (out.text.empty()) {
    throw ValidationError("empty patient message");
  }
  const auto topics = match_topics(question, tmpl);
  const bool unavailable = declares_unavailable(out.text);
  for (const auto& topic : topics) {
    if (unavailable) {
      out.declared_unavailable.insert(topic);
    } else {
      out.disclosed_topics.insert(topic);
      out.disclosed_facts[topic] = out.text;
    }
  }
  return out;
}

}  // namespace aegle
