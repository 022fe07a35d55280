#include "aegle/rubric.hpp"

#include "aegle/errors.hpp"
#include "aegle/orchestration.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace aegle {

std::string_view to_string(RubricId id) {
  switch (id) {
    case RubricId::IDEA: return "IDEA";
    case RubricId::SOAP: return "SOAP";
    case RubricId::READ: return "READ";
    case RubricId::CONSULT: return "CONSULT";
  }
  return "IDEA";
}

RubricId rubric_id_from_string(std::string_view text) {
  const auto lower = to_lower(text);
  if (lower == "idea") return RubricId::IDEA;
  if (lower == "soap") return RubricId::SOAP;
  if (lower == "read") return RubricId::READ;
  if (lower == "consult") return RubricId::CONSULT;
  throw ValidationError("unknown rubric '" + std::string(text) + "'");
}

namespace {

double shipped_max(RubricId id) {
  switch (id) {
    case RubricId::IDEA: return 68.0;
    case RubricId::SOAP: return 100.0;
    case RubricId::READ: return 25.0;
    case RubricId::CONSULT: return 30.0;
  }
  return 0.0;
}

std::string format_points(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::optional<double> as_number(const Json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = trim(v.get<std::string>());
    if (s.empty()) return std::nullopt;
    try {
      std::size_t used = 0;
      const double d = std::stod(s, &used);
      if (used == s.size()) return d;
    } catch (const std::exception&) {
    }
  }
  if (v.is_object()) {
    for (const char* key : {"score", "points", "value"}) {
      if (v.contains(key)) return as_number(v.at(key));
    }
  }
  return std::nullopt;
}

}  // namespace

const RubricItem* RubricSpec::find(std::string_view item_id) const {
  for (const auto& i : items) {
    if (i.id == item_id) return &i;
  }
  return nullptr;
}

void RubricSpec::validate() const {
  if (items.empty()) {
    throw ValidationError(std::string(to_string(rubric_id)) + " rubric has no items");
  }
  double sum = 0.0;
  std::set<std::string> ids;
  for (const auto& i : items) {
    if (!ids.insert(i.id).second) {
      throw ValidationError("duplicate rubric item '" + i.id + "'");
    }
    if (i.max_points <= i.min_points || i.step <= 0.0) {
      throw ValidationError("rubric item '" + i.id + "' has an invalid range");
    }
    sum += i.max_points;
  }
  if (std::abs(sum - max_total) > 1e-9) {
    throw ValidationError(std::string(to_string(rubric_id)) + " item maxima sum to " + format_points(sum) +
                          ", declared max_total is " + format_points(max_total));
  }
  if (std::abs(max_total - shipped_max(rubric_id)) > 1e-9) {
    throw ValidationError(std::string(to_string(rubric_id)) + " max_total must be " +
                          format_points(shipped_max(rubric_id)));
  }
  if (rubric_id == RubricId::CONSULT && items.size() != 6) {
    throw ValidationError("CONSULT rubric must have six items");
  }
}

RubricSpec RubricSpec::from_json(const Json& doc) {
  RubricSpec spec;
  spec.rubric_id = rubric_id_from_string(doc.at("rubric_id").get<std::string>());
  spec.version = doc.value("version", std::string("v1"));
  spec.per_item_tiers = doc.value("scale", std::string("points")) == "tier_1_5";
  spec.max_total = doc.at("max_total").get<double>();
  for (const auto& it : doc.at("items")) {
    RubricItem item;
    item.id = it.at("id").get<std::string>();
    item.section = it.value("section", std::string());
    item.name = it.at("name").get<std::string>();
    item.definition = it.value("definition", std::string());
    item.min_points = it.value("min_points", 0.0);
    item.max_points = it.at("max_points").get<double>();
    item.step = it.value("step", 1.0);
    for (const auto& t : it.value("tiers", Json::array())) {
      item.tiers.push_back(RubricTier{t.at("score").get<std::string>(), t.at("descriptor").get<std::string>()});
    }
    spec.items.push_back(std::move(item));
  }
  for (const auto& d : doc.value("deduction_rules", Json::array())) {
    spec.deduction_rules.push_back(DeductionRule{d.at("code").get<std::string>(),
                                                 d.value("description", std::string()), d.at("points").get<double>()});
  }
  for (const auto& a : doc.value("annotation_codes", Json::array())) {
    spec.annotation_codes.push_back(AnnotationCode{a.at("code").get<std::string>(), a.value("meaning", std::string())});
  }
  spec.validate();
  return spec;
}

RubricSpec RubricSpec::load(const std::filesystem::path& path) {
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const Json::exception& e) {
    throw ValidationError("malformed rubric " + path.string() + ": " + e.what());
  }
}

RubricSpec RubricSpec::load_shipped(RubricId id, const std::filesystem::path& assets_dir) {
  return load(assets_dir / "rubrics" / "v1" / (to_lower(to_string(id)) + ".json"));
}

double RubricScore::item(std::string_view item_id) const {
  for (const auto& s : per_item) {
    if (s.item_id == item_id) return s.points;
  }
  throw ValidationError("no score for rubric item '" + std::string(item_id) + "'");
}

Json to_json(const RubricScore& score) {
  Json items = Json::object();
  for (const auto& s : score.per_item) items[s.item_id] = s.points;
  Json deductions = Json::array();
  for (const auto& d : score.deductions) {
    deductions.push_back(Json{{"code", d.code}, {"count", d.count}, {"points", d.points}});
  }
  return Json{{"rubric", to_string(score.rubric_id)},
              {"per_item", std::move(items)},
              {"deductions", std::move(deductions)},
              {"annotations", score.annotations},
              {"raw_total", score.raw_total},
              {"deduction_points", score.deduction_points},
              {"total", score.total},
              {"normalized", score.normalized},
              {"violations", score.violations},
              {"prompt_digest", score.prompt_digest},
              {"judge_raw", score.judge_raw}};
}

RubricScore score_verdict(const RubricSpec& spec, const JudgeVerdict& verdict) {
  RubricScore score;
  score.rubric_id = spec.rubric_id;
  std::map<std::string, double, std::less<>> given(verdict.items.begin(), verdict.items.end());
  for (const auto& item : spec.items) {
    const auto it = given.find(item.id);
    if (it == given.end()) {
      throw ValidationError("judge verdict lacks item '" + item.id + "'");
    }
    double v = it->second;
    if (!std::isfinite(v)) {
      throw ValidationError("judge verdict for item '" + item.id + "' is not finite");
    }
    const double original = v;
    v = std::clamp(v, item.min_points, item.max_points);
    v = item.min_points + std::floor((v - item.min_points) / item.step + 1e-9) * item.step;
    if (v != original) {
      score.violations.push_back("item " + item.id + ": " + format_points(original) + " clamped to " +
                                 format_points(v));
    }
    score.per_item.push_back(ItemScore{item.id, v, item.max_points});
    score.raw_total += v;
  }
  for (const auto& [id, v] : verdict.items) {
    if (spec.find(id) == nullptr) {
      score.violations.push_back("unknown item " + id + " ignored");
    }
  }

  int inconsistencies = std::max(0, verdict.inconsistencies);
  if (verdict.inconsistencies < 0) {
    score.violations.push_back("negative inconsistency count treated as 0");
  }
  for (const auto& rule : spec.deduction_rules) {
    if (rule.code == "inconsistency" && inconsistencies > 0) {
      const double pts = rule.points * inconsistencies;
      score.deductions.push_back(AppliedDeduction{rule.code, inconsistencies, pts});
      score.deduction_points += pts;
    }
  }
  if (inconsistencies > 0 && spec.deduction_rules.empty()) {
    score.violations.push_back("inconsistency count ignored: rubric has no deduction rule");
  }
  for (const auto& code : verdict.codes) {
    const bool known = std::any_of(spec.annotation_codes.begin(), spec.annotation_codes.end(),
                                   [&](const AnnotationCode& a) { return a.code == code; });
    if (known) {
      score.annotations.push_back(code);
    } else {
      score.violations.push_back("unknown deduction code " + code + " ignored");
    }
  }

  score.total = std::max(0.0, score.raw_total - score.deduction_points);
  if (spec.per_item_tiers) {
    score.normalized = 100.0 * (score.raw_total / static_cast<double>(spec.items.size())) / 5.0;
  } else {
    score.normalized = 100.0 * score.total / spec.max_total;
  }
  return score;
}

std::optional<JudgeVerdict> parse_verdict(std::string_view text, const RubricSpec& spec) {
  const auto doc = extract_json_object(text);
  if (!doc || !doc->is_object()) return std::nullopt;
  const Json* scores = &*doc;
  for (const char* key : {"scores", "items", "per_item"}) {
    if (doc->contains(key) && doc->at(key).is_object()) {
      scores = &doc->at(key);
      break;
    }
  }
  JudgeVerdict verdict;
  for (const auto& item : spec.items) {
    if (!scores->contains(item.id)) return std::nullopt;
    const auto v = as_number(scores->at(item.id));
    if (!v) return std::nullopt;
    verdict.items.emplace_back(item.id, *v);
  }
  for (const auto& [k, v] : scores->items()) {
    if (spec.find(k) == nullptr && scores != &*doc) {
      if (const auto n = as_number(v)) verdict.items.emplace_back(k, *n);
    }
  }
  for (const char* key : {"inconsistencies", "internal_inconsistencies"}) {
    if (doc->contains(key)) {
      const auto n = as_number(doc->at(key));
      if (!n) return std::nullopt;
      verdict.inconsistencies = static_cast<int>(std::lround(*n));
      break;
    }
  }
  for (const char* key : {"deduction_codes", "codes", "deductions"}) {
    if (!doc->contains(key) || !doc->at(key).is_array()) continue;
    for (const auto& c : doc->at(key)) {
      if (c.is_string()) {
        verdict.codes.push_back(trim(c.get<std::string>()));
      } else if (c.is_object() && c.contains("code") && c.at("code").is_string()) {
        verdict.codes.push_back(trim(c.at("code").get<std::string>()));
      }
    }
    break;
  }
  return verdict;
}

std::string render_rubric_instructions(const RubricSpec& spec) {
  std::ostringstream os;
  os << "Rubric: " << to_string(spec.rubric_id) << " (" << spec.version << ")\n";
  if (spec.per_item_tiers) {
    os << "Score every item on a 1-5 tier scale (5 is best).\n";
  } else {
    os << "Award points per item within its range. Maximum total: " << format_points(spec.max_total) << ".\n";
  }
  std::string section;
  for (const auto& item : spec.items) {
    if (item.section != section) {
      section = item.section;
      os << "\n[" << section << "]\n";
    }
    os << "- " << item.id << " " << item.name << " (" << format_points(item.min_points) << "-"
       << format_points(item.max_points);
    if (item.step != 1.0) os << ", step " << format_points(item.step);
    os << ")";
    if (!item.definition.empty()) os << ": " << item.definition;
    os << "\n";
    for (const auto& t : item.tiers) os << "    " << t.score << ": " << t.descriptor << "\n";
  }
  for (const auto& rule : spec.deduction_rules) {
    os << "\nDeduction: " << format_points(rule.points) << " points per " << rule.code << ". " << rule.description
       << " Report the count as \"inconsistencies\".\n";
  }
  if (!spec.annotation_codes.empty()) {
    os << "\nAnnotation codes (list every code that applies; they do not change points):\n";
    for (const auto& a : spec.annotation_codes) os << "  " << a.code << " " << a.meaning << "\n";
  }
  return os.str();
}

namespace {

std::string response_format(const RubricSpec& spec) {
  Json scores = Json::object();
  for (const auto& item : spec.items) scores[item.id] = item.max_points;
  Json example{{"scores", std::move(scores)}};
  if (!spec.deduction_rules.empty()) example["inconsistencies"] = 0;
  if (!spec.annotation_codes.empty()) example["deduction_codes"] = Json::array();
  return "Reply with one JSON object and nothing else, shaped like:\n" + example.dump();
}

}  // namespace

std::vector<ChatMessage> render_judge_prompt(const RubricSpec& spec, const PromptLibrary& prompts,
                                             std::string_view material) {
  return render_prompt(prompts, role_tags::kJudge,
                       {{"instructions", render_rubric_instructions(spec)},
                        {"material", std::string(material)},
                        {"response_format", response_format(spec)}});
}

std::string judge_prompt_digest(const RubricSpec& spec, const PromptLibrary& prompts) {
  return messages_digest(render_judge_prompt(spec, prompts, ""));
}

RubricScore judge_rubric(std::string_view material, const RubricSpec& spec, const JudgeContext& ctx) {
  if (!ctx.backend) throw ValidationError("no judge backend bound");
  if (!ctx.prompts) throw ValidationError("no prompt library bound for the judge");
  ModelRequest request;
  request.messages = render_judge_prompt(spec, *ctx.prompts, material);
  request.role_tag = std::string(role_tags::kJudge);
  request.temperature = ctx.temperature;
  request.max_tokens = ctx.max_tokens;
  request.session_id = ctx.session_id;

  std::string last_raw;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ModelResponse response;
    try {
      response = complete(request, *ctx.backend);
    } catch (const BackendError& e) {
      if (is_configuration_failure(e)) throw;
      throw MissingScoreError(std::string(to_string(spec.rubric_id)) + " judge call failed: " + e.what());
    }
    last_raw = response.text;
    if (auto verdict = parse_verdict(response.text, spec)) {
      RubricScore score = score_verdict(spec, *verdict);
      score.judge_raw = response.text;
      score.prompt_digest = judge_prompt_digest(spec, *ctx.prompts);
      for (const auto& v : score.violations) spdlog::warn("{} judge: {}", to_string(spec.rubric_id), v);
      return score;
    }
    spdlog::warn("{} judge reply unparseable (attempt {})", to_string(spec.rubric_id), attempt + 1);
    if (!response.text.empty()) {
      request.messages.push_back(ChatMessage{ChatRole::Assistant, response.text});
    }
    request.messages.push_back(
        ChatMessage{ChatRole::User, "Your reply could not be parsed. " + response_format(spec)});
  }
  throw MissingScoreError(std::string(to_string(spec.rubric_id)) + " judge reply unparseable after retry: " +
                          last_raw.substr(0, 200));
}

}  // namespace aegle
