#include "aegle/evaluation.hpp"

#include "aegle/errors.hpp"

#include <spdlog/spdlog.h>

#include <iomanip>
#include <sstream>

namespace aegle {

AccuracyMode accuracy_mode_from_string(std::string_view text) {
  if (text == "normalized_match" || text == "match") return AccuracyMode::NormalizedMatch;
  if (text == "judge") return AccuracyMode::Judge;
  throw ValidationError("unknown accuracy mode '" + std::string(text) + "'");
}

bool diagnosis_matches(std::string_view predicted, std::string_view gold_label, const std::vector<std::string>& aliases) {
  const auto pred = normalize_compact(predicted);
  if (pred.empty()) return false;
  const auto contained = [&](std::string_view label) {
    const auto g = normalize_compact(label);
    return !g.empty() && pred.find(g) != std::string::npos;
  };
  if (contained(gold_label)) return true;
  return std::any_of(aliases.begin(), aliases.end(), [&](const std::string& a) { return contained(a); });
}

namespace {

constexpr std::string_view kDiagnosisInstructions =
    "Decide whether the predicted diagnosis names the same condition as the reference diagnosis. "
    "Accept synonyms, abbreviations and more specific forms of the same condition. "
    "Reject a different condition, a symptom in place of a diagnosis, or a list that hedges between conditions.";

constexpr std::string_view kDiagnosisFormat =
    "Reply with one JSON object and nothing else: {\"equivalent\": true} or {\"equivalent\": false}";

}  // namespace

DiagnosisVerdict judge_diagnosis(std::string_view predicted, std::string_view gold_label, const JudgeContext& ctx) {
  if (trim(gold_label).empty()) throw ValidationError("empty gold diagnosis label");
  if (trim(predicted).empty()) return DiagnosisVerdict::Incorrect;
  if (!ctx.backend || !ctx.prompts) throw ValidationError("judge accuracy mode needs a judge backend");
  ModelRequest request;
  request.messages = render_prompt(*ctx.prompts, role_tags::kJudge,
                                   {{"instructions", std::string(kDiagnosisInstructions)},
                                    {"material", "Predicted diagnosis: " + std::string(predicted) +
                                                     "\nReference diagnosis: " + std::string(gold_label)},
                                    {"response_format", std::string(kDiagnosisFormat)}});
  request.role_tag = std::string(role_tags::kJudge);
  request.temperature = ctx.temperature;
  request.max_tokens = ctx.max_tokens;
  request.session_id = ctx.session_id;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ModelResponse response;
    try {
      response = complete(request, *ctx.backend);
    } catch (const BackendError& e) {
      if (is_configuration_failure(e)) throw;
      spdlog::warn("diagnosis judge failed: {}", e.what());
      return DiagnosisVerdict::Unresolved;
    }
    const auto doc = extract_json_object(response.text);
    if (doc && doc->is_object() && doc->contains("equivalent") && doc->at("equivalent").is_boolean()) {
      return doc->at("equivalent").get<bool>() ? DiagnosisVerdict::Correct : DiagnosisVerdict::Incorrect;
    }
    if (!response.text.empty()) request.messages.push_back(ChatMessage{ChatRole::Assistant, response.text});
    request.messages.push_back(ChatMessage{ChatRole::User, std::string(kDiagnosisFormat)});
  }
  return DiagnosisVerdict::Unresolved;
}

Json to_json(const CaseEvaluation& e) {
  Json rubrics = Json::object();
  for (const auto& [name, score] : e.rubric_scores) rubrics[name] = to_json(score);
  return Json{{"case_id", e.case_id},
              {"department", e.department},
              {"stop_reason", e.stop_reason},
              {"turns", e.turns},
              {"predicted_diagnosis", e.predicted_diagnosis},
              {"gold_diagnosis", e.gold_diagnosis},
              {"correct", e.correct ? Json(*e.correct) : Json(nullptr)},
              {"chrf_pp", e.chrf ? Json(*e.chrf) : Json(nullptr)},
              {"rubrics", std::move(rubrics)},
              {"notes", e.notes}};
}

namespace {

/// Column order of the report: Table 1 then Table 3.
const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"IDEA", "SOAP", "READ", "chrF++", "CA", "QT", "VER", "PJ", "SP", "AB",
                                             "Turns"};
  return cols;
}

std::optional<double> column_value(const CaseEvaluation& e, const std::string& column) {
  if (column == "chrF++") return e.chrf;
  if (column == "Turns") return static_cast<double>(e.turns);
  for (const char* r : {"IDEA", "SOAP", "READ"}) {
    if (column == r) {
      const auto it = e.rubric_scores.find(r);
      if (it == e.rubric_scores.end()) return std::nullopt;
      return it->second.normalized;
    }
  }
  const auto it = e.rubric_scores.find("CONSULT");
  if (it == e.rubric_scores.end()) return std::nullopt;
  return it->second.item(column);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

Json to_json(const EvaluationReport& r) {
  Json cases = Json::array();
  for (const auto& c : r.cases) cases.push_back(to_json(c));
  Json metrics = Json::object();
  for (const auto& col : report_columns()) {
    if (const auto it = r.metrics.find(col); it != r.metrics.end()) metrics[col] = to_json(it->second);
  }
  Json coverage = Json::object();
  for (const auto& [name, c] : r.coverage) coverage[name] = Json{{"scored", c.first}, {"missing", c.second}};
  Json out{{"variant", r.variant},
           {"judged", r.judged},
           {"summary", summary_table(r)},
           {"metrics", std::move(metrics)},
           {"accuracy",
            {{"correct", r.accuracy.correct},
             {"evaluated", r.accuracy.evaluated},
             {"unresolved", r.accuracy.unresolved},
             {"percent", r.accuracy.percent}}},
           {"coverage", std::move(coverage)},
           {"prompt_digests", r.prompt_digests},
           {"cases", std::move(cases)}};
  out["activation"] = r.activation ? to_json(*r.activation) : Json(nullptr);
  return out;
}

Json summary_table(const EvaluationReport& r) {
  Json columns = Json::array();
  Json values = Json::object();
  for (const auto& col : report_columns()) {
    const auto it = r.metrics.find(col);
    if (it == r.metrics.end()) continue;
    columns.push_back(col);
    values[col] = Json{{"mean", it->second.mean},
                       {"std", it->second.std},
                       {"display", fixed(it->second.mean, 2) + " ± " + fixed(it->second.std, 2)}};
  }
  columns.push_back("Acc. (%)");
  values["Acc. (%)"] = Json{{"mean", r.accuracy.percent}, {"display", fixed(r.accuracy.percent, 2)}};
  if (r.activation) {
    columns.push_back("Experts per Case");
    columns.push_back("Experts per Round");
    values["Experts per Case"] = Json{{"mean", r.activation->experts_per_case},
                                      {"display", fixed(r.activation->experts_per_case, 3)}};
    values["Experts per Round"] = Json{{"mean", r.activation->experts_per_round},
                                       {"display", fixed(r.activation->experts_per_round, 3)}};
  }
  return Json{{"variant", r.variant}, {"columns", std::move(columns)}, {"values", std::move(values)}};
}

std::string to_csv(const EvaluationReport& r) {
  std::ostringstream os;
  os << "case_id,department,stop_reason,predicted_diagnosis,gold_diagnosis,correct";
  for (const auto& col : report_columns()) os << "," << col;
  os << "\n";
  for (const auto& c : r.cases) {
    os << csv_escape(c.case_id) << "," << csv_escape(c.department) << "," << c.stop_reason << ","
       << csv_escape(c.predicted_diagnosis) << "," << csv_escape(c.gold_diagnosis) << ","
       << (c.correct ? (*c.correct ? "1" : "0") : "");
    for (const auto& col : report_columns()) {
      os << ",";
      if (const auto v = column_value(c, col)) os << fixed(*v, 4);
    }
    os << "\n";
  }
  return os.str();
}

EvaluationReport evaluate_run(const std::vector<Transcript>& transcripts, const std::vector<CaseRecord>& cases,
                              const EvaluationOptions& options) {
  std::map<std::string, const CaseRecord*> by_id;
  for (const auto& c : cases) by_id[c.case_id] = &c;

  EvaluationReport report;
  report.judged = !options.skip_judge;
  if (!transcripts.empty()) {
    report.variant = transcripts.front().config.value("variant", std::string("full"));
  }

  std::vector<RubricSpec> rubrics = options.rubrics;
  if (!options.skip_judge) {
    if (!options.judge.backend || !options.judge.prompts) {
      throw ValidationError("rubric scoring needs a judge backend (or --skip-judge)");
    }
    if (rubrics.empty()) {
      for (auto id : {RubricId::IDEA, RubricId::SOAP, RubricId::READ, RubricId::CONSULT}) {
        rubrics.push_back(RubricSpec::load_shipped(id));
      }
    }
    for (const auto& spec : rubrics) {
      report.prompt_digests[std::string(to_string(spec.rubric_id))] = judge_prompt_digest(spec, *options.judge.prompts);
    }
  }

  std::map<std::string, std::string> group_of;
  std::map<std::string, std::vector<std::pair<std::string, double>>> columns;
  std::vector<Transcript> evaluated;
  for (const auto& t : transcripts) {
    const auto it = by_id.find(t.case_id);
    if (it == by_id.end()) {
      spdlog::warn("transcript {} has no matching case record; skipped", t.case_id);
      report.coverage["case_record"].second += 1;
      continue;
    }
    report.coverage["case_record"].first += 1;
    const CaseRecord& record = *it->second;
    evaluated.push_back(t);
    group_of[t.case_id] = record.department;

    CaseEvaluation e;
    e.case_id = t.case_id;
    e.department = record.department;
    e.stop_reason = std::string(to_string(t.stop_reason));
    e.turns = t.inquiry_turns();
    e.predicted_diagnosis = t.final_state.plan.preliminary_diagnosis;
    e.gold_diagnosis = record.gold_diagnosis_label;
    if (t.stop_reason == StopReason::Error) e.notes.push_back("session ended with error: " + t.error);

    if (!record.gold_diagnosis_label.empty()) {
      if (options.accuracy_mode == AccuracyMode::Judge && !options.skip_judge) {
        auto ctx = options.judge;
        ctx.session_id = t.case_id + ":diagnosis";
        switch (judge_diagnosis(e.predicted_diagnosis, record.gold_diagnosis_label, ctx)) {
          case DiagnosisVerdict::Correct: e.correct = true; break;
          case DiagnosisVerdict::Incorrect: e.correct = false; break;
          case DiagnosisVerdict::Unresolved:
            e.notes.push_back("diagnosis verdict unresolved");
            ++report.accuracy.unresolved;
            break;
        }
      } else {
        e.correct = diagnosis_matches(e.predicted_diagnosis, record.gold_diagnosis_label, record.aliases);
      }
      if (e.correct) {
        ++report.accuracy.evaluated;
        if (*e.correct) ++report.accuracy.correct;
      }
    } else {
      e.notes.push_back("no gold diagnosis label; accuracy skipped");
    }

    const auto gold = record.gold_note();
    if (gold.empty()) {
      e.notes.push_back("no gold note; chrF++ skipped");
      report.coverage["chrF++"].second += 1;
    } else {
      e.chrf = chrf_pp(t.final_ipn, gold, options.chrf);
      report.coverage["chrF++"].first += 1;
    }

    if (!options.skip_judge) {
      for (const auto& spec : rubrics) {
        const std::string name(to_string(spec.rubric_id));
        auto ctx = options.judge;
        ctx.session_id = t.case_id + ":" + to_lower(name);
        // Documentation rubrics see the note; the consultation rubric sees the dialogue.
        const std::string material =
            spec.rubric_id == RubricId::CONSULT ? render_history(t.turns) : t.final_ipn;
        try {
          e.rubric_scores.emplace(name, judge_rubric(material, spec, ctx));
          report.coverage[name].first += 1;
        } catch (const MissingScoreError& err) {
          e.notes.push_back(name + " score missing: " + err.what());
          report.coverage[name].second += 1;
        }
      }
    }

    for (const auto& col : report_columns()) {
      if (const auto v = column_value(e, col)) columns[col].emplace_back(e.case_id, *v);
    }
    report.cases.push_back(std::move(e));
  }

  for (auto& [col, values] : columns) {
    if (values.empty()) continue;
    report.metrics.emplace(col, aggregate(col, values, options.group_by_department ? &group_of : nullptr));
  }
  if (report.accuracy.evaluated > 0) {
    report.accuracy.percent = 100.0 * report.accuracy.correct / report.accuracy.evaluated;
  }
  if (!evaluated.empty()) {
    report.activation = compute_activation_stats(evaluated);
  }
  return report;
}

}  // namespace aegle
