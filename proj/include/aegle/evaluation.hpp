#pragma once

#include "aegle/chrf.hpp"
#include "aegle/consultation_engine.hpp"
#include "aegle/corpus.hpp"
#include "aegle/rubric.hpp"
#include "aegle/statistics.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace aegle {

enum class AccuracyMode { NormalizedMatch, Judge };
AccuracyMode accuracy_mode_from_string(std::string_view text);

/// Case-folded, punctuation- and whitespace-free containment of the gold
/// label (or any alias) in the prediction.
bool diagnosis_matches(std::string_view predicted, std::string_view gold_label,
                       const std::vector<std::string>& aliases = {});

enum class DiagnosisVerdict { Correct, Incorrect, Unresolved };

/// Binary equivalence verdict from the judge with a fixed prompt; one retry
/// on an unparseable reply, then Unresolved.
DiagnosisVerdict judge_diagnosis(std::string_view predicted, std::string_view gold_label, const JudgeContext& ctx);

/// Table-3 columns, in order.
inline const std::vector<std::string>& consult_columns() {
  static const std::vector<std::string> cols{"CA", "QT", "VER", "PJ", "SP", "AB"};
  return cols;
}

struct EvaluationOptions {
  bool skip_judge = false;
  AccuracyMode accuracy_mode = AccuracyMode::NormalizedMatch;
  bool group_by_department = false;
  JudgeContext judge;
  ChrfParams chrf;
  /// Loaded from the shipped assets when left empty and the judge runs.
  std::vector<RubricSpec> rubrics;
};

struct CaseEvaluation {
  std::string case_id;
  std::string department;
  std::string stop_reason;
  /// Assistant inquiry turns.
  int turns = 0;
  std::string predicted_diagnosis;
  std::string gold_diagnosis;
  /// Empty when the judge could not decide.
  std::optional<bool> correct;
  std::optional<double> chrf;
  std::map<std::string, RubricScore> rubric_scores;
  std::vector<std::string> notes;
};

Json to_json(const CaseEvaluation& evaluation);

struct AccuracySummary {
  int correct = 0;
  int evaluated = 0;
  int unresolved = 0;
  double percent = 0.0;
};

struct EvaluationReport {
  std::string variant;
  std::vector<CaseEvaluation> cases;
  /// Keyed by column name ("chrF++", "IDEA", "CA", "Turns", ...).
  std::map<std::string, MetricReport> metrics;
  AccuracySummary accuracy;
  std::optional<ActivationStats> activation;
  /// metric -> (scored cases, missing cases).
  std::map<std::string, std::pair<int, int>> coverage;
  std::map<std::string, std::string> prompt_digests;
  bool judged = false;
};

Json to_json(const EvaluationReport& report);
/// One row per case with every reported column.
std::string to_csv(const EvaluationReport& report);

/// Scores every transcript against its case. Transcripts whose case id is
/// missing from `cases` are reported with a coverage note and skipped.
EvaluationReport evaluate_run(const std::vector<Transcript>& transcripts, const std::vector<CaseRecord>& cases,
                              const EvaluationOptions& options);

/// Table-1 documentation columns followed by Table-3 consultation columns
/// present in `report`, with the diagnosis accuracy.
Json summary_table(const EvaluationReport& report);

}  // namespace aegle
