#pragma once

#include "aegle/backend_profile.hpp"
#include "aegle/consultation_engine.hpp"
#include "aegle/evaluation.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace aegle {

/// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitSessionError = 1;
inline constexpr int kExitConfigError = 2;

struct EngineOptions {
  std::filesystem::path profile;
  /// Empty selects the shipped prompts.
  std::filesystem::path prompts_dir;
  std::string ablation = "full";
  int max_turns = 30;
  std::size_t k_max = 4;
  std::uint64_t seed = 0;
  bool backend_merge = true;
  bool parallel_specialists = true;
  std::size_t static_panel_size = 3;
};

/// Resolves the profile, prompts and ablation into a session config. Throws
/// on any configuration problem, before a session exists.
SessionConfig build_session_config(const EngineOptions& options, BackendBindings* bindings_out = nullptr);

struct DatasetOptions {
  std::filesystem::path dataset;
  std::string adapter = "native";
};

/// Loads cases and fails on any per-record error.
std::vector<CaseRecord> load_dataset(const DatasetOptions& options);

struct SimulateOptions {
  EngineOptions engine;
  DatasetOptions data;
  std::filesystem::path out;
  std::string name = "run";
  std::size_t parallelism = 1;
};

/// Runs every case and exports the run directory. Exit 1 when any session
/// ended with stop_reason=error (all transcripts are still exported).
int cmd_simulate(const SimulateOptions& options, std::ostream& log);

struct ConsultOptions {
  EngineOptions engine;
  DatasetOptions data;
  std::string case_id;
  /// Read patient replies from `in` instead of the standardized patient.
  bool interactive = false;
  std::filesystem::path transcript_out;
};

int cmd_consult(const ConsultOptions& options, std::istream& in, std::ostream& out);

struct EvaluateOptions {
  std::filesystem::path run;
  DatasetOptions data;
  /// Needed unless skip_judge.
  std::filesystem::path profile;
  std::filesystem::path prompts_dir;
  bool skip_judge = false;
  std::string accuracy_mode = "normalized_match";
  bool group_by_department = false;
  /// Defaults to `<run>/evaluation`.
  std::filesystem::path out;
};

/// Writes report.json and report.csv.
int cmd_evaluate(const EvaluateOptions& options, std::ostream& log);

/// Shared by evaluate and ablate.
EvaluationReport evaluate_run_dir(const EvaluateOptions& options);

struct AblateOptions {
  EngineOptions engine;
  DatasetOptions data;
  std::filesystem::path out;
  std::vector<std::string> variants{"full", "without-ss", "without-gi", "without-dt", "without-dr"};
  std::size_t parallelism = 1;
  bool skip_judge = true;
};

/// One run directory per variant plus ablation.json / ablation.csv holding
/// each metric's mean and its drop relative to the full system.
int cmd_ablate(const AblateOptions& options, std::ostream& log);

struct ReportOptions {
  std::vector<std::filesystem::path> reports;
  /// Two-column (judge, human) CSV for the reliability analysis.
  std::filesystem::path correlate;
};

/// Markdown tables in the shape of the documentation, consultation and
/// accuracy tables, one row per report.
int cmd_report(const ReportOptions& options, std::ostream& out);

}  // namespace aegle
