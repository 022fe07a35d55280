#pragma once

#include "aegle/model_gateway.hpp"
#include "aegle/util.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace aegle {

enum class RubricId { IDEA, SOAP, READ, CONSULT };

std::string_view to_string(RubricId id);
RubricId rubric_id_from_string(std::string_view text);

struct RubricTier {
  std::string score;
  std::string descriptor;
};

struct RubricItem {
  std::string id;
  std::string section;
  std::string name;
  std::string definition;
  double min_points = 0.0;
  double max_points = 0.0;
  /// Smallest awardable increment (0.5 for the family-resources item).
  double step = 1.0;
  std::vector<RubricTier> tiers;
};

/// A per-occurrence point deduction applied after item totals.
struct DeductionRule {
  std::string code;
  std::string description;
  double points = 0.0;
};

/// Error annotation carried for analysis only; never changes the score.
struct AnnotationCode {
  std::string code;
  std::string meaning;
};

struct RubricSpec {
  RubricId rubric_id = RubricId::IDEA;
  std::string version;
  /// Items scored 1..5 and reported separately rather than summed.
  bool per_item_tiers = false;
  std::vector<RubricItem> items;
  std::vector<DeductionRule> deduction_rules;
  std::vector<AnnotationCode> annotation_codes;
  double max_total = 0.0;

  const RubricItem* find(std::string_view item_id) const;

  /// Throws ValidationError when max_total differs from the item maxima or
  /// the shipped totals (IDEA 68, SOAP 100, READ 25).
  void validate() const;
  static RubricSpec from_json(const Json& doc);
  static RubricSpec load(const std::filesystem::path& path);
  /// `<assets>/rubrics/v1/<id>.json`.
  static RubricSpec load_shipped(RubricId id, const std::filesystem::path& assets_dir = default_assets_dir());
};

struct ItemScore {
  std::string item_id;
  double points = 0.0;
  double max_points = 0.0;
};

struct AppliedDeduction {
  std::string code;
  int count = 0;
  double points = 0.0;
};

struct RubricScore {
  RubricId rubric_id = RubricId::IDEA;
  std::vector<ItemScore> per_item;
  std::vector<AppliedDeduction> deductions;
  std::vector<std::string> annotations;
  double raw_total = 0.0;
  double deduction_points = 0.0;
  /// max(0, raw_total - deduction_points).
  double total = 0.0;
  /// Points rubrics: 100 * total / max_total. Tier rubrics: mean tier / 5 * 100.
  double normalized = 0.0;
  std::string judge_raw;
  std::vector<std::string> violations;
  std::string prompt_digest;

  double item(std::string_view item_id) const;
};

Json to_json(const RubricScore& score);

/// Judge output before arithmetic.
struct JudgeVerdict {
  std::vector<std::pair<std::string, double>> items;
  int inconsistencies = 0;
  std::vector<std::string> codes;
};

/// Clamps each item into [min, max] on the item's step grid (each
/// adjustment is a violation), applies deductions floored at zero, and
/// normalizes. Throws ValidationError when an item is missing.
RubricScore score_verdict(const RubricSpec& spec, const JudgeVerdict& verdict);

/// Parses a judge reply. Returns nullopt when no JSON object is present or an
/// item score is missing or non-numeric.
std::optional<JudgeVerdict> parse_verdict(std::string_view text, const RubricSpec& spec);

struct JudgeContext {
  BackendHandle backend;
  std::shared_ptr<const PromptLibrary> prompts;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string session_id;
};

/// Fixed instruction block: every item with its tier table and deductions.
std::string render_rubric_instructions(const RubricSpec& spec);

/// Judge messages for `material`. Everything except the material is a
/// function of the rubric alone.
std::vector<ChatMessage> render_judge_prompt(const RubricSpec& spec, const PromptLibrary& prompts,
                                             std::string_view material);

/// Hash of the judge prompt with the material left blank; equal for every
/// system scored with the same rubric.
std::string judge_prompt_digest(const RubricSpec& spec, const PromptLibrary& prompts);

/// One judge call, one retry on an unparseable reply, then MissingScoreError.
/// Configuration failures propagate unchanged.
RubricScore judge_rubric(std::string_view material, const RubricSpec& spec, const JudgeContext& ctx);

}  // namespace aegle
