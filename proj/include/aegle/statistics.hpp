#pragma once

#include "aegle/util.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace aegle {

struct MetricReport {
  std::string metric;
  /// (case id, value) in input order.
  std::vector<std::pair<std::string, double>> per_case;
  double mean = 0.0;
  /// Population standard deviation.
  double std = 0.0;
  /// 1.96 * std / sqrt(n).
  double ci95 = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t n = 0;
  /// Present when grouping was requested; keys sorted.
  std::map<std::string, MetricReport> groups;
};

Json to_json(const MetricReport& report);

/// Throws ValidationError for an empty value list. `group_of` maps a case id
/// to its group; cases missing from the map land in "unknown".
MetricReport aggregate(std::string metric, const std::vector<std::pair<std::string, double>>& values,
                       const std::map<std::string, std::string>* group_of = nullptr);

/// Average ranks starting at 1; ties share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& values);

struct CorrelationResult {
  std::size_t n = 0;
  double pearson_r = 0.0;
  double pearson_p = 1.0;
  double spearman_rho = 0.0;
  double spearman_p = 1.0;
};

Json to_json(const CorrelationResult& result);

/// Pearson on raw values and Spearman on average ranks, with two-sided
/// p-values from the t distribution with n-2 degrees of freedom. Throws
/// ValidationError for unequal lengths or n < 3 and UndefinedCorrelationError
/// when either side has zero variance.
CorrelationResult correlations(const std::vector<double>& judge, const std::vector<double>& human);

/// Two-column CSV (judge, human). A non-numeric first row is a header.
std::pair<std::vector<double>, std::vector<double>> read_score_pairs_csv(const std::string& text);

}  // namespace aegle
