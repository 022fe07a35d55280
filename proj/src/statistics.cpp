#include "aegle/statistics.hpp"

#include "aegle/errors.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace aegle {

Json to_json(const MetricReport& r) {
  Json per_case = Json::array();
  for (const auto& [id, v] : r.per_case) per_case.push_back(Json{{"case_id", id}, {"value", v}});
  Json out{{"metric", r.metric}, {"n", r.n},     {"mean", r.mean}, {"std", r.std},
           {"ci95", r.ci95},     {"min", r.min}, {"max", r.max},   {"per_case", std::move(per_case)}};
  if (!r.groups.empty()) {
    Json groups = Json::object();
    for (const auto& [name, g] : r.groups) {
      groups[name] = Json{{"n", g.n}, {"mean", g.mean}, {"std", g.std}, {"ci95", g.ci95}};
    }
    out["groups"] = std::move(groups);
  }
  return out;
}

namespace {

void fill_moments(MetricReport& r) {
  r.n = r.per_case.size();
  double sum = 0.0;
  r.min = r.per_case.front().second;
  r.max = r.min;
  for (const auto& [id, v] : r.per_case) {
    sum += v;
    r.min = std::min(r.min, v);
    r.max = std::max(r.max, v);
  }
  r.mean = sum / static_cast<double>(r.n);
  double ss = 0.0;
  for (const auto& [id, v] : r.per_case) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(r.n));
  r.ci95 = 1.96 * r.std / std::sqrt(static_cast<double>(r.n));
}

}  // namespace

MetricReport aggregate(std::string metric, const std::vector<std::pair<std::string, double>>& values,
                       const std::map<std::string, std::string>* group_of) {
  if (values.empty()) {
    throw ValidationError("metric '" + metric + "' has no values to aggregate");
  }
  MetricReport r;
  r.metric = std::move(metric);
  r.per_case = values;
  fill_moments(r);
  if (group_of != nullptr) {
    std::map<std::string, std::vector<std::pair<std::string, double>>> parts;
    for (const auto& entry : values) {
      const auto it = group_of->find(entry.first);
      parts[it == group_of->end() ? "unknown" : it->second].push_back(entry);
    }
    for (auto& [name, part] : parts) {
      MetricReport g;
      g.metric = r.metric;
      g.per_case = std::move(part);
      fill_moments(g);
      r.groups.emplace(name, std::move(g));
    }
  }
  return r;
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) share rank mean((i+1)..(j+1)).
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

namespace {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw UndefinedCorrelationError("correlation undefined: zero variance");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double two_sided_p(double r, std::size_t n) {
  if (std::abs(r) >= 1.0) return 0.0;
  const double df = static_cast<double>(n) - 2.0;
  const double t = r * std::sqrt(df / (1.0 - r * r));
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace

Json to_json(const CorrelationResult& r) {
  return Json{{"n", r.n},
              {"pearson_r", r.pearson_r},
              {"pearson_p", r.pearson_p},
              {"spearman_rho", r.spearman_rho},
              {"spearman_p", r.spearman_p}};
}

CorrelationResult correlations(const std::vector<double>& judge, const std::vector<double>& human) {
  if (judge.size() != human.size()) {
    throw ValidationError("correlation inputs differ in length");
  }
  if (judge.size() < 3) {
    throw ValidationError("correlation needs at least 3 pairs");
  }
  CorrelationResult r;
  r.n = judge.size();
  r.pearson_r = pearson(judge, human);
  r.spearman_rho = pearson(average_ranks(judge), average_ranks(human));
  r.pearson_p = two_sided_p(r.pearson_r, r.n);
  r.spearman_p = two_sided_p(r.spearman_rho, r.n);
  return r;
}

std::pair<std::vector<double>, std::vector<double>> read_score_pairs_csv(const std::string& text) {
  std::vector<double> a;
  std::vector<double> b;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected two columns");
    }
    const auto first = trim(line.substr(0, comma));
    const auto second = trim(line.substr(comma + 1));
    try {
      std::size_t u1 = 0;
      std::size_t u2 = 0;
      const double x = std::stod(first, &u1);
      const double y = std::stod(second, &u2);
      if (u1 != first.size() || u2 != second.size()) throw std::invalid_argument("trailing text");
      a.push_back(x);
      b.push_back(y);
    } catch (const std::exception&) {
      if (a.empty() && line_no == 1) continue;
      throw ValidationError("line " + std::to_string(line_no) + ": non-numeric score");
    }
  }
  return {std::move(a), std::move(b)};
}

}  // namespace aegle
