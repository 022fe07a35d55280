#include "aegle/errors.hpp"
#include "aegle/statistics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace aegle;

TEST_CASE("correlations match the closed-form oracle") {
  const std::vector<std::vector<double>> xs{{1, 2, 3, 4, 5, 6, 7, 8}, {3.5, 4.0, 2.5, 5.0, 4.5, 3.0}};
  const std::vector<std::vector<double>> ys{{2, 1, 4, 3, 7, 8, 6, 5}, {60, 72, 55, 80, 70, 64}};
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto r = correlations(xs[i], ys[i]);
    CHECK(std::abs(r.pearson_r - oracle::pearson(xs[i], ys[i])) <= 1e-12);
    CHECK(std::abs(r.spearman_rho - oracle::spearman_untied(xs[i], ys[i])) <= 1e-12);
    CHECK(r.n == xs[i].size());
  }
}

TEST_CASE("correlation p-values match reference t-distribution values") {
  // Two-sided p-values from an independent statistics package, frozen.
  const auto a = correlations({1, 2, 3, 4, 5, 6, 7, 8}, {2, 1, 4, 3, 7, 8, 6, 5});
  CHECK(a.pearson_r == doctest::Approx(0.738095238095238).epsilon(1e-12));
  CHECK(a.pearson_p == doctest::Approx(0.03655276105286082).epsilon(1e-9));
  const auto b = correlations({3.5, 4.0, 2.5, 5.0, 4.5, 3.0}, {60, 72, 55, 80, 70, 64});
  CHECK(b.pearson_r == doctest::Approx(0.9207559753779506).epsilon(1e-12));
  CHECK(b.pearson_p == doctest::Approx(0.00917061215724513).epsilon(1e-9));
  CHECK(b.spearman_rho == doctest::Approx(0.8857142857142858).epsilon(1e-12));
  CHECK(b.spearman_p == doctest::Approx(0.01884548104956266).epsilon(1e-9));
}

TEST_CASE("random vectors with ties match the rank oracle") {
  std::mt19937 rng(99);
  std::uniform_int_distribution<int> score(1, 5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x, y;
    for (int i = 0; i < 12; ++i) {
      x.push_back(score(rng));
      y.push_back(score(rng) + 0.5 * x.back());
    }
    try {
      const auto r = correlations(x, y);
      CHECK(std::abs(r.pearson_r - oracle::pearson(x, y)) <= 1e-12);
      CHECK(std::abs(r.spearman_rho - oracle::spearman(x, y)) <= 1e-12);
    } catch (const UndefinedCorrelationError&) {
    }
  }
}

TEST_CASE("degenerate correlation inputs") {
  const std::vector<double> v{1, 3, 2, 5, 4};
  const auto same = correlations(v, v);
  CHECK(same.pearson_r == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.spearman_rho == doctest::Approx(1.0).epsilon(1e-12));
  const auto rev = correlations({1, 2, 3, 4, 5}, {50, 40, 30, 20, 10});
  CHECK(rev.spearman_rho == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(rev.pearson_r == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS(correlations({1, 1, 1}, {1, 2, 3}), UndefinedCorrelationError);
  CHECK_THROWS_AS(correlations({1, 2}, {1, 2}), ValidationError);
  CHECK_THROWS_AS(correlations({1, 2, 3}, {1, 2}), ValidationError);
}

TEST_CASE("average ranks share tied positions") {
  CHECK(average_ranks({10, 20, 20, 30}) == std::vector<double>{1, 2.5, 2.5, 4});
  CHECK(average_ranks({3, 1, 2}) == std::vector<double>{3, 1, 2});
}

TEST_CASE("aggregate reports mean, population std and a normal interval") {
  const auto r = aggregate("IDEA", {{"a", 60}, {"b", 70}, {"c", 80}});
  CHECK(r.n == 3);
  CHECK(r.mean == doctest::Approx(70));
  CHECK(r.std == doctest::Approx(std::sqrt(200.0 / 3.0)));
  CHECK(r.ci95 == doctest::Approx(1.96 * std::sqrt(200.0 / 3.0) / std::sqrt(3.0)));
  CHECK(r.min == 60);
  CHECK(r.max == 80);
  CHECK_THROWS_AS(aggregate("x", {}), ValidationError);

  const std::map<std::string, std::string> dept{{"a", "cardiology"}, {"b", "cardiology"}};
  const auto g = aggregate("IDEA", {{"a", 60}, {"b", 70}, {"c", 80}}, &dept);
  REQUIRE(g.groups.size() == 2);
  CHECK(g.groups.at("cardiology").mean == doctest::Approx(65));
  CHECK(g.groups.at("unknown").n == 1);
}

TEST_CASE("score pairs CSV") {
  const auto [judge, human] = read_score_pairs_csv("judge,human\n1,2\n3.5, 4\n\n5,6\n");
  CHECK(judge == std::vector<double>{1, 3.5, 5});
  CHECK(human == std::vector<double>{2, 4, 6});
  CHECK_THROWS_AS(read_score_pairs_csv("1,2\nx,3\n"), ValidationError);
}
