#pragma once

#include <string_view>

namespace aegle {

struct ChrfParams {
  int char_order = 6;
  int word_order = 2;
  double beta = 2.0;
};

/// chrF++ on a 0..100 scale. Character n-grams run over Unicode code points
/// with whitespace removed; word n-grams over whitespace-separated tokens.
/// Per-order precision and recall are averaged over the orders for which both
/// sides have n-grams, then combined as F-beta. Both sides empty scores 100,
/// exactly one side empty scores 0. Invalid UTF-8 bytes count as single code
/// points.
double chrf_pp(std::string_view hypothesis, std::string_view reference, const ChrfParams& params = {});

}  // namespace aegle
