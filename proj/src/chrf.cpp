#include "aegle/chrf.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <vector>

namespace aegle {
namespace {

std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = b;
    if (b >= 0xF0 && b <= 0xF4) {
      extra = 3;
      cp = b & 0x07;
    } else if (b >= 0xE0) {
      extra = 2;
      cp = b & 0x0F;
    } else if (b >= 0xC2 && b <= 0xDF) {
      extra = 1;
      cp = b & 0x1F;
    }
    if (b >= 0x80 && extra == 0) {
      out.push_back(b);
      ++i;
      continue;
    }
    bool ok = true;
    for (int k = 1; ok && k <= extra; ++k) {
      if (i + k >= s.size()) {
        ok = false;
        break;
      }
      const auto c = static_cast<unsigned char>(s[i + k]);
      if ((c & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (c & 0x3F);
    }
    if (!ok) {
      out.push_back(b);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

bool is_space(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\v' || c == U'\f';
}

using Counts = std::map<std::u32string, int>;

Counts char_ngrams(const std::u32string& text, int n) {
  Counts out;
  if (static_cast<int>(text.size()) < n) return out;
  for (std::size_t i = 0; i + n <= text.size(); ++i) ++out[text.substr(i, n)];
  return out;
}

Counts word_ngrams(const std::vector<std::u32string>& words, int n) {
  Counts out;
  if (static_cast<int>(words.size()) < n) return out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::u32string key;
    for (int k = 0; k < n; ++k) {
      if (k > 0) key.push_back(U' ');
      key += words[i + k];
    }
    ++out[key];
  }
  return out;
}

struct OrderStats {
  int hyp = 0;
  int ref = 0;
  int match = 0;
};

OrderStats compare(const Counts& hyp, const Counts& ref) {
  OrderStats s;
  for (const auto& [g, c] : hyp) {
    s.hyp += c;
    if (const auto it = ref.find(g); it != ref.end()) s.match += std::min(c, it->second);
  }
  for (const auto& [g, c] : ref) s.ref += c;
  return s;
}

struct Prepared {
  std::u32string chars;
  std::vector<std::u32string> words;
};

Prepared prepare(std::string_view text) {
  Prepared p;
  std::u32string word;
  for (char32_t c : decode_utf8(text)) {
    if (is_space(c)) {
      if (!word.empty()) p.words.push_back(std::move(word));
      word.clear();
    } else {
      p.chars.push_back(c);
      word.push_back(c);
    }
  }
  if (!word.empty()) p.words.push_back(std::move(word));
  return p;
}

}  // namespace

double chrf_pp(std::string_view hypothesis, std::string_view reference, const ChrfParams& params) {
  const Prepared hyp = prepare(hypothesis);
  const Prepared ref = prepare(reference);
  if (hyp.chars.empty() && ref.chars.empty()) return 100.0;
  if (hyp.chars.empty() || ref.chars.empty()) return 0.0;

  std::vector<OrderStats> orders;
  for (int n = 1; n <= params.char_order; ++n) orders.push_back(compare(char_ngrams(hyp.chars, n), char_ngrams(ref.chars, n)));
  for (int n = 1; n <= params.word_order; ++n) orders.push_back(compare(word_ngrams(hyp.words, n), word_ngrams(ref.words, n)));

  double precision = 0.0;
  double recall = 0.0;
  int effective = 0;
  for (const auto& o : orders) {
    if (o.hyp == 0 || o.ref == 0) continue;
    precision += static_cast<double>(o.match) / o.hyp;
    recall += static_cast<double>(o.match) / o.ref;
    ++effective;
  }
  if (effective == 0) return 0.0;
  precision /= effective;
  recall /= effective;
  if (precision + recall == 0.0) return 0.0;
  const double b2 = params.beta * params.beta;
  return 100.0 * (1.0 + b2) * precision * recall / (b2 * precision + recall);
}

}  // namespace aegle
