#pragma once

// Shaped episode reward: R = alpha*R_c + beta*R_f + gamma*R_t with
// R_c = lambda*R_a + (1-lambda)*R_e, plus the VQA soft accuracy used to
// grade sample difficulty.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "zoomrl/errors.hpp"
#include "zoomrl/protocol.hpp"

namespace zoomrl {

struct RewardWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.1;
  double lambda = 0.5;

  void validate() const {
    for (double w : {alpha, beta, gamma, lambda})
      if (!std::isfinite(w)) throw ConfigError("reward weights must be finite");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("reward.lambda must lie in [0,1]");
  }
};

struct RewardBreakdown {
  double r_answer = 0.0;
  double r_edit = 0.0;
  double r_correct = 0.0;
  double r_format = 0.0;
  double r_tool = 0.0;
  double total = 0.0;
  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

/// Lowercase, trim, collapse internal whitespace, drop trailing periods.
inline std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  while (!out.empty() && (out.back() == '.' || out.back() == ' ')) out.pop_back();
  return out;
}

struct AnswerKey {
  std::vector<std::string> references;

  static AnswerKey of(const std::vector<std::string>& answers) {
    if (answers.empty()) throw std::invalid_argument("answer key needs at least one reference");
    AnswerKey k;
    for (const auto& a : answers) k.references.push_back(normalize_answer(a));
    return k;
  }
};

namespace detail {

// UTF-8 to code points; a byte that does not start a valid sequence stands for itself.
inline std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    int len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : (b >> 3) == 0x1E ? 4 : 0;
    bool ok = len > 0 && i + static_cast<std::size_t>(len) <= s.size();
    char32_t cp = len == 1 ? b : len == 2 ? (b & 0x1F) : len == 3 ? (b & 0x0F) : (b & 0x07);
    for (int k = 1; ok && k < len; ++k) {
      const auto c = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((c >> 6) != 0x2) ok = false;
      cp = (cp << 6) | (c & 0x3F);
    }
    if (!ok) {
      out.push_back(b);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

}  // namespace detail

/// Levenshtein distance over Unicode scalar values, two-row DP.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  const auto x = detail::decode_utf8(a);
  const auto y = detail::decode_utf8(b);
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

inline std::size_t utf8_length(std::string_view s) { return detail::decode_utf8(s).size(); }

inline double exact_reward(std::string_view pred, const AnswerKey& key) {
  const std::string p = normalize_answer(pred);
  return std::find(key.references.begin(), key.references.end(), p) != key.references.end() ? 1.0 : 0.0;
}

/// Mean of the three best per-reference similarities 1 - lev/max(len).
inline double edit_reward(std::string_view pred, const AnswerKey& key) {
  const std::string p = normalize_answer(pred);
  const std::size_t plen = utf8_length(p);
  std::vector<double> sims;
  sims.reserve(key.references.size());
  for (const auto& h : key.references) {
    const double denom = static_cast<double>(std::max<std::size_t>({plen, utf8_length(h), 1}));
    sims.push_back(1.0 - static_cast<double>(levenshtein(p, h)) / denom);
  }
  const std::size_t k = std::min<std::size_t>(3, sims.size());
  if (k == 0) return 0.0;
  std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                    std::greater<>());
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += sims[i];
  return acc / static_cast<double>(k);
}

inline double format_reward(const FormatVerdict& v) { return v.ok() ? 1.0 : 0.0; }

inline double tool_reward(int successful, int attempted) {
  if (successful < 0 || successful > attempted) throw std::invalid_argument("tool_reward: need 0 <= successful <= attempted");
  return attempted == 0 ? 0.0 : static_cast<double>(successful) / attempted;
}

inline RewardBreakdown composite_reward(double r_answer, double r_edit, double r_format, double r_tool,
                                        const RewardWeights& w) {
  RewardBreakdown b;
  b.r_answer = r_answer;
  b.r_edit = r_edit;
  b.r_format = r_format;
  b.r_tool = r_tool;
  b.r_correct = w.lambda * r_answer + (1.0 - w.lambda) * r_edit;
  b.total = w.alpha * b.r_correct + w.beta * r_format + w.gamma * r_tool;
  return b;
}

/// VQA soft accuracy. A single reference means a synthetic key with a unique
/// answer, scored by exact match.
inline double vqa_score(std::string_view pred, const std::vector<std::string>& human_answers) {
  if (human_answers.empty()) throw std::invalid_argument("vqa_score: no reference answers");
  const std::string p = normalize_answer(pred);
  int matches = 0;
  for (const auto& h : human_answers)
    if (normalize_answer(h) == p) ++matches;
  if (human_answers.size() == 1) return matches == 1 ? 1.0 : 0.0;
  return std::min(1.0, matches / 3.0);
}

}  // namespace zoomrl
