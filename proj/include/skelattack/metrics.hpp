#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace skelattack {

using TokenSeq = std::vector<std::string>;

/// LaTeX-aware split: `\name` and `\<symbol>` are single tokens, every other
/// non-whitespace character stands alone, whitespace is dropped.
inline TokenSeq tokenize(std::string_view latex) {
  TokenSeq out;
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  auto is_alpha = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  };
  std::size_t i = 0;
  while (i < latex.size()) {
    const char c = latex[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (c == '\\' && i + 1 < latex.size()) {
      std::size_t j = i + 1;
      if (is_alpha(latex[j])) {
        while (j < latex.size() && is_alpha(latex[j])) ++j;
      } else if (!is_space(latex[j])) {
        ++j;
      }
      out.emplace_back(latex.substr(i, j - i));
      i = j;
      continue;
    }
    out.emplace_back(1, c);
    ++i;
  }
  return out;
}

inline std::string detokenize(const TokenSeq& tokens) {
  std::string out;
  for (const auto& t : tokens) out += t;
  return out;
}

/// Sparse TF-IDF weights, already L2-normalised (or all-zero for an empty
/// document).
struct TfidfVector {
  std::map<std::string, double> weights;
  double norm = 0.0;
};

/// Vectorises the two documents against the corpus made of exactly these
/// two, with smoothed idf ln((1+n)/(1+df)) + 1.
inline std::pair<TfidfVector, TfidfVector> tfidf_pair(const TokenSeq& y, const TokenSeq& y_adv) {
  std::map<std::string, double> tf_a;
  std::map<std::string, double> tf_b;
  for (const auto& t : y) tf_a[t] += 1.0;
  for (const auto& t : y_adv) tf_b[t] += 1.0;

  constexpr double n_docs = 2.0;
  auto idf = [&](const std::string& t) {
    const double df = (tf_a.count(t) ? 1.0 : 0.0) + (tf_b.count(t) ? 1.0 : 0.0);
    return std::log((1.0 + n_docs) / (1.0 + df)) + 1.0;
  };

  auto vectorize = [&](const std::map<std::string, double>& tf) {
    TfidfVector v;
    double sq = 0.0;
    for (const auto& [t, count] : tf) {
      const double w = count * idf(t);
      v.weights[t] = w;
      sq += w * w;
    }
    const double raw_norm = std::sqrt(sq);
    if (raw_norm > 0.0) {
      for (auto& [t, w] : v.weights) w /= raw_norm;
      double sq2 = 0.0;
      for (const auto& [t, w] : v.weights) sq2 += w * w;
      v.norm = std::sqrt(sq2);
    }
    return v;
  };
  return {vectorize(tf_a), vectorize(tf_b)};
}

/// Cosine of the pairwise TF-IDF vectors. Two empty outputs are identical
/// (1); exactly one empty output is orthogonal (0).
inline double cosine_similarity(const TokenSeq& y, const TokenSeq& y_adv) {
  if (y.empty() && y_adv.empty()) return 1.0;
  if (y.empty() || y_adv.empty()) return 0.0;
  const auto [a, b] = tfidf_pair(y, y_adv);
  double dot = 0.0;
  for (const auto& [t, w] : a.weights) {
    auto it = b.weights.find(t);
    if (it != b.weights.end()) dot += w * it->second;
  }
  return std::clamp(dot, 0.0, 1.0);
}

inline double cosine_similarity(std::string_view y, std::string_view y_adv) {
  return cosine_similarity(tokenize(y), tokenize(y_adv));
}

namespace detail {
inline std::string strip_whitespace(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}
}  // namespace detail

/// Longest-common-subsequence length over raw characters.
inline std::size_t lcs_length(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// |LCS(y, y_adv)| / |y| on whitespace-stripped strings; an empty y scores 1
/// against an empty y_adv and 0 otherwise.
inline double char_accuracy(std::string_view y, std::string_view y_adv) {
  const std::string a = detail::strip_whitespace(y);
  const std::string b = detail::strip_whitespace(y_adv);
  if (a.empty()) return b.empty() ? 1.0 : 0.0;
  return static_cast<double>(lcs_length(a, b)) /
         static_cast<double>(std::max<std::size_t>(a.size(), 1));
}

inline constexpr double kSuccessEpsilon = 1e-9;

inline bool success(double cos_sim) { return cos_sim < 1.0 - kSuccessEpsilon; }

struct MetricsRow {
  double cosine_similarity = 1.0;
  bool success = false;
  double accuracy = 1.0;
  double psnr = 0.0;
};

}  // namespace skelattack
