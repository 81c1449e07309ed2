#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "skelattack.hpp"

namespace testsupport {

using namespace skelattack;

struct CorpusItem {
  FormulaSpec spec;
  GrayImage image;
};

/// The 40-formula evaluation corpus (seed 7, built-in atlas), rendered once.
inline const std::vector<CorpusItem>& corpus() {
  static const std::vector<CorpusItem> items = [] {
    const GlyphAtlas atlas = GlyphAtlas::builtin();
    std::vector<CorpusItem> out;
    for (auto& f : generate_formulas(40, 7)) {
      GrayImage img = render(f, atlas);
      out.push_back({std::move(f), std::move(img)});
    }
    return out;
  }();
  return items;
}

inline std::shared_ptr<const GlyphAtlas> shared_atlas() {
  static const auto atlas = std::make_shared<const GlyphAtlas>(GlyphAtlas::builtin());
  return atlas;
}

inline std::vector<BatchImage> corpus_batch() {
  std::vector<BatchImage> out;
  for (const auto& c : corpus()) out.push_back({c.spec.id, c.spec.latex, c.image});
  return out;
}

inline OracleFactory toy_factory(std::uint64_t budget) {
  auto atlas = shared_atlas();
  return [atlas, budget] { return std::make_unique<ToyOracle>(atlas, budget); };
}

inline OptimizerConfig optimizer_of(OptimizerKind kind) {
  OptimizerConfig c;
  c.kind = kind;
  return c;
}

inline GrayImage render_latex(const std::string& latex) {
  FormulaSpec spec;
  spec.id = "fixture";
  spec.latex = latex;
  spec.tokens = tokenize(latex);
  return render(spec, *shared_atlas());
}

/// Component count by union-find over every adjacent foreground pair.
inline std::size_t count_components_unionfind(const BinaryMask& m) {
  const int w = m.width();
  const int h = m.height();
  std::vector<int> parent(static_cast<std::size_t>(w) * h);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m.get(x, y)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if ((dx || dy) && nx >= 0 && ny >= 0 && nx < w && ny < h && m.get(nx, ny))
            parent[find(y * w + x)] = find(ny * w + nx);
        }
    }
  std::set<int> roots;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (m.get(x, y)) roots.insert(find(y * w + x));
  return roots.size();
}

inline bool has_2x2_block(const BinaryMask& m) {
  for (int y = 0; y + 1 < m.height(); ++y)
    for (int x = 0; x + 1 < m.width(); ++x)
      if (m.get(x, y) && m.get(x + 1, y) && m.get(x, y + 1) && m.get(x + 1, y + 1)) return true;
  return false;
}

/// Textbook TF-IDF over an explicit vocabulary: dense count vectors,
/// smoothed idf, then cosine of the raw weighted vectors.
inline double reference_cosine(const std::vector<std::string>& a,
                               const std::vector<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::vector<std::string> vocab(a.begin(), a.end());
  vocab.insert(vocab.end(), b.begin(), b.end());
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  std::vector<double> va(vocab.size(), 0.0), vb(vocab.size(), 0.0);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const double ca = static_cast<double>(std::count(a.begin(), a.end(), vocab[i]));
    const double cb = static_cast<double>(std::count(b.begin(), b.end(), vocab[i]));
    const double df = (ca > 0 ? 1.0 : 0.0) + (cb > 0 ? 1.0 : 0.0);
    const double idf = std::log(3.0 / (1.0 + df)) + 1.0;
    va[i] = ca * idf;
    vb[i] = cb * idf;
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    dot += va[i] * vb[i];
    na += va[i] * va[i];
    nb += vb[i] * vb[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Random LaTeX-ish string mixing commands, braces, symbols and spaces.
inline std::string random_latex(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces{
      "a", "b", "x", "y", "1", "2", "3", "+", "-", "=", "^", "{", "}", "(", ")",
      "\\frac", "\\alpha", "\\sum", "\\,", "\\{", " ", "  ", "_", "z", "n", "9"};
  std::uniform_int_distribution<int> len(0, 14);
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::string s;
  for (int i = len(rng); i > 0; --i) s += pieces[pick(rng)];
  return s;
}

/// LCS length by exhaustive subsequence enumeration; only for short inputs.
inline std::size_t brute_force_lcs(const std::string& a, const std::string& b) {
  std::size_t best = 0;
  const std::size_t n = a.size();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    std::string sub;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) sub.push_back(a[i]);
    if (sub.size() <= best) continue;
    std::size_t j = 0;
    for (char c : b)
      if (j < sub.size() && sub[j] == c) ++j;
    if (j == sub.size()) best = sub.size();
  }
  return best;
}

inline std::size_t differing_pixels(const GrayImage& a, const GrayImage& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) n += a.pixels()[i] != b.pixels()[i];
  return n;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("skelattack_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Oracle that ignores its input.
class ConstantOracle final : public VictimOracle {
 public:
  explicit ConstantOracle(std::string answer, std::uint64_t budget = 1'000'000)
      : VictimOracle(budget), answer_(std::move(answer)) {}

 protected:
  std::string transcribe(const GrayImage&) override { return answer_; }

 private:
  std::string answer_;
};

}  // namespace testsupport
