#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "skelattack/atlas.hpp"
#include "skelattack/errors.hpp"
#include "skelattack/image.hpp"
#include "skelattack/metrics.hpp"
#include "skelattack/region.hpp"

namespace skelattack {

struct OcrOutput {
  std::string latex;
  TokenSeq tokens;
  std::uint64_t query_index = 0;
};

/// Query interface to the OCR under attack. Enforces the query budget and
/// counts answered queries; subclasses only transcribe.
class VictimOracle {
 public:
  explicit VictimOracle(std::uint64_t query_budget) : budget_(query_budget) {
    if (query_budget == 0) throw InputError("oracle query budget must be positive");
  }
  virtual ~VictimOracle() = default;

  VictimOracle(const VictimOracle&) = delete;
  VictimOracle& operator=(const VictimOracle&) = delete;

  OcrOutput query(const GrayImage& img) {
    std::uint64_t used = count_.load();
    do {
      if (used >= budget_) {
        throw BudgetExhausted("oracle query budget of " + std::to_string(budget_) +
                              " exhausted");
      }
    } while (!count_.compare_exchange_weak(used, used + 1));
    OcrOutput out;
    out.latex = transcribe(img);
    out.tokens = tokenize(out.latex);
    out.query_index = used;
    return out;
  }

  std::uint64_t query_count() const { return count_.load(); }
  std::uint64_t query_budget() const { return budget_; }

 protected:
  virtual std::string transcribe(const GrayImage& img) = 0;

 private:
  std::uint64_t budget_;
  std::atomic<std::uint64_t> count_{0};
};

namespace detail {

struct GlyphRegion {
  int x0 = 0;
  int x1 = 0;
  std::size_t ink = 0;
  std::vector<PixelCoord> pixels;
};

/// Components whose horizontal spans overlap by at least half of the
/// narrower span are one glyph (`=`, or fragments of a damaged stroke).
inline std::vector<GlyphRegion> merge_components(std::vector<Component> comps) {
  const std::size_t n = comps.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = comps[i].box;
      const auto& b = comps[j].box;
      const int overlap = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
      if (overlap <= 0) continue;
      if (2 * overlap >= std::min(a.width(), b.width())) parent[find(i)] = find(j);
    }
  }
  std::vector<GlyphRegion> regions;
  std::vector<std::size_t> slot(n, static_cast<std::size_t>(-1));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = find(i);
    if (slot[root] == static_cast<std::size_t>(-1)) {
      slot[root] = regions.size();
      regions.push_back({comps[i].box.x0, comps[i].box.x1, 0, {}});
    }
    auto& r = regions[slot[root]];
    r.x0 = std::min(r.x0, comps[i].box.x0);
    r.x1 = std::max(r.x1, comps[i].box.x1);
    r.ink += comps[i].pixels.size();
    r.pixels.insert(r.pixels.end(), comps[i].pixels.begin(), comps[i].pixels.end());
  }
  return regions;
}

/// Mismatch count of a region crop against a glyph, both left-aligned and
/// padded to the wider of the two.
inline std::size_t hamming(const BinaryMask& crop, const BinaryMask& glyph) {
  const int width = std::max(crop.width(), glyph.width());
  std::size_t d = 0;
  for (int y = 0; y < crop.height(); ++y)
    for (int x = 0; x < width; ++x)
      if (crop.get_or_zero(x, y) != glyph.get_or_zero(x, y)) ++d;
  return d;
}

}  // namespace detail

/// Nearest atlas token for a frame-height bitmap; ties go to the
/// lexicographically smallest token.
inline const std::string& nearest_token(const GlyphAtlas& atlas, const BinaryMask& crop) {
  const std::string* best = nullptr;
  std::size_t best_d = std::numeric_limits<std::size_t>::max();
  for (const auto& [token, glyph] : atlas.entries()) {
    const std::size_t d = detail::hamming(crop, glyph);
    if (d < best_d) {
      best_d = d;
      best = &token;
    }
  }
  return *best;
}

/// Deterministic template-matching OCR over a glyph atlas.
///
/// The image is brought to the atlas canvas height (nearest neighbour),
/// binarised, and split into 8-connected components. Components are merged
/// into glyph regions by horizontal overlap; regions with fewer ink pixels
/// than the atlas speck limit are ignored. Each region is cropped to the
/// glyph frame rows and matched by Hamming distance. Regions are read left
/// to right.
inline std::string toy_recognize(const GlyphAtlas& atlas, const GrayImage& input,
                                 int threshold = kDefaultThreshold) {
  const int canvas_h = atlas.canvas_height();
  GrayImage img = input;
  if (img.height() != canvas_h) {
    const auto w = std::max<std::int64_t>(
        1, (static_cast<std::int64_t>(img.width()) * canvas_h + img.height() / 2) / img.height());
    img = resize_nearest(img, static_cast<int>(w), canvas_h);
  }
  auto regions = detail::merge_components(connected_components(binarize(img, threshold)));
  std::erase_if(regions, [&](const detail::GlyphRegion& r) {
    return r.ink < static_cast<std::size_t>(atlas.min_region_pixels());
  });
  std::sort(regions.begin(), regions.end(),
            [](const detail::GlyphRegion& a, const detail::GlyphRegion& b) {
              return std::tie(a.x0, a.x1) < std::tie(b.x0, b.x1);
            });

  const int top = atlas.layout().margin_top;
  std::string latex;
  for (const auto& r : regions) {
    BinaryMask crop(r.x1 - r.x0, atlas.glyph_height());
    for (const auto& p : r.pixels) {
      const int fy = p.y - top;
      if (fy >= 0 && fy < atlas.glyph_height()) crop.set(p.x - r.x0, fy, true);
    }
    latex += nearest_token(atlas, crop);
  }
  return latex;
}

class ToyOracle final : public VictimOracle {
 public:
  ToyOracle(std::shared_ptr<const GlyphAtlas> atlas, std::uint64_t query_budget,
            int threshold = kDefaultThreshold)
      : VictimOracle(query_budget), atlas_(std::move(atlas)), threshold_(threshold) {
    if (!atlas_) throw InputError("toy oracle needs an atlas");
  }

  const GlyphAtlas& atlas() const { return *atlas_; }

 protected:
  std::string transcribe(const GrayImage& img) override {
    return toy_recognize(*atlas_, img, threshold_);
  }

 private:
  std::shared_ptr<const GlyphAtlas> atlas_;
  int threshold_;
};

}  // namespace skelattack
