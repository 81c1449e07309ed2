#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "skelattack/errors.hpp"
#include "skelattack/image.hpp"

namespace skelattack {

/// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool contains(PixelCoord c) const { return c.x >= x0 && c.x < x1 && c.y >= y0 && c.y < y1; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Top-to-bottom, then left-to-right; (x1,y1) breaks exact ties.
inline bool box_order_less(const BoundingBox& a, const BoundingBox& b) {
  return std::tie(a.y0, a.x0, a.x1, a.y1) < std::tie(b.y0, b.x0, b.x1, b.y1);
}

struct Component {
  BoundingBox box;
  std::vector<PixelCoord> pixels;
};

/// 8-connected foreground components, discovered in raster order of their
/// first pixel.
inline std::vector<Component> connected_components(const BinaryMask& mask) {
  std::vector<Component> out;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(mask.width()) * mask.height(), 0);
  auto idx = [&](int x, int y) { return static_cast<std::size_t>(y) * mask.width() + x; };
  std::queue<PixelCoord> frontier;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.get(x, y) || seen[idx(x, y)]) continue;
      Component comp;
      comp.box = {x, y, x + 1, y + 1};
      seen[idx(x, y)] = 1;
      frontier.push({x, y});
      while (!frontier.empty()) {
        const PixelCoord p = frontier.front();
        frontier.pop();
        comp.pixels.push_back(p);
        comp.box.x0 = std::min(comp.box.x0, p.x);
        comp.box.y0 = std::min(comp.box.y0, p.y);
        comp.box.x1 = std::max(comp.box.x1, p.x + 1);
        comp.box.y1 = std::max(comp.box.y1, p.y + 1);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = p.x + dx;
            const int ny = p.y + dy;
            if (!mask.contains(nx, ny) || !mask.get(nx, ny) || seen[idx(nx, ny)]) continue;
            seen[idx(nx, ny)] = 1;
            frontier.push({nx, ny});
          }
        }
      }
      std::sort(comp.pixels.begin(), comp.pixels.end(),
                [](PixelCoord a, PixelCoord b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); });
      out.push_back(std::move(comp));
    }
  }
  return out;
}

/// One tight box per 8-connected component, in canonical box order.
inline std::vector<BoundingBox> detect_character_boxes(const BinaryMask& mask) {
  std::vector<BoundingBox> boxes;
  for (auto& comp : connected_components(mask)) boxes.push_back(comp.box);
  std::sort(boxes.begin(), boxes.end(), box_order_less);
  return boxes;
}

/// Zhang-Suen thinning. Runs both sub-iterations until a full pass deletes
/// nothing; pixels outside the mask count as background.
inline BinaryMask skeletonize(const BinaryMask& mask) {
  BinaryMask cur = mask;
  std::vector<PixelCoord> doomed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      doomed.clear();
      for (int y = 0; y < cur.height(); ++y) {
        for (int x = 0; x < cur.width(); ++x) {
          if (!cur.get(x, y)) continue;
          // P2..P9 clockwise starting north.
          const std::array<int, 8> p = {
              cur.get_or_zero(x, y - 1),     cur.get_or_zero(x + 1, y - 1),
              cur.get_or_zero(x + 1, y),     cur.get_or_zero(x + 1, y + 1),
              cur.get_or_zero(x, y + 1),     cur.get_or_zero(x - 1, y + 1),
              cur.get_or_zero(x - 1, y),     cur.get_or_zero(x - 1, y - 1)};
          int neighbours = 0;
          int transitions = 0;
          for (int i = 0; i < 8; ++i) {
            neighbours += p[i];
            if (p[i] == 0 && p[(i + 1) % 8] == 1) ++transitions;
          }
          if (neighbours < 2 || neighbours > 6 || transitions != 1) continue;
          const int n = p[0], e = p[2], s = p[4], w = p[6];
          const bool cond = pass == 0 ? (n * e * s == 0 && e * s * w == 0)
                                      : (n * e * w == 0 && n * s * w == 0);
          if (cond) doomed.push_back({x, y});
        }
      }
      for (const auto& c : doomed) cur.set(c.x, c.y, false);
      if (!doomed.empty()) changed = true;
    }
  }
  return cur;
}

enum class NarrowingMode { FullImage, CharacterArea, SkeletonizedArea };

inline std::string_view to_string(NarrowingMode mode) {
  switch (mode) {
    case NarrowingMode::FullImage:
      return "full";
    case NarrowingMode::CharacterArea:
      return "character";
    case NarrowingMode::SkeletonizedArea:
      return "skeleton";
  }
  return "?";
}

inline NarrowingMode parse_narrowing_mode(std::string_view s) {
  if (s == "full") return NarrowingMode::FullImage;
  if (s == "character") return NarrowingMode::CharacterArea;
  if (s == "skeleton") return NarrowingMode::SkeletonizedArea;
  throw InputError("unknown narrowing mode '" + std::string(s) +
                   "' (expected full, character or skeleton)");
}

/// Orders coords box-major: boxes top-to-bottom then left-to-right, pixels
/// row-major inside a box. A coord lying in several overlapping boxes belongs
/// to the first of them in box order. Duplicates are dropped.
inline std::vector<PixelCoord> canonical_order(std::span<const BoundingBox> boxes,
                                               std::span<const PixelCoord> coords) {
  std::vector<BoundingBox> sorted(boxes.begin(), boxes.end());
  std::sort(sorted.begin(), sorted.end(), box_order_less);

  struct Keyed {
    std::size_t box;
    PixelCoord c;
  };
  std::vector<Keyed> keyed;
  keyed.reserve(coords.size());
  for (const auto& c : coords) {
    auto it = std::find_if(sorted.begin(), sorted.end(),
                           [&](const BoundingBox& b) { return b.contains(c); });
    if (it == sorted.end()) {
      throw InternalError("canonical_order: coordinate (" + std::to_string(c.x) + "," +
                          std::to_string(c.y) + ") lies outside every box");
    }
    keyed.push_back({static_cast<std::size_t>(it - sorted.begin()), c});
  }
  std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    return std::tie(a.box, a.c.y, a.c.x) < std::tie(b.box, b.c.y, b.c.x);
  });
  std::vector<PixelCoord> out;
  out.reserve(keyed.size());
  for (const auto& k : keyed) {
    if (!out.empty() && out.back() == k.c) continue;
    out.push_back(k.c);
  }
  // Same pixel keyed under one box only, so adjacent dedup suffices.
  return out;
}

/// The ordered pixels an attack may touch.
struct SearchSpace {
  NarrowingMode mode = NarrowingMode::FullImage;
  std::vector<PixelCoord> coords;
  int width = 0;
  int height = 0;

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }

  std::vector<PixelCoord> resolve(std::span<const std::size_t> indices) const {
    std::vector<PixelCoord> out;
    out.reserve(indices.size());
    for (auto i : indices) {
      if (i >= coords.size()) throw InputError("search space index out of range");
      out.push_back(coords[i]);
    }
    return out;
  }
};

inline SearchSpace build_search_space(const GrayImage& img, NarrowingMode mode,
                                      int threshold = kDefaultThreshold) {
  SearchSpace space;
  space.mode = mode;
  space.width = img.width();
  space.height = img.height();

  if (mode == NarrowingMode::FullImage) {
    space.coords.reserve(img.size());
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) space.coords.push_back({x, y});
    return space;
  }

  const BinaryMask mask = binarize(img, threshold);
  const auto boxes = detect_character_boxes(mask);
  if (boxes.empty()) {
    throw EmptySearchSpace(std::string("no ink found for ") + std::string(to_string(mode)) +
                           " search space");
  }

  std::vector<PixelCoord> candidates;
  if (mode == NarrowingMode::CharacterArea) {
    BinaryMask covered(img.width(), img.height());
    for (const auto& b : boxes)
      for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) covered.set(x, y, true);
    candidates = covered.foreground();
  } else {
    candidates = skeletonize(mask).foreground();
  }
  space.coords = canonical_order(boxes, candidates);
  if (space.coords.empty()) {
    throw EmptySearchSpace("skeleton search space is empty");
  }
  return space;
}

/// Debug rendering: the image is faded towards white and attackable pixels
/// are drawn black.
inline GrayImage search_space_overlay(const GrayImage& img, const SearchSpace& space) {
  GrayImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(x, y) = static_cast<std::uint8_t>(176 + img.at(x, y) * 79 / 255);
  for (const auto& c : space.coords) out.at(c) = 0;
  return out;
}

}  // namespace skelattack
