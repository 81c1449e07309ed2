#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skelattack/errors.hpp"
#include "skelattack/image.hpp"
#include "skelattack/metrics.hpp"
#include "skelattack/png_io.hpp"

namespace skelattack {

/// Where glyph frames sit on a rendered line.
struct GlyphLayout {
  int margin_top = 14;
  int margin_bottom = 14;
  int margin_side = 8;
  int gap = 4;

  friend bool operator==(const GlyphLayout&, const GlyphLayout&) = default;
};

/// Token text -> glyph bitmap. Every bitmap spans the full glyph frame
/// vertically (so vertical placement, e.g. superscripts, is part of the
/// glyph) and is trimmed horizontally to its ink.
class GlyphAtlas {
 public:
  static constexpr std::string_view kFormat = "skelattack-atlas-1";

  explicit GlyphAtlas(int glyph_height, GlyphLayout layout = {}, int min_region_pixels = 1,
                      std::string id = "custom")
      : glyph_height_(glyph_height),
        layout_(layout),
        min_region_pixels_(min_region_pixels),
        id_(std::move(id)) {
    if (glyph_height <= 0) throw InputError("atlas glyph height must be positive");
  }

  void add(const std::string& token, const BinaryMask& glyph) {
    if (token.empty()) throw InputError("atlas token text must be non-empty");
    if (glyph.height() != glyph_height_) {
      throw InputError("atlas glyph '" + token + "' has height " +
                       std::to_string(glyph.height()) + ", expected " +
                       std::to_string(glyph_height_));
    }
    BinaryMask trimmed = trim_columns(glyph);
    if (trimmed.width() == 0) throw InputError("atlas glyph '" + token + "' is empty");
    if (!entries_.emplace(token, std::move(trimmed)).second) {
      throw InputError("duplicate atlas token '" + token + "'");
    }
    segments_.clear();
  }

  int glyph_height() const { return glyph_height_; }
  const GlyphLayout& layout() const { return layout_; }
  int min_region_pixels() const { return min_region_pixels_; }
  int canvas_height() const { return layout_.margin_top + glyph_height_ + layout_.margin_bottom; }
  const std::string& id() const { return id_; }
  std::size_t size() const { return entries_.size(); }

  bool contains(const std::string& token) const { return entries_.count(token) != 0; }

  const BinaryMask& glyph(const std::string& token) const {
    auto it = entries_.find(token);
    if (it == entries_.end()) throw InputError("token '" + token + "' is not in the atlas");
    return it->second;
  }

  /// Lexicographically ordered entries.
  const std::map<std::string, BinaryMask>& entries() const { return entries_; }

  std::vector<std::string> tokens() const {
    std::vector<std::string> out;
    for (const auto& [t, g] : entries_) out.push_back(t);
    return out;
  }

  /// Splits a LaTeX token sequence into atlas entries by greedy longest
  /// match, since an entry such as `^{2}` spans several tokens.
  std::vector<std::string> segment(const TokenSeq& tokens) const {
    if (segments_.empty()) {
      for (const auto& [t, g] : entries_) segments_.push_back(tokenize(t));
      std::sort(segments_.begin(), segments_.end(),
                [](const TokenSeq& a, const TokenSeq& b) { return a.size() > b.size(); });
    }
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < tokens.size()) {
      bool matched = false;
      for (const auto& seg : segments_) {
        if (i + seg.size() > tokens.size()) continue;
        if (std::equal(seg.begin(), seg.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
          out.push_back(detokenize(seg));
          i += seg.size();
          matched = true;
          break;
        }
      }
      if (!matched) throw InputError("token '" + tokens[i] + "' has no atlas glyph");
    }
    return out;
  }

  static GlyphAtlas builtin();

  static GlyphAtlas load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

 private:
  static BinaryMask trim_columns(const BinaryMask& g) {
    int lo = g.width();
    int hi = -1;
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x)
        if (g.get(x, y)) {
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
    if (hi < lo) return BinaryMask(0, g.height());
    BinaryMask out(hi - lo + 1, g.height());
    for (int y = 0; y < g.height(); ++y)
      for (int x = lo; x <= hi; ++x) out.set(x - lo, y, g.get(x, y));
    return out;
  }

  int glyph_height_;
  GlyphLayout layout_;
  int min_region_pixels_;
  std::string id_;
  std::map<std::string, BinaryMask> entries_;
  mutable std::vector<TokenSeq> segments_;
};

/// Percent-encodes everything outside the RFC 3986 unreserved set.
inline std::string url_encode(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    const bool unreserved = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
                            (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.' ||
                            c == '~';
    if (unreserved) {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof(buf), "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

namespace detail {

// 15-row body art, '#' is ink. Lowercase letters sit on the x-height rows.
struct GlyphArt {
  const char* token;
  std::vector<std::string_view> rows;
};

inline const std::vector<GlyphArt>& builtin_art() {
  static const std::vector<GlyphArt> art = {
      {"0", {".......", "..###..", ".#...#.", "#.....#", "#.....#", "#.....#", "#.....#",
             "#.....#", "#.....#", "#.....#", "#.....#", "#.....#", ".#...#.", "..###..",
             "......."}},
      {"1", {".......", "...#...", "..##...", ".#.#...", "...#...", "...#...", "...#...",
             "...#...", "...#...", "...#...", "...#...", "...#...", "...#...", ".#####.",
             "......."}},
      {"2", {".......", "..###..", ".#...#.", "#.....#", "......#", "......#", ".....#.",
             "....#..", "...#...", "..#....", ".#.....", "#......", "#......", "#######",
             "......."}},
      {"3", {".......", ".####..", "#....#.", "......#", "......#", ".....#.", "..###..",
             ".....#.", "......#", "......#", "......#", "#.....#", ".#...#.", "..###..",
             "......."}},
      {"4", {".......", ".....#.", "....##.", "...#.#.", "..#..#.", ".#...#.", "#....#.",
             "#....#.", "#######", ".....#.", ".....#.", ".....#.", ".....#.", ".....#.",
             "......."}},
      {"5", {".......", "#######", "#......", "#......", "#......", "#.###..", "##...#.",
             "......#", "......#", "......#", "......#", "#.....#", ".#...#.", "..###..",
             "......."}},
      {"6", {".......", "..###..", ".#...#.", "#......", "#......", "#......", "#.###..",
             "##...#.", "#.....#", "#.....#", "#.....#", "#.....#", ".#...#.", "..###..",
             "......."}},
      {"7", {".......", "#######", "......#", ".....#.", ".....#.", "....#..", "....#..",
             "...#...", "...#...", "..#....", "..#....", "..#....", "..#....", "..#....",
             "......."}},
      {"8", {".......", "..###..", ".#...#.", "#.....#", "#.....#", ".#...#.", "..###..",
             ".#...#.", "#.....#", "#.....#", "#.....#", "#.....#", ".#...#.", "..###..",
             "......."}},
      {"9", {".......", "..###..", ".#...#.", "#.....#", "#.....#", "#.....#", "#.....#",
             ".#...##", "..###.#", "......#", "......#", "......#", ".#...#.", "..###..",
             "......."}},
      {"a", {".......", ".......", ".......", ".......", ".......", ".####..", ".....#.",
             ".....#.", "..####.", ".#...#.", "#....#.", "#....#.", ".#..##.", "..##..#",
             "......."}},
      {"b", {".......", "#......", "#......", "#......", "#......", "#.###..", "##...#.",
             "#.....#", "#.....#", "#.....#", "#.....#", "#.....#", "##...#.", "#.###..",
             "......."}},
      {"c", {".......", ".......", ".......", ".......", ".......", "..####.", ".#....#",
             "#......", "#......", "#......", "#......", "#......", ".#....#", "..####.",
             "......."}},
      {"n", {".......", ".......", ".......", ".......", ".......", "#.###..", "##...#.",
             "#.....#", "#.....#", "#.....#", "#.....#", "#.....#", "#.....#", "#.....#",
             "......."}},
      {"x", {".......", ".......", ".......", ".......", ".......", "#.....#", "#.....#",
             ".#...#.", "..#.#..", "...#...", "..#.#..", ".#...#.", "#.....#", "#.....#",
             "......."}},
      {"y", {".......", ".......", ".......", ".......", ".......", "#.....#", ".#...#.",
             ".#...#.", "..#.#..", "..#.#..", "...#...", "...#...", "..#....", ".#.....",
             "#......"}},
      {"z", {".......", ".......", ".......", ".......", ".......", "#######", "......#",
             ".....#.", "....#..", "...#...", "..#....", ".#.....", "#......", "#######",
             "......."}},
      {"+", {".........", ".........", ".........", ".........", ".........", "....#....",
             "....#....", "....#....", "....#....", "#########", "....#....", "....#....",
             "....#....", "....#....", "........."}},
      {"-", {".........", ".........", ".........", ".........", ".........", ".........",
             ".........", ".........", ".........", "#########", ".........", ".........",
             ".........", ".........", "........."}},
      {"=", {".........", ".........", ".........", ".........", ".........", ".........",
             ".........", "#########", ".........", ".........", ".........", "#########",
             ".........", ".........", "........."}},
      {"<", {".....", ".....", ".....", ".....", ".....", "....#", "...#.", "..#..", ".#...",
             "#....", ".#...", "..#..", "...#.", "....#", "....."}},
      {">", {".....", ".....", ".....", ".....", ".....", "#....", ".#...", "..#..", "...#.",
             "....#", "...#.", "..#..", ".#...", "#....", "....."}},
      {"(", {"....", "...#", "..#.", ".#..", ".#..", "#...", "#...", "#...", "#...", "#...",
             "#...", ".#..", ".#..", "..#.", "...#"}},
      {")", {"....", "#...", ".#..", "..#.", "..#.", "...#", "...#", "...#", "...#", "...#",
             "...#", "..#.", "..#.", ".#..", "#..."}},
  };
  return art;
}

inline constexpr int kBodyRows = 15;
inline constexpr int kSuperscriptRaise = 7;

inline BinaryMask art_to_mask(const std::vector<std::string_view>& rows, int frame_height,
                              int row_offset) {
  const int width = static_cast<int>(rows.front().size());
  BinaryMask m(width, frame_height);
  for (int y = 0; y < static_cast<int>(rows.size()); ++y)
    for (int x = 0; x < width; ++x)
      if (rows[y][x] == '#') m.set(x, y + row_offset, true);
  return m;
}

}  // namespace detail

/// Hand-drawn 1-pixel-stroke font: digits, a few variables, operators,
/// relations, parentheses, and raised superscript digits `^{2}` / `^{3}`.
inline GlyphAtlas GlyphAtlas::builtin() {
  const int frame = detail::kBodyRows + detail::kSuperscriptRaise;
  GlyphAtlas atlas(frame, GlyphLayout{}, 3, "builtin-v1");
  for (const auto& g : detail::builtin_art()) {
    atlas.add(g.token, detail::art_to_mask(g.rows, frame, detail::kSuperscriptRaise));
  }
  for (const char* digit : {"2", "3"}) {
    const auto& art = *std::find_if(detail::builtin_art().begin(), detail::builtin_art().end(),
                                    [&](const detail::GlyphArt& g) {
                                      return std::string_view(g.token) == digit;
                                    });
    atlas.add(std::string("^{") + digit + "}", detail::art_to_mask(art.rows, frame, 0));
  }
  return atlas;
}

inline void GlyphAtlas::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = kFormat;
  manifest["id"] = id_;
  manifest["glyph_height"] = glyph_height_;
  manifest["layout"] = {{"margin_top", layout_.margin_top},
                        {"margin_bottom", layout_.margin_bottom},
                        {"margin_side", layout_.margin_side},
                        {"gap", layout_.gap}};
  manifest["min_region_pixels"] = min_region_pixels_;
  manifest["tokens"] = tokens();
  for (const auto& [token, glyph] : entries_) {
    GrayImage img(glyph.width(), glyph.height(), 255);
    for (int y = 0; y < glyph.height(); ++y)
      for (int x = 0; x < glyph.width(); ++x)
        if (glyph.get(x, y)) img.at(x, y) = 0;
    png::write_bilevel(dir / (url_encode(token) + ".png"), img);
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw InputError("cannot write atlas manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

inline GlyphAtlas GlyphAtlas::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw InputError("atlas manifest not found in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
    GlyphLayout layout;
    if (manifest.contains("layout")) {
      const auto& l = manifest.at("layout");
      layout.margin_top = l.value("margin_top", layout.margin_top);
      layout.margin_bottom = l.value("margin_bottom", layout.margin_bottom);
      layout.margin_side = l.value("margin_side", layout.margin_side);
      layout.gap = l.value("gap", layout.gap);
    }
    GlyphAtlas atlas(manifest.at("glyph_height").get<int>(), layout,
                     manifest.value("min_region_pixels", 3),
                     manifest.value("id", dir.filename().string()));
    for (const auto& tok : manifest.at("tokens")) {
      const std::string token = tok.get<std::string>();
      const GrayImage img = png::read(dir / (url_encode(token) + ".png"));
      atlas.add(token, binarize(img, kDefaultThreshold));
    }
    return atlas;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed atlas manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace skelattack
