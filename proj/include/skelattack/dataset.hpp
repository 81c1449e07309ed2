#pragma once

#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skelattack/atlas.hpp"
#include "skelattack/errors.hpp"
#include "skelattack/image.hpp"
#include "skelattack/metrics.hpp"
#include "skelattack/png_io.hpp"
#include "skelattack/util.hpp"

namespace skelattack {

inline constexpr std::string_view kGeneratorVersion = "skelattack-dataset-1";
inline constexpr int kTargetHeight = 50;

struct FormulaSpec {
  std::string id;
  std::string latex;
  TokenSeq tokens;
  std::uint64_t seed = 0;
};

/// Linear expressions `side rel side`, where a side is one to
/// `max_terms_per_side` terms joined by binary operators and a term is a
/// variable with optional coefficient and superscript, a one- or two-digit
/// number, or a parenthesised `(var op digit)` with optional superscript.
struct FormulaGrammar {
  std::vector<std::string> variables{"a", "b", "c", "n", "x", "y", "z"};
  std::vector<std::string> digits{"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
  std::vector<std::string> binary_ops{"+", "-"};
  std::vector<std::string> relations{"=", "<", ">"};
  std::vector<std::string> superscripts{"^{2}", "^{3}"};
  int max_terms_per_side = 3;
  bool parentheses = true;
  std::size_t min_tokens = 5;
  std::size_t max_tokens = 15;
  /// Give up after this many consecutive draws that add nothing new.
  std::size_t max_stale_draws = 20000;
};

namespace detail {

class FormulaSampler {
 public:
  FormulaSampler(const FormulaGrammar& g, std::uint64_t seed) : g_(g), rng_(seed) {}

  std::string formula() { return side() + pick(g_.relations) + side(); }

 private:
  const std::string& pick(const std::vector<std::string>& from) {
    std::uniform_int_distribution<std::size_t> d(0, from.size() - 1);
    return from[d(rng_)];
  }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }

  std::string nonzero_digit() {
    std::vector<std::string> nz;
    for (const auto& d : g_.digits)
      if (d != "0") nz.push_back(d);
    return nz.empty() ? pick(g_.digits) : pick(nz);
  }

  std::string term() {
    std::uniform_int_distribution<int> kind(0, g_.parentheses ? 2 : 1);
    switch (kind(rng_)) {
      case 0: {
        std::string t;
        if (chance(0.4)) t += nonzero_digit();
        t += pick(g_.variables);
        if (!g_.superscripts.empty() && chance(0.3)) t += pick(g_.superscripts);
        return t;
      }
      case 1: {
        std::string t = nonzero_digit();
        if (chance(0.35)) t += pick(g_.digits);
        return t;
      }
      default: {
        std::string t = "(" + pick(g_.variables) + pick(g_.binary_ops) + nonzero_digit() + ")";
        if (!g_.superscripts.empty() && chance(0.5)) t += pick(g_.superscripts);
        return t;
      }
    }
  }

  std::string side() {
    std::uniform_int_distribution<int> terms(1, std::max(1, g_.max_terms_per_side));
    std::string s = term();
    for (int i = terms(rng_); i > 1; --i) s += pick(g_.binary_ops) + term();
    return s;
  }

  const FormulaGrammar& g_;
  std::mt19937_64 rng_;
};

}  // namespace detail

inline std::string formula_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "eq%03zu", i);
  return buf;
}

/// n distinct formulas; draw i uses its own seed mixed from (seed, i) so a
/// formula can be regenerated in isolation.
inline std::vector<FormulaSpec> generate_formulas(std::size_t n, std::uint64_t seed,
                                                  const FormulaGrammar& grammar = {}) {
  if (n == 0) throw InputError("generate_formulas: n must be >= 1");
  std::vector<FormulaSpec> out;
  std::set<std::string> seen;
  std::size_t stale = 0;
  for (std::uint64_t draw = 0; out.size() < n; ++draw) {
    const std::uint64_t s = mix_seed(seed, draw);
    detail::FormulaSampler sampler(grammar, s);
    std::string latex = sampler.formula();
    TokenSeq tokens = tokenize(latex);
    if (tokens.size() >= grammar.min_tokens && tokens.size() <= grammar.max_tokens &&
        seen.insert(latex).second) {
      out.push_back({formula_id(out.size()), std::move(latex), std::move(tokens), s});
      stale = 0;
    } else if (++stale >= grammar.max_stale_draws) {
      throw GenerationError("grammar exhausted after " + std::to_string(out.size()) +
                            " distinct formulas (wanted " + std::to_string(n) + ")");
    }
  }
  return out;
}

/// Lays glyphs left to right on a white canvas of the atlas geometry, then
/// scales to target_height with nearest-neighbour sampling.
inline GrayImage render(const FormulaSpec& spec, const GlyphAtlas& atlas,
                        int target_height = kTargetHeight) {
  const auto glyphs = atlas.segment(spec.tokens);
  const auto& layout = atlas.layout();
  int width = 2 * layout.margin_side;
  for (std::size_t i = 0; i < glyphs.size(); ++i) {
    width += atlas.glyph(glyphs[i]).width() + (i > 0 ? layout.gap : 0);
  }
  GrayImage canvas(width, atlas.canvas_height(), 255);
  int x = layout.margin_side;
  for (const auto& token : glyphs) {
    const BinaryMask& g = atlas.glyph(token);
    for (int gy = 0; gy < g.height(); ++gy)
      for (int gx = 0; gx < g.width(); ++gx)
        if (g.get(gx, gy)) canvas.at(x + gx, layout.margin_top + gy) = 0;
    x += g.width() + layout.gap;
  }
  if (canvas.height() == target_height) return canvas;
  const auto scaled_w = std::max<long>(
      1, std::lround(static_cast<double>(width) * target_height / canvas.height()));
  return resize_nearest(canvas, static_cast<int>(scaled_w), target_height);
}

struct ManifestEntry {
  FormulaSpec spec;
  std::string path;  // relative to the manifest directory
  std::string sha256;
  int width = 0;
  int height = 0;
};

struct DatasetManifest {
  std::string generator_version{kGeneratorVersion};
  std::string atlas_id;
  std::string atlas_path;  // relative to the manifest directory
  std::uint64_t seed = 0;
  int target_height = kTargetHeight;
  std::vector<ManifestEntry> entries;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["generator_version"] = generator_version;
    j["atlas"] = atlas_id;
    j["atlas_path"] = atlas_path;
    j["seed"] = seed;
    j["target_height"] = target_height;
    j["images"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
      nlohmann::ordered_json row;
      row["id"] = e.spec.id;
      row["latex"] = e.spec.latex;
      row["tokens"] = e.spec.tokens;
      row["seed"] = e.spec.seed;
      row["path"] = e.path;
      row["width"] = e.width;
      row["height"] = e.height;
      row["sha256"] = e.sha256;
      j["images"].push_back(std::move(row));
    }
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
      m.generator_version = j.at("generator_version").get<std::string>();
      m.atlas_id = j.at("atlas").get<std::string>();
      m.atlas_path = j.value("atlas_path", std::string{});
      m.seed = j.at("seed").get<std::uint64_t>();
      m.target_height = j.value("target_height", kTargetHeight);
      std::set<std::string> ids;
      for (const auto& row : j.at("images")) {
        ManifestEntry e;
        e.spec.id = row.at("id").get<std::string>();
        e.spec.latex = row.at("latex").get<std::string>();
        e.spec.tokens = row.at("tokens").get<TokenSeq>();
        e.spec.seed = row.value("seed", std::uint64_t{0});
        e.path = row.at("path").get<std::string>();
        e.width = row.value("width", 0);
        e.height = row.value("height", 0);
        e.sha256 = row.value("sha256", std::string{});
        if (!ids.insert(e.spec.id).second) throw InputError("duplicate image id " + e.spec.id);
        m.entries.push_back(std::move(e));
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("malformed dataset manifest: ") + e.what());
    }
    return m;
  }
};

/// Renders `formulas`, writes images/, atlas/ and manifest.json under
/// out_dir, and returns the manifest path.
inline std::filesystem::path write_dataset(const std::vector<FormulaSpec>& formulas,
                                           const GlyphAtlas& atlas, std::uint64_t seed,
                                           const std::filesystem::path& out_dir,
                                           int target_height = kTargetHeight) {
  DatasetManifest manifest;
  manifest.atlas_id = atlas.id();
  manifest.atlas_path = "atlas";
  manifest.seed = seed;
  manifest.target_height = target_height;
  atlas.save(out_dir / "atlas");
  for (const auto& f : formulas) {
    const GrayImage img = render(f, atlas, target_height);
    const auto bytes = png::encode(img);
    ManifestEntry e;
    e.spec = f;
    e.path = "images/" + f.id + ".png";
    e.sha256 = sha256_hex(bytes);
    e.width = img.width();
    e.height = img.height();
    png::write_bytes(out_dir / e.path, bytes);
    manifest.entries.push_back(std::move(e));
  }
  const auto path = out_dir / "manifest.json";
  write_file_text(path, manifest.to_json().dump(2) + "\n");
  return path;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw InputError("dataset manifest not found: " + path.string());
  }
  try {
    return DatasetManifest::from_json(nlohmann::json::parse(read_file_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("dataset manifest is not valid JSON: " + std::string(e.what()));
  }
}

/// Loads one manifest image, checking its recorded hash.
inline GrayImage load_dataset_image(const std::filesystem::path& manifest_dir,
                                    const ManifestEntry& e) {
  const auto bytes = read_file_bytes(manifest_dir / e.path);
  if (!e.sha256.empty() && sha256_hex(bytes) != e.sha256) {
    throw InputError("hash mismatch for dataset image " + e.path);
  }
  return png::decode(bytes);
}

}  // namespace skelattack
