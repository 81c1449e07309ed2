#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skelattack/attack.hpp"
#include "skelattack/dataset.hpp"
#include "skelattack/errors.hpp"
#include "skelattack/png_io.hpp"
#include "skelattack/trace_io.hpp"

namespace skelattack {

inline constexpr std::string_view kAccuracyNote =
    "Accuracy is the length of the longest common subsequence of the clean and "
    "adversarial LaTeX (whitespace removed), divided by the clean length.";

struct Annotation {
  std::string image_id;
  bool semantic_changed = false;
  std::string note;
  std::optional<bool> original_semantic_changed;
};

/// Accepts `{"annotations": [...]}` or a bare array of
/// `{image_id, semantic_changed, note?, original_semantic_changed?}`.
inline std::vector<Annotation> parse_annotations(const nlohmann::json& j) {
  const nlohmann::json* rows = &j;
  if (j.is_object()) {
    if (!j.contains("annotations")) throw InputError("annotation file lacks 'annotations'");
    rows = &j["annotations"];
  }
  if (!rows->is_array()) throw InputError("annotations must be an array");
  std::vector<Annotation> out;
  std::set<std::string> seen;
  try {
    for (const auto& r : *rows) {
      Annotation a;
      a.image_id = r.at("image_id").get<std::string>();
      a.semantic_changed = r.at("semantic_changed").get<bool>();
      a.note = r.value("note", std::string{});
      if (r.contains("original_semantic_changed") && !r["original_semantic_changed"].is_null())
        a.original_semantic_changed = r["original_semantic_changed"].get<bool>();
      if (!seen.insert(a.image_id).second)
        throw InputError("image '" + a.image_id + "' is annotated twice");
      out.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed annotation file: ") + e.what());
  }
  return out;
}

inline std::vector<Annotation> load_annotations(const std::filesystem::path& path) {
  try {
    return parse_annotations(nlohmann::json::parse(read_file_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("annotation file is not valid JSON: " + std::string(e.what()));
  }
}

/// Throws InputError naming every annotated id absent from `known_ids`.
inline void check_annotation_ids(const std::vector<Annotation>& annotations,
                                 const std::set<std::string>& known_ids) {
  std::vector<std::string> unknown;
  for (const auto& a : annotations)
    if (!known_ids.contains(a.image_id)) unknown.push_back(a.image_id);
  if (unknown.empty()) return;
  std::string msg = "annotation ids not in the dataset manifest:";
  for (const auto& id : unknown) msg += " " + id;
  throw InputError(msg);
}

struct SemanticChangeRow {
  OptimizerKind optimizer;
  NarrowingMode mode;
  std::size_t k;
  std::size_t annotated = 0;
  std::optional<double> original_semantic_rate;
  double original_character_cosine = 0.0;
  double attacked_semantic_rate = 0.0;
  double attacked_character_cosine = 0.0;
};

/// Semantic-change rates from annotations plus ground-truth cosine of the
/// clean and adversarial outputs, one row per (optimizer, mode, k).
inline std::vector<SemanticChangeRow> semantic_change_rows(const std::vector<AttackTrace>& traces,
                                          const std::vector<Annotation>& annotations) {
  std::map<std::string, const Annotation*> by_id;
  for (const auto& a : annotations) by_id[a.image_id] = &a;

  struct Acc {
    SemanticChangeRow row;
    std::size_t with_metrics = 0;
    std::size_t changed = 0;
    std::size_t original_known = 0;
    std::size_t original_changed = 0;
  };
  using Key = std::tuple<OptimizerKind, NarrowingMode, std::size_t>;
  std::map<Key, Acc> acc;
  for (const auto& t : traces) {
    if (!t.has_metrics()) continue;
    const Key key{t.config.optimizer.kind, t.config.mode, t.config.k};
    auto& a = acc[key];
    a.row.optimizer = t.config.optimizer.kind;
    a.row.mode = t.config.mode;
    a.row.k = t.config.k;
    ++a.with_metrics;
    const std::string clean = t.clean_output ? t.clean_output->latex : std::string{};
    a.row.original_character_cosine += cosine_similarity(t.ground_truth, clean);
    a.row.attacked_character_cosine += cosine_similarity(t.ground_truth, t.final_latex);
    const auto it = by_id.find(t.image_id);
    if (it == by_id.end()) continue;
    ++a.row.annotated;
    if (it->second->semantic_changed) ++a.changed;
    if (it->second->original_semantic_changed) {
      ++a.original_known;
      if (*it->second->original_semantic_changed) ++a.original_changed;
    }
  }
  std::vector<SemanticChangeRow> out;
  for (auto& [key, a] : acc) {
    const double n = static_cast<double>(a.with_metrics);
    a.row.original_character_cosine /= n;
    a.row.attacked_character_cosine /= n;
    if (a.row.annotated > 0)
      a.row.attacked_semantic_rate = static_cast<double>(a.changed) / a.row.annotated;
    if (a.original_known > 0)
      a.row.original_semantic_rate = static_cast<double>(a.original_changed) / a.original_known;
    out.push_back(a.row);
  }
  return out;
}

struct ReportTables {
  std::string markdown;
  std::string narrowing_csv;
  std::string optimizers_csv;
  std::string semantic_csv;  // empty without annotations
  std::string aggregates_csv;
};

namespace detail {

inline std::string md_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_number(v, 3);
}

inline std::string mode_label(NarrowingMode m) {
  switch (m) {
    case NarrowingMode::FullImage: return "Full image";
    case NarrowingMode::CharacterArea: return "Character area";
    case NarrowingMode::SkeletonizedArea: return "Skeletonized area";
  }
  return "?";
}

inline std::string optimizer_label(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::RandomSearch: return "Random search";
    case OptimizerKind::CmaEs: return "CMA-ES";
    case OptimizerKind::Tpe: return "TPE";
  }
  return "?";
}

}  // namespace detail

inline ReportTables render_report(std::vector<AttackTrace> traces,
                                  const std::vector<Annotation>* annotations = nullptr) {
  if (traces.empty()) throw InputError("no traces to report on");
  std::stable_sort(traces.begin(), traces.end(), trace_order_less);
  const auto rows = aggregate(traces);

  std::set<OptimizerKind> optimizers;
  std::set<NarrowingMode> modes;
  std::set<std::size_t> budgets;
  std::set<std::size_t> iterations;
  std::set<std::string> image_ids;
  for (const auto& t : traces) {
    optimizers.insert(t.config.optimizer.kind);
    modes.insert(t.config.mode);
    budgets.insert(t.config.k);
    iterations.insert(t.config.iterations);
    image_ids.insert(t.image_id);
  }
  std::map<std::tuple<OptimizerKind, NarrowingMode, std::size_t>, const AggregateRow*> cell;
  for (const auto& r : rows) cell[{r.optimizer, r.mode, r.k}] = &r;

  ReportTables out;
  std::string& md = out.markdown;
  md += "# Attack report\n\n";
  md += "Images: " + std::to_string(image_ids.size()) + ". Iterations per attack (N):";
  for (auto n : iterations) md += " " + std::to_string(n);
  md += ". Traces: " + std::to_string(traces.size()) + ".\n\n";
  md += std::string(kAccuracyNote) + " Success means cosine similarity below 1.\n\n";

  const auto cell_value = [&](OptimizerKind o, NarrowingMode m, std::size_t k,
                              auto field) -> std::optional<double> {
    const auto it = cell.find({o, m, k});
    if (it == cell.end() || it->second->images == 0) return std::nullopt;
    return field(*it->second);
  };
  const auto md_opt = [](std::optional<double> v) {
    return v ? detail::md_number(*v) : std::string("-");
  };
  const auto csv_opt = [](std::optional<double> v) {
    return v ? format_number(*v) : std::string{};
  };

  using Field = double (*)(const AggregateRow&);
  const std::vector<std::pair<std::string, Field>> metrics{
      {"cosine_similarity", [](const AggregateRow& r) { return r.mean_cosine_similarity; }},
      {"success_rate", [](const AggregateRow& r) { return r.success_rate; }},
      {"accuracy", [](const AggregateRow& r) { return r.mean_accuracy; }},
      {"psnr", [](const AggregateRow& r) { return r.mean_psnr; }},
  };
  const std::vector<std::string> metric_titles{"Cosine similarity", "Success rate", "Accuracy",
                                               "PSNR"};

  // Narrowing comparison, one block per optimizer.
  out.narrowing_csv = "optimizer,mode";
  for (const auto& [name, f] : metrics)
    for (auto k : budgets) out.narrowing_csv += "," + name + "_k" + std::to_string(k);
  out.narrowing_csv += "\n";
  md += "## Narrowing methods\n\n";
  for (auto o : optimizers) {
    md += "Optimizer: " + detail::optimizer_label(o) + "\n\n| Method |";
    std::string sep = "|---|";
    for (std::size_t m = 0; m < metrics.size(); ++m)
      for (auto k : budgets) {
        md += " " + metric_titles[m] + " (" + std::to_string(k) + " px) |";
        sep += "---:|";
      }
    md += "\n" + sep + "\n";
    for (auto mode : modes) {
      md += "| " + detail::mode_label(mode) + " |";
      out.narrowing_csv += std::string(to_string(o)) + "," + std::string(to_string(mode));
      for (const auto& [name, f] : metrics)
        for (auto k : budgets) {
          const auto v = cell_value(o, mode, k, f);
          md += " " + md_opt(v) + " |";
          out.narrowing_csv += "," + csv_opt(v);
        }
      md += "\n";
      out.narrowing_csv += "\n";
    }
    md += "\n";
  }

  // Optimizer comparison: cosine per budget plus mean attack time.
  out.optimizers_csv = "mode,optimizer";
  for (auto k : budgets) out.optimizers_csv += ",cosine_similarity_k" + std::to_string(k);
  out.optimizers_csv += ",time_sec\n";
  md += "## Optimizers\n\n";
  for (auto mode : modes) {
    md += "Search space: " + detail::mode_label(mode) + "\n\n| Optimization |";
    std::string sep = "|---|";
    for (auto k : budgets) {
      md += " Cosine similarity (" + std::to_string(k) + " px) |";
      sep += "---:|";
    }
    md += " Time (sec) |\n" + sep + "---:|\n";
    for (auto o : optimizers) {
      md += "| " + detail::optimizer_label(o) + " |";
      out.optimizers_csv += std::string(to_string(mode)) + "," + std::string(to_string(o));
      double time_ms = 0.0;
      std::size_t timed = 0;
      for (auto k : budgets) {
        const auto v = cell_value(o, mode, k, metrics[0].second);
        md += " " + md_opt(v) + " |";
        out.optimizers_csv += "," + csv_opt(v);
        const auto it = cell.find({o, mode, k});
        if (it != cell.end() && it->second->images > 0) {
          time_ms += it->second->mean_wall_time_ms * it->second->images;
          timed += it->second->images;
        }
      }
      const std::optional<double> secs =
          timed > 0 ? std::optional<double>(time_ms / timed / 1000.0) : std::nullopt;
      md += " " + md_opt(secs) + " |\n";
      out.optimizers_csv += "," + csv_opt(secs) + "\n";
    }
    md += "\n";
  }

  if (annotations != nullptr) {
    out.semantic_csv =
        "optimizer,mode,k,image,semantic_change_rate,character_change_cosine,annotated\n";
    md += "## Semantic and character change\n\n";
    md += "Character change is the cosine similarity between the ground-truth LaTeX and the "
          "OCR output. Semantic change comes from manual annotations.\n\n";
    md += "| Optimizer | Method | Pixels | Image | Rate of semantic change | Character change |\n";
    md += "|---|---|---:|---|---:|---:|\n";
    for (const auto& r : semantic_change_rows(traces, *annotations)) {
      const std::string prefix = std::string(to_string(r.optimizer)) + "," +
                                 std::string(to_string(r.mode)) + "," + std::to_string(r.k);
      const std::string md_prefix = "| " + detail::optimizer_label(r.optimizer) + " | " +
                                    detail::mode_label(r.mode) + " | " + std::to_string(r.k);
      md += md_prefix + " | Original | " + md_opt(r.original_semantic_rate) + " | " +
            detail::md_number(r.original_character_cosine) + " |\n";
      md += md_prefix + " | Attacked | " +
            (r.annotated > 0 ? detail::md_number(r.attacked_semantic_rate) : std::string("-")) +
            " | " + detail::md_number(r.attacked_character_cosine) + " |\n";
      out.semantic_csv += prefix + ",original," + csv_opt(r.original_semantic_rate) + "," +
                        format_number(r.original_character_cosine) + "," +
                        std::to_string(r.annotated) + "\n";
      out.semantic_csv += prefix + ",attacked," +
                        (r.annotated > 0 ? format_number(r.attacked_semantic_rate) : "") + "," +
                        format_number(r.attacked_character_cosine) + "," +
                        std::to_string(r.annotated) + "\n";
    }
    md += "\n";
  }

  std::size_t failed = 0;
  for (const auto& t : traces) failed += t.has_metrics() ? 0 : 1;
  if (failed > 0) {
    md += "Cells without metrics (failed or aborted): " + std::to_string(failed) + ".\n";
  }
  out.aggregates_csv = aggregates_csv(traces);
  return out;
}

/// Clean and adversarial images next to each other on a white canvas.
inline GrayImage side_by_side(const GrayImage& left, const GrayImage& right, int gap = 16) {
  const int h = std::max(left.height(), right.height());
  GrayImage out(left.width() + gap + right.width(), h, 255);
  for (int y = 0; y < left.height(); ++y)
    for (int x = 0; x < left.width(); ++x) out.at(x, y) = left.at(x, y);
  for (int y = 0; y < right.height(); ++y)
    for (int x = 0; x < right.width(); ++x) out.at(left.width() + gap + x, y) = right.at(x, y);
  return out;
}

inline constexpr std::string_view kTransferPromptTemplate =
    R"(# Transfer check prompt

Suggested wording for checking each exported pair with another OCR-capable
model by hand. Attach `adversarial.png` from a pair directory and send:

> Convert the mathematical expression in this image to LaTeX. Reply with
> the LaTeX code only.

Compare the reply with `clean_latex` in the same directory's `pair.json`
and record in the annotation file whether the meaning changed:

    {"annotations": [{"image_id": "eq000", "semantic_changed": true,
                      "note": "plus read as minus"}]}
)";

struct TransferFilter {
  std::optional<NarrowingMode> mode;
  std::optional<std::size_t> k;
  std::optional<OptimizerKind> optimizer;

  bool accepts(const AttackTrace& t) const {
    return (!mode || *mode == t.config.mode) && (!k || *k == t.config.k) &&
           (!optimizer || *optimizer == t.config.optimizer.kind);
  }
};

/// Writes `<out_dir>/<cell>/{clean,adversarial,side_by_side}.png` and
/// `pair.json` for every selected trace with metrics, plus an index and the
/// prompt template. Returns the number of pairs written.
inline std::size_t export_transfer(const std::vector<AttackTrace>& traces,
                                   const std::filesystem::path& run_dir,
                                   const std::filesystem::path& dataset_manifest,
                                   const std::filesystem::path& out_dir,
                                   const TransferFilter& filter = {}) {
  const DatasetManifest manifest = load_manifest(dataset_manifest);
  const auto manifest_dir = dataset_manifest.parent_path();
  std::map<std::string, const ManifestEntry*> entries;
  for (const auto& e : manifest.entries) entries[e.spec.id] = &e;

  std::filesystem::create_directories(out_dir);
  std::string index = "cell,image_id,cosine_similarity,clean_latex,adversarial_latex\n";
  const auto csv_quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  std::size_t written = 0;
  for (const auto& t : traces) {
    if (!t.has_metrics() || !filter.accepts(t)) continue;
    const auto it = entries.find(t.image_id);
    if (it == entries.end()) throw InputError("trace image '" + t.image_id + "' not in manifest");
    const std::string cell = cell_name(t);
    const auto adv_path = run_dir / "adversarial" / (cell + ".png");
    if (!std::filesystem::exists(adv_path)) {
      throw InputError("adversarial image missing: " + adv_path.string());
    }
    const GrayImage clean = load_dataset_image(manifest_dir, *it->second);
    const GrayImage adv = png::read(adv_path);
    const auto dir = out_dir / cell;
    png::write(dir / "clean.png", clean);
    png::write(dir / "adversarial.png", adv);
    png::write(dir / "side_by_side.png", side_by_side(clean, adv));
    ojson pair;
    pair["image_id"] = t.image_id;
    pair["mode"] = std::string(to_string(t.config.mode));
    pair["k"] = t.config.k;
    pair["optimizer"] = std::string(to_string(t.config.optimizer.kind));
    pair["ground_truth"] = t.ground_truth;
    pair["clean_latex"] = t.clean_output ? t.clean_output->latex : std::string{};
    pair["adversarial_latex"] = t.final_latex;
    pair["cosine_similarity"] = t.metrics.cosine_similarity;
    write_file_text(dir / "pair.json", pair.dump(2) + "\n");
    index += cell + "," + t.image_id + "," + format_number(t.metrics.cosine_similarity) + "," +
             csv_quote(pair["clean_latex"].get<std::string>()) + "," + csv_quote(t.final_latex) +
             "\n";
    ++written;
  }
  write_file_text(out_dir / "index.csv", index);
  write_file_text(out_dir / "PROMPT.md", kTransferPromptTemplate);
  return written;
}

}  // namespace skelattack
