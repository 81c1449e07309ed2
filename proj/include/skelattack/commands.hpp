#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "skelattack/atlas.hpp"
#include "skelattack/attack.hpp"
#include "skelattack/config.hpp"
#include "skelattack/dataset.hpp"
#include "skelattack/errors.hpp"
#include "skelattack/external_oracle.hpp"
#include "skelattack/oracle.hpp"
#include "skelattack/report.hpp"
#include "skelattack/trace_io.hpp"

namespace skelattack {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitOracle = 3,
  kExitPartial = 4,
};

/// Runs `body`, mapping library exceptions to process exit codes.
inline int run_command(const std::function<int()>& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const GenerationError& e) {
    err << "generation error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const OracleUnavailable& e) {
    err << "oracle failure: " << e.what() << "\n";
    return kExitOracle;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

struct GenDatasetOptions {
  long long n = 40;
  std::uint64_t seed = 7;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> atlas_dir;
};

inline int cmd_gen_dataset(const GenDatasetOptions& opt, std::ostream& out = std::cout) {
  if (opt.n <= 0) throw UsageError("--n must be a positive integer");
  if (opt.out_dir.empty()) throw UsageError("--out is required");
  const GlyphAtlas atlas = opt.atlas_dir ? GlyphAtlas::load(*opt.atlas_dir) : GlyphAtlas::builtin();
  const auto formulas = generate_formulas(static_cast<std::size_t>(opt.n), opt.seed);
  const auto manifest = write_dataset(formulas, atlas, opt.seed, opt.out_dir);
  out << "wrote " << formulas.size() << " images; manifest " << manifest.string() << "\n";
  return kExitOk;
}

namespace detail {

inline void clear_outputs(const std::filesystem::path& dir, std::string_view extension) {
  if (!std::filesystem::is_directory(dir)) return;
  std::vector<std::filesystem::path> stale;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == extension) stale.push_back(e.path());
  for (const auto& p : stale) std::filesystem::remove(p);
}

inline std::vector<BatchImage> load_batch(const RunConfig& rc, const DatasetManifest& manifest) {
  const auto dir = rc.dataset.parent_path();
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest.entries) by_id[e.spec.id] = &e;
  std::vector<const ManifestEntry*> chosen;
  if (rc.images.empty()) {
    for (const auto& e : manifest.entries) chosen.push_back(&e);
  } else {
    std::string missing;
    for (const auto& id : rc.images) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) missing += " " + id;
      else chosen.push_back(it->second);
    }
    if (!missing.empty()) throw InputError("images not in the dataset manifest:" + missing);
  }
  if (chosen.empty()) throw InputError("dataset has no images");
  std::vector<BatchImage> batch;
  for (const auto* e : chosen) batch.push_back({e->spec.id, e->spec.latex, load_dataset_image(dir, *e)});
  return batch;
}

}  // namespace detail

struct AttackRunResult {
  RunConfig config;
  std::vector<AttackTrace> traces;
  int exit_code = kExitOk;
};

/// Loads the config, runs the grid and writes every artifact under the
/// configured output directory.
inline AttackRunResult run_attack_command(const std::filesystem::path& config_path,
                                          std::optional<std::string> seed_override,
                                          std::ostream& log = std::cerr) {
  AttackRunResult result;
  result.config = load_run_config(config_path, std::move(seed_override));
  const RunConfig& rc = result.config;
  const DatasetManifest manifest = load_manifest(rc.dataset);
  const auto batch = detail::load_batch(rc, manifest);
  const auto configs = expand_grid(rc.grid, rc.base);
  const std::uint64_t budget = rc.cell_query_budget();

  OracleFactory factory;
  std::shared_ptr<ExternalOraclePool> pool;
  if (rc.oracle.kind == OracleKind::Toy) {
    std::filesystem::path atlas_dir = rc.oracle.atlas;
    if (atlas_dir.empty() && !manifest.atlas_path.empty())
      atlas_dir = rc.dataset.parent_path() / manifest.atlas_path;
    auto atlas = std::make_shared<const GlyphAtlas>(
        atlas_dir.empty() ? GlyphAtlas::builtin() : GlyphAtlas::load(atlas_dir));
    const int threshold = rc.base.threshold;
    factory = [atlas, budget, threshold] {
      return std::make_unique<ToyOracle>(atlas, budget, threshold);
    };
  } else {
    pool = std::make_shared<ExternalOraclePool>(rc.oracle.external, rc.threads);
    factory = [pool, budget] { return pool->lease(budget); };
  }

  log << "running " << configs.size() << " config(s) x " << batch.size() << " image(s), N="
      << rc.base.iterations << ", seed=" << rc.base.seed << "\n";
  result.traces = run_batch(batch, configs, factory, rc.threads);

  const auto traces_dir = rc.output_dir / "traces";
  const auto adv_dir = rc.output_dir / "adversarial";
  std::filesystem::create_directories(traces_dir);
  std::filesystem::create_directories(adv_dir);
  detail::clear_outputs(traces_dir, ".jsonl");
  detail::clear_outputs(adv_dir, ".png");

  std::size_t broken = 0;
  for (const auto& t : result.traces) {
    const std::string cell = cell_name(t);
    write_file_text(traces_dir / (cell + ".jsonl"), trace_to_jsonl(t));
    if (t.has_metrics()) {
      png::write(adv_dir / (cell + ".png"), t.final_image);
    } else {
      ++broken;
      log << "cell " << cell << " " << to_string(t.status) << ": " << t.message << "\n";
    }
  }
  write_file_text(rc.output_dir / "metrics.csv", metrics_csv(result.traces));
  write_file_text(rc.output_dir / "metrics.jsonl", metrics_jsonl(result.traces));
  write_file_text(rc.output_dir / "aggregates.csv", aggregates_csv(result.traces));

  ojson run = run_config_to_json(rc);
  run["dataset_generator"] = manifest.generator_version;
  run["atlas"] = manifest.atlas_id;
  run["image_ids"] = ojson::array();
  for (const auto& b : batch) run["image_ids"].push_back(b.id);
  run["accuracy_definition"] = std::string(kAccuracyNote);
  run["cells"] = result.traces.size();
  run["failed_cells"] = broken;
  write_file_text(rc.output_dir / "run.json", run.dump(2) + "\n");

  log << "wrote " << result.traces.size() << " trace(s) to " << rc.output_dir.string() << "\n";
  result.exit_code = broken > 0 ? kExitPartial : kExitOk;
  return result;
}

inline int cmd_attack(const std::filesystem::path& config_path, std::ostream& out = std::cout,
                      std::ostream& log = std::cerr) {
  std::optional<std::string> seed_override;
  if (const char* env = std::getenv("SKELATTACK_SEED"); env != nullptr && *env != '\0')
    seed_override = env;
  const auto result = run_attack_command(config_path, seed_override, log);
  out << read_file_text(result.config.output_dir / "aggregates.csv");
  return result.exit_code;
}

namespace detail {

/// Dataset manifest recorded by the attack run, if still reachable.
inline std::optional<std::filesystem::path> run_dataset(const std::filesystem::path& run_dir) {
  const auto run_json = run_dir / "run.json";
  if (!std::filesystem::exists(run_json)) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(read_file_text(run_json));
    const std::filesystem::path p = j.at("dataset").get<std::string>();
    if (std::filesystem::exists(p)) return p;
  } catch (const nlohmann::json::exception&) {
  }
  return std::nullopt;
}

}  // namespace detail

struct ReportOptions {
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> annotations;
  std::optional<std::filesystem::path> out_dir;  // default <run_dir>/report
  bool export_pairs = true;
};

inline int cmd_report(const ReportOptions& opt, std::ostream& out = std::cout,
                      std::ostream& log = std::cerr) {
  const auto traces = load_traces(opt.run_dir);
  const auto dataset = detail::run_dataset(opt.run_dir);
  std::optional<std::vector<Annotation>> annotations;
  if (opt.annotations) {
    annotations = load_annotations(*opt.annotations);
    std::set<std::string> known;
    if (dataset) {
      for (const auto& e : load_manifest(*dataset).entries) known.insert(e.spec.id);
    } else {
      for (const auto& t : traces) known.insert(t.image_id);
    }
    check_annotation_ids(*annotations, known);
  }
  const auto tables = render_report(traces, annotations ? &*annotations : nullptr);
  const auto dir = opt.out_dir.value_or(opt.run_dir / "report");
  std::filesystem::create_directories(dir);
  write_file_text(dir / "report.md", tables.markdown);
  write_file_text(dir / "narrowing.csv", tables.narrowing_csv);
  write_file_text(dir / "optimizers.csv", tables.optimizers_csv);
  write_file_text(dir / "aggregates.csv", tables.aggregates_csv);
  if (annotations) write_file_text(dir / "semantic.csv", tables.semantic_csv);
  if (opt.export_pairs) {
    if (dataset) {
      const auto n = export_transfer(traces, opt.run_dir, *dataset, dir / "transfer");
      log << "exported " << n << " transfer pair(s)\n";
    } else {
      log << "dataset from run.json not found; skipping transfer export\n";
    }
  }
  out << tables.markdown;
  return kExitOk;
}

struct ExportOptions {
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> out_dir;  // default <run_dir>/transfer
  std::optional<std::filesystem::path> dataset;  // default from run.json
  TransferFilter filter;
};

inline int cmd_export_transfer(const ExportOptions& opt, std::ostream& out = std::cout) {
  const auto traces = load_traces(opt.run_dir);
  auto dataset = opt.dataset;
  if (dataset && std::filesystem::is_directory(*dataset)) *dataset /= "manifest.json";
  if (!dataset) dataset = detail::run_dataset(opt.run_dir);
  if (!dataset) throw InputError("cannot locate the dataset manifest; pass --dataset");
  const auto dir = opt.out_dir.value_or(opt.run_dir / "transfer");
  const auto n = export_transfer(traces, opt.run_dir, *dataset, dir, opt.filter);
  out << "exported " << n << " pair(s) to " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace skelattack
