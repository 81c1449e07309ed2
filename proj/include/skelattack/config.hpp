#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skelattack/attack.hpp"
#include "skelattack/errors.hpp"
#include "skelattack/external_oracle.hpp"
#include "skelattack/trace_io.hpp"
#include "skelattack/util.hpp"

namespace skelattack {

enum class OracleKind { Toy, External };

struct OracleSettings {
  OracleKind kind = OracleKind::Toy;
  /// Toy only; empty means the atlas shipped with the dataset.
  std::filesystem::path atlas;
  /// Per-cell budget; 0 means iterations + 2.
  std::uint64_t query_budget = 0;
  ExternalOracleConfig external;
};

/// Parsed run configuration. Paths are already resolved against the
/// directory holding the config file.
struct RunConfig {
  std::filesystem::path dataset;  // manifest.json
  std::filesystem::path output_dir;
  std::vector<std::string> images;  // empty = whole manifest
  OracleSettings oracle;
  AttackGrid grid;
  AttackConfig base;
  unsigned threads = 1;

  std::uint64_t cell_query_budget() const {
    return oracle.query_budget > 0 ? oracle.query_budget : base.iterations + 2;
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw InputError("unknown key '" + key + "' in " + where);
  }
}

inline std::filesystem::path resolve_path(const std::filesystem::path& base,
                                          const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline std::uint64_t parse_seed_text(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(text, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || text.front() == '-') {
    throw InputError(what + " is not an unsigned integer: '" + text + "'");
  }
  return v;
}

}  // namespace detail

/// Parses a run config. `seed_override` (the SKELATTACK_SEED variable in the
/// CLI) replaces the file's seed when set.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                  std::optional<std::string> seed_override = std::nullopt) {
  if (!j.is_object()) throw InputError("run config must be a JSON object");
  detail::reject_unknown_keys(j,
                              {"dataset", "output_dir", "images", "oracle", "grid", "iterations",
                               "threshold", "perturbation", "seed", "threads", "early_stop",
                               "stagnation_restart"},
                              "run config");
  RunConfig rc;
  try {
    auto dataset = detail::resolve_path(base_dir, j.at("dataset").get<std::string>());
    if (std::filesystem::is_directory(dataset)) dataset /= "manifest.json";
    rc.dataset = dataset;
    rc.output_dir = detail::resolve_path(base_dir, j.at("output_dir").get<std::string>());
    rc.images = j.value("images", std::vector<std::string>{});

    rc.base.iterations = j.value("iterations", rc.base.iterations);
    rc.base.threshold = j.value("threshold", rc.base.threshold);
    if (rc.base.iterations == 0) throw InputError("iterations must be >= 1");
    if (rc.base.threshold < 0 || rc.base.threshold > 255)
      throw InputError("threshold must be in [0,255]");
    if (j.contains("perturbation")) rc.base.perturb = perturb_from_json(j["perturbation"]);
    rc.base.seed = j.value("seed", std::uint64_t{0});
    rc.base.early_stop = j.value("early_stop", false);
    rc.base.stagnation_restart = j.value("stagnation_restart", std::size_t{0});
    rc.threads = j.value("threads", 1u);
    if (rc.threads == 0) throw InputError("threads must be >= 1");

    if (j.contains("grid")) {
      const auto& g = j["grid"];
      detail::reject_unknown_keys(g, {"modes", "budgets", "optimizers"}, "grid");
      if (g.contains("modes")) {
        rc.grid.modes.clear();
        for (const auto& m : g["modes"]) rc.grid.modes.push_back(parse_narrowing_mode(m.get<std::string>()));
      }
      if (g.contains("budgets")) {
        rc.grid.budgets = g["budgets"].get<std::vector<std::size_t>>();
        for (auto k : rc.grid.budgets)
          if (k == 0) throw InputError("grid budgets must be >= 1");
      }
      if (g.contains("optimizers")) {
        rc.grid.optimizers.clear();
        for (const auto& o : g["optimizers"]) rc.grid.optimizers.push_back(optimizer_from_json(o));
      }
    }

    const auto oracle = j.value("oracle", nlohmann::json::object());
    detail::reject_unknown_keys(oracle,
                                {"kind", "atlas", "query_budget", "command", "args",
                                 "timeout_ms", "startup_timeout_ms"},
                                "oracle");
    const auto kind = oracle.value("kind", std::string("toy"));
    if (kind == "toy") {
      rc.oracle.kind = OracleKind::Toy;
      if (oracle.contains("atlas"))
        rc.oracle.atlas = detail::resolve_path(base_dir, oracle["atlas"].get<std::string>());
    } else if (kind == "external") {
      rc.oracle.kind = OracleKind::External;
      rc.oracle.external.command = oracle.at("command").get<std::string>();
      rc.oracle.external.args = oracle.value("args", std::vector<std::string>{});
      rc.oracle.external.timeout_ms = oracle.value("timeout_ms", rc.oracle.external.timeout_ms);
      rc.oracle.external.startup_timeout_ms =
          oracle.value("startup_timeout_ms", rc.oracle.external.startup_timeout_ms);
    } else {
      throw InputError("unknown oracle kind '" + kind + "'");
    }
    rc.oracle.query_budget = oracle.value("query_budget", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid run config: ") + e.what());
  }
  if (seed_override) rc.base.seed = detail::parse_seed_text(*seed_override, "SKELATTACK_SEED");

  // Validates the grid shape (non-empty axes, no duplicate optimizers).
  (void)expand_grid(rc.grid, rc.base);
  if (!std::filesystem::exists(rc.dataset)) {
    throw InputError("dataset manifest not found: " + rc.dataset.string());
  }
  if (!rc.oracle.atlas.empty() && !std::filesystem::is_directory(rc.oracle.atlas)) {
    throw InputError("atlas directory not found: " + rc.oracle.atlas.string());
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 std::optional<std::string> seed_override = std::nullopt) {
  if (!std::filesystem::exists(path)) throw InputError("config not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_run_config(j, std::filesystem::absolute(path).parent_path(),
                          std::move(seed_override));
}

/// Echo of the effective configuration, written next to the results.
inline ojson run_config_to_json(const RunConfig& rc) {
  ojson j;
  j["dataset"] = rc.dataset.string();
  j["output_dir"] = rc.output_dir.string();
  j["images"] = rc.images;
  ojson oracle;
  oracle["kind"] = rc.oracle.kind == OracleKind::Toy ? "toy" : "external";
  if (rc.oracle.kind == OracleKind::Toy) {
    oracle["atlas"] = rc.oracle.atlas.string();
  } else {
    oracle["command"] = rc.oracle.external.command;
    oracle["args"] = rc.oracle.external.args;
    oracle["timeout_ms"] = rc.oracle.external.timeout_ms;
    oracle["startup_timeout_ms"] = rc.oracle.external.startup_timeout_ms;
  }
  oracle["query_budget"] = rc.cell_query_budget();
  j["oracle"] = oracle;
  ojson grid;
  grid["modes"] = ojson::array();
  for (auto m : rc.grid.modes) grid["modes"].push_back(std::string(to_string(m)));
  grid["budgets"] = rc.grid.budgets;
  grid["optimizers"] = ojson::array();
  for (const auto& o : rc.grid.optimizers) grid["optimizers"].push_back(optimizer_to_json(o));
  j["grid"] = grid;
  j["iterations"] = rc.base.iterations;
  j["threshold"] = rc.base.threshold;
  j["perturbation"] = perturb_to_json(rc.base.perturb);
  j["seed"] = rc.base.seed;
  j["threads"] = rc.threads;
  j["early_stop"] = rc.base.early_stop;
  j["stagnation_restart"] = rc.base.stagnation_restart;
  return j;
}

}  // namespace skelattack
