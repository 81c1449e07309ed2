#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skelattack/attack.hpp"
#include "skelattack/errors.hpp"
#include "skelattack/util.hpp"

namespace skelattack {

using ojson = nlohmann::ordered_json;

/// Fixed six-decimal rendering shared by every CSV; infinities print "inf".
inline std::string format_number(double v, int precision = 6) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

inline ojson number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double parse_number_or_inf(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw InputError("expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

inline ojson optimizer_to_json(const OptimizerConfig& c) {
  ojson j;
  j["kind"] = std::string(to_string(c.kind));
  if (c.kind == OptimizerKind::CmaEs) {
    j["sigma0"] = c.cmaes.sigma0;
    j["mean0"] = c.cmaes.mean0;
    j["lambda"] = c.cmaes.lambda;
  } else if (c.kind == OptimizerKind::Tpe) {
    j["gamma"] = c.tpe.gamma;
    j["n_candidates"] = c.tpe.n_candidates;
    j["n_startup"] = c.tpe.n_startup;
  }
  return j;
}

inline OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  if (j.is_string()) {
    c.kind = parse_optimizer_kind(j.get<std::string>());
    return c;
  }
  c.kind = parse_optimizer_kind(j.at("kind").get<std::string>());
  c.cmaes.sigma0 = j.value("sigma0", c.cmaes.sigma0);
  c.cmaes.mean0 = j.value("mean0", c.cmaes.mean0);
  c.cmaes.lambda = j.value("lambda", c.cmaes.lambda);
  c.tpe.gamma = j.value("gamma", c.tpe.gamma);
  c.tpe.n_candidates = j.value("n_candidates", c.tpe.n_candidates);
  c.tpe.n_startup = j.value("n_startup", c.tpe.n_startup);
  return c;
}

inline ojson perturb_to_json(const PerturbModel& p) {
  ojson j;
  if (p.kind == PerturbModel::Kind::Toggle) {
    j["model"] = "toggle";
  } else {
    j["model"] = "set";
    j["value"] = p.value;
  }
  return j;
}

inline PerturbModel perturb_from_json(const nlohmann::json& j) {
  const auto model = j.value("model", std::string("toggle"));
  if (model == "toggle") return PerturbModel::toggle();
  if (model == "set") {
    const int v = j.at("value").get<int>();
    if (v < 0 || v > 255) throw InputError("perturbation value must be in [0,255]");
    return PerturbModel::set_value(static_cast<std::uint8_t>(v));
  }
  throw InputError("unknown perturbation model '" + model + "'");
}

/// File stem shared by a cell's trace and adversarial image.
inline std::string cell_name(const AttackTrace& t) {
  return t.image_id + "__" + std::string(to_string(t.config.mode)) + "__k" +
         std::to_string(t.config.k) + "__" + std::string(to_string(t.config.optimizer.kind));
}

/// JSON-lines trace: one header line, one line per iteration record, one
/// summary line.
inline std::string trace_to_jsonl(const AttackTrace& t) {
  std::ostringstream out;
  ojson header;
  header["type"] = "header";
  header["image_id"] = t.image_id;
  header["ground_truth"] = t.ground_truth;
  header["mode"] = std::string(to_string(t.config.mode));
  header["k"] = t.config.k;
  header["optimizer"] = optimizer_to_json(t.config.optimizer);
  header["seed"] = t.config.seed;
  header["iterations"] = t.config.iterations;
  header["threshold"] = t.config.threshold;
  header["perturbation"] = perturb_to_json(t.config.perturb);
  header["early_stop"] = t.config.early_stop;
  header["stagnation_restart"] = t.config.stagnation_restart;
  header["search_space_size"] = t.search_space_size;
  header["clean_latex"] = t.clean_output ? ojson(t.clean_output->latex) : ojson(nullptr);
  out << header.dump() << '\n';
  for (const auto& r : t.records) {
    ojson line;
    line["type"] = "iteration";
    line["iteration"] = r.iteration;
    line["candidate"] = r.candidate;
    line["latex"] = r.latex;
    line["cosine_similarity"] = r.cosine_similarity;
    line["accepted"] = r.accepted;
    line["best_cosine_similarity"] = r.best_cosine_similarity;
    line["elapsed_ms"] = r.elapsed_ms;
    out << line.dump() << '\n';
  }
  ojson summary;
  summary["type"] = "summary";
  summary["status"] = std::string(to_string(t.status));
  summary["message"] = t.message;
  summary["final_latex"] = t.final_latex;
  summary["final_candidate"] = t.final_candidate;
  summary["final_is_initialization"] = t.final_is_initialization;
  summary["cosine_similarity"] = t.metrics.cosine_similarity;
  summary["success"] = t.metrics.success;
  summary["accuracy"] = t.metrics.accuracy;
  summary["psnr"] = number_or_inf(t.metrics.psnr);
  summary["queries"] = t.queries;
  summary["wall_time_ms"] = t.wall_time_ms;
  out << summary.dump() << '\n';
  return out.str();
}

/// Inverse of trace_to_jsonl; the adversarial image is not part of the file.
inline AttackTrace trace_from_jsonl(const std::string& text) {
  AttackTrace t;
  std::istringstream in(text);
  std::string line;
  bool saw_header = false;
  bool saw_summary = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        saw_header = true;
        t.image_id = j.at("image_id").get<std::string>();
        t.ground_truth = j.value("ground_truth", std::string{});
        t.config.mode = parse_narrowing_mode(j.at("mode").get<std::string>());
        t.config.k = j.at("k").get<std::size_t>();
        t.config.optimizer = optimizer_from_json(j.at("optimizer"));
        t.config.seed = j.at("seed").get<std::uint64_t>();
        t.config.iterations = j.at("iterations").get<std::size_t>();
        t.config.threshold = j.value("threshold", kDefaultThreshold);
        if (j.contains("perturbation")) t.config.perturb = perturb_from_json(j["perturbation"]);
        t.config.early_stop = j.value("early_stop", false);
        t.config.stagnation_restart = j.value("stagnation_restart", std::size_t{0});
        t.search_space_size = j.value("search_space_size", std::size_t{0});
        if (j.contains("clean_latex") && j["clean_latex"].is_string()) {
          OcrOutput clean;
          clean.latex = j["clean_latex"].get<std::string>();
          clean.tokens = tokenize(clean.latex);
          t.clean_output = clean;
        }
      } else if (type == "iteration") {
        IterationRecord r;
        r.iteration = j.at("iteration").get<std::size_t>();
        r.candidate = j.at("candidate").get<PerturbationVector>();
        r.latex = j.at("latex").get<std::string>();
        r.cosine_similarity = j.at("cosine_similarity").get<double>();
        r.accepted = j.at("accepted").get<bool>();
        r.best_cosine_similarity = j.at("best_cosine_similarity").get<double>();
        r.elapsed_ms = j.value("elapsed_ms", 0.0);
        t.records.push_back(std::move(r));
      } else if (type == "summary") {
        saw_summary = true;
        t.status = parse_trace_status(j.at("status").get<std::string>());
        t.message = j.value("message", std::string{});
        t.final_latex = j.at("final_latex").get<std::string>();
        t.final_candidate = j.value("final_candidate", PerturbationVector{});
        t.final_is_initialization = j.value("final_is_initialization", false);
        t.metrics.cosine_similarity = j.at("cosine_similarity").get<double>();
        t.metrics.success = j.at("success").get<bool>();
        t.metrics.accuracy = j.at("accuracy").get<double>();
        t.metrics.psnr = parse_number_or_inf(j.at("psnr"));
        t.queries = j.at("queries").get<std::uint64_t>();
        t.wall_time_ms = j.value("wall_time_ms", 0.0);
      } else {
        throw InputError("unknown trace record type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed trace: ") + e.what());
  }
  if (!saw_header || !saw_summary) throw InputError("trace lacks a header or summary line");
  return t;
}

/// Canonical (optimizer, mode, k, image) ordering used by every table.
inline bool trace_order_less(const AttackTrace& a, const AttackTrace& b) {
  return std::make_tuple(a.config.optimizer.kind, a.config.mode, a.config.k, a.image_id) <
         std::make_tuple(b.config.optimizer.kind, b.config.mode, b.config.k, b.image_id);
}

inline std::vector<AttackTrace> load_traces(const std::filesystem::path& trace_dir) {
  const auto dir = trace_dir / "traces";
  if (!std::filesystem::is_directory(dir)) {
    throw InputError("no traces/ directory under " + trace_dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  if (files.empty()) throw InputError("no trace files in " + dir.string());
  std::vector<AttackTrace> traces;
  for (const auto& f : files) traces.push_back(trace_from_jsonl(read_file_text(f)));
  std::stable_sort(traces.begin(), traces.end(), trace_order_less);
  return traces;
}

inline const char* kMetricsHeader =
    "image_id,mode,k,optimizer,cosine_similarity,success,accuracy,psnr,queries,wall_time_ms\n";

inline std::string metrics_csv(const std::vector<AttackTrace>& traces) {
  std::string out = kMetricsHeader;
  for (const auto& t : traces) {
    if (!t.has_metrics()) continue;
    out += t.image_id + "," + std::string(to_string(t.config.mode)) + "," +
           std::to_string(t.config.k) + "," + std::string(to_string(t.config.optimizer.kind)) +
           "," + format_number(t.metrics.cosine_similarity) + "," +
           (t.metrics.success ? "true" : "false") + "," + format_number(t.metrics.accuracy) + "," +
           format_number(t.metrics.psnr) + "," + std::to_string(t.queries) + "," +
           format_number(t.wall_time_ms, 3) + "\n";
  }
  return out;
}

inline std::string metrics_jsonl(const std::vector<AttackTrace>& traces) {
  std::string out;
  for (const auto& t : traces) {
    if (!t.has_metrics()) continue;
    ojson j;
    j["image_id"] = t.image_id;
    j["mode"] = std::string(to_string(t.config.mode));
    j["k"] = t.config.k;
    j["optimizer"] = std::string(to_string(t.config.optimizer.kind));
    j["cosine_similarity"] = t.metrics.cosine_similarity;
    j["success"] = t.metrics.success;
    j["accuracy"] = t.metrics.accuracy;
    j["psnr"] = number_or_inf(t.metrics.psnr);
    j["queries"] = t.queries;
    j["wall_time_ms"] = t.wall_time_ms;
    out += j.dump() + "\n";
  }
  return out;
}

/// Per-cell means. Deliberately excludes wall time so the file depends on
/// (dataset, config, seeds) alone.
inline std::string aggregates_csv(std::vector<AttackTrace> traces) {
  std::stable_sort(traces.begin(), traces.end(), trace_order_less);
  std::string out =
      "optimizer,mode,k,iterations,images,failed,cosine_similarity,success_rate,accuracy,psnr\n";
  for (const auto& row : aggregate(traces)) {
    out += std::string(to_string(row.optimizer)) + "," + std::string(to_string(row.mode)) + "," +
           std::to_string(row.k) + "," + std::to_string(row.iterations) + "," +
           std::to_string(row.images) + "," + std::to_string(row.failed) + "," +
           format_number(row.mean_cosine_similarity) + "," + format_number(row.success_rate) +
           "," + format_number(row.mean_accuracy) + "," + format_number(row.mean_psnr) + "\n";
  }
  return out;
}

}  // namespace skelattack
