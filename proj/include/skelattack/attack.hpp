#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "skelattack/errors.hpp"
#include "skelattack/image.hpp"
#include "skelattack/metrics.hpp"
#include "skelattack/optimizers.hpp"
#include "skelattack/oracle.hpp"
#include "skelattack/region.hpp"
#include "skelattack/util.hpp"

namespace skelattack {

struct AttackConfig {
  NarrowingMode mode = NarrowingMode::SkeletonizedArea;
  /// Number of attacked pixels.
  std::size_t k = 20;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  /// Loop iterations N; total queries are N + 2.
  std::size_t iterations = 300;
  int threshold = kDefaultThreshold;
  PerturbModel perturb = PerturbModel::toggle();
  /// Stop as soon as the similarity reaches 0.
  bool early_stop = false;
  /// Restart the optimizer's search distribution after this many
  /// consecutive non-improving iterations; 0 disables.
  std::size_t stagnation_restart = 0;
};

struct IterationRecord {
  /// 0 is the initial random perturbation, 1..N the optimizer loop.
  std::size_t iteration = 0;
  PerturbationVector candidate;
  std::string latex;
  double cosine_similarity = 1.0;
  /// Loop records: similarity strictly below the previous best. The
  /// initial record is always accepted.
  bool accepted = false;
  double best_cosine_similarity = 1.0;
  double elapsed_ms = 0.0;
};

enum class TraceStatus {
  Completed,
  EarlyStopped,
  /// Query budget ran out; records hold the partial run.
  Truncated,
  /// Oracle died mid-run; records hold the partial run.
  Aborted,
  /// Nothing ran (empty search space, k too large, oracle never started).
  Failed,
};

inline std::string_view to_string(TraceStatus s) {
  switch (s) {
    case TraceStatus::Completed:
      return "completed";
    case TraceStatus::EarlyStopped:
      return "early_stopped";
    case TraceStatus::Truncated:
      return "truncated";
    case TraceStatus::Aborted:
      return "aborted";
    case TraceStatus::Failed:
      return "failed";
  }
  return "?";
}

inline TraceStatus parse_trace_status(std::string_view s) {
  for (auto st : {TraceStatus::Completed, TraceStatus::EarlyStopped, TraceStatus::Truncated,
                  TraceStatus::Aborted, TraceStatus::Failed})
    if (to_string(st) == s) return st;
  throw InputError("unknown trace status '" + std::string(s) + "'");
}

struct AttackTrace {
  std::string image_id;
  std::string ground_truth;
  AttackConfig config;
  std::size_t search_space_size = 0;
  std::optional<OcrOutput> clean_output;
  std::vector<IterationRecord> records;

  GrayImage final_image;
  PerturbationVector final_candidate;
  std::string final_latex;
  bool final_is_initialization = true;

  MetricsRow metrics;
  std::uint64_t queries = 0;
  double wall_time_ms = 0.0;
  TraceStatus status = TraceStatus::Completed;
  std::string message;

  /// Statuses whose metrics describe a run that reached its end or its
  /// budget.
  bool has_metrics() const {
    return status == TraceStatus::Completed || status == TraceStatus::EarlyStopped ||
           status == TraceStatus::Truncated;
  }
};

namespace detail {

/// k distinct indices from [0, domain), by partial Fisher-Yates.
inline PerturbationVector sample_distinct(std::size_t k, std::size_t domain, std::mt19937_64& rng) {
  std::vector<std::size_t> pool(domain);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, domain - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace detail

/// Runs the query-based attack on one image.
///
/// A random k-pixel perturbation from the search space seeds the
/// adversarial image; every later candidate is a fresh k-pixel perturbation
/// of the clean image, kept only when its similarity to the clean output is
/// strictly lower than the best so far.
///
/// Throws EmptySearchSpace or InputError (k larger than the space) before
/// any query is made. Budget exhaustion and oracle failure end the run
/// early with a Truncated/Aborted status and whatever was recorded.
inline AttackTrace run_attack(const GrayImage& img, const AttackConfig& cfg, VictimOracle& oracle,
                              std::string image_id = {}) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  };

  if (cfg.k == 0) throw InputError("attack needs k >= 1");
  if (cfg.iterations == 0) throw InputError("attack needs at least one iteration");

  AttackTrace trace;
  trace.image_id = std::move(image_id);
  trace.config = cfg;
  const SearchSpace space = build_search_space(img, cfg.mode, cfg.threshold);
  trace.search_space_size = space.size();
  if (cfg.k > space.size()) {
    throw InputError("k = " + std::to_string(cfg.k) + " exceeds the " +
                     std::string(to_string(cfg.mode)) + " search space of " +
                     std::to_string(space.size()) + " pixels");
  }

  const std::uint64_t queries_before = oracle.query_count();
  std::mt19937_64 rng(cfg.seed);
  const PerturbationVector init = detail::sample_distinct(cfg.k, space.size(), rng);
  GrayImage best_image = apply_perturbation(img, space.resolve(init), cfg.perturb);
  PerturbationVector best_candidate = init;
  std::string best_latex;
  double best_cos = 1.0;
  trace.final_image = best_image;
  trace.final_candidate = init;

  try {
    trace.clean_output = oracle.query(img);
    const TokenSeq& clean_tokens = trace.clean_output->tokens;
    const OcrOutput first = oracle.query(best_image);
    best_latex = first.latex;
    best_cos = cosine_similarity(clean_tokens, first.tokens);
    trace.records.push_back({0, init, first.latex, best_cos, true, best_cos, elapsed_ms()});

    auto opt = make_optimizer(cfg.optimizer, cfg.k, space.size(), mix_seed(cfg.seed, 1));
    std::size_t stagnant = 0;
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
      if (cfg.early_stop && best_cos <= 0.0) {
        trace.status = TraceStatus::EarlyStopped;
        break;
      }
      PerturbationVector cand = opt->propose();
      GrayImage candidate_image = apply_perturbation(img, space.resolve(cand), cfg.perturb);
      const OcrOutput out = oracle.query(candidate_image);
      const double c = cosine_similarity(clean_tokens, out.tokens);
      opt->observe(cand, c);
      const bool accepted = c < best_cos;
      if (accepted) {
        best_cos = c;
        best_image = std::move(candidate_image);
        best_candidate = cand;
        best_latex = out.latex;
        stagnant = 0;
      } else if (cfg.stagnation_restart > 0 && ++stagnant >= cfg.stagnation_restart) {
        opt->restart();
        stagnant = 0;
      }
      trace.records.push_back({it, std::move(cand), out.latex, c, accepted, best_cos, elapsed_ms()});
    }
  } catch (const BudgetExhausted& e) {
    trace.status = TraceStatus::Truncated;
    trace.message = e.what();
  } catch (const OracleUnavailable& e) {
    trace.status = TraceStatus::Aborted;
    trace.message = e.what();
  }

  trace.final_image = std::move(best_image);
  trace.final_candidate = std::move(best_candidate);
  trace.final_latex = best_latex;
  trace.final_is_initialization =
      std::none_of(trace.records.begin(), trace.records.end(),
                   [](const IterationRecord& r) { return r.iteration > 0 && r.accepted; });

  trace.metrics.cosine_similarity = best_cos;
  trace.metrics.success = success(best_cos);
  trace.metrics.accuracy =
      trace.clean_output ? char_accuracy(trace.clean_output->latex, best_latex) : 1.0;
  trace.metrics.psnr = psnr(img, trace.final_image);
  trace.queries = oracle.query_count() - queries_before;
  trace.wall_time_ms = elapsed_ms();
  return trace;
}

/// Modes x budgets x optimizers.
struct AttackGrid {
  std::vector<NarrowingMode> modes{NarrowingMode::SkeletonizedArea};
  std::vector<std::size_t> budgets{20};
  std::vector<OptimizerConfig> optimizers{OptimizerConfig{}};
};

/// Expands the grid into per-cell configs (optimizer-major, then mode, then
/// budget) sharing every other setting with `base`.
inline std::vector<AttackConfig> expand_grid(const AttackGrid& grid, const AttackConfig& base) {
  if (grid.modes.empty() || grid.budgets.empty() || grid.optimizers.empty()) {
    throw InputError("attack grid must be non-empty in every axis");
  }
  for (std::size_t i = 0; i < grid.optimizers.size(); ++i)
    for (std::size_t j = i + 1; j < grid.optimizers.size(); ++j)
      if (grid.optimizers[i].kind == grid.optimizers[j].kind)
        throw InputError("attack grid lists optimizer '" +
                         std::string(to_string(grid.optimizers[i].kind)) + "' twice");
  std::vector<AttackConfig> out;
  for (const auto& opt : grid.optimizers)
    for (auto mode : grid.modes)
      for (auto k : grid.budgets) {
        AttackConfig c = base;
        c.optimizer = opt;
        c.mode = mode;
        c.k = k;
        out.push_back(c);
      }
  return out;
}

struct BatchImage {
  std::string id;
  std::string ground_truth;
  GrayImage image;
};

using OracleFactory = std::function<std::unique_ptr<VictimOracle>()>;

/// Runs every (config, image) cell, each against its own oracle instance.
/// Cell seeds mix the config seed with the image position, so all cells of
/// one image share a seed regardless of mode, budget and optimizer. Cell
/// failures become Failed/Aborted traces; the batch carries on. Output
/// order is config-major, then image order, independent of `threads`.
inline std::vector<AttackTrace> run_batch(const std::vector<BatchImage>& dataset,
                                          const std::vector<AttackConfig>& configs,
                                          const OracleFactory& make_oracle,
                                          unsigned threads = 1) {
  if (dataset.empty()) throw InputError("run_batch: dataset is empty");
  const std::size_t n_cells = configs.size() * dataset.size();
  std::vector<AttackTrace> traces(n_cells);

  auto run_cell = [&](std::size_t cell) {
    const AttackConfig& base = configs[cell / dataset.size()];
    const std::size_t image_index = cell % dataset.size();
    const BatchImage& item = dataset[image_index];
    AttackConfig cfg = base;
    cfg.seed = mix_seed(base.seed, image_index);
    AttackTrace trace;
    try {
      auto oracle = make_oracle();
      trace = run_attack(item.image, cfg, *oracle, item.id);
    } catch (const Error& e) {
      trace = AttackTrace{};
      trace.image_id = item.id;
      trace.config = cfg;
      trace.status = dynamic_cast<const OracleUnavailable*>(&e) ? TraceStatus::Aborted
                                                                 : TraceStatus::Failed;
      trace.message = e.what();
      trace.final_image = item.image;
      trace.metrics.psnr = std::numeric_limits<double>::infinity();
    }
    trace.ground_truth = item.ground_truth;
    traces[cell] = std::move(trace);
  };

  threads = std::max(1u, threads);
  if (threads == 1) {
    for (std::size_t c = 0; c < n_cells; ++c) run_cell(c);
    return traces;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < n_cells; c = next++) run_cell(c);
    });
  }
  for (auto& th : pool) th.join();
  return traces;
}

struct AggregateRow {
  NarrowingMode mode = NarrowingMode::SkeletonizedArea;
  std::size_t k = 0;
  OptimizerKind optimizer = OptimizerKind::RandomSearch;
  std::size_t iterations = 0;
  std::size_t images = 0;
  std::size_t failed = 0;
  double mean_cosine_similarity = 0.0;
  double success_rate = 0.0;
  double mean_accuracy = 0.0;
  double mean_psnr = 0.0;
  double mean_wall_time_ms = 0.0;
};

/// Per-(optimizer, mode, k) means over traces that produced metrics, in
/// order of first appearance.
inline std::vector<AggregateRow> aggregate(const std::vector<AttackTrace>& traces) {
  using Key = std::tuple<OptimizerKind, NarrowingMode, std::size_t>;
  std::vector<Key> order;
  std::map<Key, AggregateRow> rows;
  for (const auto& t : traces) {
    const Key key{t.config.optimizer.kind, t.config.mode, t.config.k};
    auto [it, fresh] = rows.try_emplace(key);
    AggregateRow& row = it->second;
    if (fresh) {
      order.push_back(key);
      row.mode = t.config.mode;
      row.k = t.config.k;
      row.optimizer = t.config.optimizer.kind;
      row.iterations = t.config.iterations;
    }
    if (!t.has_metrics()) {
      ++row.failed;
      continue;
    }
    ++row.images;
    row.mean_cosine_similarity += t.metrics.cosine_similarity;
    row.success_rate += t.metrics.success ? 1.0 : 0.0;
    row.mean_accuracy += t.metrics.accuracy;
    row.mean_psnr += t.metrics.psnr;
    row.mean_wall_time_ms += t.wall_time_ms;
  }
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    AggregateRow row = rows[key];
    if (row.images > 0) {
      const double n = static_cast<double>(row.images);
      row.mean_cosine_similarity /= n;
      row.success_rate /= n;
      row.mean_accuracy /= n;
      row.mean_psnr /= n;
      row.mean_wall_time_ms /= n;
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace skelattack
