#include <gtest/gtest.h>

#include "support.hpp"

using namespace skelattack;
using testsupport::ConstantOracle;
using testsupport::corpus;
using testsupport::render_latex;
using testsupport::shared_atlas;

namespace {

AttackConfig small_config(NarrowingMode mode, std::size_t k, std::size_t n, std::uint64_t seed = 3) {
  AttackConfig cfg;
  cfg.mode = mode;
  cfg.k = k;
  cfg.iterations = n;
  cfg.seed = seed;
  return cfg;
}

/// Reads "1-2" when one given pixel differs from the clean image and "1+2"
/// otherwise.
class OnePixelOracle final : public VictimOracle {
 public:
  OnePixelOracle(GrayImage clean, PixelCoord critical, std::uint64_t budget)
      : VictimOracle(budget), clean_(std::move(clean)), critical_(critical) {}

 protected:
  std::string transcribe(const GrayImage& img) override {
    return img.at(critical_) != clean_.at(critical_) ? "1-2" : "1+2";
  }

 private:
  GrayImage clean_;
  PixelCoord critical_;
};

}  // namespace

TEST(Attack, ConstantOracleNeverSucceeds) {
  ConstantOracle oracle("x+1");
  const auto& item = corpus()[0];
  const auto cfg = small_config(NarrowingMode::SkeletonizedArea, 5, 40);
  const auto trace = run_attack(item.image, cfg, oracle, item.spec.id);
  EXPECT_EQ(trace.status, TraceStatus::Completed);
  for (const auto& r : trace.records) EXPECT_EQ(r.cosine_similarity, 1.0);
  EXPECT_FALSE(trace.metrics.success);
  EXPECT_EQ(trace.metrics.cosine_similarity, 1.0);
  EXPECT_TRUE(trace.final_is_initialization);
  EXPECT_EQ(trace.final_candidate, trace.records.front().candidate);
  const auto space = build_search_space(item.image, cfg.mode);
  EXPECT_EQ(trace.final_image,
            apply_perturbation(item.image, space.resolve(trace.records.front().candidate), cfg.perturb));
}

TEST(Attack, OnePixelFixtureFlipsPlusToMinus) {
  const GrayImage img = render_latex("1+2");
  const auto space = build_search_space(img, NarrowingMode::SkeletonizedArea);
  const PixelCoord critical = space.coords[space.size() / 2];
  auto cfg = small_config(NarrowingMode::SkeletonizedArea, 1, 6 * space.size(), 11);
  OnePixelOracle oracle(img, critical, cfg.iterations + 2);
  const auto trace = run_attack(img, cfg, oracle, "fixture");
  EXPECT_EQ(trace.final_latex, "1-2");
  EXPECT_TRUE(trace.metrics.success);
  EXPECT_NEAR(trace.metrics.cosine_similarity, 0.50310, 5e-6);
  EXPECT_EQ(testsupport::differing_pixels(img, trace.final_image), 1u);
  EXPECT_NE(trace.final_image.at(critical), img.at(critical));
}

TEST(Attack, SingleToggleReachesExhaustiveOptimum) {
  const GrayImage img = render_latex("1+2");
  const auto space = build_search_space(img, NarrowingMode::CharacterArea);
  auto cfg = small_config(NarrowingMode::CharacterArea, 1, 6 * space.size(), 11);
  double best = 1.0;
  for (const auto& c : space.coords) {
    const auto out = toy_recognize(*shared_atlas(), apply_perturbation(img, std::vector<PixelCoord>{c}, cfg.perturb));
    best = std::min(best, cosine_similarity(std::string("1+2"), out));
  }
  ASSERT_LT(best, 1.0);
  ToyOracle oracle(shared_atlas(), cfg.iterations + 2);
  const auto trace = run_attack(img, cfg, oracle, "fixture");
  EXPECT_EQ(trace.metrics.cosine_similarity, best);
  EXPECT_EQ(testsupport::differing_pixels(img, trace.final_image), 1u);
}

TEST(Attack, SingleIterationRecordsInitAndOneCandidate) {
  ToyOracle oracle(shared_atlas(), 100);
  const auto trace = run_attack(corpus()[1].image, small_config(NarrowingMode::FullImage, 3, 1), oracle);
  ASSERT_EQ(trace.records.size(), 2u);
  EXPECT_EQ(trace.records[0].iteration, 0u);
  EXPECT_EQ(trace.records[1].iteration, 1u);
  EXPECT_EQ(trace.queries, 3u);
}

TEST(Attack, QueryCountIsIterationsPlusTwo) {
  for (auto mode : {NarrowingMode::FullImage, NarrowingMode::CharacterArea, NarrowingMode::SkeletonizedArea}) {
    ToyOracle oracle(shared_atlas(), 1000);
    const auto trace = run_attack(corpus()[2].image, small_config(mode, 4, 25), oracle);
    EXPECT_EQ(trace.queries, 27u);
    EXPECT_EQ(oracle.query_count(), 27u);
    EXPECT_EQ(trace.records.size(), 26u);
  }
}

TEST(Attack, BudgetShortfallTruncates) {
  ToyOracle oracle(shared_atlas(), 10);
  const auto trace = run_attack(corpus()[2].image, small_config(NarrowingMode::SkeletonizedArea, 4, 25), oracle);
  EXPECT_EQ(trace.status, TraceStatus::Truncated);
  EXPECT_EQ(trace.queries, 10u);
  EXPECT_EQ(trace.records.size(), 9u);
  EXPECT_TRUE(trace.has_metrics());
  EXPECT_FALSE(trace.message.empty());
}

TEST(Attack, BudgetOfOneLeavesNoRecords) {
  ToyOracle oracle(shared_atlas(), 1);
  const auto trace = run_attack(corpus()[2].image, small_config(NarrowingMode::SkeletonizedArea, 4, 5), oracle);
  EXPECT_EQ(trace.status, TraceStatus::Truncated);
  EXPECT_TRUE(trace.records.empty());
  EXPECT_EQ(trace.metrics.cosine_similarity, 1.0);
}

TEST(Attack, EarlyStopOnZeroSimilarity) {
  // Clean output "q", every later query "z": similarity drops to zero at once.
  class Flip final : public VictimOracle {
   public:
    Flip() : VictimOracle(1000) {}

   protected:
    std::string transcribe(const GrayImage&) override { return query_count() == 1 ? "q" : "z"; }
  } oracle;
  AttackConfig cfg = small_config(NarrowingMode::FullImage, 2, 50);
  cfg.early_stop = true;
  const auto trace = run_attack(corpus()[0].image, cfg, oracle);
  EXPECT_EQ(trace.status, TraceStatus::EarlyStopped);
  EXPECT_EQ(trace.records.size(), 1u);
  EXPECT_EQ(trace.queries, 2u);
  EXPECT_EQ(trace.metrics.cosine_similarity, 0.0);
  EXPECT_TRUE(trace.metrics.success);
}

TEST(Attack, InvalidArgumentsFailBeforeAnyQuery) {
  ToyOracle oracle(shared_atlas(), 100);
  const auto& img = corpus()[0].image;
  const auto skel = build_search_space(img, NarrowingMode::SkeletonizedArea);
  EXPECT_THROW(run_attack(img, small_config(NarrowingMode::SkeletonizedArea, skel.size() + 1, 5), oracle),
               InputError);
  EXPECT_THROW(run_attack(img, small_config(NarrowingMode::SkeletonizedArea, 0, 5), oracle), InputError);
  EXPECT_THROW(run_attack(img, small_config(NarrowingMode::SkeletonizedArea, 3, 0), oracle), InputError);
  EXPECT_THROW(run_attack(GrayImage(60, 50, 255), small_config(NarrowingMode::CharacterArea, 3, 5), oracle),
               EmptySearchSpace);
  EXPECT_EQ(oracle.query_count(), 0u);
}

TEST(Attack, KEqualToSpaceSizeIsAllowed) {
  ToyOracle oracle(shared_atlas(), 100);
  const auto img = render_latex("1");
  const auto skel = build_search_space(img, NarrowingMode::SkeletonizedArea);
  const auto trace = run_attack(img, small_config(NarrowingMode::SkeletonizedArea, skel.size(), 3), oracle);
  EXPECT_EQ(trace.status, TraceStatus::Completed);
}

TEST(Attack, AcceptsOnlyStrictImprovementsAndBestIsMonotone) {
  for (std::size_t i = 0; i < 6; ++i) {
    ToyOracle oracle(shared_atlas(), 1000);
    const auto trace = run_attack(corpus()[i].image, small_config(NarrowingMode::SkeletonizedArea, 8, 60, i), oracle);
    double best = trace.records.front().cosine_similarity;
    EXPECT_EQ(trace.records.front().best_cosine_similarity, best);
    for (std::size_t r = 1; r < trace.records.size(); ++r) {
      const auto& rec = trace.records[r];
      EXPECT_EQ(rec.accepted, rec.cosine_similarity < best);
      best = std::min(best, rec.cosine_similarity);
      EXPECT_EQ(rec.best_cosine_similarity, best);
      EXPECT_LE(rec.best_cosine_similarity, trace.records[r - 1].best_cosine_similarity);
    }
    EXPECT_EQ(trace.metrics.cosine_similarity, best);
  }
}

TEST(Attack, PerturbationStaysInsideTheSearchSpace) {
  for (auto mode : {NarrowingMode::CharacterArea, NarrowingMode::SkeletonizedArea}) {
    for (std::size_t i = 0; i < 8; ++i) {
      const auto& img = corpus()[i].image;
      const std::size_t k = 6;
      ToyOracle oracle(shared_atlas(), 1000);
      const auto trace = run_attack(img, small_config(mode, k, 40, i + 100), oracle);
      const auto space = build_search_space(img, mode);
      const std::set<PixelCoord> allowed(space.coords.begin(), space.coords.end());
      std::size_t changed = 0;
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
          if (img.at(x, y) != trace.final_image.at(x, y)) {
            ++changed;
            EXPECT_TRUE(allowed.contains(PixelCoord{x, y}));
          }
      EXPECT_LE(changed, k);
    }
  }
}

TEST(Attack, RecordedCandidatesReplayToRecordedOutputs) {
  const auto& img = corpus()[4].image;
  const auto cfg = small_config(NarrowingMode::SkeletonizedArea, 10, 50, 8);
  ToyOracle oracle(shared_atlas(), 1000);
  const auto trace = run_attack(img, cfg, oracle);
  const auto space = build_search_space(img, cfg.mode);
  const std::string clean = toy_recognize(*shared_atlas(), img);
  ASSERT_EQ(trace.clean_output->latex, clean);
  for (const auto& rec : trace.records) {
    const auto replay = apply_perturbation(img, space.resolve(rec.candidate), cfg.perturb);
    const auto latex = toy_recognize(*shared_atlas(), replay);
    EXPECT_EQ(latex, rec.latex);
    EXPECT_EQ(cosine_similarity(tokenize(clean), tokenize(latex)), rec.cosine_similarity);
  }
  EXPECT_EQ(apply_perturbation(img, space.resolve(trace.final_candidate), cfg.perturb), trace.final_image);
  EXPECT_EQ(toy_recognize(*shared_atlas(), trace.final_image), trace.final_latex);
  EXPECT_EQ(trace.metrics.psnr, psnr(img, trace.final_image));
  EXPECT_EQ(trace.metrics.accuracy, char_accuracy(clean, trace.final_latex));
}

TEST(Attack, DeterministicForFixedSeed) {
  for (auto kind : {OptimizerKind::RandomSearch, OptimizerKind::CmaEs, OptimizerKind::Tpe}) {
    auto cfg = small_config(NarrowingMode::SkeletonizedArea, 6, 30, 17);
    cfg.optimizer.kind = kind;
    ToyOracle a(shared_atlas(), 100), b(shared_atlas(), 100);
    const auto ta = run_attack(corpus()[5].image, cfg, a);
    const auto tb = run_attack(corpus()[5].image, cfg, b);
    ASSERT_EQ(ta.records.size(), tb.records.size());
    for (std::size_t r = 0; r < ta.records.size(); ++r) {
      EXPECT_EQ(ta.records[r].candidate, tb.records[r].candidate);
      EXPECT_EQ(ta.records[r].latex, tb.records[r].latex);
    }
    EXPECT_EQ(ta.final_image, tb.final_image);
  }
}

TEST(Attack, SetValuePerturbationWritesTheValue) {
  auto cfg = small_config(NarrowingMode::FullImage, 5, 3, 2);
  cfg.perturb = PerturbModel::set_value(128);
  ToyOracle oracle(shared_atlas(), 100);
  const auto& img = corpus()[0].image;
  const auto trace = run_attack(img, cfg, oracle);
  for (std::size_t i = 0; i < img.pixels().size(); ++i)
    if (img.pixels()[i] != trace.final_image.pixels()[i]) {
      EXPECT_EQ(trace.final_image.pixels()[i], 128);
    }
}

TEST(Attack, StagnationRestartKeepsRunning) {
  auto cfg = small_config(NarrowingMode::SkeletonizedArea, 4, 40, 5);
  cfg.optimizer.kind = OptimizerKind::Tpe;
  cfg.stagnation_restart = 5;
  ConstantOracle oracle("a");
  const auto trace = run_attack(corpus()[0].image, cfg, oracle);
  EXPECT_EQ(trace.status, TraceStatus::Completed);
  EXPECT_EQ(trace.records.size(), 41u);
}

TEST(Grid, ExpansionOrderAndValidation) {
  AttackGrid grid;
  grid.modes = {NarrowingMode::FullImage, NarrowingMode::SkeletonizedArea};
  grid.budgets = {1, 5};
  grid.optimizers = {testsupport::optimizer_of(OptimizerKind::Tpe), testsupport::optimizer_of(OptimizerKind::RandomSearch)};
  const auto cells = expand_grid(grid, AttackConfig{});
  ASSERT_EQ(cells.size(), 8u);
  EXPECT_EQ(cells[0].optimizer.kind, OptimizerKind::Tpe);
  EXPECT_EQ(cells[0].mode, NarrowingMode::FullImage);
  EXPECT_EQ(cells[0].k, 1u);
  EXPECT_EQ(cells[1].k, 5u);
  EXPECT_EQ(cells[2].mode, NarrowingMode::SkeletonizedArea);
  EXPECT_EQ(cells[4].optimizer.kind, OptimizerKind::RandomSearch);
  grid.budgets.clear();
  EXPECT_THROW(expand_grid(grid, AttackConfig{}), InputError);
  grid.budgets = {1};
  grid.optimizers.push_back(testsupport::optimizer_of(OptimizerKind::Tpe));
  EXPECT_THROW(expand_grid(grid, AttackConfig{}), InputError);
}

TEST(Batch, ThreeByThreeGridGivesNineAggregateRows) {
  const auto batch = testsupport::corpus_batch();
  const std::vector<BatchImage> data(batch.begin(), batch.begin() + 3);
  AttackGrid grid;
  grid.modes = {NarrowingMode::FullImage, NarrowingMode::CharacterArea, NarrowingMode::SkeletonizedArea};
  grid.budgets = {1, 5, 10};
  AttackConfig base;
  base.iterations = 15;
  const auto configs = expand_grid(grid, base);
  const auto traces = run_batch(data, configs, testsupport::toy_factory(17), 2);
  ASSERT_EQ(traces.size(), 27u);
  for (std::size_t c = 0; c < configs.size(); ++c)
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& t = traces[c * data.size() + i];
      EXPECT_EQ(t.image_id, data[i].id);
      EXPECT_EQ(t.ground_truth, data[i].ground_truth);
      EXPECT_EQ(t.config.mode, configs[c].mode);
      EXPECT_EQ(t.config.k, configs[c].k);
      EXPECT_EQ(t.config.seed, mix_seed(base.seed, i));
      EXPECT_EQ(t.status, TraceStatus::Completed);
    }
  const auto rows = aggregate(traces);
  ASSERT_EQ(rows.size(), 9u);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    EXPECT_EQ(rows[r].images, 3u);
    double cos = 0, succ = 0, acc = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& t = traces[r * 3 + i];
      cos += t.metrics.cosine_similarity;
      succ += t.metrics.success;
      acc += t.metrics.accuracy;
    }
    EXPECT_NEAR(rows[r].mean_cosine_similarity, cos / 3, 1e-12);
    EXPECT_NEAR(rows[r].success_rate, succ / 3, 1e-12);
    EXPECT_NEAR(rows[r].mean_accuracy, acc / 3, 1e-12);
  }
}

TEST(Batch, FailedCellDoesNotStopTheBatch) {
  std::vector<BatchImage> data{{"blank", "", GrayImage(80, 50, 255)}, testsupport::corpus_batch()[0]};
  AttackConfig cfg;
  cfg.k = 3;
  cfg.iterations = 10;
  const auto traces = run_batch(data, {cfg}, testsupport::toy_factory(12));
  ASSERT_EQ(traces.size(), 2u);
  EXPECT_EQ(traces[0].status, TraceStatus::Failed);
  EXPECT_FALSE(traces[0].has_metrics());
  EXPECT_EQ(traces[1].status, TraceStatus::Completed);
  const auto rows = aggregate(traces);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].images, 1u);
  EXPECT_EQ(rows[0].failed, 1u);
  EXPECT_EQ(rows[0].mean_cosine_similarity, traces[1].metrics.cosine_similarity);
}

TEST(Batch, ResultsIndependentOfThreadCount) {
  const auto batch = testsupport::corpus_batch();
  const std::vector<BatchImage> data(batch.begin(), batch.begin() + 5);
  AttackGrid grid;
  grid.modes = {NarrowingMode::CharacterArea, NarrowingMode::SkeletonizedArea};
  grid.budgets = {4};
  grid.optimizers = {testsupport::optimizer_of(OptimizerKind::RandomSearch), testsupport::optimizer_of(OptimizerKind::CmaEs)};
  AttackConfig base;
  base.iterations = 20;
  base.seed = 41;
  const auto configs = expand_grid(grid, base);
  const auto one = run_batch(data, configs, testsupport::toy_factory(22), 1);
  const auto many = run_batch(data, configs, testsupport::toy_factory(22), 6);
  ASSERT_EQ(one.size(), many.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].final_image, many[i].final_image);
    EXPECT_EQ(one[i].final_latex, many[i].final_latex);
    EXPECT_EQ(one[i].metrics.cosine_similarity, many[i].metrics.cosine_similarity);
  }
}

TEST(Batch, EmptyDatasetIsInputError) {
  EXPECT_THROW(run_batch({}, {AttackConfig{}}, testsupport::toy_factory(5)), InputError);
}
