#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "support.hpp"

using namespace skelattack;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int status = -1;
  std::string out;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

CliResult cli(const std::vector<std::string>& args, const std::string& env = {}) {
  std::string cmd = env.empty() ? "" : env + " ";
  cmd += quote(SKELATTACK_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>/dev/null";
  CliResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

fs::path make_dataset(const fs::path& root, int n, std::uint64_t seed = 7) {
  const auto dir = root / "data";
  EXPECT_EQ(cli({"gen-dataset", "--n", std::to_string(n), "--seed", std::to_string(seed), "--out",
                 dir.string()})
                .status,
            0);
  return dir;
}

fs::path write_config(const fs::path& root, const nlohmann::json& j, const std::string& name = "run.json") {
  const auto path = root / name;
  write_file_text(path, j.dump(2));
  return path;
}

nlohmann::json base_config(const fs::path& dataset, const fs::path& out) {
  return {{"dataset", dataset.string()},
          {"output_dir", out.string()},
          {"iterations", 20},
          {"seed", 5},
          {"grid", {{"modes", {"skeleton"}}, {"budgets", {5}}, {"optimizers", {"random"}}}}};
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(TraceIo, JsonlRoundTripKeepsInfinitePsnr) {
  testsupport::ConstantOracle oracle("x");
  AttackConfig cfg;
  cfg.k = 2;
  cfg.iterations = 4;
  auto trace = run_attack(testsupport::corpus()[0].image, cfg, oracle, "eq000");
  trace.ground_truth = "x";
  // Force the unperturbed case by hand.
  trace.metrics.psnr = std::numeric_limits<double>::infinity();
  const auto text = trace_to_jsonl(trace);
  EXPECT_NE(text.find("\"psnr\":\"inf\""), std::string::npos);
  const auto back = trace_from_jsonl(text);
  EXPECT_TRUE(std::isinf(back.metrics.psnr));
  EXPECT_EQ(back.image_id, trace.image_id);
  EXPECT_EQ(back.ground_truth, trace.ground_truth);
  EXPECT_EQ(back.config.k, trace.config.k);
  EXPECT_EQ(back.config.mode, trace.config.mode);
  EXPECT_EQ(back.records.size(), trace.records.size());
  EXPECT_EQ(back.final_candidate, trace.final_candidate);
  EXPECT_EQ(back.status, trace.status);
  EXPECT_EQ(back.queries, trace.queries);
  EXPECT_EQ(trace_to_jsonl(back), text);
}

TEST(TraceIo, MalformedTraceIsInputError) {
  EXPECT_THROW(trace_from_jsonl(""), InputError);
  EXPECT_THROW(trace_from_jsonl("{\"type\":\"header\"}\n"), InputError);
  EXPECT_THROW(trace_from_jsonl("not json\n"), InputError);
}

TEST(TraceIo, MetricsHeader) {
  EXPECT_EQ(lines(metrics_csv({})).front(),
            "image_id,mode,k,optimizer,cosine_similarity,success,accuracy,psnr,queries,wall_time_ms");
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 2);
  auto j = base_config(data, dir.path() / "out");
  EXPECT_NO_THROW(parse_run_config(j, dir.path()));
  auto bad = j;
  bad["iteratons"] = 5;
  EXPECT_THROW(parse_run_config(bad, dir.path()), InputError);
  bad = j;
  bad["grid"]["modes"] = {"everything"};
  EXPECT_THROW(parse_run_config(bad, dir.path()), InputError);
  bad = j;
  bad["oracle"] = {{"kind", "toy"}, {"budget", 3}};
  EXPECT_THROW(parse_run_config(bad, dir.path()), InputError);
  bad = j;
  bad["dataset"] = (dir.path() / "nowhere").string();
  EXPECT_THROW(parse_run_config(bad, dir.path()), InputError);
  EXPECT_EQ(parse_run_config(j, dir.path(), "0x10").base.seed, 16u);
  EXPECT_THROW(parse_run_config(j, dir.path(), "ten"), InputError);
}

TEST(Config, RelativePathsResolveAgainstConfigDirectory) {
  TempDir dir;
  make_dataset(dir.path(), 1);
  const auto rc = parse_run_config({{"dataset", "data"}, {"output_dir", "out"}}, dir.path());
  EXPECT_EQ(rc.dataset, dir.path() / "data" / "manifest.json");
  EXPECT_EQ(rc.output_dir, dir.path() / "out");
  EXPECT_EQ(rc.cell_query_budget(), rc.base.iterations + 2);
}

TEST(Cli, ZeroImagesIsUsageError) {
  TempDir dir;
  EXPECT_EQ(cli({"gen-dataset", "--n", "0", "--out", (dir.path() / "d").string()}).status, 2);
  EXPECT_EQ(cli({"attack"}).status, 2);
  EXPECT_EQ(cli({"no-such-command"}).status, 2);
}

TEST(Cli, GenDatasetIsDeterministic) {
  TempDir a, b;
  const auto da = make_dataset(a.path(), 5, 11);
  const auto db = make_dataset(b.path(), 5, 11);
  EXPECT_EQ(read_file_text(da / "manifest.json"), read_file_text(db / "manifest.json"));
  for (const auto& e : load_manifest(da / "manifest.json").entries)
    EXPECT_EQ(read_file_bytes(da / e.path), read_file_bytes(db / e.path));
}

TEST(Cli, SingleImageSmokeRun) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 1);
  const auto out = dir.path() / "out";
  const auto cfg = write_config(dir.path(), base_config(data, out));
  const auto r = cli({"attack", cfg.string()});
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(count_files(out / "traces", ".jsonl"), 1u);
  EXPECT_EQ(count_files(out / "adversarial", ".png"), 1u);
  ASSERT_TRUE(fs::exists(out / "aggregates.csv"));
  EXPECT_EQ(r.out, read_file_text(out / "aggregates.csv"));
  EXPECT_EQ(lines(read_file_text(out / "aggregates.csv")).size(), 2u);
  EXPECT_EQ(lines(read_file_text(out / "metrics.csv")).size(), 2u);
  EXPECT_TRUE(fs::exists(out / "metrics.jsonl"));
  const auto run = nlohmann::json::parse(read_file_text(out / "run.json"));
  EXPECT_EQ(run["cells"], 1);
  EXPECT_EQ(run["failed_cells"], 0);
  EXPECT_EQ(run["oracle"]["query_budget"], 22);
}

TEST(Cli, SameFlagsGiveIdenticalArtifacts) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 3);
  auto j = base_config(data, dir.path() / "a");
  j["grid"]["optimizers"] = {"random", "cmaes", "tpe"};
  const auto ca = write_config(dir.path(), j, "a.json");
  j["output_dir"] = (dir.path() / "b").string();
  const auto cb = write_config(dir.path(), j, "b.json");
  ASSERT_EQ(cli({"attack", ca.string()}).status, 0);
  ASSERT_EQ(cli({"attack", cb.string()}).status, 0);
  for (const auto& e : fs::directory_iterator(dir.path() / "a" / "adversarial")) {
    const auto other = dir.path() / "b" / "adversarial" / e.path().filename();
    EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(other)) << e.path().filename();
  }
  for (const auto& e : fs::directory_iterator(dir.path() / "a" / "traces")) {
    auto ta = trace_from_jsonl(read_file_text(e.path()));
    auto tb = trace_from_jsonl(read_file_text(dir.path() / "b" / "traces" / e.path().filename()));
    ASSERT_EQ(ta.records.size(), tb.records.size());
    for (std::size_t i = 0; i < ta.records.size(); ++i) {
      EXPECT_EQ(ta.records[i].candidate, tb.records[i].candidate);
      EXPECT_EQ(ta.records[i].latex, tb.records[i].latex);
    }
    EXPECT_EQ(ta.final_latex, tb.final_latex);
  }
}

TEST(Cli, SeedEnvironmentOverride) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 1);
  const auto cfg = write_config(dir.path(), base_config(data, dir.path() / "out"));
  ASSERT_EQ(cli({"attack", cfg.string()}, "SKELATTACK_SEED=123").status, 0);
  const auto run = nlohmann::json::parse(read_file_text(dir.path() / "out" / "run.json"));
  EXPECT_EQ(run["seed"], 123);
  EXPECT_EQ(cli({"attack", cfg.string()}, "SKELATTACK_SEED=abc").status, 2);
}

TEST(Cli, ThreeByThreeGridGivesNineRows) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 2);
  auto j = base_config(data, dir.path() / "out");
  j["grid"]["modes"] = {"full", "character", "skeleton"};
  j["grid"]["budgets"] = {1, 5, 10};
  j["iterations"] = 10;
  const auto cfg = write_config(dir.path(), j);
  ASSERT_EQ(cli({"attack", cfg.string()}).status, 0);
  EXPECT_EQ(lines(read_file_text(dir.path() / "out" / "aggregates.csv")).size(), 10u);
  EXPECT_EQ(count_files(dir.path() / "out" / "traces", ".jsonl"), 18u);
}

TEST(Cli, MissingDatasetIsUsageError) {
  TempDir dir;
  const auto cfg = write_config(dir.path(), base_config(dir.path() / "nothing", dir.path() / "out"));
  EXPECT_EQ(cli({"attack", cfg.string()}).status, 2);
  EXPECT_EQ(cli({"attack", (dir.path() / "absent.json").string()}).status, 2);
}

TEST(Cli, ExternalOracleStartupFailureExitsThree) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 1);
  auto j = base_config(data, dir.path() / "out");
  j["oracle"] = {{"kind", "external"}, {"command", "/nonexistent/ocr"}};
  EXPECT_EQ(cli({"attack", write_config(dir.path(), j).string()}).status, 3);
  j["oracle"] = {{"kind", "external"}, {"command", STUB_ORACLE_PATH}, {"args", {"bad-handshake"}}};
  EXPECT_EQ(cli({"attack", write_config(dir.path(), j).string()}).status, 3);
}

TEST(Cli, ExternalOracleRunsThroughStub) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 2);
  auto j = base_config(data, dir.path() / "out");
  j["oracle"] = {{"kind", "external"}, {"command", STUB_ORACLE_PATH}, {"args", {"dims"}}};
  j["threads"] = 2;
  EXPECT_EQ(cli({"attack", write_config(dir.path(), j).string()}).status, 0);
  EXPECT_EQ(count_files(dir.path() / "out" / "traces", ".jsonl"), 2u);
}

TEST(Cli, PartialBatchExitsFour) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 2);
  auto j = base_config(data, dir.path() / "out");
  j["grid"]["budgets"] = {5, 100000};
  const auto r = cli({"attack", write_config(dir.path(), j).string()});
  EXPECT_EQ(r.status, 4);
  const auto run = nlohmann::json::parse(read_file_text(dir.path() / "out" / "run.json"));
  EXPECT_EQ(run["failed_cells"], 2);
  EXPECT_EQ(count_files(dir.path() / "out" / "traces", ".jsonl"), 4u);
  EXPECT_EQ(count_files(dir.path() / "out" / "adversarial", ".png"), 2u);
}

TEST(Report, RecountsAndIsIdempotent) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 3);
  auto j = base_config(data, dir.path() / "out");
  j["grid"]["modes"] = {"character", "skeleton"};
  j["grid"]["optimizers"] = {"random", "cmaes"};
  ASSERT_EQ(cli({"attack", write_config(dir.path(), j).string()}).status, 0);
  const auto run = dir.path() / "out";
  ASSERT_EQ(cli({"report", run.string()}).status, 0);
  EXPECT_EQ(read_file_text(run / "report" / "aggregates.csv"), read_file_text(run / "aggregates.csv"));
  const auto first = read_file_text(run / "report" / "report.md");
  const auto t1 = read_file_text(run / "report" / "narrowing.csv");
  ASSERT_EQ(cli({"report", run.string()}).status, 0);
  EXPECT_EQ(read_file_text(run / "report" / "report.md"), first);
  EXPECT_EQ(read_file_text(run / "report" / "narrowing.csv"), t1);

  // Independent recount from the raw traces.
  const auto traces = load_traces(run);
  std::map<std::string, std::pair<double, int>> cos;
  for (const auto& t : traces) {
    auto& [sum, n] = cos[std::string(to_string(t.config.optimizer.kind)) + "," +
                         std::string(to_string(t.config.mode))];
    sum += t.metrics.cosine_similarity;
    ++n;
  }
  const auto agg = lines(read_file_text(run / "aggregates.csv"));
  ASSERT_EQ(agg.size(), 5u);
  for (std::size_t i = 1; i < agg.size(); ++i) {
    std::vector<std::string> cells;
    std::istringstream row(agg[i]);
    for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
    const auto& [sum, n] = cos.at(cells[0] + "," + cells[1]);
    EXPECT_EQ(n, 3);
    EXPECT_NEAR(std::stod(cells[6]), sum / n, 1e-6) << agg[i];
  }
}

TEST(Report, AllFailingSuccessColumnIsZero) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 2);
  auto j = base_config(data, dir.path() / "out");
  j["oracle"] = {{"kind", "external"}, {"command", STUB_ORACLE_PATH}, {"args", {"fixed", "q"}}};
  ASSERT_EQ(cli({"attack", write_config(dir.path(), j).string()}).status, 0);
  ASSERT_EQ(cli({"report", (dir.path() / "out").string(), "--no-export"}).status, 0);
  const auto agg = lines(read_file_text(dir.path() / "out" / "report" / "aggregates.csv"));
  ASSERT_EQ(agg.size(), 2u);
  std::vector<std::string> header, row;
  for (std::istringstream h(agg[0]); !h.eof();) header.emplace_back(), std::getline(h, header.back(), ',');
  for (std::istringstream r(agg[1]); !r.eof();) row.emplace_back(), std::getline(r, row.back(), ',');
  const auto col = std::find(header.begin(), header.end(), "success_rate") - header.begin();
  ASSERT_LT(static_cast<std::size_t>(col), row.size());
  EXPECT_EQ(std::stod(row[col]), 0.0);
}

TEST(Report, AnnotationRateAndUnknownIds) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 40);
  auto j = base_config(data, dir.path() / "out");
  j["iterations"] = 5;
  ASSERT_EQ(cli({"attack", write_config(dir.path(), j).string()}).status, 0);
  nlohmann::json ann = nlohmann::json::array();
  for (int i = 0; i < 40; ++i) ann.push_back({{"image_id", formula_id(i)}, {"semantic_changed", i < 28}});
  write_file_text(dir.path() / "ann.json", nlohmann::json{{"annotations", ann}}.dump());
  ASSERT_EQ(cli({"report", (dir.path() / "out").string(), "--annotations",
                 (dir.path() / "ann.json").string(), "--no-export"})
                .status,
            0);
  const auto t3 = read_file_text(dir.path() / "out" / "report" / "semantic.csv");
  EXPECT_NE(t3.find(",attacked,0.700"), std::string::npos) << t3;

  ann.push_back({{"image_id", "eq999"}, {"semantic_changed", true}});
  ann.push_back({{"image_id", "bogus"}, {"semantic_changed", false}});
  write_file_text(dir.path() / "bad.json", ann.dump());
  std::vector<Annotation> parsed = parse_annotations(ann);
  std::set<std::string> known;
  for (int i = 0; i < 40; ++i) known.insert(formula_id(i));
  try {
    check_annotation_ids(parsed, known);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("eq999"), std::string::npos);
    EXPECT_NE(msg.find("bogus"), std::string::npos);
    EXPECT_EQ(msg.find("eq001"), std::string::npos);
  }
  EXPECT_EQ(cli({"report", (dir.path() / "out").string(), "--annotations",
                 (dir.path() / "bad.json").string()})
                .status,
            2);
}

TEST(Report, SemanticRatesFromAnnotations) {
  std::vector<AttackTrace> traces;
  for (int i = 0; i < 4; ++i) {
    AttackTrace t;
    t.image_id = formula_id(i);
    t.ground_truth = "a+b";
    t.clean_output = OcrOutput{"a+b", tokenize("a+b"), 0};
    t.final_latex = i % 2 ? "a-b" : "a+b";
    traces.push_back(t);
  }
  std::vector<Annotation> ann{{"eq000", true, "", false}, {"eq001", false, "", false},
                              {"eq002", true, "", true}};
  const auto rows = semantic_change_rows(traces, ann);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].annotated, 3u);
  EXPECT_NEAR(rows[0].attacked_semantic_rate, 2.0 / 3.0, 1e-12);
  ASSERT_TRUE(rows[0].original_semantic_rate);
  EXPECT_NEAR(*rows[0].original_semantic_rate, 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(rows[0].original_character_cosine, 1.0);
  const double plus_minus = cosine_similarity("a+b", "a-b");
  EXPECT_NEAR(rows[0].attacked_character_cosine, (2.0 + 2.0 * plus_minus) / 4.0, 1e-12);
}

TEST(Export, TransferPairsWritten) {
  TempDir dir;
  const auto data = make_dataset(dir.path(), 2);
  auto j = base_config(data, dir.path() / "out");
  j["grid"]["modes"] = {"character", "skeleton"};
  ASSERT_EQ(cli({"attack", write_config(dir.path(), j).string()}).status, 0);
  const auto out = dir.path() / "pairs";
  ASSERT_EQ(cli({"export-transfer", (dir.path() / "out").string(), "--out", out.string(), "--mode",
                 "skeleton"})
                .status,
            0);
  EXPECT_TRUE(fs::exists(out / "PROMPT.md"));
  const auto index = lines(read_file_text(out / "index.csv"));
  EXPECT_EQ(index.size(), 3u);
  std::size_t cells = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (!e.is_directory()) continue;
    ++cells;
    EXPECT_NE(e.path().filename().string().find("__skeleton__"), std::string::npos);
    for (const char* f : {"clean.png", "adversarial.png", "side_by_side.png", "pair.json"})
      EXPECT_TRUE(fs::exists(e.path() / f)) << f;
    const auto clean = png::read(e.path() / "clean.png");
    const auto adv = png::read(e.path() / "adversarial.png");
    const auto both = png::read(e.path() / "side_by_side.png");
    EXPECT_EQ(both.width(), clean.width() + adv.width() + 16);
  }
  EXPECT_EQ(cells, 2u);
}
