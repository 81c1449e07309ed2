#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "skelattack.hpp"

namespace sa = skelattack;

int main(int argc, char** argv) {
  CLI::App app{"Search-space-narrowed black-box attacks on LaTeX OCR"};
  app.require_subcommand(1);

  sa::GenDatasetOptions gen;
  std::string gen_atlas;
  auto* gen_cmd = app.add_subcommand("gen-dataset", "Render a synthetic formula corpus");
  gen_cmd->add_option("--n", gen.n, "Number of formulas")->default_val(40);
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->default_val(7);
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--atlas", gen_atlas, "Glyph atlas directory (default: built-in)");

  std::string config_path;
  auto* attack_cmd = app.add_subcommand("attack", "Run the attack grid from a JSON config");
  attack_cmd->add_option("config", config_path, "Run config file")->required();

  sa::ReportOptions rep;
  std::string rep_annotations;
  std::string rep_out;
  bool rep_no_export = false;
  auto* report_cmd = app.add_subcommand("report", "Render tables from an attack run");
  report_cmd->add_option("run_dir", rep.run_dir, "Attack output directory")->required();
  report_cmd->add_option("--annotations", rep_annotations, "Semantic-change annotation file");
  report_cmd->add_option("--out", rep_out, "Report directory (default: <run_dir>/report)");
  report_cmd->add_flag("--no-export", rep_no_export, "Skip the side-by-side transfer export");

  sa::ExportOptions exp;
  std::string exp_out, exp_dataset, exp_mode, exp_optimizer;
  std::optional<std::size_t> exp_k;
  auto* export_cmd =
      app.add_subcommand("export-transfer", "Export clean/adversarial pairs for manual review");
  export_cmd->add_option("run_dir", exp.run_dir, "Attack output directory")->required();
  export_cmd->add_option("--out", exp_out, "Export directory (default: <run_dir>/transfer)");
  export_cmd->add_option("--dataset", exp_dataset, "Dataset manifest (default: from run.json)");
  export_cmd->add_option("--mode", exp_mode, "Only this narrowing mode");
  export_cmd->add_option("--k", exp_k, "Only this pixel budget");
  export_cmd->add_option("--optimizer", exp_optimizer, "Only this optimizer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return sa::kExitUsage;
  }

  return sa::run_command([&]() -> int {
    if (*gen_cmd) {
      if (!gen_atlas.empty()) gen.atlas_dir = gen_atlas;
      return sa::cmd_gen_dataset(gen);
    }
    if (*attack_cmd) return sa::cmd_attack(config_path);
    if (*report_cmd) {
      if (!rep_annotations.empty()) rep.annotations = rep_annotations;
      if (!rep_out.empty()) rep.out_dir = rep_out;
      rep.export_pairs = !rep_no_export;
      return sa::cmd_report(rep);
    }
    if (!exp_out.empty()) exp.out_dir = exp_out;
    if (!exp_dataset.empty()) exp.dataset = exp_dataset;
    if (!exp_mode.empty()) exp.filter.mode = sa::parse_narrowing_mode(exp_mode);
    if (!exp_optimizer.empty()) exp.filter.optimizer = sa::parse_optimizer_kind(exp_optimizer);
    exp.filter.k = exp_k;
    return sa::cmd_export_transfer(exp);
  });
}
