#include <CLI11.hpp>

#include <ostream>

#include "hybridseg/cli.hpp"
#include "hybridseg/config.hpp"

namespace hybridseg::cli {

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid-supervised mass segmentation toolkit"};
  app.require_subcommand(1);
  Args args;
  std::uint64_t seed = 0;

  const auto add_seed = [&](CLI::App* cmd) { cmd->add_option("--seed", seed, "Overrides the configured seed"); };

  auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic corpus");
  synth->add_option("--config", args.config, "Synthesis config (JSON)");
  synth->add_option("--out", args.out, "Output dataset directory")->required();
  add_seed(synth);

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", args.config, "Training config (JSON)")->required();
  train->add_option("--out", args.out, "Output directory (overrides output_dir)");
  train->add_option("--dataset", args.dataset, "Dataset directory (overrides dataset)");
  train->add_option("--resume", args.resume, "Continue from a checkpoint written by the same config");
  add_seed(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and append a results row");
  eval->add_option("--checkpoint", args.checkpoint, "Checkpoint path, or @oracle")->required();
  eval->add_option("--dataset", args.dataset, "Dataset directory")->required();
  eval->add_option("--out", args.out, "Results CSV (appended)")->required();
  eval->add_option("--split", args.split, "test (seeded held-out split) or all")->capture_default_str();
  eval->add_option("--name", args.name, "Dataset name in the results row");
  add_seed(eval);

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate a grid of variants");
  ablate->add_option("--config", args.config, "Ablation config (JSON)")->required();
  ablate->add_option("--out", args.out, "Output directory")->required();
  ablate->add_option("--dataset", args.dataset, "Dataset directory (overrides train.dataset)");
  add_seed(ablate);

  auto* overlay = app.add_subcommand("overlay", "Render ground-truth and prediction contours");
  overlay->add_option("--checkpoint", args.checkpoint, "Checkpoint path, or @oracle")->required();
  overlay->add_option("--dataset", args.dataset, "Dataset directory")->required();
  overlay->add_option("--out", args.out, "Output directory")->required();
  overlay->add_option("--split", args.split, "test or all")->capture_default_str();
  add_seed(overlay);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  bool seed_given = false;
  for (auto* cmd : {synth, train, eval, ablate, overlay})
    if (cmd->parsed() && cmd->count("--seed")) seed_given = true;
  if (seed_given) args.seed = seed;

  try {
    if (synth->parsed()) cmd_synth_gen(args);
    if (train->parsed()) cmd_train(args);
    if (eval->parsed()) cmd_eval(args);
    if (ablate->parsed()) cmd_ablate(args);
    if (overlay->parsed()) cmd_overlay(args);
  } catch (const ConfigError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: runtime: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

}  // namespace hybridseg::cli
