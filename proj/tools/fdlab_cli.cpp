// Command-line entry point: train, eval, verify, grid.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "fdlab/commands.hpp"
#include "fdlab/runtime.hpp"
#include "fdlab/verify.hpp"

int main(int argc, char** argv) {
  fdlab::tune_allocator();
  CLI::App app{"Fraternal dropout language-model lab"};
  app.require_subcommand(1);

  fdlab::TrainCommand train;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("config", train.config, "Experiment config (INI)")->required();
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "Override run.seed");
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  std::string resume;
  train_cmd->add_option("--resume", resume, "Start from the parameters of a checkpoint");
  train_cmd->add_flag("-v,--verbose", train.verbose, "Print metrics rows as they are produced");

  fdlab::EvalCommand eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("data", eval.data_dir, std::string("Data directory (default $") + fdlab::kDataDirEnv + ")");
  eval_cmd->add_option("--split", eval.split, "valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  eval_cmd->add_option("--mc", eval.mc, "Monte-Carlo sequence averaging over K mask draws");
  eval_cmd->add_option("--mc-seed", eval.mc_seed, "Seed for the Monte-Carlo mask draws");
  eval_cmd->add_option("--batch", eval.batch, "Evaluation batch size");
  eval_cmd->add_option("--bptt", eval.bptt, "Evaluation window length");

  fdlab::VerifyOptions verify;
  auto* verify_cmd = app.add_subcommand("verify", "Check the variance identity and the ELD bound by enumeration");
  verify_cmd->add_option("--bits", verify.bits, "Mask-bit budget per tiny network (at most 20)");
  verify_cmd->add_option("--trials", verify.trials, "Number of random tiny networks");
  verify_cmd->add_option("--seed", verify.seed, "Population seed");
  verify_cmd->add_option("--mc-samples", verify.mc_samples, "Pairs drawn for the Monte-Carlo check");

  fdlab::GridCommand grid;
  double baseline = 0.0;
  auto* grid_cmd = app.add_subcommand("grid", "Random search over a config with ranges");
  grid_cmd->add_option("config", grid.config, "Grid config (INI with a [grid] section)")->required();
  grid_cmd->add_option("--out", grid.out, "Output directory")->required();
  grid_cmd->add_option("--parallel", grid.parallel, "Concurrent runs");
  auto* baseline_opt = grid_cmd->add_option("--baseline", baseline, "Perplexity a run must beat");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      if (*seed_opt) train.seed = train_seed;
      if (!resume.empty()) train.resume = resume;
      fdlab::cmd_train(train, std::cout);
    } else if (*eval_cmd) {
      fdlab::cmd_eval(eval, std::cout);
    } else if (*verify_cmd) {
      const fdlab::VerifyReport report = fdlab::run_verification(verify);
      std::cout << fdlab::to_json(report) << std::endl;
      return report.passed() ? 0 : 1;
    } else if (*grid_cmd) {
      if (*baseline_opt) grid.baseline = baseline;
      return fdlab::cmd_grid(grid, std::cout).all_succeeded() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
