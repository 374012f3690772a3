#include <CLI11.hpp>

#include "commands.hpp"
#include "disperse/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "disperse: identity-unlearning workbench for hypersphere embedding "
      "models"};
  app.set_version_flag("--version", disperse::config::kToolVersion);
  app.require_subcommand(1);

  disperse::cli::CommonArgs args;
  std::string method;

  auto add_common = [&](CLI::App* sub, bool with_method) {
    sub->add_option("--config", args.config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--seed", args.seed,
                    "run a single forget-set seed instead of the config list");
    sub->add_option("--out", args.out, "output directory override");
    if (with_method)
      sub->add_option("--method", method,
                      "unlearning method (defaults to the config's)");
    return sub;
  };

  auto* generate = add_common(
      app.add_subcommand("generate", "synthesize the dataset and splits"),
      false);
  auto* train = add_common(
      app.add_subcommand("train", "train the original encoder"), false);
  train->add_flag("--force", args.force, "retrain even if a snapshot exists");
  auto* unlearn = add_common(
      app.add_subcommand("unlearn", "run an unlearning method per seed"), true);
  auto* evaluate = add_common(
      app.add_subcommand("evaluate",
                         "score original vs unlearned and emit reports"),
      true);
  auto* sweep = add_common(
      app.add_subcommand("sweep", "expand the unlearn grid and run every cell"),
      false);
  sweep->add_option("--jobs", args.jobs, "parallel sweep workers")
      ->default_val(1);
  auto* report = add_common(
      app.add_subcommand("report", "re-aggregate per-seed metrics files"),
      true);

  CLI11_PARSE(app, argc, argv);

  if (generate->parsed()) return disperse::cli::cmd_generate(args);
  if (train->parsed()) return disperse::cli::cmd_train(args);
  if (unlearn->parsed()) return disperse::cli::cmd_unlearn(args, method);
  if (evaluate->parsed()) return disperse::cli::cmd_evaluate(args, method);
  if (sweep->parsed()) return disperse::cli::cmd_sweep(args);
  if (report->parsed()) return disperse::cli::cmd_report(args, method);
  return 1;
}
