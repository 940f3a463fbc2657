#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uwbseq/pipeline.hpp"

namespace pl = uwbseq::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic UWB localization workbench"};
  app.require_subcommand(1);

  std::string config_path, profile_name = "desk", workdir = ".";
  std::uint64_t seed = 0;
  bool seed_given = false;
  pl::Options opts;
  opts.log = &std::cout;

  app.add_option("--config", config_path, "JSON config overlaid on the profile")->check(CLI::ExistingFile);
  app.add_option("--profile", profile_name, "Base profile: desk or paper")->capture_default_str();
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "Run seed");
  app.add_option("--jobs", opts.jobs, "Trial-level worker threads (1 = serial)")->check(CLI::PositiveNumber);
  app.add_flag("--force", opts.force, "Overwrite existing outputs");
  app.add_option("--workdir", workdir, "Root of all inputs and outputs")->capture_default_str();

  int n_trials = 0;
  auto* simulate = app.add_subcommand("simulate", "Generate trials and the train/test manifest");
  simulate->add_option("--trials", n_trials, "Number of trials (overrides dataset.n_trials)");

  std::string labels;
  int tags = 0;
  auto add_variant = [&](CLI::App* cmd) {
    cmd->add_option("--labels", labels, "Label source: osl or gt")->check(CLI::IsMember({"osl", "gt"}));
    cmd->add_option("--tags", tags, "Tags used: 1 or 2")->check(CLI::Range(1, 2));
  };
  auto* prepare = app.add_subcommand("prepare", "Bin, label and window the trials");
  add_variant(prepare);
  std::vector<std::string> kinds;
  auto* train = app.add_subcommand("train", "Train the learned models and predict the test trials");
  add_variant(train);
  train->add_option("--models", kinds, "Model kinds (default: model.kinds)");
  auto* base = app.add_subcommand("baseline", "Run the classical graph-optimization baseline");
  add_variant(base);
  std::vector<std::string> methods;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
  add_variant(evaluate);
  evaluate->add_option("--methods", methods, "Methods to compare (default: all with predictions)");
  auto* ablate = app.add_subcommand("ablate", "Labels x tags ablation grid");

  CLI11_PARSE(app, argc, argv);

  try {
    uwbseq::RunConfig config = uwbseq::profile(profile_name);
    if (!config_path.empty()) config = uwbseq::load_config(config_path, config);
    if (seed_given) config.seed = config.train.seed = seed;
    if (n_trials > 0) {
      config.dataset.n_trials = n_trials;
      config.dataset.n_train = std::min(config.dataset.n_train, n_trials);
    }
    config.validate();
    pl::Variant v = pl::default_variant(config);
    if (!labels.empty()) v.labels = labels;
    if (tags) v.tags = tags;
    if (kinds.empty()) kinds = config.model.kinds;

    if (*simulate) {
      pl::simulate(config, workdir, opts);
    } else if (*prepare) {
      pl::prepare(config, workdir, v, opts);
    } else if (*train) {
      pl::train_models(config, workdir, v, kinds, opts);
    } else if (*base) {
      pl::baseline(config, workdir, v, opts);
    } else if (*evaluate) {
      pl::evaluate(config, workdir, v, methods, opts);
    } else if (*ablate) {
      pl::ablate(config, workdir, opts);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
