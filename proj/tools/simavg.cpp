#include <string>
#include <vector>

#include <CLI11.hpp>

#include "simavg/runner.hpp"

namespace {

void add_common_fit_flags(CLI::App* app, simavg::RunConfig& cfg)
{
  app->add_option("--block-size", cfg.block_size, "CV block size M_n (default 50)");
  app->add_option("--kappa-grid", cfg.kappa_grid, "bandwidth scale grid")->delimiter(',');
  app->add_option("--seed", cfg.seed, "random seed");
  app->add_option("--out", cfg.out_dir, "output directory");
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Cross-validation model averaging for single-index models"};
  app.require_subcommand(1);

  simavg::RunConfig cfg;

  CLI::App* fit = app.add_subcommand("fit", "fit candidate models and choose averaging weights");
  fit->add_option("--data", cfg.data_path, "training CSV (response first column)")->required();
  fit->add_option("--screen", cfg.screen, "candidate screening: none, correlation, lambda-path");
  fit->add_option("--count", cfg.screen_count, "screened candidate count");
  fit->add_option("--include", cfg.include_covariates, "covariates forced into every candidate")
    ->delimiter(',');
  fit->add_option("--exclude", cfg.exclude_covariates, "covariates dropped from every candidate")
    ->delimiter(',');
  fit->add_option("--lambda-min", cfg.lambda_min, "smallest lambda of the path");
  fit->add_option("--lambda-max", cfg.lambda_max, "largest lambda of the path");
  fit->add_option("--lambda-count", cfg.lambda_count, "lambda grid size");
  add_common_fit_flags(fit, cfg);

  CLI::App* predict = app.add_subcommand("predict", "predict a test CSV from a saved model");
  predict->add_option("--model", cfg.model_path, "model bundle directory")->required();
  predict->add_option("--test", cfg.test_path, "test CSV")->required();
  predict->add_option("--out", cfg.out_dir, "output directory");

  CLI::App* simulate = app.add_subcommand("simulate", "run a replicated simulation grid");
  simulate->add_option("--situation", cfg.situation, "1, 2, 3, 4 or p-greater-n");
  simulate->add_option("--link", cfg.link, "sin or tobit");
  simulate->add_option("--n", cfg.n_list, "training sizes")->delimiter(',');
  simulate->add_option("--r2", cfg.r2_list, "target R^2 values")->delimiter(',');
  simulate->add_option("--replications", cfg.replications, "replication count");
  simulate->add_option("--n-test", cfg.n_test, "test size per replication");
  simulate->add_option("--methods", cfg.methods, "methods to evaluate")->delimiter(',');
  simulate->add_option("--config", cfg.config_path, "JSON experiment config");
  simulate->add_option("--preset", cfg.preset,
                       "named config: smoke, theorem1-trend, theorem2-trend, p-greater-n");
  simulate->add_option("--lambda-min", cfg.lambda_min, "smallest lambda (p > n design)");
  simulate->add_option("--lambda-max", cfg.lambda_max, "largest lambda (p > n design)");
  simulate->add_option("--lambda-count", cfg.lambda_count, "lambda grid size");
  add_common_fit_flags(simulate, cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e); // --help
    }
    app.exit(e);
    return simavg::exit_usage;
  }

  if (fit->parsed()) {
    return simavg::cmd_fit(cfg);
  }
  if (predict->parsed()) {
    return simavg::cmd_predict(cfg);
  }
  return simavg::cmd_simulate(cfg);
}
