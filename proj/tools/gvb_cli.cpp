#include <string>

#include <CLI11.hpp>

#include "gvb/experiment.hpp"

// Command-line front end. Exit codes: 0 ok, 1 runtime failure, 2 config
// error.

int main(int argc, char** argv) {
  CLI::App app{"Gaussian variational Bayes with manifold-constrained precision"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "run an experiment config");
  run_cmd->add_option("config", config_path, "config file")->required();

  std::string metrics_path;
  auto* metrics_cmd =
      app.add_subcommand("metrics", "print the metric report of a result JSON");
  metrics_cmd->add_option("result", metrics_path, "result.json path")->required();

  std::string mcmc_path;
  auto* mcmc_cmd =
      app.add_subcommand("mcmc", "run the Metropolis oracle on a config");
  mcmc_cmd->add_option("config", mcmc_path, "config file")->required();

  std::string density_path;
  int density_param = 0;
  int density_points = 512;
  auto* density_cmd = app.add_subcommand(
      "density", "write the back-transformed marginal density of a parameter");
  density_cmd->add_option("result", density_path, "result.json path")->required();
  density_cmd->add_option("--param", density_param, "parameter index")->required();
  density_cmd->add_option("--points", density_points, "grid size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (run_cmd->parsed()) return gvb::run_experiment(config_path);
  if (metrics_cmd->parsed()) return gvb::print_metrics(metrics_path);
  if (mcmc_cmd->parsed()) return gvb::run_mcmc(mcmc_path);
  if (density_cmd->parsed())
    return gvb::write_density_for_result(density_path, density_param, density_points);
  return 2;
}
