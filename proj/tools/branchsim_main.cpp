#include "branchsim/experiment.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

namespace {

// Exit codes: 0 success (all verdicts pass or inconclusive), 1 at least one
// failing verdict (or a recheck mismatch), 2 usage/config/model errors.
constexpr int kUsageError = 2;

int run_command(const std::string& config_path, const std::string& out_dir, int replicas,
                std::int64_t seed, int threads, bool dump_trajectories, bool quiet) {
  branchsim::ExperimentConfig config = branchsim::parse_config(config_path);
  if (replicas > 0) config.replicas = replicas;
  if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
  if (threads > 0) config.threads = threads;
  if (dump_trajectories) config.dump_trajectories = true;

  const branchsim::ExperimentReport report = branchsim::run_experiment(config, out_dir);
  if (!quiet) {
    std::printf("model %s  regime %s  lambda %.6g  rho %.6g\n", report.model_name.c_str(),
                branchsim::regime_name(report.regime), report.triplet.lambda,
                report.triplet.rho);
    std::printf("replicas %d  T %.6g  truncated %.3g%%  h(x0) %.6g\n", report.replicas,
                report.T, 100.0 * report.truncated_fraction, report.h_x0);
    for (const branchsim::Verdict& v : report.verdicts) {
      std::printf("%-12s %-28s %s\n", v.status.c_str(), v.name.c_str(), v.detail.c_str());
    }
    for (const std::string& w : report.warnings) std::printf("warning: %s\n", w.c_str());
    std::printf("report %s written to %s (%.1fs)\n", report.report_hash.c_str(),
                out_dir.c_str(), report.wall_seconds);
  }
  return report.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"branchsim: exact simulation and numerical verification of supercritical "
               "branching Markov processes"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", model_name, recheck_dir;
  int replicas = 0, threads = 0;
  std::int64_t seed = -1;
  bool dump_trajectories = false, quiet = false;

  CLI::App* run = app.add_subcommand("run", "run an experiment from a config file");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", out_dir, "output directory (default: out)");
  run->add_option("--replicas", replicas, "override the configured replica count");
  run->add_option("--seed", seed, "override the configured RNG seed");
  run->add_option("--threads", threads, "override the configured thread count");
  run->add_flag("--dump-trajectories", dump_trajectories,
                "also write the per-replica event logs (trajectories.csv)");
  run->add_flag("--quiet", quiet, "suppress the verdict table on stdout");

  CLI::App* list = app.add_subcommand("list-models", "list the built-in model kinds");
  CLI::App* describe = app.add_subcommand("describe-model",
                                          "show one model kind's parameters and invariants");
  describe->add_option("name", model_name, "model kind")->required();
  CLI::App* recheck = app.add_subcommand(
      "recheck", "recompute the Monte Carlo numbers in summary.json from ensemble.csv");
  recheck->add_option("dir", recheck_dir, "experiment output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (run->parsed()) {
      return run_command(config_path, out_dir, replicas, seed, threads, dump_trajectories,
                         quiet);
    }
    if (list->parsed()) {
      std::cout << branchsim::list_models();
      return 0;
    }
    if (describe->parsed()) {
      std::cout << branchsim::describe_model(model_name);
      return 0;
    }
    if (recheck->parsed()) {
      std::string message;
      const int code = branchsim::recheck_experiment(recheck_dir, message);
      std::cout << message << "\n";
      return code;
    }
  } catch (const branchsim::ConfigError& e) {
    std::cerr << "config error:\n";
    for (const std::string& v : e.violations()) std::cerr << "  - " << v << "\n";
    return kUsageError;
  } catch (const branchsim::ModelError& e) {
    std::cerr << "model error:\n";
    for (const std::string& v : e.violations()) std::cerr << "  - " << v << "\n";
    return kUsageError;
  } catch (const branchsim::EigenError& e) {
    std::cerr << "eigen solve error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }
  return kUsageError;
}
