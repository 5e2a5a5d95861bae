#pragma once

// Experiment configuration files: a small INI-style format ([section] or
// [section.sub] headers, key = value lines, '#' comments). Configs are the
// single source of truth for science-affecting parameters; in particular the
// RNG seed is required, never defaulted from the clock.
//
// Parsing collects every violation (with file:line locations where they
// exist) before failing, so a bad config reports all its problems at once.

#include "branchsim/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace branchsim {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

struct ChannelConfig {
  Eigen::VectorXd rates;
  Eigen::MatrixXd offspring;  // rows: per-type probabilities of 0..K children
  Eigen::MatrixXd kernel;     // empty = identity (children keep the parent type)
};

struct ExperimentConfig {
  // [model]
  std::string kind;  // yule | finite_type | house_of_cards
  double b = 1.0;    // yule branching rate
  std::string alpha_source;                    // house of cards fitness alpha(x)
  std::string realization = "pure_death";      // pure_death | binary | custom
  double r_scale = 1.0;                        // binary realization rate scale
  std::string rate_source;                     // custom realization replacement rate
  std::vector<std::string> offspring_sources;  // custom realization p_0(x), p_1(x), ...
  int types = 0;                               // finite_type type count
  std::vector<ChannelConfig> channels;
  std::string v_source;  // weight function V (optional)
  int kappa = 4;

  // [simulation]
  double x0 = 0.0;
  std::vector<double> grid;
  double extension = 0.0;
  int replicas = 0;
  std::size_t cap = 1'000'000;
  std::uint64_t seed = 0;
  int threads = 1;

  // [analysis]
  std::vector<std::pair<std::string, std::string>> functions;  // name -> DSL source
  bool run_distance = true;
  bool run_rate_fit = true;
  bool run_moment_growth = true;
  std::string regime_override = "auto";  // auto | small | critical | large
  int quad_points = 256;

  // [output]
  bool dump_trajectories = false;
};

ExperimentConfig parse_config(const std::string& path);
// Same parser over an in-memory document; `origin` labels error locations.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

// Instantiate the configured model (throws ModelError on invariant
// violations, ConfigError on structural problems already reported by the
// parser paths).
Model build_model(const ExperimentConfig& config);

}  // namespace branchsim
