#pragma once

// Experiment pipeline: config -> model -> eigen-elements -> regime ->
// ensemble -> estimator battery -> CSV artifacts + JSON summary + verdicts.
//
// Every number in the summary that came from Monte Carlo data is a pure fold
// over ensemble.csv, so a recheck pass can recompute it from the persisted
// artifacts alone. CSV bytes are deterministic for (config, seed) regardless
// of thread count; the report hash covers exactly those bytes.

#include "branchsim/config.hpp"
#include "branchsim/fluctuations.hpp"
#include "branchsim/semigroup.hpp"
#include "branchsim/simulate.hpp"

#include <string>
#include <vector>

namespace branchsim {

struct Verdict {
  std::string name;
  std::string status;  // "pass" | "fail" | "inconclusive"
  std::string detail;
};

// Everything computed for one analysis function f.
struct FunctionAnalysis {
  std::string name;
  std::string target;  // "martingale" (f = h) or the regime name
  double gamma_f = 0.0;

  LlnReport lln;

  bool clt_ran = false;
  std::string clt_skip_reason;
  // The pooled-normality, independence, and mixture-KS checks test the
  // limit law, whose finite-t deviation is of order e^{-lambda t/2}. They
  // separate signal from Monte Carlo noise (~ 1/sqrt(n)) only when
  // e^{-lambda t/2} sqrt(n) is small; outside that window they are reported
  // but the verdict is "inconclusive" instead of pass/fail.
  double limit_window = 0.0;  // e^{-lambda t/2} sqrt(n) at the last CLT time
  bool limit_window_ok = false;
  VarianceReport variance;
  std::vector<DistanceReport> distances;
  double noise_floor = 0.0;
  bool nonincreasing_2se = true;
  bool rate_ran = false;
  RateFitReport rate;
  CenteringReport centering;
  MixtureNormalityReport mixture;

  bool mc_k2_ran = false;
  MomentGrowthReport mc_k2;  // centered f, Monte Carlo second-moment growth
  bool mc_k3_ran = false;
  MomentGrowthReport mc_k3;
  bool mc_k4_ran = false;
  MomentGrowthReport mc_k4;

  DecayReport decay;  // mean-semigroup convergence diagnostics for this f
};

struct ExperimentReport {
  std::string config_hash;
  std::string report_hash;  // over the persisted CSV bytes
  std::string model_name;

  EigenTriplet triplet;
  RegimeReport regime_report;
  Regime regime = Regime::small;  // after any override
  bool regime_overridden = false;

  double x0 = 0.0;
  double h_x0 = 0.0;
  double T = 0.0;
  std::vector<double> analysis_times;
  std::vector<double> clt_times;  // analysis times whose proxy bias is within budget
  int replicas = 0;
  double truncated_fraction = 0.0;
  double predicted_final_population = 0.0;

  WEstimate west;
  bool west_ran = false;
  bool w_mean_ok = false;

  TraceReport trace;
  bool trace_ran = false;
  bool trace_matches_oracle = false;

  std::vector<FunctionAnalysis> functions;

  bool oracle_k1_ran = false;
  MomentGrowthReport oracle_k1;
  bool oracle_k2_ran = false;
  MomentGrowthReport oracle_k2;
  bool scale_kind_ran = false;
  ScaleKindReport scale_kind;

  std::vector<Verdict> verdicts;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;
  int exit_code = 0;  // 0 pass/inconclusive, 1 at least one failing verdict
};

// Runs the full pipeline and writes ensemble.csv, west.csv, trace.csv,
// samples.csv, variance.csv, distance.csv, decay.csv, moments.csv (and
// trajectories.csv when configured) plus summary.json into out_dir.
ExperimentReport run_experiment(const ExperimentConfig& config, const std::string& out_dir);

// Catalog utilities with stable text output.
std::string list_models();
std::string describe_model(const std::string& name);  // throws std::invalid_argument if unknown

// Recomputes the Monte Carlo numbers in summary.json from ensemble.csv and
// compares. Returns 0 on agreement, 1 on any mismatch; `message` explains.
int recheck_experiment(const std::string& out_dir, std::string& message);

}  // namespace branchsim
