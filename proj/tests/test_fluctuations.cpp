#include "branchsim/fluctuations.hpp"

#include "branchsim/model.hpp"
#include "branchsim/rng.hpp"
#include "branchsim/semigroup.hpp"
#include "branchsim/simulate.hpp"
#include "doctest.h"

#include <cmath>
#include <cstddef>
#include <vector>

using namespace branchsim;

namespace {

// Hand-built two-function ensemble (columns "f", "h") with grid {1, 2}: small
// enough that every estimator value is checkable by hand.
Ensemble tiny_ensemble() {
  Ensemble ens;
  ens.grid = {1.0, 2.0};
  ens.horizon = 2.0;
  ens.function_names = {"f", "h"};
  ens.replicas = 4;
  ens.values.assign(4 * 2 * 2, 0.0);
  ens.truncated.assign(4, 0);
  for (int r = 0; r < 4; ++r) {
    // Z_1(f) = 2 (r+1) / e  and  Z_2(h) = r+1.
    ens.values[(r * 2 + 0) * 2 + 0] = 2.0 * (r + 1) / M_E;
    ens.values[(r * 2 + 1) * 2 + 1] = r + 1.0;
  }
  return ens;
}

FluctuationSamples synthetic_mixture(std::size_t n, double sigma2, std::uint64_t seed,
                                     double skew = 0.0) {
  FluctuationSamples fs;
  fs.t = 3.0;
  fs.grid_index = 0;
  fs.regime = Regime::small;
  fs.scale = 1.0;
  fs.mean_oracle = 0.0;
  Rng rng = Rng::stream(seed, 0);
  const double sigma = std::sqrt(sigma2);
  for (std::size_t i = 0; i < n; ++i) {
    double w = rng.exponential(1.0);
    double u1 = rng.next_double_pos();
    double u2 = rng.next_double();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    fs.w.push_back(w);
    fs.y.push_back(sigma * std::sqrt(w) * (z + skew * (w - 1.0)));
  }
  return fs;
}

}  // namespace

TEST_SUITE("fluctuations") {
  TEST_CASE("martingale proxies are scaled terminal h-observations") {
    Ensemble ens = tiny_ensemble();
    // scale = e^{-lambda T} with lambda = ln 2, T = 2: w_r = (r+1)/4.
    auto w = w_samples(ens, std::log(2.0), 1);
    REQUIRE(w.size() == 4);
    for (int r = 0; r < 4; ++r) CHECK(w[r] == doctest::Approx((r + 1) / 4.0).epsilon(1e-14));

    // Truncated replicas are dropped wholesale.
    ens.truncated[3] = 1;
    auto w3 = w_samples(ens, std::log(2.0), 1);
    CHECK(w3.size() == 3);
  }

  TEST_CASE("estimate_w enforces the proxy bias budget") {
    Ensemble ens = tiny_ensemble();
    // lambda (T - t)/2 = ln(2)/2: bias 0.71 is way over the 0.1 budget.
    CHECK_THROWS_AS(estimate_w(ens, std::log(2.0), 1, 1.0), std::invalid_argument);

    // lambda = 10 passes the gate: bias e^{-5}.
    WEstimate west = estimate_w(ens, 10.0, 1, 1.0);
    CHECK(west.bias_proxy == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
    CHECK(west.T == doctest::Approx(2.0));
    CHECK(west.analysis_t == doctest::Approx(1.0));
    CHECK(west.stat.mean == doctest::Approx(std::exp(-20.0) * 2.5).epsilon(1e-12));
  }

  TEST_CASE("lln difference vanishes identically on proportional columns") {
    Ensemble ens = tiny_ensemble();
    // Columns were built so e^{-t} Z_t(f) = 2 e^{-T} Z_T(h) replica by replica.
    LlnReport lln = lln_check(ens, 1.0, 2.0, 0, 1, 0);
    CHECK(lln.t == doctest::Approx(1.0));
    CHECK(lln.mean == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(lln.ok);
  }

  TEST_CASE("variance estimation needs at least three grid times") {
    Ensemble ens = tiny_ensemble();
    Model m = make_yule(1.0);
    GridOperator op = build_grid_operator(m, solve_eigentriplet(m));
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(1);
    CHECK_THROWS_AS(estimate_sigma2(ens, op, Regime::small, 0, ones, 1, 0, {0, 1}),
                    std::invalid_argument);
  }

  TEST_CASE("distance family: 11 members inside the unit ball") {
    const auto& family = distance_family();
    REQUIRE(family.size() == 11);
    CHECK(family[0].first == "sin_a0.5");
    CHECK(family[1].first == "cos_a0.5");
    CHECK(family[10].first == "bump_s1");
    for (const auto& [name, f] : family) {
      for (double y = -6.0; y <= 6.0; y += 0.05) {
        CHECK(std::abs(f(y)) <= 1.0);
      }
    }
    // Spot values: sin_a0.5 has coefficient 1, sin_a3 has 1/27.
    CHECK(family[0].second(1.0) == doctest::Approx(std::sin(0.5)).epsilon(1e-14));
    CHECK(family[6].second(1.0) == doctest::Approx(std::sin(3.0) / 27.0).epsilon(1e-14));
    CHECK(family[9].second(0.5) == doctest::Approx(0.7 * std::exp(-0.125)).epsilon(1e-14));
  }

  TEST_CASE("distance estimator on an exact gaussian mixture") {
    FluctuationSamples fs = synthetic_mixture(4000, 2.0, 77);
    DistanceReport d = distance_d(fs, 2.0);
    CHECK(d.n == 4000);
    CHECK_FALSE(d.degenerate);
    CHECK(d.d_hat < 0.05);
    CHECK(d.se > 0.0);
    CHECK_FALSE(d.argmax_name.empty());
    CHECK(d.ks_mixture < d.ks_critical);

    // The draw is from the null, so it stays under the simulated 99th
    // percentile of the same statistic.
    double floor = distance_noise_floor(fs.w, 2.0, fs.y.size(), 123);
    CHECK(d.d_hat < floor);
  }

  TEST_CASE("distance estimator flags the degenerate variance case") {
    FluctuationSamples fs;
    fs.t = 2.0;
    fs.regime = Regime::small;
    fs.y.assign(100, 0.0);
    fs.w.assign(100, 1.0);
    DistanceReport d = distance_d(fs, 0.0);
    CHECK(d.degenerate);
    CHECK(d.d_hat == doctest::Approx(0.0));
    CHECK(d.ks_mixture == doctest::Approx(0.0));
  }

  TEST_CASE("noise floor is deterministic in the seed") {
    FluctuationSamples fs = synthetic_mixture(500, 1.0, 9);
    double f1 = distance_noise_floor(fs.w, 1.0, fs.y.size(), 321, 50);
    double f2 = distance_noise_floor(fs.w, 1.0, fs.y.size(), 321, 50);
    double f3 = distance_noise_floor(fs.w, 1.0, fs.y.size(), 322, 50);
    CHECK(f1 == f2);
    CHECK(f1 > 0.0);
    CHECK(f1 != f3);
  }

  TEST_CASE("mixture normality accepts the null and rejects w-dependence") {
    FluctuationSamples good = synthetic_mixture(4000, 1.5, 11);
    MixtureNormalityReport ok = mixture_normality_check(good, 1.5);
    CHECK(ok.ok);
    CHECK(ok.independent);
    CHECK(ok.n == 4000);

    // Couple the pooled variable to W: correlation test trips.
    FluctuationSamples bad = synthetic_mixture(4000, 1.5, 13, 0.2);
    MixtureNormalityReport rej = mixture_normality_check(bad, 1.5);
    CHECK_FALSE(rej.independent);
  }

  TEST_CASE("rate fit verdicts") {
    std::vector<double> times{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    auto decays = [&](double slope) {
      std::vector<double> d;
      for (double t : times) d.push_back(std::exp(slope * t));
      return d;
    };

    // Observed decay at the theoretical rate: consistent.
    RateFitReport fit = rate_fit(times, decays(-0.4), 1e-9, -0.4, true, 5);
    CHECK(fit.verdict == "consistent");
    CHECK(fit.slope == doctest::Approx(-0.4).epsilon(1e-9));
    CHECK(fit.points_used == 6);

    // Much slower than theory: the CI lower end sits above 0.75 * theory.
    RateFitReport slow = rate_fit(times, decays(-0.05), 1e-9, -0.5, true, 5);
    CHECK(slow.verdict == "inconsistent");

    // Everything at the noise floor.
    RateFitReport floor = rate_fit(times, decays(-0.1), 1.0, -0.5, true, 5);
    CHECK(floor.verdict == "inconclusive (noise floor)");

    // No theoretical slope to compare against.
    RateFitReport no_theory = rate_fit(times, decays(-0.4), 1e-9, 0.0, false, 5);
    CHECK(no_theory.verdict == "inconclusive (no theoretical rate)");

    // Fewer than 4 grid times is a usage error.
    std::vector<double> three{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(rate_fit(three, {1.0, 0.5, 0.25}, 1e-9, -0.5, true, 5),
                    std::invalid_argument);
  }

  TEST_CASE("theoretical rate slopes") {
    CHECK(martingale_rate_slope(1.0, 0.5) == doctest::Approx(-0.25).epsilon(1e-14));
    // lambda (lambda - 2 rho) / (2 (lambda + 2 rho)): zero at criticality.
    CHECK(small_regime_rate_slope(1.0, 0.5) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(small_regime_rate_slope(1.0, 0.75) ==
          doctest::Approx(1.0 * (1.0 - 1.5) / (2.0 * 2.5)).epsilon(1e-14));
  }

  TEST_CASE("monte carlo growth exponents per regime") {
    std::vector<double> times{2.0, 4.0, 6.0, 8.0};
    auto samples_with = [&](const std::function<double(double)>& magnitude) {
      std::vector<std::vector<double>> s;
      for (double t : times) {
        std::vector<double> col(32);
        for (int r = 0; r < 32; ++r) col[r] = (r % 2 == 0 ? 1.0 : -1.0) * magnitude(t);
        s.push_back(col);
      }
      return s;
    };

    // Small regime, k = 2: E Z^2 = e^{lambda t}, slope lambda, target lambda.
    auto small2 = moment_growth_mc(
        samples_with([](double t) { return std::exp(0.5 * t); }), times, Regime::small, 1.0, 0.5,
        2, 4);
    CHECK(small2.slope == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(small2.target == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(small2.within_tolerance);

    // Critical, k = 2: E Z^2 = t e^{lambda t}; the log t correction is
    // subtracted before fitting.
    auto crit2 = moment_growth_mc(
        samples_with([](double t) { return std::sqrt(t) * std::exp(0.5 * t); }), times,
        Regime::critical, 1.0, 0.5, 2, 4);
    CHECK(crit2.slope == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(crit2.within_tolerance);

    // Large regime, k = 2: target k (lambda - rho_raw).
    auto large2 = moment_growth_mc(
        samples_with([](double t) { return std::exp(1.0 * t); }), times, Regime::large, 1.5, 0.5,
        2, 4);
    CHECK(large2.target == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(large2.within_tolerance);

    // k = 3: rescaled third moments stay bounded.
    auto small3 = moment_growth_mc(
        samples_with([](double t) { return std::exp(0.5 * t); }), times, Regime::small, 1.0, 0.5,
        3, 4);
    CHECK(small3.bounded);

    // k = 4 critical: the log-t-corrected fit wins the AIC comparison.
    auto crit4 = moment_growth_mc(
        samples_with([](double t) { return std::sqrt(t) * std::exp(0.5 * t); }), times,
        Regime::critical, 1.0, 0.5, 4, 4);
    CHECK(crit4.aic_logt < crit4.aic_linear);
    CHECK(crit4.within_tolerance);
  }

  TEST_CASE("growth fit input validation") {
    std::vector<double> times{1.0, 2.0};
    std::vector<std::vector<double>> s{{1.0, 1.0}, {2.0, 2.0}};
    CHECK_THROWS_AS(moment_growth_mc(s, times, Regime::small, 1.0, 0.5, 5, 6),
                    std::invalid_argument);
    CHECK_THROWS_AS(moment_growth_mc(s, times, Regime::small, 1.0, 0.5, 3, 2),
                    std::invalid_argument);
    std::vector<double> one_time{1.0};
    std::vector<std::vector<double>> one_col{{1.0, 1.0}};
    CHECK_THROWS_AS(moment_growth_mc(one_col, one_time, Regime::small, 1.0, 0.5, 2, 4),
                    std::invalid_argument);

    Model m = make_yule(1.0);
    GridOperator op = build_grid_operator(m, solve_eigentriplet(m));
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(1);
    CHECK_THROWS_AS(moment_growth_oracle(op, ones, 3, {1.0, 2.0, 3.0}, 0),
                    std::invalid_argument);
  }

  TEST_CASE("oracle growth exponents for a two-type model") {
    FiniteChannel fission;
    fission.rates = Eigen::Vector2d(1.0, 2.0);
    fission.offspring = Eigen::MatrixXd(2, 3);
    fission.offspring << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0;
    fission.kernel = Eigen::MatrixXd::Identity(2, 2);
    FiniteChannel swap;
    swap.rates = Eigen::Vector2d(0.1, 0.1);
    swap.offspring = Eigen::MatrixXd(2, 2);
    swap.offspring << 0.0, 1.0, 0.0, 1.0;
    swap.kernel = Eigen::MatrixXd(2, 2);
    swap.kernel << 0.0, 1.0, 1.0, 0.0;
    Model m = make_finite_type({fission, swap}, 2);
    EigenTriplet t = solve_eigentriplet(m);
    GridOperator op = build_grid_operator(m, t);

    // Centered indicator of type 0: gamma(f) = 0 by construction.
    Eigen::VectorXd e0(2);
    e0 << 1.0, 0.0;
    Eigen::VectorXd f = op.center(e0);
    std::vector<double> times{3.0, 6.0, 9.0, 12.0};

    // k = 1: the signed mean decays on the gap eigenspace exactly.
    auto k1 = moment_growth_oracle(op, f, 1, times, 0);
    CHECK(k1.from_oracle);
    CHECK(k1.target == doctest::Approx(t.lambda - t.raw_gap).epsilon(1e-12));
    CHECK(k1.slope == doctest::Approx(t.lambda - t.raw_gap).epsilon(1e-6));
    CHECK(k1.within_tolerance);

    // k = 2: second moment grows like e^{lambda t} in the small regime.
    auto k2 = moment_growth_oracle(op, f, 2, times, 0);
    CHECK(k2.target == doctest::Approx(t.lambda).epsilon(1e-12));
    CHECK(k2.within_tolerance);
  }

  TEST_CASE("scale-kind fingerprint separates critical from clean exponential") {
    std::vector<double> times{4.0, 8.0};
    auto build = [&](bool critical) {
      std::vector<std::vector<double>> s;
      for (double t : times) {
        double base = critical ? std::sqrt(t) * std::exp(0.5 * t) : std::exp(0.5 * t);
        std::vector<double> col(64);
        for (int r = 0; r < 64; ++r) col[r] = base * (1.0 + (r % 2 == 0 ? 0.01 : -0.01));
        s.push_back(col);
      }
      return s;
    };

    ScaleKindReport crit = scale_kind_check(build(true), times, 1.0);
    CHECK(crit.stabilizes);
    CHECK(crit.growth_ratio == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(crit.growth_ratio_expected == doctest::Approx(2.0).epsilon(1e-12));

    ScaleKindReport expo = scale_kind_check(build(false), times, 1.0);
    CHECK_FALSE(expo.stabilizes);
    CHECK(expo.growth_ratio == doctest::Approx(1.0).epsilon(1e-6));

    std::vector<double> bad_times{0.0, 1.0};
    CHECK_THROWS_AS(scale_kind_check(build(true), bad_times, 1.0), std::invalid_argument);
  }

  TEST_CASE("end to end on a rank-one population: estimators meet oracles") {
    // Binary splitting at unit rate from one particle; T = 12.5 proxy
    // horizon. The last analysis time must be late enough that the residual
    // coupling between Y_t and W_hat (order e^{-lambda t/2}) sits inside the
    // independence bound 3/sqrt(n), otherwise the mixture check correctly
    // reports the finite-t correlation.
    Model m = make_yule(1.0);
    EigenTriplet t = solve_eigentriplet(m);
    GridOperator op = build_grid_operator(m, t);
    const int x0_node = 0;

    EnsembleSpec spec;
    spec.grid = {2.0, 4.0, 6.0};
    spec.extension = 6.5;
    spec.replicas = 400;
    spec.seed = 20260501;
    spec.cap = 1u << 25;  // e^{12.5} W stays below this unless W > 125
    spec.functions = {{"h", Expr::constant(1.0)}, {"one", Expr::constant(1.0)}};
    Ensemble ens = simulate_ensemble(m, 0.0, spec);
    REQUIRE(ens.truncated_fraction() == doctest::Approx(0.0));

    // Proxy sample mean is exactly unbiased for h(x0) = 1.
    WEstimate west = estimate_w(ens, op.lambda, 0, 6.0);
    CHECK(west.bias_proxy <= 0.1);
    CHECK(std::abs(west.stat.mean - 1.0) < 5.0 * west.stat.se);

    // L2 speed of the martingale against the proxy-aware oracle
    // 1 - e^{-(T-t)}.
    TraceReport trace = martingale_l2_speed(ens, op, x0_node, 0);
    REQUIRE(trace.points.size() == 3);
    for (const auto& p : trace.points) {
      CHECK(p.oracle == doctest::Approx(1.0 - std::exp(-(12.5 - p.t))).epsilon(1e-6));
      CHECK(std::abs(p.estimate.mean - p.oracle) < 5.0 * p.estimate.se);
    }
    CHECK(trace.limit_oracle == doctest::Approx(1.0).epsilon(1e-6));

    // Fluctuations of Z_t(1): centered, variance on the oracle curve,
    // distance near the noise floor, mixture-normal.
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(1);
    VarianceReport var =
        estimate_sigma2(ens, op, Regime::small, 1, ones, 0, x0_node, {0, 1, 2});
    REQUIRE(var.points.size() == 3);
    for (const auto& p : var.points) {
      CHECK(p.oracle == doctest::Approx(1.0 - std::exp(-(12.5 - p.t))).epsilon(1e-5));
      CHECK(std::abs(p.estimate.mean - p.oracle) < 5.0 * p.estimate.se);
    }
    CHECK(var.oracle_limit == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(var.oracle_stabilized);
    CHECK(var.profile_residual < 1e-6);

    FluctuationSamples fs =
        fluctuation_samples(ens, op, Regime::small, 1, ones, 0, x0_node, 2);
    CHECK(fs.t == doctest::Approx(6.0));
    CHECK(fs.mean_oracle == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(fs.y.size() == 400);

    CenteringReport centering = centering_check(fs);
    CHECK(centering.ok);

    DistanceReport dist = distance_d(fs, var.sigma2);
    double floor = distance_noise_floor(fs.w, var.sigma2, fs.y.size(), 99);
    CHECK(dist.ks_mixture < dist.ks_critical);
    CHECK(dist.d_hat < 1.5 * floor);

    MixtureNormalityReport mix = mixture_normality_check(fs, var.sigma2);
    CHECK(mix.ok);
    CHECK(mix.independent);
  }
}
