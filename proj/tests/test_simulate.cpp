#include "branchsim/simulate.hpp"

#include "branchsim/model.hpp"
#include "branchsim/semigroup.hpp"
#include "branchsim/stats.hpp"
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <vector>

using namespace branchsim;

namespace {

Model hoc_linear() { return make_house_of_cards(hoc_pure_death(Expr::parse("x"))); }

}  // namespace

TEST_SUITE("simulate") {
  TEST_CASE("yule population mean grows like e^{bt}") {
    Model m = make_yule(1.0);
    EnsembleSpec spec;
    spec.grid = {1.0, 2.0};
    spec.replicas = 4000;
    spec.seed = 101;
    spec.functions = {{"one", Expr::constant(1.0)}};
    Ensemble ens = simulate_ensemble(m, 0.0, spec);
    CHECK(ens.truncated_fraction() == doctest::Approx(0.0));
    for (int g = 0; g < 2; ++g) {
      auto col = ens.column(g, 0);
      auto ms = batch_mean_se(col);
      CHECK(std::abs(ms.mean - std::exp(spec.grid[g])) < 5.0 * ms.se);
    }
  }

  TEST_CASE("yule rescaled population is close to its exponential limit") {
    // W_T = e^{-T} N_T with N_T geometric; its Kolmogorov distance from
    // Exp(1) is O(e^{-T}), far below the 1% KS critical value used here.
    Model m = make_yule(1.0);
    EnsembleSpec spec;
    spec.grid = {6.0};
    spec.replicas = 3000;
    spec.seed = 707;
    spec.cap = 1u << 20;
    spec.functions = {{"one", Expr::constant(1.0)}};
    Ensemble ens = simulate_ensemble(m, 0.0, spec);
    REQUIRE(ens.truncated_fraction() == doctest::Approx(0.0));
    std::vector<double> w;
    for (double n : ens.column(0, 0)) w.push_back(std::exp(-6.0) * n);
    double d = ks_statistic(w, [](double x) { return exponential_cdf(x, 1.0); });
    CHECK(d < ks_critical_value(0.01, w.size()));
  }

  TEST_CASE("first event time is exponential with the total rate at x0") {
    // For the linear-drift model from x0 = 0.5 the first event happens at
    // rate alpha(0.5) + immigration = 1.5; the replacement channel runs by
    // thinning against its sup bound, so this also exercises rejection.
    Model m = hoc_linear();
    SimOptions opt;
    opt.horizon = 12.0;  // P(no event by 12) = e^{-18} per replica
    opt.record_events = true;
    std::vector<double> first(3000);
    for (std::size_t r = 0; r < first.size(); ++r) {
      Trajectory tr = simulate_trajectory(m, 0.5, opt, 909, r);
      REQUIRE_FALSE(tr.event_times.empty());
      first[r] = tr.event_times.front();
    }
    double d = ks_statistic(first, [](double x) { return exponential_cdf(x, 1.5); });
    CHECK(d < ks_critical_value(0.01, first.size()));
  }

  TEST_CASE("constant-drift interval model matches its finite-type twin") {
    // alpha = 0.4 pure death + unit-rate immigration has the same population
    // law as a one-type model with a death channel (rate 0.4) and a
    // two-children channel (rate 1): the immigration parent survives, which
    // in count terms is "replaced by two".
    Model interval = make_house_of_cards(hoc_pure_death(Expr::parse("0.4")));

    FiniteChannel death;
    death.rates = Eigen::VectorXd::Constant(1, 0.4);
    death.offspring = Eigen::MatrixXd(1, 1);
    death.offspring << 1.0;
    death.kernel = Eigen::MatrixXd::Identity(1, 1);
    FiniteChannel split;
    split.rates = Eigen::VectorXd::Constant(1, 1.0);
    split.offspring = Eigen::MatrixXd(1, 3);
    split.offspring << 0.0, 0.0, 1.0;
    split.kernel = Eigen::MatrixXd::Identity(1, 1);
    Model finite = make_finite_type({death, split}, 1);

    EnsembleSpec spec;
    spec.grid = {2.0};
    spec.replicas = 1500;
    spec.seed = 2222;
    spec.functions = {{"one", Expr::constant(1.0)}};
    Ensemble a = simulate_ensemble(interval, 0.3, spec);
    spec.seed = 3333;
    Ensemble b = simulate_ensemble(finite, 0.0, spec);
    double d = ks_statistic_two_sample(a.column(0, 0), b.column(0, 0));
    CHECK(d < ks_critical_value_two_sample(0.01, a.column(0, 0).size(), b.column(0, 0).size()));
  }

  TEST_CASE("monte carlo moments agree with the deterministic oracles") {
    Model m = hoc_linear();
    EigenTriplet t = solve_eigentriplet(m);
    GridOperator op = build_grid_operator(m, t, 128, {0.5});
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(op.nodes.size());
    auto oracle = second_moment_curve(op, ones, {2.0});
    int node = op.node_of(0.5);

    EnsembleSpec spec;
    spec.grid = {2.0};
    spec.replicas = 2000;
    spec.seed = 424242;
    spec.functions = {{"one", Expr::constant(1.0)}};
    Ensemble ens = simulate_ensemble(m, 0.5, spec);
    auto col = ens.column(0, 0);

    auto ms = batch_mean_se(col);
    CHECK(std::abs(ms.mean - oracle.mean[0][node]) < 5.0 * ms.se);

    std::vector<double> sq(col.size());
    for (std::size_t i = 0; i < col.size(); ++i) sq[i] = col[i] * col[i];
    auto ms2 = batch_mean_se(sq);
    CHECK(std::abs(ms2.mean - oracle.second[0][node]) < 5.0 * ms2.se);
  }

  TEST_CASE("restarting from a stopped population reproduces the law") {
    // Branching property: running to t = 2 directly matches running to t = 1
    // and restarting one run from each surviving population.
    Model m = make_yule(1.0);

    EnsembleSpec direct_spec;
    direct_spec.grid = {2.0};
    direct_spec.replicas = 1200;
    direct_spec.seed = 5150;
    direct_spec.functions = {{"one", Expr::constant(1.0)}};
    Ensemble direct = simulate_ensemble(m, 0.0, direct_spec);

    std::vector<double> two_stage;
    SimOptions stage1;
    stage1.horizon = 1.0;
    std::vector<Expr> fs{Expr::constant(1.0)};
    for (int r = 0; r < 1200; ++r) {
      Trajectory tr = simulate_trajectory(m, 0.0, stage1, 6160, r);
      REQUIRE_FALSE(tr.truncated);
      SimOptions stage2;
      stage2.horizon = 1.0;
      stage2.grid = {1.0};
      Rng rng = Rng::stream(7170, r);
      RunResult res = simulate_run(m, tr.final_traits, stage2, rng, fs);
      REQUIRE_FALSE(res.truncated);
      two_stage.push_back(res.values[0]);
    }
    double d = ks_statistic_two_sample(direct.column(0, 0), two_stage);
    CHECK(d < ks_critical_value_two_sample(0.01, 1200, 1200));
  }

  TEST_CASE("ensembles are deterministic and thread-count independent") {
    Model m = hoc_linear();
    EnsembleSpec spec;
    spec.grid = {1.0, 2.0};
    spec.extension = 0.5;
    spec.replicas = 8;
    spec.seed = 99;
    spec.functions = {{"one", Expr::constant(1.0)}, {"lin", Expr::parse("x")}};

    Ensemble a = simulate_ensemble(m, 0.5, spec);
    Ensemble b = simulate_ensemble(m, 0.5, spec);
    spec.threads = 3;
    Ensemble c = simulate_ensemble(m, 0.5, spec);
    CHECK(a.values == b.values);
    CHECK(a.values == c.values);
    CHECK(a.truncated == c.truncated);
    // The proxy horizon is appended to the observation grid.
    REQUIRE(a.grid.size() == 3);
    CHECK(a.grid.back() == doctest::Approx(2.5));
    CHECK(a.horizon == doctest::Approx(2.5));
  }

  TEST_CASE("ensemble replicas are reproduced by the trajectory entry point") {
    Model m = hoc_linear();
    EnsembleSpec spec;
    spec.grid = {1.0, 2.0};
    spec.replicas = 6;
    spec.seed = 31337;
    spec.functions = {{"lin", Expr::parse("x")}, {"one", Expr::constant(1.0)}};
    Ensemble ens = simulate_ensemble(m, 0.5, spec);

    SimOptions opt;
    opt.horizon = 2.0;
    opt.record_events = true;
    for (std::uint64_t r = 0; r < 6; ++r) {
      Trajectory tr = simulate_trajectory(m, 0.5, opt, spec.seed, r);
      for (std::size_t g = 0; g < ens.grid.size(); ++g) {
        for (std::size_t f = 0; f < spec.functions.size(); ++f) {
          double replay = observe(m, tr, ens.grid[g], spec.functions[f].second);
          CHECK(ens.value(static_cast<int>(r), static_cast<int>(g), static_cast<int>(f)) ==
                doctest::Approx(replay).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("observe replays the event log") {
    Model m = make_yule(2.0);
    SimOptions opt;
    opt.horizon = 2.0;
    opt.record_events = true;
    Trajectory tr = simulate_trajectory(m, 0.0, opt, 11, 0);
    Expr one = Expr::constant(1.0);
    CHECK(observe(m, tr, 0.0, one) == doctest::Approx(1.0));
    CHECK(observe(m, tr, 2.0, one) == doctest::Approx(double(tr.final_traits.size())));
    // Population only grows for a pure-birth model.
    double prev = 0.0;
    for (double t : {0.0, 0.5, 1.0, 1.5, 2.0}) {
      double n = observe(m, tr, t, one);
      CHECK(n >= prev);
      prev = n;
    }
    Trajectory bare = simulate_trajectory(m, 0.0, SimOptions{.horizon = 1.0}, 11, 0);
    CHECK_THROWS_AS(observe(m, bare, 0.5, one), std::invalid_argument);
  }

  TEST_CASE("truncation is reported and truncated replicas are excluded") {
    Model m = make_yule(1.0);
    SimOptions opt;
    opt.horizon = 8.0;
    opt.cap = 10;
    Trajectory tr = simulate_trajectory(m, 0.0, opt, 5, 0);
    CHECK(tr.truncated);
    CHECK(tr.truncation_time <= 8.0);
    CHECK(tr.final_traits.size() >= 10);

    EnsembleSpec spec;
    spec.grid = {8.0};
    spec.replicas = 12;
    spec.seed = 5;
    spec.cap = 10;
    spec.functions = {{"one", Expr::constant(1.0)}};
    Ensemble ens = simulate_ensemble(m, 0.0, spec);
    CHECK(ens.truncated_fraction() == doctest::Approx(1.0));
    CHECK(ens.column(0, 0).empty());
  }

  TEST_CASE("input validation") {
    Model m = make_yule(1.0);
    SimOptions bad_grid;
    bad_grid.horizon = 2.0;
    bad_grid.grid = {1.5, 1.0};
    CHECK_THROWS_AS(simulate_trajectory(m, 0.0, bad_grid, 1, 0), std::invalid_argument);

    SimOptions beyond;
    beyond.horizon = 2.0;
    beyond.grid = {3.0};
    CHECK_THROWS_AS(simulate_trajectory(m, 0.0, beyond, 1, 0), std::invalid_argument);

    EnsembleSpec spec;
    spec.grid = {1.0};
    spec.replicas = 0;
    spec.functions = {{"one", Expr::constant(1.0)}};
    CHECK_THROWS_AS(simulate_ensemble(m, 0.0, spec), std::invalid_argument);
    spec.replicas = 4;
    spec.functions.clear();
    CHECK_THROWS_AS(simulate_ensemble(m, 0.0, spec), std::invalid_argument);
    spec.functions = {{"one", Expr::constant(1.0)}};
    spec.extension = -1.0;
    CHECK_THROWS_AS(simulate_ensemble(m, 0.0, spec), std::invalid_argument);
  }

  TEST_CASE("short-time expectation moves along the generator") {
    // E_x f(Z_dt) = f(x) + dt (A f)(x) + O(dt^2). For the linear-drift model
    // and f = 0.2 + 0.6 x at x = 0.5: A f(0.5) = -0.5 f(0.5) + int f = 0.25.
    Model m = hoc_linear();
    const double dt = 0.02;
    EnsembleSpec spec;
    spec.grid = {dt};
    spec.replicas = 200000;
    spec.seed = 864;
    spec.functions = {{"f", Expr::parse("0.2 + 0.6*x")}};
    Ensemble ens = simulate_ensemble(m, 0.5, spec);
    auto col = ens.column(0, 0);
    std::vector<double> diff(col.size());
    for (std::size_t i = 0; i < col.size(); ++i) diff[i] = (col[i] - 0.5) / dt;
    auto ms = batch_mean_se(diff);
    CHECK(std::abs(ms.mean - 0.25) < 5.0 * ms.se + 0.01);
  }
}
