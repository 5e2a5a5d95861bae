#include "branchsim/quadrature.hpp"

#include "doctest.h"

#include <cmath>

using namespace branchsim;

TEST_SUITE("quadrature") {
  TEST_CASE("gauss-legendre is exact for polynomials up to degree 2n-1") {
    // n = 4 integrates degree-7 polynomials exactly: int_0^1 x^7 = 1/8.
    auto rule = gauss_legendre(4);
    double v = integrate([](double x) { return std::pow(x, 7.0); }, rule);
    CHECK(v == doctest::Approx(0.125).epsilon(1e-14));

    // ... but not degree 8 (a sanity check that the rule is genuinely n = 4).
    double v8 = integrate([](double x) { return std::pow(x, 8.0); }, rule);
    CHECK(std::abs(v8 - 1.0 / 9.0) > 1e-8);
  }

  TEST_CASE("gauss-legendre respects general intervals") {
    auto rule = gauss_legendre(6, -1.0, 3.0);
    double v = integrate([](double x) { return x * x; }, rule);
    CHECK(v == doctest::Approx(28.0 / 3.0).epsilon(1e-13));

    // Weights sum to the interval length and nodes stay strictly inside.
    CHECK(rule.weights.sum() == doctest::Approx(4.0).epsilon(1e-13));
    CHECK(rule.nodes.minCoeff() > -1.0);
    CHECK(rule.nodes.maxCoeff() < 3.0);
    for (int i = 0; i < rule.weights.size(); ++i) CHECK(rule.weights[i] > 0.0);
    for (int i = 1; i < rule.nodes.size(); ++i) CHECK(rule.nodes[i] > rule.nodes[i - 1]);
  }

  TEST_CASE("normal expectation rule reproduces gaussian moments") {
    auto rule = normal_expectation_rule(64);
    CHECK(integrate([](double) { return 1.0; }, rule) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(integrate([](double z) { return z * z; }, rule) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(integrate([](double z) { return z * z * z * z; }, rule) ==
          doctest::Approx(3.0).epsilon(1e-12));
    // E[cos Z] = e^{-1/2}: an entire function, so the rule nails it.
    CHECK(integrate([](double z) { return std::cos(z); }, rule) ==
          doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  }

  TEST_CASE("raw gauss-hermite matches the documented transform") {
    auto gh = gauss_hermite(32);
    double ez2 = 0.0;
    for (int i = 0; i < gh.nodes.size(); ++i) {
      double z = std::sqrt(2.0) * gh.nodes[i];
      ez2 += gh.weights[i] / std::sqrt(M_PI) * z * z;
    }
    CHECK(ez2 == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("adaptive integration converges and reports it") {
    auto res = integrate_adaptive([](double x) { return std::exp(x); }, 0.0, 1.0);
    CHECK(res.converged);
    CHECK(res.value == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-12));
    CHECK(res.nodes_used >= 256);
  }

  TEST_CASE("improper lower-endpoint integral of an integrable singularity") {
    // int_0^1 x^{-1/2} dx = 2; truncation at cutoff c leaves error 2*sqrt(c).
    auto res = integrate_improper_lower([](double x) { return 1.0 / std::sqrt(x); }, 0.0, 1.0);
    CHECK(res.monotone);
    CHECK(res.value == doctest::Approx(2.0).epsilon(1e-3));
    // Values grow as the cutoff shrinks.
    CHECK(res.values[0] < res.values[1]);
    CHECK(res.values[1] < res.values[2]);
  }

  TEST_CASE("improper integral of 1/x keeps growing without a limit") {
    auto res = integrate_improper_lower([](double x) { return 1.0 / x; }, 0.0, 1.0);
    CHECK(res.monotone);
    // ln(1/cutoff) with cutoff = 1e-8 is about 18.4: far above any proper value.
    CHECK(res.value > 10.0);
  }
}
