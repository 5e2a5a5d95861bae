#include "branchsim/model.hpp"

#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

using namespace branchsim;

namespace {

bool mentions(const ModelError& e, const std::string& needle) {
  for (const auto& v : e.violations()) {
    if (v.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("yule factory builds a one-type binary-splitting model") {
    Model m = make_yule(1.5);
    CHECK(m.space.kind == TraitKind::finite);
    CHECK(m.space.num_types == 1);
    REQUIRE(m.finite_channels.size() == 1);
    const auto& ch = m.finite_channels[0];
    CHECK(ch.rates[0] == doctest::Approx(1.5));
    // Offspring law: two children with probability one.
    CHECK(ch.offspring(0, 2) == doctest::Approx(1.0));
    CHECK(m.max_offspring() == 2);

    CHECK_THROWS_AS(make_yule(0.0), ModelError);
    CHECK_THROWS_AS(make_yule(-1.0), ModelError);
  }

  TEST_CASE("finite-type validation collects every violation") {
    Eigen::VectorXd rates(2);
    rates << 1.0, -0.5;  // negative rate
    Eigen::MatrixXd offspring(2, 3);
    offspring << 0.5, 0.4, 0.2,  // row sums to 1.1
        0.0, 0.0, 1.0;
    Eigen::MatrixXd kernel(2, 2);
    kernel << 0.7, 0.2,  // row sums to 0.9
        0.0, 1.0;
    try {
      make_finite_type(rates, offspring, kernel);
      FAIL("expected ModelError");
    } catch (const ModelError& e) {
      CHECK(e.violations().size() >= 3);
      CHECK(mentions(e, "rate"));
      CHECK(mentions(e, "offspring"));
      CHECK(mentions(e, "kernel"));
    }
  }

  TEST_CASE("finite-type accepts a valid two-type model") {
    Eigen::VectorXd rates(2);
    rates << 0.8, 1.6;
    Eigen::MatrixXd offspring(2, 3);
    offspring << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0;
    Eigen::MatrixXd kernel = Eigen::MatrixXd::Identity(2, 2);
    Model m = make_finite_type(rates, offspring, kernel);
    CHECK(m.space.num_types == 2);
    CHECK(m.max_offspring() == 2);
  }

  TEST_CASE("pure-death realization requires a nonnegative drift") {
    // alpha(x) = x is fine; alpha(x) = x - 0.5 dips negative.
    Model ok = make_house_of_cards(hoc_pure_death(Expr::parse("x")));
    CHECK(ok.space.kind == TraitKind::unit_interval);
    REQUIRE(ok.hoc.has_value());
    CHECK(ok.hoc->immigration_rate == doctest::Approx(1.0));

    CHECK_THROWS_AS(make_house_of_cards(hoc_pure_death(Expr::parse("x - 0.5"))), ModelError);
  }

  TEST_CASE("binary realization requires the drift to fit the rate scale") {
    // |alpha| <= r_scale on [0,1].
    CHECK_NOTHROW(make_house_of_cards(hoc_binary(Expr::parse("x - 0.4"), 1.0)));
    CHECK_THROWS_AS(make_house_of_cards(hoc_binary(Expr::parse("2*x"), 1.0)), ModelError);
    CHECK_THROWS_AS(make_house_of_cards(hoc_binary(Expr::parse("x"), 0.0)), ModelError);
  }

  TEST_CASE("declared drift must match the realization") {
    // Claim alpha(x) = x but wire a channel whose mean drift is x/2.
    HouseOfCardsParams p = hoc_pure_death(Expr::parse("0.5*x"));
    p.alpha = Expr::parse("x");
    try {
      make_house_of_cards(p);
      FAIL("expected ModelError");
    } catch (const ModelError& e) {
      CHECK(mentions(e, "alpha"));
    }
  }

  TEST_CASE("offspring probabilities must form a law pointwise") {
    HouseOfCardsParams p;
    p.alpha = Expr::parse("x");
    p.rate = Expr::parse("1");
    // p_0(x) = x is not a complete law: probabilities must sum to 1.
    p.offspring = {Expr::parse("x")};
    CHECK_THROWS_AS(make_house_of_cards(p), ModelError);
  }

  TEST_CASE("grid sup and min scan the validation grid") {
    CHECK(grid_sup(Expr::parse("sin(2*x)")) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(grid_min(Expr::parse("sin(2*x)")) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(grid_sup(Expr::parse("x*(1-x)")) == doctest::Approx(0.25).epsilon(1e-7));
    CHECK(grid_min(Expr::parse("2 - x")) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("model error concatenates its violations into what()") {
    try {
      make_yule(-2.0);
    } catch (const ModelError& e) {
      CHECK(std::string(e.what()).size() > 0);
      CHECK(e.violations().size() == 1);
    }
  }
}
