#include "branchsim/model.hpp"

#include "branchsim/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace branchsim {
namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string build_message(const std::vector<std::string>& violations) {
  std::ostringstream out;
  out << "model validation failed (" << violations.size() << " violation"
      << (violations.size() == 1 ? "" : "s") << "):";
  for (const auto& v : violations) out << "\n  - " << v;
  return out.str();
}

double validation_x(int i) {
  return static_cast<double>(i) / (kValidationGridPoints - 1);
}

void check_probability_row(const Eigen::VectorXd& row, const std::string& where,
                           std::vector<std::string>* violations) {
  for (int k = 0; k < row.size(); ++k) {
    if (!(row[k] >= 0.0) || !std::isfinite(row[k])) {
      violations->push_back(where + ": p_" + std::to_string(k) + " = " +
                            format_double(row[k]) + " is not a probability");
    }
  }
  const double sum = row.sum();
  if (!(std::abs(sum - 1.0) <= 1e-12)) {
    violations->push_back(where + ": probabilities sum to " + format_double(sum) +
                          ", expected 1 within 1e-12");
  }
}

void check_finite_channel(const FiniteChannel& channel, int num_types, int index,
                          std::vector<std::string>* violations) {
  const std::string where = "channel " + std::to_string(index);
  if (channel.rates.size() != num_types) {
    violations->push_back(where + ": rates has " + std::to_string(channel.rates.size()) +
                          " entries, expected " + std::to_string(num_types));
    return;  // remaining checks would index out of bounds
  }
  for (int i = 0; i < num_types; ++i) {
    if (!(channel.rates[i] >= 0.0) || !std::isfinite(channel.rates[i])) {
      violations->push_back(where + ": rate of type " + std::to_string(i) + " = " +
                            format_double(channel.rates[i]) + " must be finite and >= 0");
    }
  }
  if (channel.offspring.rows() != num_types || channel.offspring.cols() < 1) {
    violations->push_back(where + ": offspring law must have one row per type");
    return;
  }
  for (int i = 0; i < num_types; ++i) {
    check_probability_row(channel.offspring.row(i),
                          where + ", offspring law of type " + std::to_string(i), violations);
  }
  if (channel.kernel.rows() != num_types || channel.kernel.cols() != num_types) {
    violations->push_back(where + ": placement kernel must be " + std::to_string(num_types) +
                          "x" + std::to_string(num_types));
    return;
  }
  for (int i = 0; i < num_types; ++i) {
    check_probability_row(channel.kernel.row(i),
                          where + ", placement kernel row of type " + std::to_string(i),
                          violations);
  }
}

// Evaluates f on the validation grid, recording non-finite values as violations.
std::vector<double> grid_values(const Expr& f, const std::string& what,
                                std::vector<std::string>* violations) {
  std::vector<double> values(kValidationGridPoints);
  int bad = 0;
  double bad_x = 0.0;
  for (int i = 0; i < kValidationGridPoints; ++i) {
    values[i] = f(validation_x(i));
    if (!std::isfinite(values[i]) && bad++ == 0) bad_x = validation_x(i);
  }
  if (bad > 0) {
    violations->push_back(what + " is not finite at x = " + format_double(bad_x) + " (" +
                          std::to_string(bad) + " grid points affected)");
  }
  return values;
}

void check_house_of_cards(const HouseOfCardsParams& params,
                          std::vector<std::string>* violations) {
  if (params.immigration_rate != 1.0) {
    violations->push_back("immigration rate is fixed at 1, got " +
                          format_double(params.immigration_rate));
  }
  if (params.offspring.empty()) {
    violations->push_back("replacement offspring law is empty");
    return;
  }

  const auto alpha = grid_values(params.alpha, "alpha", violations);
  const auto rate = grid_values(params.rate, "replacement rate", violations);
  std::vector<std::vector<double>> probs;
  probs.reserve(params.offspring.size());
  for (std::size_t k = 0; k < params.offspring.size(); ++k) {
    probs.push_back(grid_values(params.offspring[k], "p_" + std::to_string(k), violations));
  }
  if (!violations->empty()) return;  // arithmetic below expects finite values

  int negative_rate = 0, bad_prob = 0, bad_sum = 0, inconsistent = 0;
  double worst_sum = 1.0, worst_alpha_gap = 0.0, worst_alpha_x = 0.0;
  for (int i = 0; i < kValidationGridPoints; ++i) {
    if (rate[i] < 0.0) ++negative_rate;
    double sum = 0.0, drift = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      const double p = probs[k][i];
      if (p < 0.0) ++bad_prob;
      sum += p;
      drift += (static_cast<double>(k) - 1.0) * p;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      ++bad_sum;
      if (std::abs(sum - 1.0) > std::abs(worst_sum - 1.0)) worst_sum = sum;
    }
    const double declared = alpha[i];
    const double realized = -rate[i] * drift;
    const double gap = std::abs(declared - realized);
    if (gap > 1e-10 * std::max(1.0, std::abs(declared))) {
      if (gap > worst_alpha_gap) {
        worst_alpha_gap = gap;
        worst_alpha_x = validation_x(i);
      }
      ++inconsistent;
    }
  }
  if (negative_rate > 0) {
    violations->push_back("replacement rate is negative at " + std::to_string(negative_rate) +
                          " grid points");
  }
  if (bad_prob > 0) {
    violations->push_back("offspring probabilities are negative at " + std::to_string(bad_prob) +
                          " grid points (check the realization of alpha)");
  }
  if (bad_sum > 0) {
    violations->push_back("offspring probabilities sum to " + format_double(worst_sum) +
                          " (worst case), expected 1 within 1e-12");
  }
  if (inconsistent > 0) {
    violations->push_back(
        "alpha does not match -rate * sum_k (k-1) p_k: worst gap " +
        format_double(worst_alpha_gap) + " at x = " + format_double(worst_alpha_x));
  }
  if (!violations->empty()) return;

  // Spectral preconditions. A constant alpha is a degenerate special case:
  // the eigenvalue equation collapses to lambda = 1 - alpha, so the drift
  // conditions below are not needed.
  double alpha_max_dev = 0.0;
  for (double a : alpha) alpha_max_dev = std::max(alpha_max_dev, std::abs(a - alpha[0]));
  if (alpha_max_dev <= 1e-12 * std::max(1.0, std::abs(alpha[0]))) return;

  int non_positive = 0;
  double worst_x = 0.0, worst_value = 0.0;
  for (int i = 1; i < kValidationGridPoints; ++i) {
    const double diff = alpha[i] - alpha[0];
    if (!(diff > 0.0)) {
      if (non_positive++ == 0) {
        worst_x = validation_x(i);
        worst_value = diff;
      }
    }
  }
  if (non_positive > 0) {
    violations->push_back("alpha(x) - alpha(0) must be > 0 on (0,1]; first failure at x = " +
                          format_double(worst_x) + " with value " + format_double(worst_value) +
                          " (" + std::to_string(non_positive) + " grid points)");
    return;  // the integral below would be meaningless
  }

  const double alpha0 = params.alpha(0.0);
  const auto integral = integrate_improper_lower(
      [&](double x) { return 1.0 / (params.alpha(x) - alpha0); }, 0.0, 1.0);
  // The integrand is positive, so the cutoff only under-estimates: exceeding 1
  // at the cutoff proves the condition.
  if (!(integral.value > 1.0)) {
    violations->push_back("integral of 1/(alpha(x) - alpha(0)) over (0,1] is " +
                          format_double(integral.value) + ", must exceed 1");
  }
}

void check_weight(const Model& model, std::vector<std::string>* violations) {
  if (model.moment_order < 4) {
    violations->push_back("moment order must be >= 4, got " +
                          std::to_string(model.moment_order));
  }
  if (model.space.kind == TraitKind::unit_interval) {
    const auto v = grid_values(model.V, "weight V", violations);
    int bad = 0;
    for (double value : v)
      if (!(value > 0.0)) ++bad;
    if (bad > 0) {
      violations->push_back("weight V must be positive on [0,1]; " + std::to_string(bad) +
                            " grid points fail");
    }
  } else {
    // For finite spaces V is evaluated at the type index.
    for (int i = 0; i < model.space.num_types; ++i) {
      const double value = model.V(static_cast<double>(i));
      if (!(value > 0.0) || !std::isfinite(value)) {
        violations->push_back("weight V must be positive and finite for type " +
                              std::to_string(i) + ", got " + format_double(value));
      }
    }
  }
}

}  // namespace

ModelError::ModelError(std::vector<std::string> violations)
    : std::runtime_error(build_message(violations)), violations_(std::move(violations)) {}

int Model::max_offspring() const {
  int result = 0;
  for (const auto& channel : finite_channels) {
    result = std::max(result, static_cast<int>(channel.offspring.cols()) - 1);
  }
  if (hoc) {
    result = std::max(result, static_cast<int>(hoc->offspring.size()) - 1);
    result = std::max(result, 2);  // immigration: surviving parent plus one child
  }
  return result;
}

void validate_model(const Model& model) {
  std::vector<std::string> violations;
  if (model.space.kind == TraitKind::finite) {
    if (model.space.num_types < 1) {
      violations.push_back("finite trait space needs at least one type");
    } else if (model.finite_channels.empty()) {
      violations.push_back("finite-type model needs at least one event channel");
    } else {
      for (std::size_t c = 0; c < model.finite_channels.size(); ++c) {
        check_finite_channel(model.finite_channels[c], model.space.num_types,
                             static_cast<int>(c), &violations);
      }
    }
    if (model.hoc) violations.push_back("finite trait space cannot carry unit-interval channels");
  } else {
    if (!model.hoc) {
      violations.push_back("unit-interval model needs house-of-cards parameters");
    } else {
      if (!model.finite_channels.empty()) {
        violations.push_back("unit-interval model cannot carry finite-type channels");
      }
      check_house_of_cards(*model.hoc, &violations);
    }
  }
  check_weight(model, &violations);
  if (!violations.empty()) throw ModelError(std::move(violations));
}

Model make_yule(double birth_rate) {
  if (!(birth_rate > 0.0) || !std::isfinite(birth_rate)) {
    throw ModelError({"birth rate must be a positive finite real, got " +
                      format_double(birth_rate)});
  }
  FiniteChannel channel;
  channel.rates = Eigen::VectorXd::Constant(1, birth_rate);
  channel.offspring = Eigen::MatrixXd::Zero(1, 3);
  channel.offspring(0, 2) = 1.0;  // always two children
  channel.kernel = Eigen::MatrixXd::Identity(1, 1);

  Model model;
  model.name = "yule";
  model.space = {TraitKind::finite, 1};
  model.finite_channels = {channel};
  validate_model(model);
  return model;
}

Model make_finite_type(const std::vector<FiniteChannel>& channels, int num_types) {
  Model model;
  model.name = "finite_type";
  model.space = {TraitKind::finite, num_types};
  model.finite_channels = channels;
  validate_model(model);
  return model;
}

Model make_finite_type(const Eigen::VectorXd& rates, const Eigen::MatrixXd& offspring,
                       const Eigen::MatrixXd& kernel) {
  FiniteChannel channel{rates, offspring, kernel};
  return make_finite_type({channel}, static_cast<int>(rates.size()));
}

Model make_house_of_cards(const HouseOfCardsParams& params) {
  Model model;
  model.name = "house_of_cards";
  model.space = {TraitKind::unit_interval, 0};
  model.hoc = params;
  validate_model(model);
  return model;
}

HouseOfCardsParams hoc_pure_death(const Expr& alpha) {
  HouseOfCardsParams params;
  params.alpha = alpha;
  params.rate = alpha;  // death at rate alpha(x) realizes the declared drift
  params.offspring = {Expr::parse("1")};
  return params;
}

HouseOfCardsParams hoc_binary(const Expr& alpha, double r_scale) {
  if (!(r_scale > 0.0) || !std::isfinite(r_scale)) {
    throw ModelError({"binary realization needs a positive replacement rate, got " +
                      format_double(r_scale)});
  }
  const std::string r = format_double(r_scale);
  const std::string a = "(" + alpha.source() + ")";
  HouseOfCardsParams params;
  params.alpha = alpha;
  params.rate = Expr::parse(r);
  // p_2 = (r - alpha) / (2r), p_0 = 1 - p_2; the drift is then
  // -r * (p_2 - p_0) = -r * (2 p_2 - 1) = alpha.
  params.offspring = {Expr::parse("(" + r + " + " + a + ") / (2 * " + r + ")"),
                      Expr::parse("0"),
                      Expr::parse("(" + r + " - " + a + ") / (2 * " + r + ")")};
  return params;
}

double grid_sup(const Expr& f) {
  double result = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < kValidationGridPoints; ++i) result = std::max(result, f(validation_x(i)));
  return result;
}

double grid_min(const Expr& f) {
  double result = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kValidationGridPoints; ++i) result = std::min(result, f(validation_x(i)));
  return result;
}

}  // namespace branchsim
