#pragma once

// Model descriptions for branching particle systems on two trait spaces:
// a finite type set {0..d-1} or the unit interval [0,1]. A model is a list
// of event channels; each channel fires per particle at a trait-dependent
// rate and replaces the particle by a random set of children.
//
//  * finite models: children counts are drawn from a per-type offspring law
//    and each child's type is drawn independently from the parent row of a
//    stochastic placement kernel (identity kernel = children keep the type).
//  * unit-interval models ("house of cards"): one local replacement channel
//    (children keep the parent trait) plus an immigration channel firing at
//    constant rate under which the parent survives and one child appears
//    with a fresh Uniform[0,1] trait. The replacement channel is summarized
//    by alpha(x) = -r(x) * sum_k (k-1) p_k(x), the mean per-event drift that
//    drives all spectral quantities.

#include "branchsim/expr.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace branchsim {

enum class TraitKind { finite, unit_interval };

struct TraitSpace {
  TraitKind kind = TraitKind::finite;
  int num_types = 1;  // meaningful for finite spaces only
};

struct FiniteChannel {
  Eigen::VectorXd rates;      // per-type event rate, >= 0
  Eigen::MatrixXd offspring;  // row i = offspring-count law (p_0..p_K) for type i
  Eigen::MatrixXd kernel;     // row-stochastic child placement; identity = local
};

struct HouseOfCardsParams {
  Expr alpha;                  // declared mean drift; validated against the realization
  Expr rate;                   // replacement rate r(x) >= 0
  std::vector<Expr> offspring; // p_0(x)..p_K(x)
  double immigration_rate = 1.0;
};

struct Model {
  std::string name;
  TraitSpace space;
  std::vector<FiniteChannel> finite_channels;  // finite spaces
  std::optional<HouseOfCardsParams> hoc;       // unit-interval spaces
  Expr V = Expr::constant(1.0);                // weight function for norms
  int moment_order = 4;

  int max_offspring() const;
};

class ModelError : public std::runtime_error {
 public:
  explicit ModelError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

// Number of grid points used when validating trait-dependent functions and
// when taking sups of continuous functions over [0,1].
inline constexpr int kValidationGridPoints = 10'001;

// Factories. Each validates its inputs and throws ModelError listing every
// violation found (not just the first).
Model make_yule(double birth_rate);
Model make_finite_type(const std::vector<FiniteChannel>& channels, int num_types);
Model make_finite_type(const Eigen::VectorXd& rates, const Eigen::MatrixXd& offspring,
                       const Eigen::MatrixXd& kernel);
Model make_house_of_cards(const HouseOfCardsParams& params);

// Convenience realizations of a declared alpha:
//  * pure death: r(x) = alpha(x), p_0 = 1 (needs alpha >= 0 on [0,1]);
//  * binary mix: constant r(x) = r_scale, p_2 = (r_scale - alpha)/(2 r_scale),
//    p_0 = 1 - p_2 (needs |alpha| <= r_scale on [0,1]).
HouseOfCardsParams hoc_pure_death(const Expr& alpha);
HouseOfCardsParams hoc_binary(const Expr& alpha, double r_scale);

// Re-runs full validation on an assembled model (used by config loading).
void validate_model(const Model& model);

// Sup of f over [0,1] on the validation grid (endpoints included).
double grid_sup(const Expr& f);
double grid_min(const Expr& f);

}  // namespace branchsim
