#pragma once

// Mean-semigroup machinery: principal eigen-elements (lambda, h, gamma) of
// the mean generator, spectral-gap bookkeeping, growth-regime classification,
// and deterministic moment oracles.
//
// All deterministic computations run on a GridOperator: the mean generator
// restricted either to the finite type set or to a Gauss-Legendre collocation
// grid on [0,1]. Extra "tracked" points can be appended to the interval grid;
// they participate in the dynamics (their trait enters rates pointwise) but
// carry no quadrature weight, which makes curves exact at arbitrary start
// traits instead of interpolated.
//
// Moment conventions, for a particle system started from a single particle
// at x and a bounded function f:
//   mean:          m_t(x)   = E_x[ Z_t(f) ],            m' = A m
//   second moment: u_t(x)   = E_x[ Z_t(f)^2 ],          u' = A u + P(m_t, m_t)
// where P is the bilinear pair source collecting, channel by channel, the
// rate-weighted expectation of sum_{i != j} m(child_i) m(child_j).

#include "branchsim/expr.hpp"
#include "branchsim/model.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace branchsim {

enum class Regime { small, critical, large };
const char* regime_name(Regime regime);

enum class EigenErrorKind {
  no_root,           // eigenvalue equation has no root in the admissible bracket
  not_supercritical, // lambda <= 0
  reducible,         // finite mean matrix is not irreducible
  complex_dominant,  // leading eigenvalue is not a simple real Perron value
  no_convergence,    // numerical failure
};

class EigenError : public std::runtime_error {
 public:
  EigenError(EigenErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  EigenErrorKind kind() const { return kind_; }

 private:
  EigenErrorKind kind_;
};

// Principal eigen-elements of the mean generator, normalized so that
// sup h/V = 1 and gamma(h) = 1.
struct EigenTriplet {
  bool finite_space = true;
  double lambda = 0.0;

  // Stored decay rate used for regime classification. raw_gap is the actual
  // spectral gap (lambda minus the next real part; +inf for rank-one means);
  // rho is raw_gap clipped just below lambda where needed, since any valid
  // rate must satisfy rho <= lambda.
  double rho = 0.0;
  double raw_gap = 0.0;
  bool rho_clipped = false;

  // Finite spaces.
  Eigen::VectorXd h_vec;
  Eigen::VectorXd gamma_vec;

  // Unit interval: h(x) = c_h / (lambda + alpha(x)) and gamma has density
  // c_gamma / (lambda + alpha(x)).
  double c_h = 0.0;
  double c_gamma = 0.0;
  double alpha0 = 0.0;
  Expr alpha;

  double eigen_residual = 0.0;  // worst relative residual of the two eigen-relations

  double h(double x) const;
  double gamma_density(double x) const;  // unit interval only
};

EigenTriplet solve_eigentriplet(const Model& model);

// Sufficient-condition integrals reported alongside the classification for
// unit-interval models. `value` is the adaptive (possibly cutoff-truncated)
// integral; divergent-positive integrands count as passing "> 1" since
// truncation only under-estimates.
struct CorollaryIntegral {
  enum class Kind { proper, improper_truncated, undefined_sign_change };
  double value = 0.0;
  Kind kind = Kind::proper;
  bool exceeds_one = false;
};

struct RegimeReport {
  Regime regime = Regime::small;
  double lambda = 0.0;
  double rho = 0.0;
  double tolerance = 0.0;  // |2 rho - lambda| <= tolerance * lambda declares critical
  std::optional<CorollaryIntegral> integral_inv_alpha;        // int 1/alpha
  std::optional<CorollaryIntegral> integral_inv_alpha_small;  // int 1/(alpha - 2 alpha(0))
};

RegimeReport classify_regime(const Model& model, const EigenTriplet& triplet,
                             double tol_rel = 1e-6);

struct GridOperator {
  TraitKind kind = TraitKind::finite;
  int quad_points = 0;      // leading nodes carrying quadrature weight
  Eigen::VectorXd nodes;    // finite: 0..d-1; interval: GL nodes then tracked extras
  Eigen::VectorXd weights;  // quadrature weights (zero on tracked extras)
  Eigen::MatrixXd A;        // mean generator on the nodes
  Eigen::VectorXd h;        // eigenfunction values on the nodes
  Eigen::VectorXd gamma_w;  // gamma(f) ~= gamma_w . f(nodes)
  Eigen::VectorXd V;        // weight function on the nodes
  double lambda = 0.0;
  double rho = 0.0;
  double raw_gap = 0.0;

  struct Channel {
    Eigen::VectorXd rate;
    Eigen::VectorXd f2;       // sum_k k(k-1) p_k at the nodes
    Eigen::MatrixXd placement;  // finite-type placement kernel (empty = local)
  };
  std::vector<Channel> channels;
  double immigration_rate = 0.0;  // unit-interval models only

  Eigen::VectorXd evaluate(const Expr& f) const;
  Eigen::VectorXd evaluate(const std::function<double(double)>& f) const;
  double integral(const Eigen::VectorXd& f) const { return weights.dot(f); }
  double gamma_of(const Eigen::VectorXd& f) const { return gamma_w.dot(f); }
  double gamma_of(const Expr& f) const { return gamma_of(evaluate(f)); }
  // f - gamma(f) h
  Eigen::VectorXd center(const Eigen::VectorXd& f) const;
  // Node index whose trait is x0. Finite: the type. Interval: x0 must be one
  // of the tracked extras passed to build_grid_operator.
  int node_of(double x0) const;

  Eigen::VectorXd pair_source(const Eigen::VectorXd& m1, const Eigen::VectorXd& m2) const;
  Eigen::VectorXd pair_source(const Eigen::VectorXd& m) const { return pair_source(m, m); }
};

GridOperator build_grid_operator(const Model& model, const EigenTriplet& triplet,
                                 int quad_points = 256,
                                 const std::vector<double>& tracked = {});

// Values of M_t f on the nodes for each requested time (times must be
// nondecreasing, starting at >= 0).
std::vector<Eigen::VectorXd> mean_curve(const GridOperator& op, const Eigen::VectorXd& f,
                                        const std::vector<double>& times);

struct SecondMomentCurve {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> mean;    // M_t f
  std::vector<Eigen::VectorXd> second;  // E_x Z_t(f)^2
};
// Initial conditions are m_0 = f and u_0 = f^2 (one particle). Callers that
// need the recursion in its composed form can pass curve outputs back in as
// fresh initial data via the *_from overloads.
SecondMomentCurve second_moment_curve(const GridOperator& op, const Eigen::VectorXd& f,
                                      const std::vector<double>& times);
SecondMomentCurve second_moment_curve_from(const GridOperator& op, const Eigen::VectorXd& m0,
                                           const Eigen::VectorXd& u0,
                                           const std::vector<double>& times);

// psi2(x) = Var_x(W) for the limit W of the intrinsic martingale, obtained
// from the resolvent identity (2 lambda - A) E_x[W^2] = P(h, h) and
// E_x[W] = h(x).
Eigen::VectorXd psi2_infinity(const GridOperator& op);

// w_t = e^{-2 lambda t} M_t psi2 = E_x[(W_t - W)^2]; decays like e^{-lambda t}.
std::vector<Eigen::VectorXd> wvariance_curve(const GridOperator& op,
                                             const std::vector<double>& times);

// e^{lambda t} E_x[(W_t - W_T)^2] on the nodes for each t: the exact oracle
// for the rescaled L2 speed of the martingale when W is proxied by W_T.
// T = +inf gives the true-W limit version.
std::vector<Eigen::VectorXd> trace_curve(const GridOperator& op, const std::vector<double>& times,
                                         double proxy_T);

struct StabilizedValue {
  double value = 0.0;
  bool stabilized = false;
  double last_change = 0.0;      // relative change over the final probe step
  double time_used = 0.0;
  double profile_residual = 0.0; // sup-norm deviation of the node profile from value*h
};

// Limiting variance of the regime-normalized fluctuation of Z_t(f):
//   small:    lim_t e^{-lambda t} E_x[(Z_t(f) - e^{lambda t} gamma(f) W)^2] / h(x)
//   critical: the same with an extra 1/t
// Independent of x; computed on the quadrature nodes with a stabilization probe.
StabilizedValue sigma2_limit(const GridOperator& op, const Eigen::VectorXd& f, Regime regime);

// Per-time second-moment oracle for the simulated fluctuation statistic,
// exact under the proxy W ~ W_T:
//   E[Y_t^2] = s(t)^2 [ E_x Z_t(f - gamma(f) h)^2
//                       + gamma(f)^2 e^{2 lambda t} E_x (W_t - W_T)^2 ]
// with s(t) the regime normalization. Returned per node.
std::vector<Eigen::VectorXd> fluctuation_second_moment_curve(const GridOperator& op,
                                                             const Eigen::VectorXd& f,
                                                             const std::vector<double>& times,
                                                             double proxy_T, Regime regime);

// Sup-norm residual sup_x |e^{-lambda t} M_t f(x) - gamma(f) h(x)| / V(x) per
// time, with a log-linear rate fit. `exact_rank_one` marks residuals at noise
// level for every t (single-type models), in which case no fit is attempted.
struct DecayReport {
  std::vector<double> times;
  std::vector<double> residuals;
  double fitted_rate = 0.0;    // positive = decay
  double fitted_log_a2 = 0.0;  // intercept: log residual at t = 0
  bool exact_rank_one = false;
  bool fit_valid = false;
};
DecayReport decay_report(const GridOperator& op, const Eigen::VectorXd& f,
                         const std::vector<double>& times);

}  // namespace branchsim
