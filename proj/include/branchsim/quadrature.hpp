#pragma once

// Gaussian quadrature rules used by the mean-semigroup oracles (collocation
// on [0,1]), by eigenvalue residual integrals, and by Gaussian expectations
// in the distance estimator.

#include <Eigen/Dense>

#include <functional>

namespace branchsim {

struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

// n-point Gauss-Legendre rule on [a, b]; exact for polynomials up to
// degree 2n-1. Nodes are strictly inside the interval.
QuadratureRule gauss_legendre(int n, double a = 0.0, double b = 1.0);

// n-point Gauss-Hermite rule for the weight exp(-z^2). For a standard normal
// expectation use E[g(Z)] = sum_i weights[i]/sqrt(pi) * g(sqrt(2)*nodes[i]);
// normal_expectation() below packages exactly that transform.
QuadratureRule gauss_hermite(int n);

// Rule with nodes/weights pre-transformed so that
// E[g(Z)] ~= sum_i weights[i] * g(nodes[i]) for Z ~ N(0,1).
QuadratureRule normal_expectation_rule(int n = 64);

double integrate(const std::function<double(double)>& f, const QuadratureRule& rule);

struct AdaptiveResult {
  double value = 0.0;
  bool converged = false;
  int nodes_used = 0;
  double last_change = 0.0;
};

// Gauss-Legendre with node-count doubling until successive values agree to
// `tol` (absolute + relative mix), starting from n0 nodes.
AdaptiveResult integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double tol = 1e-10, int n0 = 256, int max_doublings = 6);

// Improper integral over (a, b] with an integrable-looking singularity at a:
// integrates over [a + cutoff, b] and reports values for shrinking cutoffs so
// callers can check monotone growth. values[k] corresponds to cutoff*100^-k.. see impl.
struct ImproperLowerResult {
  double value = 0.0;        // at the final (smallest) cutoff
  bool monotone = false;     // values grew as the cutoff shrank
  Eigen::Vector3d values;    // cutoff*1e4, cutoff*1e2, cutoff
};
ImproperLowerResult integrate_improper_lower(const std::function<double(double)>& f, double a,
                                             double b, double cutoff = 1e-8, double tol = 1e-10);

}  // namespace branchsim
