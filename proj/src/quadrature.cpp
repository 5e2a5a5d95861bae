#include "branchsim/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace branchsim {

QuadratureRule gauss_legendre(int n, double a, double b) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  // Newton iteration on P_n with the Chebyshev-angle initial guess; the rule
  // is symmetric so only half the roots are computed.
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      // p0 = P_n(z); derivative from the standard recurrence.
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    double w = 2.0 / ((1.0 - z * z) * pp * pp);
    // Map from [-1,1] to [a,b].
    double mid = 0.5 * (a + b), halfw = 0.5 * (b - a);
    rule.nodes[i] = mid - halfw * z;
    rule.nodes[n - 1 - i] = mid + halfw * z;
    rule.weights[i] = w * halfw;
    rule.weights[n - 1 - i] = w * halfw;
  }
  return rule;
}

QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n must be >= 1");
  // Golub-Welsch: eigen-decompose the Jacobi matrix for Hermite polynomials.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    double off = std::sqrt(i / 2.0);
    jacobi(i, i - 1) = off;
    jacobi(i - 1, i) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  QuadratureRule rule;
  rule.nodes = solver.eigenvalues();
  rule.weights.resize(n);
  const double total = std::sqrt(std::numbers::pi);  // integral of exp(-z^2)
  for (int i = 0; i < n; ++i) {
    double first = solver.eigenvectors()(0, i);
    rule.weights[i] = total * first * first;
  }
  return rule;
}

QuadratureRule normal_expectation_rule(int n) {
  QuadratureRule gh = gauss_hermite(n);
  QuadratureRule rule;
  rule.nodes = std::numbers::sqrt2 * gh.nodes;
  rule.weights = gh.weights / std::sqrt(std::numbers::pi);
  return rule;
}

double integrate(const std::function<double(double)>& f, const QuadratureRule& rule) {
  double acc = 0.0;
  for (int i = 0; i < rule.nodes.size(); ++i) acc += rule.weights[i] * f(rule.nodes[i]);
  return acc;
}

AdaptiveResult integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double tol, int n0, int max_doublings) {
  AdaptiveResult out;
  int n = n0;
  double prev = integrate(f, gauss_legendre(n, a, b));
  for (int k = 0; k < max_doublings; ++k) {
    n *= 2;
    double next = integrate(f, gauss_legendre(n, a, b));
    out.last_change = std::abs(next - prev);
    if (out.last_change <= tol * (1.0 + std::abs(next))) {
      out.value = next;
      out.converged = true;
      out.nodes_used = n;
      return out;
    }
    prev = next;
  }
  out.value = prev;
  out.nodes_used = n;
  return out;
}

ImproperLowerResult integrate_improper_lower(const std::function<double(double)>& f, double a,
                                             double b, double cutoff, double tol) {
  ImproperLowerResult out;
  const double cutoffs[3] = {cutoff * 1e4, cutoff * 1e2, cutoff};
  for (int k = 0; k < 3; ++k) {
    double lo = a + cutoffs[k];
    if (lo >= b) throw std::invalid_argument("integrate_improper_lower: cutoff exceeds interval");
    // Split near the singular endpoint so the adaptive rule is not asked to
    // resolve the boundary layer in one shot.
    double split = std::min(a + 1e-3 * (b - a), lo + 0.5 * (b - lo));
    double near = lo < split ? integrate_adaptive(f, lo, split, tol, 256, 8).value : 0.0;
    double far = integrate_adaptive(f, std::max(lo, split), b, tol, 256, 8).value;
    out.values[k] = near + far;
  }
  out.value = out.values[2];
  out.monotone = out.values[1] >= out.values[0] - tol && out.values[2] >= out.values[1] - tol;
  return out;
}

}  // namespace branchsim
