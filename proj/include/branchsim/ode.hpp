#pragma once

// Adaptive Dormand-Prince RK5(4) integrator for the moment ODEs. The systems
// here are mildly stiff at worst (bounded generators on compact trait
// spaces), so an explicit embedded pair with step control reaches the
// requested tolerances comfortably.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace branchsim {

struct OdeOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  double initial_step = 1e-3;
  double max_step = 0.25;
  std::size_t max_steps = 2'000'000;
};

using OdeRhs = std::function<void(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dydt)>;

// Integrates y' = rhs(t, y) from t=0, capturing the state at each requested
// output time (must be non-negative and strictly increasing). Output times
// are hit exactly by clamping the step size. Returns one state per time.
std::vector<Eigen::VectorXd> integrate_ode(const OdeRhs& rhs, const Eigen::VectorXd& y0,
                                           std::span<const double> output_times,
                                           const OdeOptions& options = {});

}  // namespace branchsim
