#include "branchsim/ode.hpp"

#include <cmath>
#include <stdexcept>

namespace branchsim {

namespace {

// Dormand-Prince coefficients (RK5(4)7M).
constexpr double kC2 = 1.0 / 5.0, kC3 = 3.0 / 10.0, kC4 = 4.0 / 5.0, kC5 = 8.0 / 9.0;
constexpr double kA21 = 1.0 / 5.0;
constexpr double kA31 = 3.0 / 40.0, kA32 = 9.0 / 40.0;
constexpr double kA41 = 44.0 / 45.0, kA42 = -56.0 / 15.0, kA43 = 32.0 / 9.0;
constexpr double kA51 = 19372.0 / 6561.0, kA52 = -25360.0 / 2187.0, kA53 = 64448.0 / 6561.0,
                 kA54 = -212.0 / 729.0;
constexpr double kA61 = 9017.0 / 3168.0, kA62 = -355.0 / 33.0, kA63 = 46732.0 / 5247.0,
                 kA64 = 49.0 / 176.0, kA65 = -5103.0 / 18656.0;
constexpr double kB1 = 35.0 / 384.0, kB3 = 500.0 / 1113.0, kB4 = 125.0 / 192.0,
                 kB5 = -2187.0 / 6784.0, kB6 = 11.0 / 84.0;
// Embedded 4th-order weights.
constexpr double kE1 = 5179.0 / 57600.0, kE3 = 7571.0 / 16695.0, kE4 = 393.0 / 640.0,
                 kE5 = -92097.0 / 339200.0, kE6 = 187.0 / 2100.0, kE7 = 1.0 / 40.0;

}  // namespace

std::vector<Eigen::VectorXd> integrate_ode(const OdeRhs& rhs, const Eigen::VectorXd& y0,
                                           std::span<const double> output_times,
                                           const OdeOptions& options) {
  for (std::size_t i = 0; i < output_times.size(); ++i) {
    if (output_times[i] < 0.0 || (i > 0 && output_times[i] <= output_times[i - 1])) {
      throw std::invalid_argument("integrate_ode: output times must be >= 0 and increasing");
    }
  }
  std::vector<Eigen::VectorXd> snapshots;
  snapshots.reserve(output_times.size());

  Eigen::VectorXd y = y0;
  double t = 0.0;
  std::size_t next_out = 0;
  while (next_out < output_times.size() && output_times[next_out] <= 0.0) {
    // t = 0 cannot occur (times strictly increase from >= 0); only time 0.
    snapshots.push_back(y);
    ++next_out;
  }
  if (next_out >= output_times.size()) return snapshots;

  const int n = static_cast<int>(y0.size());
  Eigen::VectorXd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), y5(n), err(n);
  double h = options.initial_step;
  bool fsal_valid = false;

  for (std::size_t step = 0; step < options.max_steps; ++step) {
    double target = output_times[next_out];
    // Clamp to land exactly on the next output time, but remember the
    // controller's step so short clamped steps do not throttle progress.
    double h_controller = h;
    bool clamped = false;
    if (t + h >= target) {
      h = target - t;
      clamped = true;
    }

    if (!fsal_valid) rhs(t, y, k1);
    ytmp = y + h * kA21 * k1;
    rhs(t + kC2 * h, ytmp, k2);
    ytmp = y + h * (kA31 * k1 + kA32 * k2);
    rhs(t + kC3 * h, ytmp, k3);
    ytmp = y + h * (kA41 * k1 + kA42 * k2 + kA43 * k3);
    rhs(t + kC4 * h, ytmp, k4);
    ytmp = y + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4);
    rhs(t + kC5 * h, ytmp, k5);
    ytmp = y + h * (kA61 * k1 + kA62 * k2 + kA63 * k3 + kA64 * k4 + kA65 * k5);
    rhs(t + h, ytmp, k6);
    y5 = y + h * (kB1 * k1 + kB3 * k3 + kB4 * k4 + kB5 * k5 + kB6 * k6);
    rhs(t + h, y5, k7);
    err = y5 - (y + h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 + kE6 * k6 + kE7 * k7));

    double err_norm = 0.0;
    for (int i = 0; i < n; ++i) {
      double scale = options.abs_tol + options.rel_tol * std::max(std::abs(y[i]), std::abs(y5[i]));
      err_norm = std::max(err_norm, std::abs(err[i]) / scale);
    }

    if (err_norm <= 1.0) {
      t += h;
      y.swap(y5);
      k1.swap(k7);  // FSAL
      fsal_valid = true;
      if (clamped) {
        t = target;  // kill accumulated rounding
        snapshots.push_back(y);
        ++next_out;
        if (next_out >= output_times.size()) return snapshots;
      }
    } else {
      fsal_valid = false;  // k1 still matches y; but recompute for safety
    }

    double factor = err_norm > 0.0 ? 0.9 * std::pow(err_norm, -0.2) : 5.0;
    factor = std::min(5.0, std::max(0.2, factor));
    double basis = (clamped && err_norm <= 1.0) ? h_controller : h;
    h = std::min(options.max_step, basis * factor);
    if (h < 1e-14) throw std::runtime_error("integrate_ode: step size underflow");
  }
  throw std::runtime_error("integrate_ode: max step count exceeded");
}

}  // namespace branchsim
