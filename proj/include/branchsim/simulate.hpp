#pragma once

// Exact event-driven simulation of the branching particle systems described
// by a Model. One engine serves both trait spaces: events are proposed from
// per-channel rate majorants (exact per-type maxima on finite spaces, a
// validated sup bound on [0,1]) and accepted by thinning, which preserves the
// law exactly; rejected proposals advance time only.
//
// Event semantics are uniform: an accepted event removes the struck particle
// and appends its children. Channels whose parent survives (the unit-interval
// immigration channel) encode survival by listing a same-trait child, so an
// event log replay never needs channel-specific rules.
//
// Determinism contract: every replica draws from Rng::stream(seed, replica),
// so results are independent of thread count and schedule, and ensembles are
// byte-stable for a fixed build. Replica 0 of an ensemble and
// simulate_trajectory with the same seed coincide draw for draw.

#include "branchsim/expr.hpp"
#include "branchsim/model.hpp"
#include "branchsim/rng.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace branchsim {

struct SimOptions {
  double horizon = 0.0;
  std::vector<double> grid;  // observation times, nondecreasing, within [0, horizon]
  std::size_t cap = 1'000'000;
  bool record_events = false;
};

// Event log + terminal state of one run. Particle ids are assigned in birth
// order: the initial particles are 0..n0-1, every event's children take the
// next consecutive ids. Children of event e are child_traits[child_offset[e]
// .. child_offset[e+1]).
struct Trajectory {
  double x0 = 0.0;
  double horizon = 0.0;
  bool truncated = false;
  double truncation_time = 0.0;  // meaningful when truncated
  bool events_recorded = false;
  std::vector<double> final_traits;

  std::vector<double> event_times;
  std::vector<std::int64_t> event_parent;
  std::vector<std::int64_t> child_offset;  // size events + 1
  std::vector<double> child_traits;
};

// `replica` selects the RNG stream, so replica r of an ensemble with the same
// seed is reproduced draw for draw.
Trajectory simulate_trajectory(const Model& model, double x0, const SimOptions& options,
                               std::uint64_t seed, std::uint64_t replica = 0);

// Z_t(f) recovered from the event log (requires record_events).
double observe(const Model& model, const Trajectory& trajectory, double t, const Expr& f);

struct EnsembleSpec {
  std::vector<double> grid;  // observation times for the estimators
  double extension = 0.0;    // proxy horizon: T = grid.back() + extension, appended to the grid
  int replicas = 0;
  std::uint64_t seed = 0;
  std::size_t cap = 1'000'000;
  int threads = 1;
  std::vector<std::pair<std::string, Expr>> functions;
};

struct Ensemble {
  std::vector<double> grid;  // includes the appended proxy horizon
  double horizon = 0.0;
  std::vector<std::string> function_names;
  int replicas = 0;
  std::vector<double> values;  // replica-major: [replica][grid point][function]
  std::vector<std::uint8_t> truncated;

  std::size_t num_grid() const { return grid.size(); }
  std::size_t num_functions() const { return function_names.size(); }
  double value(int replica, int g, int f) const {
    return values[(static_cast<std::size_t>(replica) * grid.size() + g) * function_names.size() +
                  f];
  }
  double truncated_fraction() const;
  // All replica values of function f at grid index g, truncated replicas skipped.
  std::vector<double> column(int g, int f) const;
};

Ensemble simulate_ensemble(const Model& model, double x0, const EnsembleSpec& spec);

// Low-level entry used by the branching-property checks: one run from an
// arbitrary initial population, observing each function at each grid time.
struct RunResult {
  std::vector<double> values;  // [grid point][function]
  bool truncated = false;
  double truncation_time = 0.0;
  std::vector<double> final_traits;
};
RunResult simulate_run(const Model& model, const std::vector<double>& initial,
                       const SimOptions& options, Rng& rng, const std::vector<Expr>& functions);

}  // namespace branchsim
