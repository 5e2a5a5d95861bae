#include "branchsim/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace branchsim {
namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Sampling tables shared (read-only) by every replica of a run.
struct CompiledChannel {
  // Finite spaces: exact per-type tables.
  std::vector<double> rate_by_type;
  std::vector<std::vector<double>> offspring_by_type;
  std::vector<std::vector<double>> kernel_by_type;
  // Unit interval: expressions evaluated at the struck particle's trait.
  Expr rate;
  std::vector<Expr> offspring;
  bool immigration = false;  // parent survives, one Uniform[0,1] child
  double majorant = 0.0;     // upper bound on the channel rate over the trait space
};

struct Compiled {
  TraitKind kind = TraitKind::finite;
  int num_types = 0;
  std::vector<CompiledChannel> channels;
  double majorant_total = 0.0;
  std::size_t max_children = 0;
};

Compiled compile(const Model& model) {
  Compiled c;
  c.kind = model.space.kind;
  if (model.space.kind == TraitKind::finite) {
    c.num_types = model.space.num_types;
    for (const auto& ch : model.finite_channels) {
      CompiledChannel cc;
      cc.rate_by_type.assign(ch.rates.data(), ch.rates.data() + ch.rates.size());
      for (int i = 0; i < c.num_types; ++i) {
        cc.offspring_by_type.emplace_back(ch.offspring.row(i).begin(), ch.offspring.row(i).end());
        cc.kernel_by_type.emplace_back(ch.kernel.row(i).begin(), ch.kernel.row(i).end());
      }
      cc.majorant = *std::max_element(cc.rate_by_type.begin(), cc.rate_by_type.end());
      c.max_children = std::max(c.max_children, static_cast<std::size_t>(ch.offspring.cols()) - 1);
      c.channels.push_back(std::move(cc));
    }
  } else {
    const auto& params = *model.hoc;
    CompiledChannel replacement;
    replacement.rate = params.rate;
    replacement.offspring = params.offspring;
    // The sup of a validated-continuous rate over a fine grid, padded so the
    // bound holds between grid points; the engine still verifies it per event.
    replacement.majorant = grid_sup(params.rate) * (1.0 + 1e-3) + 1e-12;
    c.max_children = std::max({c.max_children, params.offspring.size() - 1, std::size_t{2}});
    c.channels.push_back(std::move(replacement));

    CompiledChannel immigration;
    immigration.immigration = true;
    immigration.majorant = params.immigration_rate;
    c.channels.push_back(std::move(immigration));
  }
  for (const auto& ch : c.channels) c.majorant_total += ch.majorant;
  if (!(c.majorant_total > 0.0)) {
    throw std::invalid_argument("model has no active event channel");
  }
  return c;
}

int type_of(double trait) { return static_cast<int>(std::lround(trait)); }

RunResult run_engine(const Compiled& c, const std::vector<Expr>& functions,
                     const std::vector<double>& initial, const SimOptions& options, Rng& rng,
                     Trajectory* log) {
  const auto& grid = options.grid;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (grid[g] < 0.0 || grid[g] > options.horizon || (g > 0 && grid[g] < grid[g - 1])) {
      throw std::invalid_argument("observation grid must be nondecreasing within [0, horizon]");
    }
  }
  const std::size_t nf = functions.size();

  RunResult result;
  result.values.assign(grid.size() * nf, 0.0);

  // Per-type value tables make finite-space observation a counting pass.
  std::vector<std::vector<double>> table(nf);
  if (c.kind == TraitKind::finite) {
    for (std::size_t f = 0; f < nf; ++f) {
      table[f].resize(c.num_types);
      for (int i = 0; i < c.num_types; ++i) table[f][i] = functions[f](static_cast<double>(i));
    }
  }

  std::vector<double> traits = initial;
  std::vector<std::int64_t> ids;
  std::int64_t next_id = 0;
  if (log) {
    log->events_recorded = true;
    ids.resize(traits.size());
    for (auto& id : ids) id = next_id++;
    log->child_offset.assign(1, 0);
  }

  std::vector<std::int64_t> counts(std::max(c.num_types, 1));
  auto emit = [&](std::size_t g) {
    double* slot = &result.values[g * nf];
    if (c.kind == TraitKind::finite) {
      std::fill(counts.begin(), counts.end(), 0);
      for (double x : traits) ++counts[type_of(x)];
      for (std::size_t f = 0; f < nf; ++f) {
        double sum = 0.0;
        for (int i = 0; i < c.num_types; ++i) sum += counts[i] * table[f][i];
        slot[f] = sum;
      }
    } else {
      for (double x : traits) {
        for (std::size_t f = 0; f < nf; ++f) slot[f] += functions[f](x);
      }
    }
  };

  std::vector<double> probs(c.max_children + 1);
  std::size_t obs = 0;
  double t = 0.0;

  while (true) {
    if (traits.empty()) {
      // Extinct: every remaining observation is an empty sum, already zero.
      obs = grid.size();
      break;
    }
    if (traits.size() > options.cap) {
      result.truncated = true;
      result.truncation_time = t;
      for (std::size_t g = obs; g < grid.size(); ++g) {
        std::fill_n(&result.values[g * nf], nf, kNan);
      }
      obs = grid.size();
      break;
    }

    const double t_next = t + rng.exponential(static_cast<double>(traits.size()) * c.majorant_total);
    while (obs < grid.size() && grid[obs] < t_next) emit(obs++);
    if (t_next > options.horizon) {
      t = options.horizon;
      break;
    }
    t = t_next;

    const std::size_t pick = std::min(
        static_cast<std::size_t>(rng.next_double() * static_cast<double>(traits.size())),
        traits.size() - 1);
    const double x = traits[pick];

    std::size_t ch_idx = 0;
    double r = rng.next_double() * c.majorant_total;
    while (ch_idx + 1 < c.channels.size() && r >= c.channels[ch_idx].majorant) {
      r -= c.channels[ch_idx].majorant;
      ++ch_idx;
    }
    const CompiledChannel& ch = c.channels[ch_idx];

    // Thinning: accept with probability rate(x) / majorant.
    double rate_x = ch.majorant;
    if (c.kind == TraitKind::finite) {
      rate_x = ch.rate_by_type[type_of(x)];
    } else if (!ch.immigration) {
      rate_x = ch.rate(x);
      if (rate_x > ch.majorant * (1.0 + 1e-9)) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "channel rate %.17g exceeds its majorant at x = %.17g",
                      rate_x, x);
        throw std::runtime_error(buf);
      }
    }
    if (rate_x < ch.majorant && rng.next_double() * ch.majorant >= rate_x) {
      continue;  // phantom proposal: time advanced, no event
    }

    const std::int64_t parent_id = log ? ids[pick] : 0;
    const std::size_t child_begin = traits.size();  // children appended at the back

    // Remove the struck particle, then append its children.
    traits[pick] = traits.back();
    traits.pop_back();
    if (log) {
      ids[pick] = ids.back();
      ids.pop_back();
    }

    if (ch.immigration) {
      traits.push_back(x);  // the surviving parent, re-listed as a child
      traits.push_back(rng.next_double());
    } else {
      int k = 0;
      if (c.kind == TraitKind::finite) {
        const auto& row = ch.offspring_by_type[type_of(x)];
        k = rng.discrete(row.data(), static_cast<int>(row.size()));
        const auto& placement = ch.kernel_by_type[type_of(x)];
        for (int j = 0; j < k; ++j) {
          traits.push_back(static_cast<double>(
              rng.discrete(placement.data(), static_cast<int>(placement.size()))));
        }
      } else {
        for (std::size_t j = 0; j < ch.offspring.size(); ++j) probs[j] = ch.offspring[j](x);
        k = rng.discrete(probs.data(), static_cast<int>(ch.offspring.size()));
        for (int j = 0; j < k; ++j) traits.push_back(x);
      }
    }

    if (log) {
      const std::size_t n_children = traits.size() + 1 - child_begin;
      for (std::size_t j = 0; j < n_children; ++j) ids.push_back(next_id++);
      log->event_times.push_back(t);
      log->event_parent.push_back(parent_id);
      log->child_traits.insert(log->child_traits.end(), traits.begin() + (child_begin - 1),
                               traits.end());
      log->child_offset.push_back(static_cast<std::int64_t>(log->child_traits.size()));
    }
  }

  while (obs < grid.size()) emit(obs++);
  result.final_traits = std::move(traits);
  return result;
}

}  // namespace

RunResult simulate_run(const Model& model, const std::vector<double>& initial,
                       const SimOptions& options, Rng& rng, const std::vector<Expr>& functions) {
  const Compiled c = compile(model);
  return run_engine(c, functions, initial, options, rng, nullptr);
}

Trajectory simulate_trajectory(const Model& model, double x0, const SimOptions& options,
                               std::uint64_t seed, std::uint64_t replica) {
  const Compiled c = compile(model);
  Trajectory trajectory;
  trajectory.x0 = x0;
  trajectory.horizon = options.horizon;
  Rng rng = Rng::stream(seed, replica);
  RunResult run = run_engine(c, {}, {x0}, options, rng,
                             options.record_events ? &trajectory : nullptr);
  trajectory.truncated = run.truncated;
  trajectory.truncation_time = run.truncation_time;
  trajectory.final_traits = std::move(run.final_traits);
  return trajectory;
}

double observe(const Model& model, const Trajectory& trajectory, double t, const Expr& f) {
  (void)model;
  if (!trajectory.events_recorded) {
    throw std::invalid_argument("observe() needs a trajectory simulated with record_events");
  }
  if (t < 0.0 || t > trajectory.horizon) {
    throw std::invalid_argument("observation time outside the simulated horizon");
  }
  if (trajectory.truncated && t > trajectory.truncation_time) {
    throw std::invalid_argument("observation time beyond the truncation point");
  }

  // Replay: particle 0 is the root; the children of event e own consecutive
  // ids starting at 1 + child_offset[e].
  std::vector<char> alive(1 + trajectory.child_traits.size(), 0);
  alive[0] = 1;
  auto trait_of = [&](std::size_t id) {
    return id == 0 ? trajectory.x0 : trajectory.child_traits[id - 1];
  };
  for (std::size_t e = 0; e < trajectory.event_times.size(); ++e) {
    if (trajectory.event_times[e] > t) break;
    alive[trajectory.event_parent[e]] = 0;
    for (auto id = trajectory.child_offset[e]; id < trajectory.child_offset[e + 1]; ++id) {
      alive[1 + id] = 1;
    }
  }
  double sum = 0.0;
  for (std::size_t id = 0; id < alive.size(); ++id) {
    if (alive[id]) sum += f(trait_of(id));
  }
  return sum;
}

double Ensemble::truncated_fraction() const {
  if (truncated.empty()) return 0.0;
  double sum = 0.0;
  for (auto flag : truncated) sum += flag;
  return sum / static_cast<double>(truncated.size());
}

std::vector<double> Ensemble::column(int g, int f) const {
  std::vector<double> out;
  out.reserve(truncated.size());
  for (int rep = 0; rep < replicas; ++rep) {
    if (!truncated[rep]) out.push_back(value(rep, g, f));
  }
  return out;
}

Ensemble simulate_ensemble(const Model& model, double x0, const EnsembleSpec& spec) {
  if (spec.replicas <= 0) throw std::invalid_argument("ensemble needs at least one replica");
  if (spec.grid.empty()) throw std::invalid_argument("ensemble needs a nonempty time grid");
  if (spec.functions.empty()) throw std::invalid_argument("ensemble needs at least one function");
  if (spec.extension < 0.0) throw std::invalid_argument("proxy extension must be nonnegative");

  Ensemble ensemble;
  ensemble.grid = spec.grid;
  if (spec.extension > 0.0) ensemble.grid.push_back(spec.grid.back() + spec.extension);
  ensemble.horizon = ensemble.grid.back();
  ensemble.replicas = spec.replicas;
  for (const auto& [name, fn] : spec.functions) ensemble.function_names.push_back(name);

  const std::size_t per_replica = ensemble.grid.size() * ensemble.function_names.size();
  ensemble.values.assign(static_cast<std::size_t>(spec.replicas) * per_replica, 0.0);
  ensemble.truncated.assign(spec.replicas, 0);

  const Compiled compiled = compile(model);
  std::vector<Expr> functions;
  for (const auto& [name, fn] : spec.functions) functions.push_back(fn);

  SimOptions options;
  options.horizon = ensemble.horizon;
  options.grid = ensemble.grid;
  options.cap = spec.cap;

  std::mutex error_mutex;
  std::exception_ptr error;
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int rep; (rep = next.fetch_add(1)) < spec.replicas;) {
      try {
        Rng rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(rep));
        RunResult run = run_engine(compiled, functions, {x0}, options, rng, nullptr);
        std::copy(run.values.begin(), run.values.end(),
                  ensemble.values.begin() + static_cast<std::size_t>(rep) * per_replica);
        ensemble.truncated[rep] = run.truncated ? 1 : 0;
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };

  const int threads = std::clamp(spec.threads, 1, spec.replicas);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return ensemble;
}

}  // namespace branchsim
