#pragma once

// Deterministic random streams. Every replica draws from its own stream,
// derived from (master_seed, replica_index) through a SplitMix64 key
// schedule feeding xoshiro256++. Two properties the estimators rely on:
//   * a replica's draws depend only on (master_seed, replica_index) — never
//     on scheduling, worker count, or other replicas;
//   * all samplers are hand-rolled inversion/scan, so streams are
//     byte-stable across standard libraries and platforms.

#include <cstdint>

namespace branchsim {

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Stream for one replica of one ensemble.
  static Rng stream(std::uint64_t master_seed, std::uint64_t replica_index);

  std::uint64_t next_u64();
  // Uniform on [0,1) with 53-bit resolution.
  double next_double();
  // Uniform on (0,1] — safe as a log() argument.
  double next_double_pos();
  double uniform(double a, double b);
  // Exponential with the given rate, by inversion.
  double exponential(double rate);
  // Index in [0,n) with probability proportional to probs[i]; probs must sum
  // to 1 within rounding (the last bucket absorbs the remainder).
  int discrete(const double* probs, int n);

 private:
  std::uint64_t state_[4];
};

}  // namespace branchsim
