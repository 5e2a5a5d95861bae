#include "branchsim/rng.hpp"

#include <cmath>

namespace branchsim {

namespace {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) word = splitmix64(s);
  // xoshiro must not start from the all-zero state; splitmix64 output words
  // are never all zero for any seed, but keep the guard explicit.
  if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
}

Rng Rng::stream(std::uint64_t master_seed, std::uint64_t replica_index) {
  // Key schedule: mix the replica index into the master seed before the
  // per-instance SplitMix64 expansion. The multiplier decorrelates adjacent
  // indices; the full construction is the usual recommended seeding chain.
  std::uint64_t key = master_seed;
  std::uint64_t t = (replica_index + 1) * 0xD1342543DE82EF95ULL;
  key ^= splitmix64(t);
  return Rng(key);
}

std::uint64_t Rng::next_u64() {
  // xoshiro256++
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_double_pos() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * next_double(); }

double Rng::exponential(double rate) { return -std::log(next_double_pos()) / rate; }

int Rng::discrete(const double* probs, int n) {
  double u = next_double();
  double acc = 0.0;
  for (int i = 0; i < n - 1; ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return n - 1;
}

}  // namespace branchsim
