#pragma once

#include <cstdint>
#include <string>

namespace coco {

// splitmix64 step; used both as a PRNG and to hash seed tuples into streams.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic, implementation-pinned PRNG. All randomness in the project
// flows through this type so results are identical across platforms and
// standard libraries (std::normal_distribution is not pinned by the
// standard; this is).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ^ 0x2545f4914f6cdd1dULL) {
    // Warm up so nearby seeds decorrelate.
    splitmix64(state_);
    splitmix64(state_);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1): 53 random mantissa bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (pinned; spare value cached).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Serializable state for checkpointing.
  std::string state_string() const;
  static Rng from_state_string(const std::string& s);

 private:
  Rng() = default;
  uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from a tuple of identifiers, e.g.
// (master seed, step, ray index, purpose tag). Order-sensitive.
uint64_t derive_seed(std::initializer_list<uint64_t> parts);

}  // namespace coco
