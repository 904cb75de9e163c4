#pragma once

#include <cstdint>
#include <vector>

namespace cme {

//! SplitMix64 (Steele, Lea & Flood 2014). 64-bit state, period 2^64.
//! Used for every random draw in the library so that results depend only on
//! the seed, not on the standard library implementation.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type(0); }

  result_type operator()();

  //! Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  //! Standard normal via the Marsaglia polar method.
  double normal();
  //! Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

//! Finalizer of SplitMix64; a bijective 64-bit mixer.
std::uint64_t splitmix_mix(std::uint64_t z);

//! Seed for the i-th replicate/cell/tree derived from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t i);

//! Fisher-Yates permutation of 0..n-1.
std::vector<int> permutation(int n, Rng& rng);

}  // namespace cme
