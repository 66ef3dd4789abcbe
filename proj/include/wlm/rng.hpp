#pragma once

// Counter-based splittable generator.
//
// A stream is a pair (key, counter). The i-th output of a stream is
//
//   out(i) = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)
//
// where mix64 is the SplitMix64 finalizer (Stafford variant 13):
//
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z =  z ^ (z >> 31)
//
// split(tag) derives an independent child stream with
// key' = mix64(key ^ mix64(tag + 0xD1B54A32D192ED03)) and counter 0; the parent
// is not advanced. Outputs depend only on (key, counter), never on the
// platform, so dropout masks, MLM corruption and sampling reproduce bit for
// bit across runs and machines.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace wlm {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed = 0) noexcept : key_(mix64(seed)) {}

  constexpr std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  constexpr double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound); rejection keeps it unbiased.
  constexpr std::uint64_t below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
  }

  // Box-Muller; no cached spare so the stream position is a pure function of
  // the number of calls.
  double normal(double mean = 0.0, double stddev = 1.0) noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr bool bernoulli(double p) noexcept { return uniform() < p; }

  constexpr Rng split(std::uint64_t tag) const noexcept {
    Rng child;
    child.key_ = mix64(key_ ^ mix64(tag + 0xD1B54A32D192ED03ULL));
    child.counter_ = 0;
    return child;
  }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace wlm
