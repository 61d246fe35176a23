// rng.hpp
// Splittable counter-based random numbers.
//
// Every draw is a pure function of (key, counter), so a stream can be
// re-derived anywhere from its seed and a path of stream ids. Parallel
// runs that derive per-task keys get identical numbers regardless of how
// tasks are scheduled.

#pragma once

#include <cstdint>
#include <limits>

namespace qda {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent key for sub-stream `stream` of `key`.
constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t stream) {
  return mix64(key ^ mix64(stream + 0x9e3779b97f4a7c15ULL));
}

class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed) : key_(mix64(seed)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller.
  double normal();

  CounterRng split(std::uint64_t stream) const { return CounterRng(derive_key(key_, stream)); }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace qda
