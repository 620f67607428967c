#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace olva {

/// Counter-based 64-bit generator: output k is a bijective mix of (key, k).
/// Any stream can be re-created from its key alone, so per-iteration and
/// per-sample streams are derived instead of threaded through call chains.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng() = default;
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  /// Stream keyed by a hash of (parent key, tags...). Independent of the
  /// parent's counter.
  [[nodiscard]] CounterRng derive(std::initializer_list<std::uint64_t> tags) const;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next_u64(); }
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound), rejection sampled (no modulo bias).
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal by Box-Muller; consumes exactly two draws per call.
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  friend bool operator==(const CounterRng&, const CounterRng&) = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Order-sensitive combination of several words into one seed.
std::uint64_t hash_seed(std::initializer_list<std::uint64_t> words);

}  // namespace olva
