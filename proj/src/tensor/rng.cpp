#include "olva/rng.hpp"

#include <cmath>
#include <numbers>

namespace olva {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_seed(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t w : words) h = mix64(h ^ mix64(w));
  return h;
}

CounterRng CounterRng::derive(std::initializer_list<std::uint64_t> tags) const {
  std::uint64_t h = mix64(key_ ^ 0xa0761d6478bd642fULL);
  for (std::uint64_t t : tags) h = mix64(h ^ mix64(t));
  return CounterRng(h);
}

std::uint64_t CounterRng::next_u64() {
  // Two rounds of mixing over (key, counter) give a well-distributed stream.
  const std::uint64_t c = counter_++;
  return mix64(mix64(c ^ key_) + key_);
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t CounterRng::below(std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = max() - max() % bound;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % bound;
}

double CounterRng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace olva
