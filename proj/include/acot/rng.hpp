#pragma once

#include <cstdint>
#include <string_view>

namespace acot {

// Deterministic pseudo-random stream (xoshiro256++ seeded via splitmix64).
// Streams are derived from a master seed plus integer/string tags so that
// every consumer (batch k, episode i, ...) gets an independent, reproducible
// generator regardless of scheduling order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Standard normal via polar Box-Muller.
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  // Derive a child stream; mixing is order-sensitive in the tags.
  Rng derive(std::uint64_t tag) const;
  Rng derive(std::string_view tag) const;
  Rng derive(std::string_view tag, std::uint64_t a) const;
  Rng derive(std::string_view tag, std::uint64_t a, std::uint64_t b) const;

 private:
  std::uint64_t state_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
  std::uint64_t root_ = 0;
};

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v);
std::uint64_t hash_str(std::string_view s);

}  // namespace acot
