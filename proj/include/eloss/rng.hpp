#pragma once

#include <cstdint>
#include <string_view>

namespace eloss {

/// SplitMix64 step (Steele, Lea, Flood 2014). Used for seeding and for
/// deriving independent stream seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// 64-bit FNV-1a of a tag string.
std::uint64_t fnv1a64(std::string_view text);

/// Seed for the index-th member of a tagged family:
/// splitmix64 applied to (seed ^ fnv1a64(tag)) + index * 0x9e3779b97f4a7c15.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index);

/// xoshiro256** generator with a fully specified derived-value layer so
/// every implementation reproduces the same draws:
///   - state is filled by four successive splitmix64 outputs of the seed
///   - uniform01() = (next() >> 11) * 2^-53, in [0, 1)
///   - below(m) rejects next() values >= floor((2^64 - 1) / m) * m, then
///     takes the remainder mod m
///   - normal() is the Marsaglia polar method on u = 2*uniform01() - 1 pairs,
///     returning u*f first and caching v*f for the following call
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream for (seed, tag): seeds with splitmix64 of
  /// seed ^ fnv1a64(tag).
  static Rng stream(std::uint64_t seed, std::string_view tag);

  std::uint64_t next();
  double uniform01();
  std::uint64_t below(std::uint64_t m);
  double normal();

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace eloss
