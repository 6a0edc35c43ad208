#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace airq {

/// 64-bit FNV-1a, used for site labels and config hashing.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives an independent stream key from (seed, site label, entity, cycle, extra).
/// Every stochastic site in the library keys its randomness this way so results
/// do not depend on evaluation order or worker count.
std::uint64_t derive_key(std::uint64_t seed, std::string_view site, std::uint64_t entity,
                         std::int64_t cycle, std::uint64_t extra = 0) noexcept;

/// Counter-based generator (SplitMix64 over a keyed counter).
/// Satisfies UniformRandomBitGenerator, so it plugs into <random> distributions.
class KeyedStream {
 public:
  using result_type = std::uint64_t;

  explicit KeyedStream(std::uint64_t key) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform in the open interval (0, 1).
  double uniform_open() noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace airq
