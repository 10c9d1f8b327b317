#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace scssl {

/// SplitMix64 finalizer. Used to expand seeds and to derive per-item seeds.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Mixes a base seed with a sequence of integer tags into one 64-bit seed.
/// Lets callers derive an independent stream per (step, sample, view) without
/// depending on the order in which streams are consumed.
std::uint64_t derive_seed(std::uint64_t base,
                          std::initializer_list<std::uint64_t> tags) noexcept;

/// xoshiro256** seeded through SplitMix64.
///
/// The stream is fully specified so results are reproducible across
/// platforms and languages:
///  - state words s[0..3] are four successive splitmix64 outputs of the seed;
///  - uniform() = (next() >> 11) * 2^-53, in [0, 1);
///  - normal() is Box-Muller on two fresh uniforms u1, u2:
///      sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
///    and never caches the sine branch.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept;

  std::uint64_t next() noexcept;
  double uniform() noexcept;
  double normal() noexcept;
  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }
  result_type operator()() noexcept { return next(); }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace scssl
