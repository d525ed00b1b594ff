#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace clipgeom {

/// Reproducible random stream used by every seeded operation.
///
/// Pinned algorithm (part of the output contract, do not change):
///   * SplitMix64: state += 0x9E3779B97F4A7C15, output is the standard
///     SplitMix64 finalizer of the new state. The initial state is the seed.
///   * uniform():  (x >> 11) * 2^-53, in [0, 1).
///   * normal():   Box-Muller on two consecutive draws, u1 = ((x1 >> 11) + 1) * 2^-53
///     in (0, 1], u2 = (x2 >> 11) * 2^-53; returns r*cos(2*pi*u2) first and
///     caches r*sin(2*pi*u2) for the next call.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return UINT64_MAX; }

  result_type operator()() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return x % bound;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Fisher-Yates over [0, n) driven by SplitMix64::below.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace clipgeom
