// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <utility>

namespace idconf {

/// Identifies one random stream. The pair (master_seed, stream_index) fully
/// determines the stream, so results never depend on which worker draws it.
struct Seed {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_index = 0;

  friend bool operator==(const Seed&, const Seed&) = default;
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// Purpose tags keep streams used for different jobs inside one
/// permutation iteration apart.
enum class StreamPurpose : std::uint64_t {
  split = 1,
  label_shuffle = 2,
  feature_shuffle = 3,
  classifier = 4,
  simulation = 5,
  design = 6,
  generic = 7,
};

/// Child seed for a (purpose, indexes...) tuple. Counter-based: the result is
/// a pure hash of the parent and the tags, with no sequential state.
inline Seed derive(const Seed& parent, StreamPurpose purpose,
                   std::initializer_list<std::uint64_t> indexes = {}) noexcept {
  std::uint64_t h = detail::splitmix64(parent.master_seed ^ 0x6a09e667f3bcc908ULL);
  h = detail::splitmix64(h ^ parent.stream_index);
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  for (auto i : indexes) h = detail::splitmix64(h ^ detail::splitmix64(i + 0x3c6ef372fe94f82bULL));
  return Seed{parent.master_seed, h};
}

/// xoshiro256** seeded from a Seed through splitmix64. All distribution code
/// below is hand-written so output is identical across standard libraries.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(const Seed& seed) noexcept {
    std::uint64_t x = detail::splitmix64(seed.master_seed) ^ detail::rotl(seed.stream_index, 17);
    x ^= seed.stream_index;
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      s = detail::splitmix64(x);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform integer in [0, bound). Lemire's nearly-divisionless method.
  std::uint64_t below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via the Marsaglia polar method.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::span<T> values) noexcept {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace idconf
