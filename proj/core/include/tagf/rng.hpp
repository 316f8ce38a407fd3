// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace tagf {

/// SplitMix64 finalizer; the documented stable hash behind every derived seed.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed for a child stream: splitmix64(parent ^ splitmix64(tag + 1)).
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag);

/// Random stream whose outputs are identical on every platform.
/// std::mt19937_64 is fully specified by the standard; the distributions
/// below are written out by hand because the standard library's are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (both outputs used).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// 64-bit FNV-1a, used for dataset checksums.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes,
                    std::uint64_t state = 0xcbf29ce484222325ULL);

}  // namespace tagf
