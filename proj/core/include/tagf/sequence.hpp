// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tagf {

enum class Modality : std::uint8_t { Audio, Visual };

const char* to_string(Modality m);

/// One modality's frame-aligned features (length x dim, row-major) and a
/// per-frame validity mask (1 = valid).
struct FeatureSequence {
  Modality modality = Modality::Audio;
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;

  FeatureSequence() = default;
  FeatureSequence(Modality m, std::size_t length, std::size_t dim);

  [[nodiscard]] std::span<const double> row(std::size_t frame) const {
    return {values.data() + frame * dim, dim};
  }
  [[nodiscard]] std::span<double> row(std::size_t frame) {
    return {values.data() + frame * dim, dim};
  }
  [[nodiscard]] std::size_t valid_count() const;

  /// Throws ContractError when sizes disagree or length/dim is zero.
  void validate() const;

  bool operator==(const FeatureSequence&) const = default;
};

/// Per-frame (valence, arousal) pairs.
struct VATrajectory {
  std::vector<double> valence;
  std::vector<double> arousal;

  VATrajectory() = default;
  explicit VATrajectory(std::size_t length)
      : valence(length, 0.0), arousal(length, 0.0) {}

  [[nodiscard]] std::size_t size() const { return valence.size(); }
  [[nodiscard]] std::span<const double> dimension(std::size_t d) const {
    return d == 0 ? std::span<const double>(valence)
                  : std::span<const double>(arousal);
  }

  bool operator==(const VATrajectory&) const = default;
};

}  // namespace tagf
