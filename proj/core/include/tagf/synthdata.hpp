// SPDX-License-Identifier: Apache-2.0
//
// Synthetic bimodal episodes with known valence/arousal trajectories.
//
// Each episode draws a latent path z(l) in (-1, 1)^k as tanh of a sum of
// three low-frequency sinusoids per latent dimension (random period, phase
// and amplitude; periods in [smoothness, 3 * smoothness] frames). Truth is a
// fixed linear readout of z whose rows have L1 norm 0.95, so it never needs
// clipping. Features are affine images of z:
//
//   audio(l)  = A z(l - shift_a) + b_a + noise_a * n
//   visual(l) = V z(l) + b_v + noise_v * n
//
// A, V, b_a, b_v and the readout are drawn once from the master seed and are
// shared by every episode of a dataset. Everything that varies per episode
// comes from episode_seed(master, index) = derive_seed(master, index), split
// further into independent streams (latent, audio noise, visual noise,
// occlusion) so corruption sweeps reuse identical draws.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tagf/sequence.hpp"

namespace tagf::synth {

struct GenConfig {
  std::size_t n_episodes = 50;
  std::size_t length = 120;
  std::size_t d_a = 12;
  std::size_t d_v = 16;
  std::size_t latent_dim = 4;
  double smoothness = 40.0;
  double noise_a = 0.0;
  double noise_v = 0.0;
  long shift_a = 0;
  double occlusion_rate = 0.0;
  std::uint64_t seed = 7;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
  /// occlusion_rate >= 0.95 is accepted but close to degenerate.
  [[nodiscard]] bool near_degenerate() const { return occlusion_rate >= 0.95; }
  bool operator==(const GenConfig&) const = default;
};

struct EpisodeMeta {
  std::uint64_t seed = 0;
  std::size_t index = 0;
  double noise_a = 0.0;
  double noise_v = 0.0;
  long shift_a = 0;
  double occlusion_rate = 0.0;
  std::size_t occluded_frames = 0;
  std::size_t window_start = 0;
  std::size_t pad_frames = 0;
  bool operator==(const EpisodeMeta&) const = default;
};

struct Episode {
  FeatureSequence audio;
  FeatureSequence visual;
  VATrajectory truth;
  /// Frames with a label; false only on window padding.
  std::vector<std::uint8_t> truth_mask;
  EpisodeMeta meta;

  [[nodiscard]] std::size_t length() const { return truth.size(); }
  bool operator==(const Episode&) const = default;
};

std::uint64_t episode_seed(std::uint64_t master, std::size_t index);

Episode generate_episode(const GenConfig& cfg, std::size_t index);
std::vector<Episode> generate_dataset(const GenConfig& cfg);

/// Full windows start at 0, stride, 2*stride, ... while start + win_len <= L.
/// One further window at (last full start + stride) is emitted when that
/// start is still inside the episode; its frames past L are zero-padded and
/// masked in every stream. An episode of exactly win_len frames yields a
/// single window.
std::vector<Episode> make_windows(const Episode& ep, std::size_t win_len,
                                  std::size_t stride);

enum class SweepAxis : std::uint8_t { Noise, Shift, Occlusion };

const char* to_string(SweepAxis axis);
/// Throws ContractError for unknown names.
SweepAxis sweep_axis_from_string(std::string_view name);

/// Sets the swept field(s): noise -> noise_a and noise_v, shift -> shift_a
/// (rounded to an integer frame count), occlusion -> occlusion_rate.
GenConfig apply_level(GenConfig cfg, SweepAxis axis, double level);

/// One dataset per level; levels must be non-empty and monotone.
std::vector<std::vector<Episode>> corruption_sweep(
    const GenConfig& cfg, SweepAxis axis, std::span<const double> levels);

}  // namespace tagf::synth
