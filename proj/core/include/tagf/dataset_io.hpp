// SPDX-License-Identifier: Apache-2.0
//
// On-disk dataset layout:
//
//   <dir>/manifest.json        format_version, generator config, episode list,
//                              FNV-1a 64 checksum over all episode files
//   <dir>/episode_NNNNN.bin    one file per episode
//
// Episode file (little-endian):
//   "TAGFEPIS" | u32 version | u32 n + n bytes JSON header
//   | f64 audio[L*d_a] | f64 visual[L*d_v] | f64 valence[L] | f64 arousal[L]
//   | audio mask bitmap | visual mask bitmap | truth mask bitmap
// Bitmaps hold ceil(L/8) bytes, frame l at bit (l % 8) of byte l / 8.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tagf/synthdata.hpp"

namespace tagf::synth {

inline constexpr std::uint32_t kEpisodeFormatVersion = 1;
inline constexpr std::uint32_t kManifestFormatVersion = 1;

std::vector<std::uint8_t> encode_episode(const Episode& ep);
Episode decode_episode(std::span<const std::uint8_t> bytes,
                       const std::string& context);

/// Writes episodes and manifest; returns the dataset checksum.
std::uint64_t save_dataset(const std::filesystem::path& dir,
                           const GenConfig& cfg,
                           std::span<const Episode> episodes);

struct LoadedDataset {
  GenConfig config;
  std::vector<Episode> episodes;
  std::uint64_t checksum = 0;
};

/// Throws IoError for a missing directory/manifest, DataError for corrupt
/// files or a checksum mismatch.
LoadedDataset load_dataset(const std::filesystem::path& dir);

std::string checksum_hex(std::uint64_t checksum);

}  // namespace tagf::synth
