// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (little endian):
//   "TAGFCKPT" | u32 version | u32 header length | JSON header | f64 payload
// The header holds the model and training configurations, the training
// history and the ordered parameter table (name, shape); the payload is every
// parameter's values in table order.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tagf/training.hpp"

namespace tagf {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const train::Checkpoint& ckpt);

/// Rejects wrong magic, version, truncation and trailing bytes (DataError),
/// and any parameter name or shape that disagrees with the layout implied by
/// the stored configuration (ShapeError). Nothing is returned on failure.
train::Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                                    const std::string& context = "checkpoint");

void save_checkpoint(const std::filesystem::path& path,
                     const train::Checkpoint& ckpt);
train::Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tagf
