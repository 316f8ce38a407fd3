// SPDX-License-Identifier: Apache-2.0
//
// JSON representations of the configuration records. Readers start from the
// defaults, override the keys that are present and reject unknown keys.
#pragma once

#include <nlohmann/json.hpp>

#include "tagf/model.hpp"
#include "tagf/synthdata.hpp"
#include "tagf/training.hpp"

namespace tagf {

using nlohmann::json;

json to_json(const synth::GenConfig& cfg);
json to_json(const fusion::ModelConfig& cfg);
json to_json(const train::TrainConfig& cfg);

synth::GenConfig gen_config_from_json(const json& j);
fusion::ModelConfig model_config_from_json(const json& j);
train::TrainConfig train_config_from_json(const json& j);

namespace detail {
/// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const char* section);
}  // namespace detail

}  // namespace tagf
