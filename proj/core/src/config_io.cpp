// SPDX-License-Identifier: Apache-2.0
#include "tagf/config_io.hpp"

#include <string>

#include "tagf/error.hpp"

namespace tagf {

namespace detail {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const char* section) {
  if (!j.is_object()) {
    throw ConfigError(std::string(section) + ": expected a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace detail

namespace {

template <typename T>
void read(const json& j, const char* key, T& out, const char* section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type (" +
                      it->dump() + ")");
  }
}

// Non-negative integers reject negative JSON numbers instead of wrapping.
void read_size(const json& j, const char* key, std::size_t& out,
               const char* section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_integer() || it->get<long long>() < 0) {
    throw ConfigError(std::string(section) + "." + key +
                      ": expected a non-negative integer, got " + it->dump());
  }
  out = it->get<std::size_t>();
}

void read_seed(const json& j, const char* key, std::uint64_t& out,
               const char* section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<long long>() >= 0)) {
    throw ConfigError(std::string(section) + "." + key +
                      ": expected a non-negative integer, got " + it->dump());
  }
  out = it->get<std::uint64_t>();
}

}  // namespace

json to_json(const synth::GenConfig& cfg) {
  return {
      {"n_episodes", cfg.n_episodes},
      {"length", cfg.length},
      {"d_a", cfg.d_a},
      {"d_v", cfg.d_v},
      {"latent_dim", cfg.latent_dim},
      {"smoothness", cfg.smoothness},
      {"noise_a", cfg.noise_a},
      {"noise_v", cfg.noise_v},
      {"shift_a", cfg.shift_a},
      {"occlusion_rate", cfg.occlusion_rate},
      {"seed", cfg.seed},
  };
}

json to_json(const fusion::ModelConfig& cfg) {
  return {
      {"d_v", cfg.d_v},
      {"d_a", cfg.d_a},
      {"d_model", cfg.d_model},
      {"recursion_depth", cfg.recursion_depth},
      {"lstm_hidden", cfg.lstm_hidden},
      {"mlp_hidden", cfg.mlp_hidden},
      {"tcn",
       {{"layers", cfg.tcn.layers},
        {"kernel", cfg.tcn.kernel},
        {"dilations", cfg.tcn.dilations}}},
      {"seed", cfg.seed},
      {"strategy", fusion::to_string(cfg.strategy)},
      {"share_gate", cfg.share_gate},
  };
}

json to_json(const train::TrainConfig& cfg) {
  return {
      {"lr_init", cfg.lr_init},
      {"lr_min", cfg.lr_min},
      {"weight_decay", cfg.weight_decay},
      {"batch_size", cfg.batch_size},
      {"max_epochs", cfg.max_epochs},
      {"early_stop_patience", cfg.early_stop_patience},
      {"scheduler_patience", cfg.scheduler_patience},
      {"scheduler_factor", cfg.scheduler_factor},
      {"improvement_threshold", cfg.improvement_threshold},
      {"beta1", cfg.beta1},
      {"beta2", cfg.beta2},
      {"adam_epsilon", cfg.adam_epsilon},
      {"seed", cfg.seed},
      {"win_len", cfg.win_len},
      {"stride", cfg.stride},
      {"workers", cfg.workers},
      {"record_wall_time", cfg.record_wall_time},
  };
}

synth::GenConfig gen_config_from_json(const json& j) {
  constexpr const char* s = "generator";
  detail::reject_unknown_keys(j, {"n_episodes", "length", "d_a", "d_v",
                                  "latent_dim", "smoothness", "noise_a",
                                  "noise_v", "shift_a", "occlusion_rate", "seed"},
                              s);
  synth::GenConfig cfg;
  read_size(j, "n_episodes", cfg.n_episodes, s);
  read_size(j, "length", cfg.length, s);
  read_size(j, "d_a", cfg.d_a, s);
  read_size(j, "d_v", cfg.d_v, s);
  read_size(j, "latent_dim", cfg.latent_dim, s);
  read(j, "smoothness", cfg.smoothness, s);
  read(j, "noise_a", cfg.noise_a, s);
  read(j, "noise_v", cfg.noise_v, s);
  read(j, "shift_a", cfg.shift_a, s);
  read(j, "occlusion_rate", cfg.occlusion_rate, s);
  read_seed(j, "seed", cfg.seed, s);
  cfg.validate();
  return cfg;
}

fusion::ModelConfig model_config_from_json(const json& j) {
  constexpr const char* s = "model";
  detail::reject_unknown_keys(j, {"d_v", "d_a", "d_model", "recursion_depth",
                                  "lstm_hidden", "mlp_hidden", "tcn", "seed",
                                  "strategy", "share_gate"},
                              s);
  fusion::ModelConfig cfg;
  read_size(j, "d_v", cfg.d_v, s);
  read_size(j, "d_a", cfg.d_a, s);
  read_size(j, "d_model", cfg.d_model, s);
  read_size(j, "recursion_depth", cfg.recursion_depth, s);
  read_size(j, "lstm_hidden", cfg.lstm_hidden, s);
  read_size(j, "mlp_hidden", cfg.mlp_hidden, s);
  read_seed(j, "seed", cfg.seed, s);
  read(j, "share_gate", cfg.share_gate, s);
  if (auto it = j.find("tcn"); it != j.end()) {
    constexpr const char* t = "model.tcn";
    detail::reject_unknown_keys(*it, {"layers", "kernel", "dilations"}, t);
    read_size(*it, "layers", cfg.tcn.layers, t);
    read_size(*it, "kernel", cfg.tcn.kernel, t);
    if (it->contains("dilations")) {
      read(*it, "dilations", cfg.tcn.dilations, t);
    } else {
      // Doubling dilations when only the depth is given.
      cfg.tcn.dilations.clear();
      for (std::size_t i = 0; i < cfg.tcn.layers; ++i) {
        cfg.tcn.dilations.push_back(std::size_t{1} << i);
      }
    }
  }
  if (auto it = j.find("strategy"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("model.strategy: expected a string");
    auto strategy = fusion::strategy_from_string(it->get<std::string>());
    if (!strategy) {
      throw ConfigError("model.strategy: unknown strategy '" +
                        it->get<std::string>() + "'");
    }
    cfg.strategy = *strategy;
  }
  cfg.validate();
  return cfg;
}

train::TrainConfig train_config_from_json(const json& j) {
  constexpr const char* s = "training";
  detail::reject_unknown_keys(
      j, {"lr_init", "lr_min", "weight_decay", "batch_size", "max_epochs",
          "early_stop_patience", "scheduler_patience", "scheduler_factor",
          "improvement_threshold", "beta1", "beta2", "adam_epsilon", "seed",
          "win_len", "stride", "workers", "record_wall_time"},
      s);
  train::TrainConfig cfg;
  read(j, "lr_init", cfg.lr_init, s);
  read(j, "lr_min", cfg.lr_min, s);
  read(j, "weight_decay", cfg.weight_decay, s);
  read_size(j, "batch_size", cfg.batch_size, s);
  read_size(j, "max_epochs", cfg.max_epochs, s);
  read_size(j, "early_stop_patience", cfg.early_stop_patience, s);
  read_size(j, "scheduler_patience", cfg.scheduler_patience, s);
  read(j, "scheduler_factor", cfg.scheduler_factor, s);
  read(j, "improvement_threshold", cfg.improvement_threshold, s);
  read(j, "beta1", cfg.beta1, s);
  read(j, "beta2", cfg.beta2, s);
  read(j, "adam_epsilon", cfg.adam_epsilon, s);
  read_seed(j, "seed", cfg.seed, s);
  read_size(j, "win_len", cfg.win_len, s);
  read_size(j, "stride", cfg.stride, s);
  read_size(j, "workers", cfg.workers, s);
  read(j, "record_wall_time", cfg.record_wall_time, s);
  cfg.validate();
  return cfg;
}

}  // namespace tagf
