// SPDX-License-Identifier: Apache-2.0
#include "tagf/cli/experiment.hpp"

#include <fstream>
#include <sstream>

#include "tagf/config_io.hpp"
#include "tagf/error.hpp"

namespace tagf::cli {

using nlohmann::json;

GradcheckSettings::GradcheckSettings() {
  model.d_model = 8;
  model.recursion_depth = 2;
  model.lstm_hidden = 4;
  model.mlp_hidden = 8;
}

ExperimentConfig::ExperimentConfig() {
  training.lr_init = 3e-3;
  training.workers = workers;
}

void ExperimentConfig::validate() const {
  generator.validate();
  model.validate();
  training.validate();
  gradcheck.model.validate();
  if (model.d_a != generator.d_a || model.d_v != generator.d_v) {
    throw ConfigError("model input dims (d_a=" + std::to_string(model.d_a) +
                      ", d_v=" + std::to_string(model.d_v) +
                      ") do not match generator dims (d_a=" +
                      std::to_string(generator.d_a) +
                      ", d_v=" + std::to_string(generator.d_v) + ")");
  }
  if (val_episodes == 0 || val_episodes >= generator.n_episodes) {
    throw ConfigError("split.val_episodes must be in [1, n_episodes)");
  }
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (gradcheck.model.d_model > 16) {
    throw ConfigError("gradcheck.model.d_model must be <= 16");
  }
  if (gradcheck.length < 2 || gradcheck.length > 8) {
    throw ConfigError("gradcheck.length must be in [2, 8]");
  }
  if (gradcheck.seeds.empty()) throw ConfigError("gradcheck.seeds is empty");
  if (!(gradcheck.epsilon >= 1e-8 && gradcheck.epsilon <= 1e-4)) {
    throw ConfigError("gradcheck.epsilon must be in [1e-8, 1e-4]");
  }
  if (!(gradcheck.tolerance > 0.0)) {
    throw ConfigError("gradcheck.tolerance must be > 0");
  }
  if (benchmark.strategies.empty()) {
    throw ConfigError("benchmark.strategies is empty");
  }
  if (benchmark.seeds.empty()) throw ConfigError("benchmark.seeds is empty");
  if (benchmark.levels.empty()) throw ConfigError("benchmark.levels is empty");
}

json to_json(const ExperimentConfig& cfg) {
  json strategies = json::array();
  for (auto s : cfg.benchmark.strategies) strategies.push_back(fusion::to_string(s));
  return {
      {"generator", tagf::to_json(cfg.generator)},
      {"model", tagf::to_json(cfg.model)},
      {"training", tagf::to_json(cfg.training)},
      {"split", {{"val_episodes", cfg.val_episodes}}},
      {"dataset_dir", cfg.dataset_dir},
      {"output_dir", cfg.output_dir},
      {"workers", cfg.workers},
      {"gradcheck",
       {{"model", tagf::to_json(cfg.gradcheck.model)},
        {"length", cfg.gradcheck.length},
        {"seeds", cfg.gradcheck.seeds},
        {"epsilon", cfg.gradcheck.epsilon},
        {"tolerance", cfg.gradcheck.tolerance}}},
      {"benchmark",
       {{"strategies", strategies},
        {"axis", synth::to_string(cfg.benchmark.axis)},
        {"levels", cfg.benchmark.levels},
        {"seeds", cfg.benchmark.seeds}}},
  };
}

namespace {

template <typename T>
T get_as(const json& j, const char* key, const char* section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type (" +
                      j.at(key).dump() + ")");
  }
}

// Replaces top-level keys of `base` with those of `patch`; nested objects are
// replaced whole. The section readers then reject unknown keys and validate.
json overlay(json base, const json& patch, const char* section) {
  if (!patch.is_object()) {
    throw ConfigError(std::string(section) + ": expected a JSON object");
  }
  for (const auto& [key, value] : patch.items()) base[key] = value;
  return base;
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
  detail::reject_unknown_keys(
      j, {"generator", "model", "training", "split", "dataset_dir", "output_dir",
          "workers", "gradcheck", "benchmark"},
      "config");
  ExperimentConfig cfg;
  if (j.contains("generator")) {
    cfg.generator = gen_config_from_json(
        overlay(tagf::to_json(cfg.generator), j["generator"], "generator"));
  }
  if (j.contains("model")) {
    cfg.model = model_config_from_json(
        overlay(tagf::to_json(cfg.model), j["model"], "model"));
  }
  if (j.contains("training")) {
    cfg.training = train_config_from_json(
        overlay(tagf::to_json(cfg.training), j["training"], "training"));
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    detail::reject_unknown_keys(s, {"val_episodes"}, "split");
    if (s.contains("val_episodes")) {
      cfg.val_episodes = get_as<std::size_t>(s, "val_episodes", "split");
    }
  }
  if (j.contains("dataset_dir")) {
    cfg.dataset_dir = get_as<std::string>(j, "dataset_dir", "config");
  }
  if (j.contains("output_dir")) {
    cfg.output_dir = get_as<std::string>(j, "output_dir", "config");
  }
  if (j.contains("workers")) {
    cfg.workers = get_as<std::size_t>(j, "workers", "config");
    if (!(j.contains("training") && j["training"].contains("workers"))) {
      cfg.training.workers = cfg.workers;
    }
  }
  if (j.contains("gradcheck")) {
    const json& g = j["gradcheck"];
    constexpr const char* s = "gradcheck";
    detail::reject_unknown_keys(g, {"model", "length", "seeds", "epsilon", "tolerance"}, s);
    if (g.contains("model")) {
      cfg.gradcheck.model = model_config_from_json(
          overlay(tagf::to_json(cfg.gradcheck.model), g["model"], "gradcheck.model"));
    }
    if (g.contains("length")) cfg.gradcheck.length = get_as<std::size_t>(g, "length", s);
    if (g.contains("seeds")) {
      cfg.gradcheck.seeds = get_as<std::vector<std::uint64_t>>(g, "seeds", s);
    }
    if (g.contains("epsilon")) cfg.gradcheck.epsilon = get_as<double>(g, "epsilon", s);
    if (g.contains("tolerance")) {
      cfg.gradcheck.tolerance = get_as<double>(g, "tolerance", s);
    }
  }
  if (j.contains("benchmark")) {
    const json& b = j["benchmark"];
    constexpr const char* s = "benchmark";
    detail::reject_unknown_keys(b, {"strategies", "axis", "levels", "seeds"}, s);
    if (b.contains("strategies")) {
      cfg.benchmark.strategies.clear();
      for (const auto& name : get_as<std::vector<std::string>>(b, "strategies", s)) {
        auto strategy = fusion::strategy_from_string(name);
        if (!strategy) {
          throw ConfigError("benchmark.strategies: unknown strategy '" + name + "'");
        }
        cfg.benchmark.strategies.push_back(*strategy);
      }
    }
    if (b.contains("axis")) {
      try {
        cfg.benchmark.axis =
            synth::sweep_axis_from_string(get_as<std::string>(b, "axis", s));
      } catch (const ContractError& e) {
        throw ConfigError(std::string("benchmark.axis: ") + e.what());
      }
    }
    if (b.contains("levels")) {
      cfg.benchmark.levels = get_as<std::vector<double>>(b, "levels", s);
    }
    if (b.contains("seeds")) {
      cfg.benchmark.seeds = get_as<std::vector<std::uint64_t>>(b, "seeds", s);
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  json j;
  try {
    j = json::parse(text.str());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

void save_experiment(const std::filesystem::path& path,
                     const ExperimentConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace tagf::cli
