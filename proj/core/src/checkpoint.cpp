// SPDX-License-Identifier: Apache-2.0
#include "tagf/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "tagf/config_io.hpp"
#include "tagf/error.hpp"

namespace tagf {

namespace {

constexpr std::string_view kCheckpointMagic = "TAGFCKPT";

json history_to_json(const train::TrainHistory& h) {
  json epochs = json::array();
  for (const auto& r : h.epochs) {
    epochs.push_back({{"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"val_valence_ccc", r.val_valence_ccc},
                      {"val_arousal_ccc", r.val_arousal_ccc},
                      {"val_avg_ccc", r.val_avg_ccc},
                      {"lr", r.lr},
                      {"seconds", r.seconds}});
  }
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"stopped_early", h.stopped_early}};
}

train::TrainHistory history_from_json(const json& j) {
  train::TrainHistory h;
  for (const auto& e : j.at("epochs")) {
    train::EpochRecord r;
    r.epoch = e.at("epoch").get<std::size_t>();
    r.train_loss = e.at("train_loss").get<double>();
    r.val_valence_ccc = e.at("val_valence_ccc").get<double>();
    r.val_arousal_ccc = e.at("val_arousal_ccc").get<double>();
    r.val_avg_ccc = e.at("val_avg_ccc").get<double>();
    r.lr = e.at("lr").get<double>();
    r.seconds = e.at("seconds").get<double>();
    h.epochs.push_back(r);
  }
  h.best_epoch = j.at("best_epoch").get<std::size_t>();
  h.stopped_early = j.at("stopped_early").get<bool>();
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const train::Checkpoint& ckpt) {
  json table = json::array();
  for (const auto& e : ckpt.params.entries()) {
    table.push_back({{"name", e.name}, {"shape", e.shape}});
  }
  const json header = {
      {"model", to_json(ckpt.model)},
      {"training", to_json(ckpt.training)},
      {"history", history_to_json(ckpt.history)},
      {"parameters", table},
  };
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointFormatVersion);
  w.string(header.dump());
  for (const auto& e : ckpt.params.entries()) w.f64s(e.values);
  return w.data();
}

train::Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                                    const std::string& context) {
  detail::ByteReader r(bytes, context);
  if (r.raw(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw DataError(context + ": not a checkpoint file");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw DataError(context + ": unsupported checkpoint version " +
                    std::to_string(version));
  }
  json header;
  try {
    header = json::parse(r.string());
  } catch (const json::exception& e) {
    throw DataError(context + ": bad header: " + e.what());
  }

  train::Checkpoint out;
  std::vector<std::pair<std::string, Shape>> table;
  try {
    out.model = model_config_from_json(header.at("model"));
    out.training = train_config_from_json(header.at("training"));
    out.history = history_from_json(header.at("history"));
    for (const auto& p : header.at("parameters")) {
      table.emplace_back(p.at("name").get<std::string>(),
                         p.at("shape").get<Shape>());
    }
  } catch (const json::exception& e) {
    throw DataError(context + ": bad header: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(context + ": bad configuration: " + e.what());
  }

  const auto layout = fusion::parameter_layout(out.model);
  if (table.size() != layout.size()) {
    throw ShapeError(context + ": expected " + std::to_string(layout.size()) +
                     " parameters for this configuration, found " +
                     std::to_string(table.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (table[i].first != layout[i].first) {
      throw ShapeError(context + ": parameter " + std::to_string(i) + " is '" +
                       table[i].first + "', expected '" + layout[i].first + "'");
    }
    if (table[i].second != layout[i].second) {
      throw ShapeError(context + ": parameter '" + table[i].first +
                       "' has shape " + to_string(table[i].second) +
                       ", expected " + to_string(layout[i].second));
    }
  }
  for (const auto& [name, shape] : table) {
    out.params.add(name, shape, r.f64s(numel(shape)));
  }
  if (!r.done()) throw DataError(context + ": trailing bytes");
  return out;
}

void save_checkpoint(const std::filesystem::path& path,
                     const train::Checkpoint& ckpt) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

train::Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

}  // namespace tagf
