// SPDX-License-Identifier: Apache-2.0
#include "tagf/dataset_io.hpp"

#include <cstdio>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "tagf/config_io.hpp"
#include "tagf/error.hpp"
#include "tagf/rng.hpp"

namespace tagf::synth {

namespace {

constexpr std::string_view kEpisodeMagic = "TAGFEPIS";

void write_bitmap(detail::ByteWriter& w, std::span<const std::uint8_t> mask) {
  std::vector<std::uint8_t> bits((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  w.bytes(bits);
}

std::vector<std::uint8_t> read_bitmap(detail::ByteReader& r, std::size_t n) {
  const auto bits = r.bytes((n + 7) / 8);
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = (bits[i / 8] >> (i % 8)) & 1u;
  return mask;
}

std::string episode_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "episode_%05zu.bin", i);
  return buf;
}

}  // namespace

std::vector<std::uint8_t> encode_episode(const Episode& ep) {
  const std::size_t len = ep.length();
  if (ep.audio.length != len || ep.visual.length != len ||
      ep.truth_mask.size() != len) {
    throw ContractError("encode_episode: streams are not aligned");
  }
  nlohmann::json header = {
      {"length", len},
      {"d_a", ep.audio.dim},
      {"d_v", ep.visual.dim},
      {"seed", ep.meta.seed},
      {"index", ep.meta.index},
      {"noise_a", ep.meta.noise_a},
      {"noise_v", ep.meta.noise_v},
      {"shift_a", ep.meta.shift_a},
      {"occlusion_rate", ep.meta.occlusion_rate},
      {"occluded_frames", ep.meta.occluded_frames},
      {"window_start", ep.meta.window_start},
      {"pad_frames", ep.meta.pad_frames},
  };
  detail::ByteWriter w;
  w.raw(kEpisodeMagic);
  w.u32(kEpisodeFormatVersion);
  w.string(header.dump());
  w.f64s(ep.audio.values);
  w.f64s(ep.visual.values);
  w.f64s(ep.truth.valence);
  w.f64s(ep.truth.arousal);
  write_bitmap(w, ep.audio.mask);
  write_bitmap(w, ep.visual.mask);
  write_bitmap(w, ep.truth_mask);
  return w.data();
}

Episode decode_episode(std::span<const std::uint8_t> bytes,
                       const std::string& context) {
  detail::ByteReader r(bytes, context);
  if (r.raw(kEpisodeMagic.size()) != kEpisodeMagic) {
    throw DataError(context + ": not an episode file");
  }
  const std::uint32_t version = r.u32();
  if (version != kEpisodeFormatVersion) {
    throw DataError(context + ": unsupported episode format version " +
                    std::to_string(version));
  }
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(r.string());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(context + ": bad header: " + e.what());
  }
  Episode ep;
  try {
    const auto len = h.at("length").get<std::size_t>();
    const auto d_a = h.at("d_a").get<std::size_t>();
    const auto d_v = h.at("d_v").get<std::size_t>();
    if (len < 1 || d_a < 1 || d_v < 1) {
      throw DataError(context + ": empty episode dimensions");
    }
    ep.audio = FeatureSequence(Modality::Audio, len, d_a);
    ep.visual = FeatureSequence(Modality::Visual, len, d_v);
    ep.meta.seed = h.at("seed").get<std::uint64_t>();
    ep.meta.index = h.at("index").get<std::size_t>();
    ep.meta.noise_a = h.at("noise_a").get<double>();
    ep.meta.noise_v = h.at("noise_v").get<double>();
    ep.meta.shift_a = h.at("shift_a").get<long>();
    ep.meta.occlusion_rate = h.at("occlusion_rate").get<double>();
    ep.meta.occluded_frames = h.at("occluded_frames").get<std::size_t>();
    ep.meta.window_start = h.at("window_start").get<std::size_t>();
    ep.meta.pad_frames = h.at("pad_frames").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(context + ": bad header: " + e.what());
  }
  const std::size_t len = ep.audio.length;
  ep.audio.values = r.f64s(len * ep.audio.dim);
  ep.visual.values = r.f64s(len * ep.visual.dim);
  ep.truth.valence = r.f64s(len);
  ep.truth.arousal = r.f64s(len);
  ep.audio.mask = read_bitmap(r, len);
  ep.visual.mask = read_bitmap(r, len);
  ep.truth_mask = read_bitmap(r, len);
  if (!r.done()) throw DataError(context + ": trailing bytes");
  return ep;
}

std::string checksum_hex(std::uint64_t checksum) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(checksum));
  return buf;
}

std::uint64_t save_dataset(const std::filesystem::path& dir,
                           const GenConfig& cfg,
                           std::span<const Episode> episodes) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto bytes = encode_episode(episodes[i]);
    const std::string name = episode_file(i);
    detail::write_file(dir / name, bytes);
    checksum = fnv1a(bytes, checksum);
    list.push_back({{"file", name},
                    {"index", episodes[i].meta.index},
                    {"length", episodes[i].length()}});
  }
  const nlohmann::json manifest = {
      {"format_version", kManifestFormatVersion},
      {"generator", to_json(cfg)},
      {"episodes", list},
      {"checksum", checksum_hex(checksum)},
  };
  detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return checksum;
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw IoError("dataset manifest not found: " + manifest_path.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  LoadedDataset out;
  std::string expected;
  try {
    if (manifest.at("format_version").get<std::uint32_t>() !=
        kManifestFormatVersion) {
      throw DataError(manifest_path.string() + ": unsupported format version");
    }
    out.config = gen_config_from_json(manifest.at("generator"));
    expected = manifest.at("checksum").get<std::string>();
    std::uint64_t checksum = 0xcbf29ce484222325ULL;
    for (const auto& entry : manifest.at("episodes")) {
      const auto path = dir / entry.at("file").get<std::string>();
      const auto bytes = detail::read_file(path);
      checksum = fnv1a(bytes, checksum);
      out.episodes.push_back(decode_episode(bytes, path.string()));
    }
    out.checksum = checksum;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  if (checksum_hex(out.checksum) != expected) {
    throw DataError(dir.string() + ": checksum mismatch (manifest " + expected +
                    ", files " + checksum_hex(out.checksum) + ")");
  }
  return out;
}

}  // namespace tagf::synth
