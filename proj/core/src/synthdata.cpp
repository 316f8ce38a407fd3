// SPDX-License-Identifier: Apache-2.0
#include "tagf/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "tagf/error.hpp"
#include "tagf/rng.hpp"

namespace tagf::synth {

namespace {

enum StreamTag : std::uint64_t {
  kMixing = 1,
  kLatent = 2,
  kNoiseAudio = 3,
  kNoiseVisual = 4,
  kOcclusion = 5,
};

constexpr std::size_t kComponents = 3;
constexpr double kReadoutL1 = 0.95;

struct Mixing {
  std::vector<double> audio;   // d_a x k
  std::vector<double> visual;  // d_v x k
  std::vector<double> audio_offset;
  std::vector<double> visual_offset;
  std::vector<double> readout;  // 2 x k
};

Mixing draw_mixing(const GenConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kMixing));
  const std::size_t k = cfg.latent_dim;
  Mixing m;
  auto fill = [&](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
  };
  // Offsets dominate ||A z|| so the unit-normalized features stay close to
  // an affine function of z.
  auto offsets = [&](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (double& x : v) {
      const double mag = rng.uniform(1.0, 2.0);
      x = rng.uniform() < 0.5 ? -mag : mag;
    }
  };
  fill(m.audio, cfg.d_a * k);
  fill(m.visual, cfg.d_v * k);
  offsets(m.audio_offset, cfg.d_a);
  offsets(m.visual_offset, cfg.d_v);
  fill(m.readout, 2 * k);
  for (std::size_t r = 0; r < 2; ++r) {
    double l1 = 0.0;
    for (std::size_t j = 0; j < k; ++j) l1 += std::abs(m.readout[r * k + j]);
    for (std::size_t j = 0; j < k; ++j) {
      m.readout[r * k + j] *= kReadoutL1 / std::max(l1, 1e-12);
    }
  }
  return m;
}

struct Latent {
  struct Component {
    double period;
    double phase;
    double amplitude;
  };
  std::vector<Component> components;  // latent_dim x kComponents
  std::size_t dim = 0;

  void eval(long frame, std::span<double> out) const {
    for (std::size_t j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < kComponents; ++c) {
        const auto& s = components[j * kComponents + c];
        acc += s.amplitude *
               std::sin(2.0 * std::numbers::pi * static_cast<double>(frame) /
                            s.period +
                        s.phase);
      }
      out[j] = std::tanh(acc);
    }
  }
};

Latent draw_latent(const GenConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kLatent));
  Latent z;
  z.dim = cfg.latent_dim;
  z.components.resize(cfg.latent_dim * kComponents);
  for (auto& c : z.components) {
    c.period = rng.uniform(cfg.smoothness, 3.0 * cfg.smoothness);
    c.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    c.amplitude = rng.uniform(0.4, 1.0);
  }
  return z;
}

void affine(std::span<const double> mat, std::span<const double> offset,
            std::span<const double> z, std::span<double> out) {
  const std::size_t k = z.size();
  for (std::size_t r = 0; r < out.size(); ++r) {
    double acc = offset[r];
    for (std::size_t j = 0; j < k; ++j) acc += mat[r * k + j] * z[j];
    out[r] = acc;
  }
}

}  // namespace

void GenConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw ConfigError("generator: " + msg);
  };
  if (n_episodes < 1) fail("n_episodes must be >= 1");
  if (length < 1) fail("length must be >= 1");
  if (d_a < 1 || d_v < 1 || latent_dim < 1) fail("dims must be >= 1");
  if (!(smoothness > 0.0)) fail("smoothness must be > 0");
  if (!(noise_a >= 0.0) || !(noise_v >= 0.0)) fail("noise stds must be >= 0");
  if (static_cast<std::size_t>(std::labs(shift_a)) >= length) {
    fail("|shift_a| must be < length");
  }
  if (!(occlusion_rate >= 0.0 && occlusion_rate < 1.0)) {
    fail("occlusion_rate must lie in [0, 1)");
  }
}

std::uint64_t episode_seed(std::uint64_t master, std::size_t index) {
  return derive_seed(master, index);
}

Episode generate_episode(const GenConfig& cfg, std::size_t index) {
  cfg.validate();
  const Mixing mix = draw_mixing(cfg);
  const std::uint64_t seed = episode_seed(cfg.seed, index);
  const Latent latent = draw_latent(cfg, seed);
  const std::size_t len = cfg.length;
  const std::size_t k = cfg.latent_dim;

  Episode ep;
  ep.audio = FeatureSequence(Modality::Audio, len, cfg.d_a);
  ep.visual = FeatureSequence(Modality::Visual, len, cfg.d_v);
  ep.truth = VATrajectory(len);
  ep.truth_mask.assign(len, 1);
  ep.meta.seed = seed;
  ep.meta.index = index;
  ep.meta.noise_a = cfg.noise_a;
  ep.meta.noise_v = cfg.noise_v;
  ep.meta.shift_a = cfg.shift_a;
  ep.meta.occlusion_rate = cfg.occlusion_rate;

  Rng noise_a(derive_seed(seed, kNoiseAudio));
  Rng noise_v(derive_seed(seed, kNoiseVisual));
  Rng occlusion(derive_seed(seed, kOcclusion));
  std::vector<double> z(k);
  std::vector<double> z_shifted(k);

  for (std::size_t l = 0; l < len; ++l) {
    const long frame = static_cast<long>(l);
    latent.eval(frame, z);
    latent.eval(frame - cfg.shift_a, z_shifted);

    double va[2];
    for (std::size_t r = 0; r < 2; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += mix.readout[r * k + j] * z[j];
      va[r] = std::clamp(acc, -1.0, 1.0);
    }
    ep.truth.valence[l] = va[0];
    ep.truth.arousal[l] = va[1];

    auto arow = ep.audio.row(l);
    affine(mix.audio, mix.audio_offset, z_shifted, arow);
    for (double& v : arow) v += cfg.noise_a * noise_a.normal();

    auto vrow = ep.visual.row(l);
    affine(mix.visual, mix.visual_offset, z, vrow);
    for (double& v : vrow) v += cfg.noise_v * noise_v.normal();

    if (occlusion.uniform() < cfg.occlusion_rate) {
      ep.visual.mask[l] = 0;
      std::fill(vrow.begin(), vrow.end(), 0.0);
      ++ep.meta.occluded_frames;
    }
  }
  return ep;
}

std::vector<Episode> generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  std::vector<Episode> out;
  out.reserve(cfg.n_episodes);
  for (std::size_t i = 0; i < cfg.n_episodes; ++i) {
    out.push_back(generate_episode(cfg, i));
  }
  return out;
}

namespace {

Episode cut_window(const Episode& ep, std::size_t start, std::size_t win_len) {
  const std::size_t len = ep.length();
  const std::size_t avail = std::min(win_len, len - start);
  Episode w;
  w.audio = FeatureSequence(Modality::Audio, win_len, ep.audio.dim);
  w.visual = FeatureSequence(Modality::Visual, win_len, ep.visual.dim);
  w.truth = VATrajectory(win_len);
  w.truth_mask.assign(win_len, 0);
  std::fill(w.audio.mask.begin(), w.audio.mask.end(), 0);
  std::fill(w.visual.mask.begin(), w.visual.mask.end(), 0);
  for (std::size_t i = 0; i < avail; ++i) {
    const std::size_t src = start + i;
    std::copy_n(ep.audio.row(src).begin(), ep.audio.dim, w.audio.row(i).begin());
    std::copy_n(ep.visual.row(src).begin(), ep.visual.dim,
                w.visual.row(i).begin());
    w.audio.mask[i] = ep.audio.mask[src];
    w.visual.mask[i] = ep.visual.mask[src];
    w.truth.valence[i] = ep.truth.valence[src];
    w.truth.arousal[i] = ep.truth.arousal[src];
    w.truth_mask[i] = ep.truth_mask[src];
  }
  w.meta = ep.meta;
  w.meta.window_start = ep.meta.window_start + start;
  w.meta.pad_frames = win_len - avail;
  w.meta.occluded_frames = 0;
  for (std::size_t i = 0; i < avail; ++i) {
    w.meta.occluded_frames += ep.visual.mask[start + i] == 0;
  }
  return w;
}

}  // namespace

std::vector<Episode> make_windows(const Episode& ep, std::size_t win_len,
                                  std::size_t stride) {
  const std::size_t len = ep.length();
  if (win_len < 1 || win_len > len || stride < 1) {
    std::ostringstream os;
    os << "make_windows: need 1 <= win_len (" << win_len << ") <= L (" << len
       << ") and stride >= 1";
    throw ContractError(os.str());
  }
  std::vector<Episode> out;
  if (win_len == len) {
    out.push_back(cut_window(ep, 0, win_len));
    return out;
  }
  std::size_t start = 0;
  for (; start + win_len <= len; start += stride) {
    out.push_back(cut_window(ep, start, win_len));
  }
  if (start < len) out.push_back(cut_window(ep, start, win_len));
  return out;
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Noise: return "noise";
    case SweepAxis::Shift: return "shift";
    case SweepAxis::Occlusion: return "occlusion";
  }
  return "unknown";
}

SweepAxis sweep_axis_from_string(std::string_view name) {
  for (auto a : {SweepAxis::Noise, SweepAxis::Shift, SweepAxis::Occlusion}) {
    if (name == to_string(a)) return a;
  }
  throw ContractError("unknown sweep axis '" + std::string(name) +
                      "' (expected noise, shift or occlusion)");
}

GenConfig apply_level(GenConfig cfg, SweepAxis axis, double level) {
  switch (axis) {
    case SweepAxis::Noise:
      cfg.noise_a = level;
      cfg.noise_v = level;
      break;
    case SweepAxis::Shift:
      cfg.shift_a = std::lround(level);
      break;
    case SweepAxis::Occlusion:
      cfg.occlusion_rate = level;
      break;
  }
  return cfg;
}

std::vector<std::vector<Episode>> corruption_sweep(
    const GenConfig& cfg, SweepAxis axis, std::span<const double> levels) {
  if (levels.empty()) throw ContractError("corruption_sweep: no levels");
  const bool up = std::is_sorted(levels.begin(), levels.end());
  const bool down = std::is_sorted(levels.begin(), levels.end(),
                                   std::greater<>());
  if (!up && !down) {
    throw ContractError("corruption_sweep: levels must be monotone");
  }
  std::vector<std::vector<Episode>> family;
  family.reserve(levels.size());
  for (double level : levels) {
    family.push_back(generate_dataset(apply_level(cfg, axis, level)));
  }
  return family;
}

}  // namespace tagf::synth
