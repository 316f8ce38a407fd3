// SPDX-License-Identifier: Apache-2.0
#include "tagf/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tagf/error.hpp"
#include "tagf/rng.hpp"

namespace tagf::fusion {

namespace {

std::string modality_key(Modality m) {
  return m == Modality::Audio ? "a" : "v";
}

std::string gate_prefix(const ModelConfig& cfg, Modality m) {
  return cfg.share_gate ? std::string("gate.shared")
                        : "gate." + modality_key(m);
}

void add_bilstm_layout(std::vector<std::pair<std::string, Shape>>& out,
                       const ModelConfig& cfg, const std::string& prefix) {
  const std::size_t dm = cfg.d_model;
  const std::size_t h = cfg.lstm_hidden;
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string p = prefix + "." + dir;
    out.emplace_back(p + ".Wx", Shape{dm, 4 * h});
    out.emplace_back(p + ".Wh", Shape{h, 4 * h});
    out.emplace_back(p + ".b", Shape{1, 4 * h});
  }
  out.emplace_back(prefix + ".proj.W", Shape{2 * h, dm});
  out.emplace_back(prefix + ".w", Shape{dm, 1});
}

bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = name.substr(dot + 1);
  return leaf == "b" || leaf == "bo" || leaf == "b1" || leaf == "b2" ||
         leaf == "logits";
}

bool is_lstm_bias(const std::string& name) {
  return name.size() > 6 && (name.ends_with(".fwd.b") || name.ends_with(".bwd.b"));
}

// Shifted copy S[l] = X[l + offset], zero outside [0, L).
Tensor shift_frames(const Tensor& x, long offset) {
  const std::size_t len = x.dim(0);
  const std::size_t width = x.dim(1);
  Tape& tape = x.tape();
  if (offset == 0) return x;
  const std::size_t mag = static_cast<std::size_t>(std::labs(offset));
  if (mag >= len) return tape.constant({len, width}, 0.0);
  const Tensor zeros = tape.constant({mag, width}, 0.0);
  if (offset > 0) {
    return concat({slice(x, 0, mag, len), zeros}, 0);
  }
  return concat({zeros, slice(x, 0, 0, len - mag)}, 0);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row(matmul(x, w), b);
}

struct LstmParams {
  Tensor wx;
  Tensor wh;
  Tensor b;
};

LstmParams bind_lstm(const BoundParameters& params, const std::string& p) {
  return {params.at(p + ".Wx"), params.at(p + ".Wh"), params.at(p + ".b")};
}

// One direction over the recursion axis; each of the L frames is an
// independent batch row.
std::vector<Tensor> run_lstm(const LstmParams& p, std::span<const Tensor> xs,
                             std::size_t hidden, bool reverse) {
  const std::size_t steps = xs.size();
  std::vector<Tensor> out(steps);
  Tensor h;
  Tensor c;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    Tensor z = matmul(xs[t], p.wx);
    if (h.valid()) z = z + matmul(h, p.wh);
    z = add_row(z, p.b);
    const Tensor i = sigmoid(slice(z, 1, 0, hidden));
    const Tensor f = sigmoid(slice(z, 1, hidden, 2 * hidden));
    const Tensor g = tanh(slice(z, 1, 2 * hidden, 3 * hidden));
    const Tensor o = sigmoid(slice(z, 1, 3 * hidden, 4 * hidden));
    c = c.valid() ? f * c + i * g : i * g;
    h = o * tanh(c);
    out[t] = h;
  }
  return out;
}

Tensor fixed_weights(Tape& tape, std::size_t len, std::span<const double> w) {
  std::vector<double> values(len * w.size());
  for (std::size_t l = 0; l < len; ++l) {
    std::copy(w.begin(), w.end(), values.begin() + l * w.size());
  }
  return tape.constant({len, w.size()}, std::move(values));
}

ModalityGate bilstm_gate(const BoundParameters& params, const ModelConfig& cfg,
                         const std::string& prefix,
                         std::span<const Tensor> steps) {
  const auto fwd = bind_lstm(params, prefix + ".fwd");
  const auto bwd = bind_lstm(params, prefix + ".bwd");
  const Tensor& proj_w = params.at(prefix + ".proj.W");
  const Tensor& w = params.at(prefix + ".w");

  const auto hf = run_lstm(fwd, steps, cfg.lstm_hidden, false);
  const auto hb = run_lstm(bwd, steps, cfg.lstm_hidden, true);

  ModalityGate gate;
  std::vector<Tensor> scores;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    // No projection bias: it would shift every step's score equally and
    // cancel in the softmax.
    const Tensor g = matmul(concat({hf[t], hb[t]}, 1), proj_w);
    gate.gate_vectors.push_back(g);
    scores.push_back(matmul(g, w));
  }
  gate.scores = concat(scores, 1);
  gate.weights = softmax(gate.scores, 1);
  return gate;
}

}  // namespace

const char* to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::Tagf: return "tagf";
    case FusionStrategy::UniformAverage: return "uniform_average";
    case FusionStrategy::LastStep: return "last_step";
    case FusionStrategy::StaticGate: return "static_gate";
  }
  return "unknown";
}

std::optional<FusionStrategy> strategy_from_string(std::string_view name) {
  for (auto s : {FusionStrategy::Tagf, FusionStrategy::UniformAverage,
                 FusionStrategy::LastStep, FusionStrategy::StaticGate}) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

std::size_t TcnConfig::receptive_field() const {
  const std::size_t total =
      std::accumulate(dilations.begin(), dilations.end(), std::size_t{0});
  return 1 + (kernel - 1) * total;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model: " + msg); };
  if (recursion_depth < 1) fail("recursion_depth must be >= 1");
  if (d_v < 1 || d_a < 1 || d_model < 1 || lstm_hidden < 1 || mlp_hidden < 1) {
    fail("all widths must be >= 1");
  }
  if (tcn.layers > 0 && tcn.kernel < 1) fail("tcn.kernel must be >= 1");
  if (tcn.dilations.size() != tcn.layers) {
    fail("tcn.dilations must list one dilation per layer");
  }
  for (auto d : tcn.dilations) {
    if (d < 1) fail("tcn dilations must be strictly positive");
  }
}

std::vector<std::pair<std::string, Shape>> parameter_layout(
    const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t dm = cfg.d_model;
  std::vector<std::pair<std::string, Shape>> out;
  for (Modality m : {Modality::Audio, Modality::Visual}) {
    const std::string p = "tcn." + modality_key(m);
    const std::size_t d_in = m == Modality::Audio ? cfg.d_a : cfg.d_v;
    out.emplace_back(p + ".in.W", Shape{d_in, dm});
    out.emplace_back(p + ".in.b", Shape{1, dm});
    for (std::size_t i = 0; i < cfg.tcn.layers; ++i) {
      const std::string c = p + ".conv" + std::to_string(i);
      out.emplace_back(c + ".W", Shape{cfg.tcn.kernel * dm, dm});
      out.emplace_back(c + ".b", Shape{1, dm});
    }
  }
  for (Modality m : {Modality::Visual, Modality::Audio}) {
    const std::string p = "attn." + modality_key(m);
    out.emplace_back(p + ".Wq", Shape{dm, dm});
    out.emplace_back(p + ".Wk", Shape{dm, dm});
    out.emplace_back(p + ".Wv", Shape{dm, dm});
    out.emplace_back(p + ".Wo", Shape{dm, dm});
    out.emplace_back(p + ".bo", Shape{1, dm});
  }
  switch (cfg.strategy) {
    case FusionStrategy::Tagf:
      if (cfg.share_gate) {
        add_bilstm_layout(out, cfg, "gate.shared");
      } else {
        add_bilstm_layout(out, cfg, "gate.v");
        add_bilstm_layout(out, cfg, "gate.a");
      }
      break;
    case FusionStrategy::StaticGate:
      out.emplace_back("gate.v.logits", Shape{1, cfg.recursion_depth});
      out.emplace_back("gate.a.logits", Shape{1, cfg.recursion_depth});
      break;
    case FusionStrategy::UniformAverage:
    case FusionStrategy::LastStep:
      break;
  }
  out.emplace_back("head.W1", Shape{2 * dm, cfg.mlp_hidden});
  out.emplace_back("head.b1", Shape{1, cfg.mlp_hidden});
  out.emplace_back("head.W2", Shape{cfg.mlp_hidden, 2});
  out.emplace_back("head.b2", Shape{1, 2});
  return out;
}

ParameterStore init_parameters(const ModelConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0x11));
  ParameterStore store;
  for (auto& [name, shape] : parameter_layout(cfg)) {
    std::vector<double> values(numel(shape), 0.0);
    if (is_lstm_bias(name)) {
      // Gate order i, f, g, o: forget slice starts at 1.
      const std::size_t h = shape[1] / 4;
      std::fill(values.begin() + h, values.begin() + 2 * h, 1.0);
    } else if (!is_bias(name)) {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (double& v : values) v = rng.uniform(-limit, limit);
    }
    store.add(name, shape, std::move(values));
  }
  return store;
}

FeatureSequence l2_normalize(const FeatureSequence& seq) {
  seq.validate();
  FeatureSequence out = seq;
  for (std::size_t l = 0; l < seq.length; ++l) {
    auto row = out.row(l);
    if (!seq.mask[l]) {
      std::fill(row.begin(), row.end(), 0.0);
      continue;
    }
    double sq = 0.0;
    for (double v : row) sq += v * v;
    const double inv = 1.0 / std::max(std::sqrt(sq), kReciprocalEpsilon);
    for (double& v : row) v *= inv;
  }
  return out;
}

Tensor tcn_encode(const BoundParameters& params, const ModelConfig& cfg,
                  const FeatureSequence& seq) {
  seq.validate();
  const std::size_t d_in = seq.modality == Modality::Audio ? cfg.d_a : cfg.d_v;
  if (seq.dim != d_in) {
    std::ostringstream os;
    os << "tcn_encode: " << tagf::to_string(seq.modality) << " dim " << seq.dim
       << " does not match configured " << d_in;
    throw ShapeError(os.str());
  }
  Tape& tape = params.tape();
  const std::string p = "tcn." + modality_key(seq.modality);
  const Tensor x = tape.constant({seq.length, seq.dim}, seq.values);
  Tensor h = linear(x, params.at(p + ".in.W"), params.at(p + ".in.b"));

  const std::size_t k = cfg.tcn.kernel;
  for (std::size_t layer = 0; layer < cfg.tcn.layers; ++layer) {
    const long dilation = static_cast<long>(cfg.tcn.dilations[layer]);
    const long left = static_cast<long>((k - 1) / 2) * dilation;
    std::vector<Tensor> taps;
    taps.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
      taps.push_back(shift_frames(h, static_cast<long>(j) * dilation - left));
    }
    const std::string c = p + ".conv" + std::to_string(layer);
    const Tensor conv = linear(k == 1 ? taps.front() : concat(taps, 1),
                               params.at(c + ".W"), params.at(c + ".b"));
    h = h + tanh(conv);
  }
  return h;
}

AttentionParams AttentionParams::bind(const BoundParameters& params,
                                      const std::string& prefix) {
  return {params.at(prefix + ".Wq"), params.at(prefix + ".Wk"),
          params.at(prefix + ".Wv"), params.at(prefix + ".Wo"),
          params.at(prefix + ".bo")};
}

AttentionResult cross_attention(const AttentionParams& p, const Tensor& target,
                                const Tensor& source,
                                std::span<const std::uint8_t> source_mask) {
  if (target.rank() != 2 || source.rank() != 2 ||
      target.dim(1) != source.dim(1)) {
    throw ShapeError("cross_attention: operands " + tagf::to_string(target.shape()) +
                     " and " + tagf::to_string(source.shape()) +
                     " need equal d_model");
  }
  const std::size_t lt = target.dim(0);
  const std::size_t ls = source.dim(0);
  if (source_mask.size() != ls) {
    throw ShapeError("cross_attention: source mask length mismatch");
  }
  Tape& tape = target.tape();
  AttentionResult result;
  const bool any_valid = std::any_of(source_mask.begin(), source_mask.end(),
                                     [](auto v) { return v != 0; });
  if (!any_valid) {
    result.output = target;
    result.weights = tape.constant({lt, ls}, 0.0);
    result.skipped = true;
    return result;
  }

  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(target.dim(1)));
  const Tensor q = matmul(target, p.query);
  const Tensor k = matmul(source, p.key);
  const Tensor v = matmul(source, p.value);
  const Tensor logits = scale(matmul(q, transpose(k)), inv_scale);

  std::vector<std::uint8_t> keep(lt * ls);
  for (std::size_t i = 0; i < lt; ++i) {
    std::copy(source_mask.begin(), source_mask.end(), keep.begin() + i * ls);
  }
  result.weights = masked_softmax(logits, 1, std::move(keep));
  const Tensor attended = matmul(result.weights, v);
  result.output = target + add_row(matmul(attended, p.output), p.output_bias);
  return result;
}

RecursionTrace recursive_fuse(const BoundParameters& params,
                              const ModelConfig& cfg, const Tensor& audio,
                              std::span<const std::uint8_t> audio_mask,
                              const Tensor& visual,
                              std::span<const std::uint8_t> visual_mask) {
  if (audio.shape() != visual.shape()) {
    throw AlignmentError("recursive_fuse: encoded shapes " +
                         tagf::to_string(audio.shape()) + " and " +
                         tagf::to_string(visual.shape()) + " differ");
  }
  const auto attn_v = AttentionParams::bind(params, "attn.v");
  const auto attn_a = AttentionParams::bind(params, "attn.a");
  RecursionTrace trace;
  trace.visual.push_back(visual);
  trace.audio.push_back(audio);
  for (std::size_t t = 1; t <= cfg.recursion_depth; ++t) {
    const Tensor& hv = trace.visual.back();
    const Tensor& ha = trace.audio.back();
    // Both updates read step t-1.
    auto next_v = cross_attention(attn_v, hv, ha, audio_mask);
    auto next_a = cross_attention(attn_a, ha, hv, visual_mask);
    trace.skipped_attention += next_v.skipped + next_a.skipped;
    trace.visual.push_back(next_v.output);
    trace.audio.push_back(next_a.output);
  }
  return trace;
}

GateTrace temporal_gate(const BoundParameters& params, const ModelConfig& cfg,
                        const RecursionTrace& trace) {
  if (trace.visual.size() < 2 || trace.audio.size() < 2) {
    throw ContractError("temporal_gate: trace needs at least one recursive step");
  }
  const std::size_t steps = trace.visual.size() - 1;
  const std::size_t len = trace.visual.front().dim(0);
  Tape& tape = params.tape();
  GateTrace gates;
  for (Modality m : {Modality::Visual, Modality::Audio}) {
    const auto& hs = trace.of(m);
    const std::span<const Tensor> recursive(hs.data() + 1, steps);
    ModalityGate& gate = m == Modality::Visual ? gates.visual : gates.audio;
    switch (cfg.strategy) {
      case FusionStrategy::Tagf:
        gate = bilstm_gate(params, cfg, gate_prefix(cfg, m), recursive);
        break;
      case FusionStrategy::UniformAverage: {
        const std::vector<double> w(steps, 1.0 / static_cast<double>(steps));
        gate.weights = fixed_weights(tape, len, w);
        break;
      }
      case FusionStrategy::LastStep: {
        std::vector<double> w(steps, 0.0);
        w.back() = 1.0;
        gate.weights = fixed_weights(tape, len, w);
        break;
      }
      case FusionStrategy::StaticGate: {
        const Tensor& logits =
            params.at("gate." + modality_key(m) + ".logits");
        gate.scores = broadcast_to(logits, {len, steps});
        gate.weights = softmax(gate.scores, 1);
        break;
      }
    }
  }
  return gates;
}

Tensor gated_aggregate(std::span<const Tensor> steps, const Tensor& weights) {
  if (steps.empty()) throw ContractError("gated_aggregate: no steps");
  const Shape& step_shape = steps.front().shape();
  if (weights.rank() != 2 || weights.dim(1) != steps.size() ||
      weights.dim(0) != step_shape[0]) {
    throw ShapeError("gated_aggregate: weights " + tagf::to_string(weights.shape()) +
                     " do not match " + std::to_string(steps.size()) +
                     " steps of " + tagf::to_string(step_shape));
  }
  Tensor fused;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (steps[t].shape() != step_shape) {
      throw ShapeError("gated_aggregate: step shapes differ");
    }
    const Tensor alpha =
        broadcast_to(slice(weights, 1, t, t + 1), step_shape);
    const Tensor term = alpha * steps[t];
    fused = fused.valid() ? fused + term : term;
  }
  return fused;
}

FusionOutput predict(const BoundParameters& params, const Tensor& fused_visual,
                     const Tensor& fused_audio) {
  if (fused_visual.dim(0) != fused_audio.dim(0)) {
    throw AlignmentError("predict: F_v and F_a lengths differ");
  }
  FusionOutput out;
  out.visual = fused_visual;
  out.audio = fused_audio;
  out.multi = concat({fused_visual, fused_audio}, 1);
  const Tensor hidden =
      tanh(linear(out.multi, params.at("head.W1"), params.at("head.b1")));
  out.prediction =
      tanh(linear(hidden, params.at("head.W2"), params.at("head.b2")));
  return out;
}

VATrajectory to_trajectory(const Tensor& prediction) {
  const std::size_t len = prediction.dim(0);
  VATrajectory traj(len);
  for (std::size_t l = 0; l < len; ++l) {
    traj.valence[l] = prediction.at(l, 0);
    traj.arousal[l] = prediction.at(l, 1);
  }
  return traj;
}

ForwardResult forward(const BoundParameters& params, const ModelConfig& cfg,
                      const FeatureSequence& audio,
                      const FeatureSequence& visual,
                      const ForwardOptions& options) {
  if (audio.length != visual.length) {
    std::ostringstream os;
    os << "forward: audio has " << audio.length << " frames, visual has "
       << visual.length;
    throw AlignmentError(os.str());
  }
  const FeatureSequence na = l2_normalize(audio);
  const FeatureSequence nv = l2_normalize(visual);
  const Tensor ea = tcn_encode(params, cfg, na);
  const Tensor ev = tcn_encode(params, cfg, nv);

  ForwardResult result;
  result.trace = recursive_fuse(params, cfg, ea, audio.mask, ev, visual.mask);

  const std::size_t steps = cfg.recursion_depth;
  Tensor fv;
  Tensor fa;
  if (options.select_step) {
    const std::size_t k = *options.select_step;
    if (k < 1 || k > steps) {
      throw ContractError("forward: select_step out of range");
    }
    fv = result.trace.visual[k];
    fa = result.trace.audio[k];
  } else {
    if (options.forced_weights) {
      if (options.forced_weights->size() != steps) {
        throw ShapeError("forward: forced_weights needs one weight per step");
      }
      Tape& tape = params.tape();
      result.gates.visual.weights =
          fixed_weights(tape, audio.length, *options.forced_weights);
      result.gates.audio.weights = result.gates.visual.weights;
    } else {
      result.gates = temporal_gate(params, cfg, result.trace);
    }
    const auto& tv = result.trace.visual;
    const auto& ta = result.trace.audio;
    fv = gated_aggregate(std::span(tv).subspan(1), result.gates.visual.weights);
    fa = gated_aggregate(std::span(ta).subspan(1), result.gates.audio.weights);
  }
  result.fused = predict(params, fv, fa);
  result.trajectory = to_trajectory(result.fused.prediction);
  return result;
}

}  // namespace tagf::fusion
