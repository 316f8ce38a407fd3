// SPDX-License-Identifier: Apache-2.0
//
// Time-aware gated fusion of audio and visual streams.
//
// Pipeline per clip:
//   l2_normalize -> tcn_encode (per modality)
//   -> recursive_fuse: T simultaneous cross-attention updates
//        H_v(t) = attn_v(H_v(t-1), H_a(t-1)),  H_a(t) = attn_a(H_a(t-1), H_v(t-1))
//   -> temporal_gate: per frame, a BiLSTM runs over the recursion axis
//        [H(1), ..., H(T)] and yields gate vectors g_t; alpha = softmax_t(w . g_t)
//   -> gated_aggregate: F = sum_t alpha_t * H(t)
//   -> predict: tanh(MLP(concat(F_v, F_a))) -> (valence, arousal)
//
// H(0) (the encoded input) is not part of the gated sequence.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tagf/sequence.hpp"
#include "tagf/tensor.hpp"

namespace tagf::fusion {

/// How recursion outputs are combined into F.
enum class FusionStrategy : std::uint8_t {
  Tagf,            // BiLSTM temporal gate (the full model)
  UniformAverage,  // alpha = 1/T, no gate parameters
  LastStep,        // alpha one-hot on H(T)
  StaticGate,      // learned per-step scalars shared across frames
};

const char* to_string(FusionStrategy s);
std::optional<FusionStrategy> strategy_from_string(std::string_view name);

struct TcnConfig {
  std::size_t layers = 2;
  std::size_t kernel = 3;
  std::vector<std::size_t> dilations{1, 2};

  /// 1 + (kernel - 1) * sum(dilations).
  [[nodiscard]] std::size_t receptive_field() const;
  bool operator==(const TcnConfig&) const = default;
};

struct ModelConfig {
  std::size_t d_v = 16;
  std::size_t d_a = 12;
  std::size_t d_model = 16;
  std::size_t recursion_depth = 3;
  std::size_t lstm_hidden = 8;
  std::size_t mlp_hidden = 16;
  TcnConfig tcn;
  std::uint64_t seed = 1;
  FusionStrategy strategy = FusionStrategy::Tagf;
  bool share_gate = false;

  /// Throws ConfigError on T < 1, zero widths, or inconsistent TCN settings.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Names and shapes of every trainable buffer for `cfg`, in creation order.
std::vector<std::pair<std::string, Shape>> parameter_layout(
    const ModelConfig& cfg);

/// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1; seeded by
/// cfg.seed.
ParameterStore init_parameters(const ModelConfig& cfg);

/// Divides each valid frame by max(||x||_2, 1e-8); masked frames become zero.
FeatureSequence l2_normalize(const FeatureSequence& seq);

/// Per-frame input projection to d_model followed by residual dilated
/// convolution layers  X <- X + tanh(conv_d(X) + b)  with symmetric zero
/// padding. Output is L x d_model.
Tensor tcn_encode(const BoundParameters& params, const ModelConfig& cfg,
                  const FeatureSequence& seq);

struct AttentionParams {
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor output;
  Tensor output_bias;

  static AttentionParams bind(const BoundParameters& params,
                              const std::string& prefix);
};

struct AttentionResult {
  Tensor output;
  /// L_target x L_source; all zeros when the call was skipped.
  Tensor weights;
  bool skipped = false;
};

/// Scaled dot-product cross-attention with a residual connection:
///   out = target + softmax(Q K^T / sqrt(d)) V Wo + bo,
/// masked source frames excluded. With no valid source frame the target is
/// returned unchanged and `skipped` is set.
AttentionResult cross_attention(const AttentionParams& p, const Tensor& target,
                                const Tensor& source,
                                std::span<const std::uint8_t> source_mask);

struct RecursionTrace {
  /// [H(0), H(1), ..., H(T)] per modality, each L x d_model.
  std::vector<Tensor> visual;
  std::vector<Tensor> audio;
  std::size_t skipped_attention = 0;

  [[nodiscard]] const std::vector<Tensor>& of(Modality m) const {
    return m == Modality::Visual ? visual : audio;
  }
};

RecursionTrace recursive_fuse(const BoundParameters& params,
                              const ModelConfig& cfg, const Tensor& audio,
                              std::span<const std::uint8_t> audio_mask,
                              const Tensor& visual,
                              std::span<const std::uint8_t> visual_mask);

struct ModalityGate {
  /// g_1..g_T, each L x d_model. Empty for strategies without a BiLSTM.
  std::vector<Tensor> gate_vectors;
  /// L x T raw scores w . g_t (absent for fixed strategies).
  Tensor scores;
  /// L x T normalized weights; rows sum to 1.
  Tensor weights;

  [[nodiscard]] double alpha(std::size_t step, std::size_t frame) const {
    return weights.at(frame, step);
  }
};

struct GateTrace {
  ModalityGate visual;
  ModalityGate audio;

  [[nodiscard]] const ModalityGate& of(Modality m) const {
    return m == Modality::Visual ? visual : audio;
  }
};

/// BiLSTM over [H(1)..H(T)] for each frame, projected to d_model, scored by
/// w and softmax-normalized over steps. Honors cfg.strategy for the fixed
/// baselines.
GateTrace temporal_gate(const BoundParameters& params, const ModelConfig& cfg,
                        const RecursionTrace& trace);

/// F = sum_t weights[:, t] * steps[t]; `steps` is H(1)..H(T), weights L x T.
Tensor gated_aggregate(std::span<const Tensor> steps, const Tensor& weights);

struct FusionOutput {
  Tensor visual;      // F_v, L x d_model
  Tensor audio;       // F_a, L x d_model
  Tensor multi;       // concat(F_v, F_a), L x 2 d_model
  Tensor prediction;  // L x 2 in [-1, 1]
};

/// Two-layer tanh MLP over concat(F_v, F_a), tanh output.
FusionOutput predict(const BoundParameters& params, const Tensor& fused_visual,
                     const Tensor& fused_audio);

struct ForwardOptions {
  /// Overrides gate weights with a fixed distribution over steps (size T),
  /// identical for every frame and both modalities.
  std::optional<std::vector<double>> forced_weights;
  /// Uses only H(k) (1-based) as F, bypassing aggregation.
  std::optional<std::size_t> select_step;
};

struct ForwardResult {
  FusionOutput fused;
  RecursionTrace trace;
  GateTrace gates;
  VATrajectory trajectory;
};

/// Throws AlignmentError when the two streams differ in length.
ForwardResult forward(const BoundParameters& params, const ModelConfig& cfg,
                      const FeatureSequence& audio,
                      const FeatureSequence& visual,
                      const ForwardOptions& options = {});

VATrajectory to_trajectory(const Tensor& prediction);

}  // namespace tagf::fusion
