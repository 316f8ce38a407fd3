// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support/oracles.hpp"
#include "tagf/error.hpp"
#include "tagf/model.hpp"

namespace tagf::fusion {
namespace {

using testing::TestRng;

ModelConfig small_config(std::size_t steps = 3) {
  ModelConfig cfg;
  cfg.d_a = 5;
  cfg.d_v = 6;
  cfg.d_model = 8;
  cfg.recursion_depth = steps;
  cfg.lstm_hidden = 4;
  cfg.mlp_hidden = 8;
  return cfg;
}

FeatureSequence random_sequence(Modality m, std::size_t length, std::size_t dim,
                                TestRng& rng, double mask_rate = 0.0) {
  FeatureSequence s(m, length, dim);
  s.values = rng.normal_vec(length * dim);
  for (auto& v : s.mask) v = rng.uniform(0, 1) < mask_rate ? 0 : 1;
  return s;
}

void fill(ParameterStore& store, const std::string& name, double value) {
  auto& e = store.at(name);
  std::fill(e.values.begin(), e.values.end(), value);
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

TEST(L2Normalize, ScalesValidFramesAndZeroesMaskedOnes) {
  FeatureSequence s(Modality::Visual, 4, 2);
  s.values = {3, 4, 1, 0, 0, 0, 7, 7};
  s.mask = {1, 1, 1, 0};
  const auto n = l2_normalize(s);
  EXPECT_DOUBLE_EQ(n.values[0], 0.6);
  EXPECT_DOUBLE_EQ(n.values[1], 0.8);
  EXPECT_EQ(n.values[2], 1.0);
  EXPECT_EQ(n.values[3], 0.0);
  EXPECT_EQ(n.values[4], 0.0);
  EXPECT_EQ(n.values[5], 0.0);
  EXPECT_EQ(n.values[6], 0.0);
  EXPECT_EQ(n.values[7], 0.0);
}

TEST(ParameterLayout, StrategiesOwnTheirGateParameters) {
  ModelConfig cfg = small_config();
  auto names = [&] {
    std::vector<std::string> out;
    for (const auto& [n, s] : parameter_layout(cfg)) out.push_back(n);
    return out;
  };
  auto has_prefix = [](const std::vector<std::string>& v, const std::string& p) {
    return std::any_of(v.begin(), v.end(), [&](const auto& n) { return n.rfind(p, 0) == 0; });
  };
  EXPECT_TRUE(has_prefix(names(), "gate.v.fwd."));
  EXPECT_TRUE(has_prefix(names(), "gate.a.fwd."));
  cfg.strategy = FusionStrategy::UniformAverage;
  EXPECT_FALSE(has_prefix(names(), "gate."));
  cfg.strategy = FusionStrategy::LastStep;
  EXPECT_FALSE(has_prefix(names(), "gate."));
  cfg.strategy = FusionStrategy::StaticGate;
  EXPECT_TRUE(has_prefix(names(), "gate.v.logits"));
  EXPECT_FALSE(has_prefix(names(), "gate.v.fwd."));
}

TEST(ParameterLayout, InitIsSeededAndFollowsLayout) {
  const ModelConfig cfg = small_config();
  const auto a = init_parameters(cfg);
  EXPECT_EQ(a, init_parameters(cfg));
  ModelConfig other = cfg;
  other.seed = 2;
  EXPECT_FALSE(a == init_parameters(other));
  const auto layout = parameter_layout(cfg);
  ASSERT_EQ(a.size(), layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    EXPECT_EQ(a.entries()[i].name, layout[i].first);
    EXPECT_EQ(a.entries()[i].shape, layout[i].second);
  }
  // Forget-gate block of the LSTM bias starts at 1, other biases at 0.
  const auto& b = a.at("gate.v.fwd.b").values;
  const std::size_t h = cfg.lstm_hidden;
  EXPECT_EQ(std::count(b.begin(), b.end(), 1.0), static_cast<long>(h));
  EXPECT_EQ(std::count(b.begin(), b.end(), 0.0), static_cast<long>(3 * h));
  for (double v : a.at("head.b1").values) EXPECT_EQ(v, 0.0);
}

TEST(ModelConfig, RejectsInvalidSettings) {
  ModelConfig cfg = small_config();
  cfg.recursion_depth = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.tcn.dilations = {1, 0};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.tcn.dilations = {1};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.d_model = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Tcn, PreservesLength) {
  const ModelConfig cfg = small_config();
  const auto store = init_parameters(cfg);
  TestRng rng(1);
  for (std::size_t len : {1u, 2u, 7u, 30u}) {
    Tape tape;
    BoundParameters p(tape, store);
    const auto out = tcn_encode(p, cfg, random_sequence(Modality::Audio, len, cfg.d_a, rng));
    EXPECT_EQ(out.shape(), (Shape{len, cfg.d_model}));
  }
}

TEST(Tcn, ReceptiveFieldMatchesPerturbationOracle) {
  ModelConfig cfg = small_config();
  cfg.tcn = {3, 3, {1, 2, 4}};
  EXPECT_EQ(cfg.tcn.receptive_field(), 15u);
  const auto store = init_parameters(cfg);
  TestRng rng(2);
  const std::size_t len = 41, hit = 20;
  auto base = random_sequence(Modality::Visual, len, cfg.d_v, rng);
  auto run = [&](const FeatureSequence& s) {
    Tape tape;
    BoundParameters p(tape, store);
    return tcn_encode(p, cfg, s).to_vector();
  };
  const auto y0 = run(base);
  for (std::size_t c = 0; c < cfg.d_v; ++c) base.row(hit)[c] += 0.5;
  const auto y1 = run(base);
  std::vector<std::size_t> changed;
  for (std::size_t l = 0; l < len; ++l) {
    for (std::size_t c = 0; c < cfg.d_model; ++c) {
      if (y0[l * cfg.d_model + c] != y1[l * cfg.d_model + c]) {
        changed.push_back(l);
        break;
      }
    }
  }
  ASSERT_EQ(changed.size(), 15u);
  EXPECT_EQ(changed.front(), hit - 7);
  EXPECT_EQ(changed.back(), hit + 7);
}

TEST(Tcn, ZeroInputWithZeroBiasGivesZeroOutput) {
  const ModelConfig cfg = small_config();
  const auto store = init_parameters(cfg);
  Tape tape;
  BoundParameters p(tape, store);
  FeatureSequence s(Modality::Audio, 9, cfg.d_a);
  for (double v : tcn_encode(p, cfg, s).values()) EXPECT_EQ(v, 0.0);
}

// Explicit-loop cross-attention: out = target + softmax(QK^T/sqrt(d), masked) V Wo + bo.
std::vector<double> naive_attention(const ParameterStore& s, const std::string& pre,
                                    const std::vector<double>& tgt,
                                    const std::vector<double>& src,
                                    const std::vector<std::uint8_t>& mask,
                                    std::size_t len, std::size_t d) {
  auto proj = [&](const std::vector<double>& x, const std::string& w) {
    const auto& W = s.at(pre + "." + w).values;
    std::vector<double> out(len * d, 0.0);
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) out[l * d + j] += x[l * d + k] * W[k * d + j];
    return out;
  };
  const auto q = proj(tgt, "Wq"), k = proj(src, "Wk"), v = proj(src, "Wv");
  std::vector<double> ctx(len * d, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    std::vector<double> logit(len, -INFINITY);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < len; ++j) {
      if (!mask[j]) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
      logit[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, logit[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) z += mask[j] ? std::exp(logit[j] - mx) : 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      if (!mask[j]) continue;
      const double a = std::exp(logit[j] - mx) / z;
      for (std::size_t c = 0; c < d; ++c) ctx[i * d + c] += a * v[j * d + c];
    }
  }
  auto out = proj(ctx, "Wo");
  const auto& bo = s.at(pre + ".bo").values;
  for (std::size_t l = 0; l < len; ++l)
    for (std::size_t c = 0; c < d; ++c) out[l * d + c] += tgt[l * d + c] + bo[c];
  return out;
}

TEST(CrossAttention, MatchesLoopOracleWithMask) {
  const ModelConfig cfg = small_config();
  auto store = init_parameters(cfg);
  TestRng rng(3);
  const std::size_t len = 7, d = cfg.d_model;
  store.at("attn.v.bo").values = rng.uniform_vec(d, -0.5, 0.5);
  const auto tgt = rng.normal_vec(len * d), src = rng.normal_vec(len * d);
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1, 1};
  Tape tape;
  BoundParameters p(tape, store);
  const auto r = cross_attention(AttentionParams::bind(p, "attn.v"),
                                 tape.constant({len, d}, tgt), tape.constant({len, d}, src), mask);
  const auto expect = naive_attention(store, "attn.v", tgt, src, mask, len, d);
  const auto got = r.output.to_vector();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);
  EXPECT_FALSE(r.skipped);
  for (std::size_t i = 0; i < len; ++i) {
    EXPECT_EQ(r.weights.at(i, 1), 0.0);
    EXPECT_EQ(r.weights.at(i, 4), 0.0);
  }
}

TEST(CrossAttention, RowsSumToOne) {
  const ModelConfig cfg = small_config();
  const auto store = init_parameters(cfg);
  TestRng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t len = 1 + rng.below(8), d = cfg.d_model;
    Tape tape;
    BoundParameters p(tape, store);
    const auto r = cross_attention(AttentionParams::bind(p, "attn.a"),
                                   tape.constant({len, d}, rng.normal_vec(len * d)),
                                   tape.constant({len, d}, rng.normal_vec(len * d)),
                                   std::vector<std::uint8_t>(len, 1));
    for (std::size_t i = 0; i < len; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) total += r.weights.at(i, j);
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(CrossAttention, SingleValidSourceFrameIsOneHot) {
  const ModelConfig cfg = small_config();
  const auto store = init_parameters(cfg);
  TestRng rng(5);
  const std::size_t len = 5, d = cfg.d_model, only = 3;
  std::vector<std::uint8_t> mask(len, 0);
  mask[only] = 1;
  const auto tgt = rng.normal_vec(len * d), src = rng.normal_vec(len * d);
  Tape tape;
  BoundParameters p(tape, store);
  const auto r = cross_attention(AttentionParams::bind(p, "attn.v"),
                                 tape.constant({len, d}, tgt), tape.constant({len, d}, src), mask);
  // Oracle: target + (src[only] Wv) Wo + bo for every row.
  const auto& wv = store.at("attn.v.Wv").values;
  const auto& wo = store.at("attn.v.Wo").values;
  std::vector<double> val(d, 0.0), upd(d, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = 0; k < d; ++k) val[j] += src[only * d + k] * wv[k * d + j];
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = 0; k < d; ++k) upd[j] += val[k] * wo[k * d + j];
  for (std::size_t i = 0; i < len; ++i) {
    EXPECT_EQ(r.weights.at(i, only), 1.0);
    for (std::size_t c = 0; c < d; ++c) {
      EXPECT_NEAR(r.output.at(i, c), tgt[i * d + c] + upd[c], 1e-12);
    }
  }
}

TEST(CrossAttention, EqualLogitsAverageValuesUniformly) {
  const ModelConfig cfg = small_config();
  auto store = init_parameters(cfg);
  fill(store, "attn.v.Wk", 0.0);
  TestRng rng(6);
  const std::size_t len = 4, d = cfg.d_model;
  Tape tape;
  BoundParameters p(tape, store);
  const auto r = cross_attention(AttentionParams::bind(p, "attn.v"),
                                 tape.constant({len, d}, rng.normal_vec(len * d)),
                                 tape.constant({len, d}, rng.normal_vec(len * d)),
                                 std::vector<std::uint8_t>(len, 1));
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j) EXPECT_NEAR(r.weights.at(i, j), 0.25, 1e-15);
}

TEST(CrossAttention, AllSourcesMaskedReturnsTargetUnchanged) {
  const ModelConfig cfg = small_config();
  const auto store = init_parameters(cfg);
  TestRng rng(7);
  const std::size_t len = 3, d = cfg.d_model;
  const auto tgt = rng.normal_vec(len * d);
  Tape tape;
  BoundParameters p(tape, store);
  const auto r = cross_attention(AttentionParams::bind(p, "attn.v"),
                                 tape.constant({len, d}, tgt),
                                 tape.constant({len, d}, rng.normal_vec(len * d)),
                                 std::vector<std::uint8_t>(len, 0));
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(r.output.to_vector(), tgt);
}

struct Encoded {
  std::vector<double> audio, visual;
  std::vector<std::uint8_t> amask, vmask;
};

Encoded random_encoded(std::size_t len, std::size_t d, TestRng& rng) {
  Encoded e{rng.normal_vec(len * d), rng.normal_vec(len * d),
            std::vector<std::uint8_t>(len, 1), std::vector<std::uint8_t>(len, 1)};
  return e;
}

TEST(RecursiveFuse, TraceHasDepthPlusOneStepsStartingAtInput) {
  TestRng rng(8);
  for (std::size_t steps : {1u, 2u, 4u}) {
    const ModelConfig cfg = small_config(steps);
    const auto store = init_parameters(cfg);
    const auto e = random_encoded(5, cfg.d_model, rng);
    Tape tape;
    BoundParameters p(tape, store);
    const auto tr = recursive_fuse(p, cfg, tape.constant({5, 8}, e.audio), e.amask,
                                   tape.constant({5, 8}, e.visual), e.vmask);
    ASSERT_EQ(tr.visual.size(), steps + 1);
    ASSERT_EQ(tr.audio.size(), steps + 1);
    EXPECT_EQ(tr.audio[0].to_vector(), e.audio);
    EXPECT_EQ(tr.visual[0].to_vector(), e.visual);
  }
}

TEST(RecursiveFuse, BothModalitiesReadThePreviousStep) {
  const ModelConfig cfg = small_config(2);
  const auto store = init_parameters(cfg);
  TestRng rng(9);
  const auto e = random_encoded(6, cfg.d_model, rng);
  Tape tape;
  BoundParameters p(tape, store);
  const auto tr = recursive_fuse(p, cfg, tape.constant({6, 8}, e.audio), e.amask,
                                 tape.constant({6, 8}, e.visual), e.vmask);
  const auto av = AttentionParams::bind(p, "attn.v");
  const auto aa = AttentionParams::bind(p, "attn.a");
  for (std::size_t t = 1; t <= 2; ++t) {
    const auto v = cross_attention(av, tr.visual[t - 1], tr.audio[t - 1], e.amask).output;
    const auto a = cross_attention(aa, tr.audio[t - 1], tr.visual[t - 1], e.vmask).output;
    EXPECT_TRUE(bit_equal(v.values(), tr.visual[t].values())) << "visual step " << t;
    EXPECT_TRUE(bit_equal(a.values(), tr.audio[t].values())) << "audio step " << t;
  }
}

TEST(RecursiveFuse, ZeroOutputProjectionIsAFixedPoint) {
  const ModelConfig cfg = small_config(4);
  auto store = init_parameters(cfg);
  for (const char* n : {"attn.v.Wo", "attn.a.Wo", "attn.v.bo", "attn.a.bo"}) fill(store, n, 0.0);
  TestRng rng(10);
  const auto e = random_encoded(5, cfg.d_model, rng);
  Tape tape;
  BoundParameters p(tape, store);
  const auto tr = recursive_fuse(p, cfg, tape.constant({5, 8}, e.audio), e.amask,
                                 tape.constant({5, 8}, e.visual), e.vmask);
  for (std::size_t t = 1; t <= 4; ++t) {
    EXPECT_EQ(tr.visual[t].to_vector(), e.visual);
    EXPECT_EQ(tr.audio[t].to_vector(), e.audio);
  }
}

RecursionTrace random_trace(Tape& tape, std::size_t steps, std::size_t len,
                            std::size_t d, TestRng& rng) {
  RecursionTrace tr;
  for (std::size_t t = 0; t <= steps; ++t) {
    tr.visual.push_back(tape.constant({len, d}, rng.normal_vec(len * d)));
    tr.audio.push_back(tape.constant({len, d}, rng.normal_vec(len * d)));
  }
  return tr;
}

TEST(TemporalGate, WeightsAreDistributionsOnRandomInputs) {
  TestRng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig cfg = small_config(1 + rng.below(5));
    cfg.seed = 100 + trial;
    const auto store = init_parameters(cfg);
    const std::size_t len = 1 + rng.below(8);
    Tape tape;
    BoundParameters p(tape, store);
    const auto tr = random_trace(tape, cfg.recursion_depth, len, cfg.d_model, rng);
    const auto g = temporal_gate(p, cfg, tr);
    for (const auto* m : {&g.visual, &g.audio}) {
      ASSERT_EQ(m->weights.shape(), (Shape{len, cfg.recursion_depth}));
      ASSERT_EQ(m->gate_vectors.size(), cfg.recursion_depth);
      for (std::size_t l = 0; l < len; ++l) {
        double total = 0.0;
        for (std::size_t t = 0; t < cfg.recursion_depth; ++t) {
          EXPECT_GE(m->alpha(t, l), 0.0);
          total += m->alpha(t, l);
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    }
  }
}

TEST(TemporalGate, SingleStepGetsWeightOne) {
  const ModelConfig cfg = small_config(1);
  const auto store = init_parameters(cfg);
  TestRng rng(12);
  Tape tape;
  BoundParameters p(tape, store);
  const auto g = temporal_gate(p, cfg, random_trace(tape, 1, 6, cfg.d_model, rng));
  for (double v : g.visual.weights.values()) EXPECT_EQ(v, 1.0);
  for (double v : g.audio.weights.values()) EXPECT_EQ(v, 1.0);
}

TEST(TemporalGate, ZeroScoreVectorGivesUniformWeights) {
  const ModelConfig cfg = small_config(4);
  auto store = init_parameters(cfg);
  fill(store, "gate.v.w", 0.0);
  fill(store, "gate.a.w", 0.0);
  TestRng rng(13);
  Tape tape;
  BoundParameters p(tape, store);
  const auto g = temporal_gate(p, cfg, random_trace(tape, 4, 5, cfg.d_model, rng));
  for (double v : g.visual.weights.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  for (double v : g.audio.weights.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(TemporalGate, ModalitiesUseSeparateParameters) {
  const ModelConfig cfg = small_config(3);
  const auto store = init_parameters(cfg);
  TestRng rng(14);
  Tape tape;
  BoundParameters p(tape, store);
  RecursionTrace tr = random_trace(tape, 3, 4, cfg.d_model, rng);
  tr.audio = tr.visual;
  const auto g = temporal_gate(p, cfg, tr);
  EXPECT_FALSE(bit_equal(g.visual.weights.values(), g.audio.weights.values()));
}

TEST(TemporalGate, FixedStrategies) {
  TestRng rng(15);
  ModelConfig cfg = small_config(4);
  for (auto s : {FusionStrategy::UniformAverage, FusionStrategy::LastStep,
                 FusionStrategy::StaticGate}) {
    cfg.strategy = s;
    const auto store = init_parameters(cfg);
    Tape tape;
    BoundParameters p(tape, store);
    const auto g = temporal_gate(p, cfg, random_trace(tape, 4, 3, cfg.d_model, rng));
    for (std::size_t l = 0; l < 3; ++l) {
      double total = 0.0;
      for (std::size_t t = 0; t < 4; ++t) {
        const double a = g.visual.alpha(t, l);
        total += a;
        if (s == FusionStrategy::UniformAverage) EXPECT_DOUBLE_EQ(a, 0.25);
        if (s == FusionStrategy::LastStep) EXPECT_EQ(a, t == 3 ? 1.0 : 0.0);
        EXPECT_EQ(a, g.visual.alpha(t, 0)) << "weights must not vary across frames";
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(GatedAggregate, MatchesLoopOracle) {
  TestRng rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t steps = 3, len = 4, d = 5;
    std::vector<std::vector<double>> h, alpha(steps, std::vector<double>(len));
    for (std::size_t t = 0; t < steps; ++t) h.push_back(rng.normal_vec(len * d));
    std::vector<double> w(len * steps);
    for (std::size_t l = 0; l < len; ++l) {
      double z = 0.0;
      for (std::size_t t = 0; t < steps; ++t) z += alpha[t][l] = rng.uniform(0, 1);
      for (std::size_t t = 0; t < steps; ++t) w[l * steps + t] = alpha[t][l] /= z;
    }
    Tape tape;
    std::vector<Tensor> ts;
    for (const auto& x : h) ts.push_back(tape.constant({len, d}, x));
    const auto got = gated_aggregate(ts, tape.constant({len, steps}, w)).to_vector();
    const auto expect = testing::naive_aggregate(h, alpha, len, d);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);
  }
}

TEST(GatedAggregate, OneHotSelectsAndUniformAverages) {
  TestRng rng(17);
  const std::size_t steps = 3, len = 4, d = 5;
  Tape tape;
  std::vector<Tensor> ts;
  std::vector<std::vector<double>> h;
  for (std::size_t t = 0; t < steps; ++t) {
    h.push_back(rng.normal_vec(len * d));
    ts.push_back(tape.constant({len, d}, h.back()));
  }
  for (std::size_t k = 0; k < steps; ++k) {
    std::vector<double> w(len * steps, 0.0);
    for (std::size_t l = 0; l < len; ++l) w[l * steps + k] = 1.0;
    EXPECT_EQ(gated_aggregate(ts, tape.constant({len, steps}, w)).to_vector(), h[k]);
  }
  const auto avg = gated_aggregate(ts, tape.constant({len, steps}, 1.0 / 3.0)).to_vector();
  for (std::size_t i = 0; i < avg.size(); ++i) {
    EXPECT_NEAR(avg[i], (h[0][i] + h[1][i] + h[2][i]) / 3.0, 1e-15);
  }
  EXPECT_THROW(gated_aggregate(ts, tape.constant({len, 2}, 0.5)), ShapeError);
}

TEST(Predict, ShapeRangeAndZeroWeights) {
  const ModelConfig cfg = small_config();
  auto store = init_parameters(cfg);
  TestRng rng(18);
  {
    Tape tape;
    BoundParameters p(tape, store);
    const Tensor fv = tape.constant({9, 8}, rng.normal_vec(72));
    const Tensor fa = tape.constant({9, 8}, rng.normal_vec(72));
    const auto out = predict(p, scale(fv, 20.0), scale(fa, 20.0));
    EXPECT_EQ(out.prediction.shape(), (Shape{9, 2}));
    EXPECT_EQ(out.multi.shape(), (Shape{9, 16}));
    for (double v : out.prediction.values()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
  for (const char* n : {"head.W1", "head.b1", "head.W2", "head.b2"}) fill(store, n, 0.0);
  Tape tape;
  BoundParameters p(tape, store);
  const auto out = predict(p, tape.constant({4, 8}, rng.normal_vec(32)),
                           tape.constant({4, 8}, rng.normal_vec(32)));
  for (double v : out.prediction.values()) EXPECT_EQ(v, 0.0);
}

struct Clip {
  FeatureSequence audio, visual;
};

Clip random_clip(const ModelConfig& cfg, std::size_t len, TestRng& rng, double mask_rate = 0.0) {
  return {random_sequence(Modality::Audio, len, cfg.d_a, rng),
          random_sequence(Modality::Visual, len, cfg.d_v, rng, mask_rate)};
}

TEST(Forward, IsBitDeterministic) {
  const ModelConfig cfg = small_config();
  const auto store = init_parameters(cfg);
  TestRng rng(19);
  const auto clip = random_clip(cfg, 12, rng, 0.2);
  auto run = [&] {
    Tape tape;
    BoundParameters p(tape, store);
    return forward(p, cfg, clip.audio, clip.visual).fused.prediction.to_vector();
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(bit_equal(a, b));
}

TEST(Forward, SingleFrameClipIsValid) {
  const ModelConfig cfg = small_config();
  const auto store = init_parameters(cfg);
  TestRng rng(20);
  const auto clip = random_clip(cfg, 1, rng);
  Tape tape;
  BoundParameters p(tape, store);
  const auto r = forward(p, cfg, clip.audio, clip.visual);
  EXPECT_EQ(r.trajectory.size(), 1u);
}

TEST(Forward, MisalignedStreamsAreRejected) {
  const ModelConfig cfg = small_config();
  const auto store = init_parameters(cfg);
  TestRng rng(21);
  Tape tape;
  BoundParameters p(tape, store);
  EXPECT_THROW(forward(p, cfg, random_sequence(Modality::Audio, 5, cfg.d_a, rng),
                       random_sequence(Modality::Visual, 6, cfg.d_v, rng)),
               AlignmentError);
}

TEST(Forward, OneHotForcedWeightsReproduceSingleStepModel) {
  TestRng rng(22);
  for (std::size_t steps : {1u, 2u, 3u, 5u}) {
    const ModelConfig cfg = small_config(steps);
    const auto store = init_parameters(cfg);
    const auto clip = random_clip(cfg, 7, rng, 0.3);
    for (std::size_t k = 1; k <= steps; ++k) {
      std::vector<double> onehot(steps, 0.0);
      onehot[k - 1] = 1.0;
      Tape t1, t2;
      BoundParameters p1(t1, store), p2(t2, store);
      const auto forced = forward(p1, cfg, clip.audio, clip.visual, {onehot, std::nullopt});
      const auto single = forward(p2, cfg, clip.audio, clip.visual, {std::nullopt, k});
      EXPECT_TRUE(bit_equal(forced.fused.prediction.values(), single.fused.prediction.values()))
          << "T=" << steps << " k=" << k;
    }
  }
}

TEST(Forward, MaskedFramesDoNotInfluencePredictions) {
  const ModelConfig cfg = small_config();
  const auto store = init_parameters(cfg);
  TestRng rng(23);
  auto clip = random_clip(cfg, 10, rng, 0.4);
  auto run = [&] {
    Tape tape;
    BoundParameters p(tape, store);
    return forward(p, cfg, clip.audio, clip.visual).trajectory;
  };
  const auto before = run();
  for (std::size_t l = 0; l < 10; ++l) {
    if (clip.visual.mask[l]) continue;
    for (double& v : clip.visual.row(l)) v = -v * 3.0 + 1.0;
  }
  const auto after = run();
  for (std::size_t l = 0; l < 10; ++l) {
    if (!clip.visual.mask[l]) continue;
    EXPECT_EQ(before.valence[l], after.valence[l]);
    EXPECT_EQ(before.arousal[l], after.arousal[l]);
  }
}

TEST(Forward, FramePermutationIsEquivariantWithoutTcn) {
  ModelConfig cfg = small_config();
  cfg.tcn = {0, 3, {}};
  const auto store = init_parameters(cfg);
  TestRng rng(24);
  const std::size_t len = 9;
  const auto clip = random_clip(cfg, len, rng, 0.3);
  std::vector<std::size_t> perm(len);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = len; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  Clip shuffled = clip;
  for (std::size_t l = 0; l < len; ++l) {
    std::copy_n(clip.audio.row(perm[l]).begin(), cfg.d_a, shuffled.audio.row(l).begin());
    std::copy_n(clip.visual.row(perm[l]).begin(), cfg.d_v, shuffled.visual.row(l).begin());
    shuffled.audio.mask[l] = clip.audio.mask[perm[l]];
    shuffled.visual.mask[l] = clip.visual.mask[perm[l]];
  }
  auto run = [&](const Clip& c) {
    Tape tape;
    BoundParameters p(tape, store);
    return forward(p, cfg, c.audio, c.visual).trajectory;
  };
  const auto a = run(clip), b = run(shuffled);
  for (std::size_t l = 0; l < len; ++l) {
    EXPECT_NEAR(b.valence[l], a.valence[perm[l]], 1e-12);
    EXPECT_NEAR(b.arousal[l], a.arousal[perm[l]], 1e-12);
  }
}

TEST(Forward, RecursionDepthIsIrrelevantAtTheZeroUpdateFixedPoint) {
  TestRng rng(25);
  std::vector<VATrajectory> outs;
  ModelConfig base = small_config(1);
  const auto clip = random_clip(base, 8, rng);
  for (std::size_t steps : {1u, 2u, 4u}) {
    ModelConfig cfg = small_config(steps);
    auto store = init_parameters(cfg);
    for (const char* n : {"attn.v.Wo", "attn.a.Wo", "attn.v.bo", "attn.a.bo"}) fill(store, n, 0.0);
    // Share every other parameter with the T = 1 model.
    const auto ref = init_parameters(base);
    for (auto& e : store.entries()) {
      if (ref.contains(e.name)) e.values = ref.at(e.name).values;
    }
    for (const char* n : {"attn.v.Wo", "attn.a.Wo", "attn.v.bo", "attn.a.bo"}) fill(store, n, 0.0);
    Tape tape;
    BoundParameters p(tape, store);
    const auto r = forward(p, cfg, clip.audio, clip.visual);
    for (std::size_t t = 1; t <= steps; ++t) {
      EXPECT_EQ(r.trace.visual[t].to_vector(), r.trace.visual[0].to_vector());
    }
    outs.push_back(r.trajectory);
  }
  for (std::size_t i = 1; i < outs.size(); ++i) {
    for (std::size_t l = 0; l < 8; ++l) {
      EXPECT_NEAR(outs[i].valence[l], outs[0].valence[l], 1e-12);
      EXPECT_NEAR(outs[i].arousal[l], outs[0].arousal[l], 1e-12);
    }
  }
}

TEST(Strategy, NamesRoundTrip) {
  for (auto s : {FusionStrategy::Tagf, FusionStrategy::UniformAverage, FusionStrategy::LastStep,
                 FusionStrategy::StaticGate}) {
    EXPECT_EQ(strategy_from_string(to_string(s)), s);
  }
  EXPECT_FALSE(strategy_from_string("mystery").has_value());
}

}  // namespace
}  // namespace tagf::fusion
