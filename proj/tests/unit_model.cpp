// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "distillkit/model.hpp"
#include "distillkit/ops.hpp"
#include "support/oracles.hpp"

using namespace distillkit;

namespace {

ModelConfig toy_config(std::size_t layers = 2, std::size_t d = 16,
                       std::size_t f = 32, std::size_t h = 2,
                       std::size_t channels = 8) {
  ModelConfig cfg;
  cfg.name = "toy";
  cfg.n_layers = layers;
  cfg.embed_dim = d;
  cfg.ffn_dim = f;
  cfg.n_heads = h;
  cfg.frontend.channels = channels;
  cfg.pos_conv_kernel = 8;
  cfg.pos_conv_groups = 4;
  return cfg;
}

Tensor toy_wave(std::size_t n, std::uint64_t seed) {
  RngStream s(seed);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = 0.5 * std::sin(0.01 * static_cast<double>(i)) + 0.1 * s.next_normal();
  }
  return Tensor::from_data({n}, std::move(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// frontend length law
// ---------------------------------------------------------------------------

TEST(Frontend, StrideAndMinimum) {
  ConvFrontendSpec fe;
  EXPECT_EQ(fe.total_stride(), 320u);
  EXPECT_EQ(fe.min_input(), 400u);
  EXPECT_EQ(fe.output_length(400), 1u);
  EXPECT_EQ(fe.output_length(16000), 49u);
  EXPECT_THROW(fe.output_length(399), ContractError);
}

TEST(Frontend, PerLayerChainForOneSecond) {
  ConvFrontendSpec fe;
  std::vector<std::size_t> lens = fe.per_layer_lengths(16000);
  std::vector<std::size_t> expect = {3199, 1599, 799, 399, 199, 99, 49};
  EXPECT_EQ(lens, expect);
}

TEST(Frontend, LengthLawMatchesSlidingWindow) {
  ConvFrontendSpec fe;
  RngStream s(77);
  for (int i = 0; i < 50; ++i) {
    std::size_t n = 400 + s.next_below(39600);
    std::size_t expect = n;
    for (std::size_t l = 0; l < ConvFrontendSpec::kKernels.size(); ++l) {
      expect = (expect - ConvFrontendSpec::kKernels[l]) /
                   ConvFrontendSpec::kStrides[l] +
               1;
    }
    EXPECT_EQ(fe.output_length(n), expect) << "n=" << n;
  }
}

TEST(Frontend, ActualConvCountsObeyLaw) {
  ModelConfig cfg = toy_config(1, 8, 16, 2, 4);
  Encoder enc(cfg, 5);
  for (std::size_t n : {400u, 1280u, 4000u, 16000u}) {
    Tensor frames = enc.frontend_frames(toy_wave(n, n));
    EXPECT_EQ(frames.dim(0), cfg.frontend.output_length(n)) << "n=" << n;
    EXPECT_EQ(frames.dim(1), cfg.frontend.channels);
  }
}

// ---------------------------------------------------------------------------
// config and parameters
// ---------------------------------------------------------------------------

TEST(ModelConfig, Validation) {
  ModelConfig cfg = toy_config();
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.head_dim(), 8u);
  cfg.n_heads = 3;  // does not divide 16
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.embed_dim = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.pos_conv_groups = 3;  // does not divide embed dim
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Params, CountFormulaMatchesAllocatedTensors) {
  for (auto cfg : {toy_config(2, 16, 32, 2, 8), toy_config(3, 24, 96, 4, 6)}) {
    Encoder enc(cfg, 1);
    EXPECT_EQ(count_params(cfg), enc.parameter_count());
    std::size_t by_shapes = 0;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
      by_shapes += shape_numel(shape);
    }
    EXPECT_EQ(by_shapes, count_params(cfg));
  }
}

TEST(Params, PresetsLandNearReference) {
  ASSERT_EQ(model_presets().size(), 8u);
  for (const auto& [name, entry] : model_presets()) {
    double millions = static_cast<double>(count_params(entry.config)) / 1e6;
    EXPECT_NEAR(millions, entry.reference_million_params,
                0.015 * entry.reference_million_params)
        << name;
  }
  EXPECT_EQ(count_params(find_preset("hubert-base").config), 94370816u);
  EXPECT_THROW(find_preset("no-such-model"), ConfigError);
}

TEST(Params, InitIsSeededAndShaped) {
  ModelConfig cfg = toy_config();
  Encoder a(cfg, 42), b(cfg, 42), c(cfg, 43);
  bool any_diff = false;
  for (const auto& p : a.core_params()) {
    Tensor pb = b.param(p.name);
    Tensor pc = c.param(p.name);
    auto va = p.tensor.values();
    ASSERT_TRUE(std::equal(va.begin(), va.end(), pb.values().begin()))
        << p.name;
    if (!std::equal(va.begin(), va.end(), pc.values().begin())) {
      any_diff = true;
    }
    EXPECT_TRUE(p.tensor.requires_grad());
  }
  EXPECT_TRUE(any_diff);
  // gains start at one, biases at zero
  Tensor gain = a.param("block0.norm1.gain");
  Tensor bias = a.param("block0.norm1.bias");
  for (double v : gain.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  for (double v : bias.values()) EXPECT_DOUBLE_EQ(v, 0.0);
  EXPECT_THROW(a.param("block9.norm1.gain"), ContractError);
}

TEST(Params, WeightScaleTracksFanIn) {
  ModelConfig cfg = toy_config(2, 64, 128, 4, 8);
  Encoder enc(cfg, 9);
  Tensor w = enc.param("block0.ffn.w1");  // (64, 128): fan in 64
  double sq = 0.0;
  for (double v : w.values()) sq += v * v;
  double std = std::sqrt(sq / static_cast<double>(w.numel()));
  EXPECT_NEAR(std, 1.0 / 8.0, 0.02);
}

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

TEST(Forward, ShapesAndDeterminism) {
  ModelConfig cfg = toy_config();
  Encoder a(cfg, 11), b(cfg, 11);
  Tensor wave = toy_wave(4000, 1);
  std::vector<Tensor> sa = a.hidden_states(wave);
  std::vector<Tensor> sb = b.hidden_states(wave);
  ASSERT_EQ(sa.size(), cfg.n_layers);
  std::size_t frames = cfg.frontend.output_length(4000);
  for (std::size_t l = 0; l < sa.size(); ++l) {
    EXPECT_EQ(sa[l].shape(), (Shape{frames, cfg.embed_dim}));
    auto va = sa[l].values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), sb[l].values().begin()));
  }
  Tensor fin = a.final_output(sa.back());
  EXPECT_EQ(fin.shape(), (Shape{frames, cfg.embed_dim}));
  // final norm changes values, so it cannot be the raw block output
  EXPECT_NE(fin.at({0, 0}), sa.back().at({0, 0}));
}

TEST(Forward, GradFlowsToEveryCoreParam) {
  ModelConfig cfg = toy_config();
  Encoder enc(cfg, 13);
  Tensor wave = toy_wave(1600, 2);
  std::vector<Tensor> states = enc.hidden_states(wave);
  Tensor loss = mean_all(enc.final_output(states.back()));
  loss.backward();
  for (const auto& p : enc.core_params()) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    double asum = 0.0;
    for (double g : p.tensor.grad()) asum += std::fabs(g);
    EXPECT_GT(asum, 0.0) << p.name << " got a zero gradient";
  }
}

TEST(Forward, FrozenFrontendBuildsNoFrontendGraph) {
  ModelConfig cfg = toy_config();
  Encoder enc(cfg, 13);
  enc.set_frontend_requires_grad(false);
  Tensor wave = toy_wave(1600, 2);
  std::vector<Tensor> states = enc.hidden_states(wave);
  mean_all(states.back()).backward();
  EXPECT_FALSE(enc.param("frontend.conv0.weight").has_grad());
  EXPECT_TRUE(enc.param("post.proj.weight").has_grad());
}

TEST(Forward, PositionalConvPreservesFrameCount) {
  for (std::size_t kernel : {7u, 8u}) {  // odd and even kernels
    ModelConfig cfg = toy_config();
    cfg.pos_conv_kernel = kernel;
    Encoder enc(cfg, 17);
    Tensor wave = toy_wave(2000, 3);
    std::vector<Tensor> states = enc.hidden_states(wave);
    EXPECT_EQ(states[0].dim(0), cfg.frontend.output_length(2000));
  }
}

// ---------------------------------------------------------------------------
// batching equals per-item processing
// ---------------------------------------------------------------------------

TEST(Forward, PaddingIsBitNeutral) {
  ModelConfig cfg = toy_config();
  Encoder enc(cfg, 19);
  std::vector<std::size_t> lengths = {700, 2500, 1200};
  std::size_t smax = 2500;
  std::vector<Tensor> waves;
  std::vector<double> padded(lengths.size() * smax, 0.0);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    Tensor w = toy_wave(lengths[i], 100 + i);
    waves.push_back(w);
    std::copy(w.values().begin(), w.values().end(),
              padded.begin() + i * smax);
  }
  Tensor batch = Tensor::from_data({lengths.size(), smax}, std::move(padded));
  BatchedFrames frames = frontend_forward(enc, batch, lengths);
  std::vector<Tensor> batched = encoder_forward(enc, frames);
  ASSERT_EQ(batched.size(), cfg.n_layers);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    std::vector<Tensor> solo = enc.hidden_states(waves[i]);
    std::size_t f = cfg.frontend.output_length(lengths[i]);
    ASSERT_EQ(frames.frame_lengths[i], f);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      Tensor item = slice_item(batched[l], i, f);
      auto a = item.values();
      auto b = solo[l].values();
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t k = 0; k < a.size(); ++k) {
        ASSERT_EQ(a[k], b[k]) << "item " << i << " layer " << l;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// aux attachments
// ---------------------------------------------------------------------------

TEST(Aux, AttachApplyAndCount) {
  ModelConfig cfg = toy_config();
  Encoder enc(cfg, 23);
  EXPECT_EQ(enc.all_params().size(), enc.core_params().size());
  enc.attach_heads(3, 24, RngStream(1).split("heads"));
  enc.attach_projections(2, 24, RngStream(1).split("projections"));
  EXPECT_EQ(enc.head_count(), 3u);
  EXPECT_EQ(enc.projection_count(), 2u);
  EXPECT_EQ(enc.all_params().size(), enc.core_params().size() + 10);
  Tensor x = Tensor::full({5, cfg.embed_dim}, 0.25);
  EXPECT_EQ(enc.apply_head(0, x).shape(), (Shape{5, 24}));
  EXPECT_EQ(enc.apply_projection(1, x).shape(), (Shape{5, 24}));
  EXPECT_THROW(enc.apply_head(3, x), ContractError);
}

TEST(Aux, StripKeepsFeaturesBitIdentical) {
  ModelConfig cfg = toy_config();
  Tensor wave = toy_wave(2000, 7);
  for (int variant = 0; variant < 2; ++variant) {
    Encoder enc(cfg, 29);
    if (variant == 0) {
      enc.attach_heads(2, 24, RngStream(2).split("heads"));
    } else {
      enc.attach_projections(2, 24, RngStream(2).split("projections"));
    }
    std::vector<Tensor> before = enc.hidden_states(wave);
    Encoder bare = enc.strip_aux();
    EXPECT_EQ(bare.head_count(), 0u);
    EXPECT_EQ(bare.projection_count(), 0u);
    EXPECT_EQ(bare.all_params().size(), bare.core_params().size());
    std::vector<Tensor> after = bare.hidden_states(wave);
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t l = 0; l < before.size(); ++l) {
      auto a = before[l].values();
      auto b = after[l].values();
      for (std::size_t k = 0; k < a.size(); ++k) ASSERT_EQ(a[k], b[k]);
    }
    // the stripped copy shares the core tensors, not clones
    EXPECT_EQ(bare.param("post.proj.weight").values().data(),
              enc.param("post.proj.weight").values().data());
  }
}
