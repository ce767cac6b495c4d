// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "distillkit/ops.hpp"
#include "distillkit/rng.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

// Raw-waveform conv stack: 7 layers, uniform width, group norm after the
// first layer only, gelu activations, no conv biases. Kernels and strides
// are fixed; together they downsample 16 kHz input by 320x (~50 fps).
// `channels` defaults to the standard 512 and is only narrowed for tiny
// test models; it is identical for every model within a run.
struct ConvFrontendSpec {
  std::size_t channels = 512;

  static constexpr std::size_t kLayers = 7;
  static constexpr std::array<std::size_t, kLayers> kKernels{10, 3, 3, 3, 3,
                                                             2, 2};
  static constexpr std::array<std::size_t, kLayers> kStrides{5, 2, 2, 2, 2,
                                                             2, 2};

  bool operator==(const ConvFrontendSpec&) const = default;

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (std::size_t v : kStrides) s *= v;
    return s;
  }

  // Smallest input that yields one frame (the receptive field).
  std::size_t min_input() const {
    std::size_t need = 1;
    for (std::size_t i = kLayers; i-- > 0;) {
      need = kKernels[i] + kStrides[i] * (need - 1);
    }
    return need;
  }

  // Layer-by-layer length law: floor((n - k) / s) + 1 per layer.
  std::size_t output_length(std::size_t samples) const {
    if (samples < min_input()) {
      throw ContractError("frontend: input of " + std::to_string(samples) +
                          " samples is shorter than the minimum of " +
                          std::to_string(min_input()));
    }
    std::size_t n = samples;
    for (std::size_t i = 0; i < kLayers; ++i) {
      n = (n - kKernels[i]) / kStrides[i] + 1;
    }
    return n;
  }

  std::vector<std::size_t> per_layer_lengths(std::size_t samples) const {
    if (samples < min_input()) {
      throw ContractError("frontend: input of " + std::to_string(samples) +
                          " samples is shorter than the minimum of " +
                          std::to_string(min_input()));
    }
    std::vector<std::size_t> out;
    std::size_t n = samples;
    for (std::size_t i = 0; i < kLayers; ++i) {
      n = (n - kKernels[i]) / kStrides[i] + 1;
      out.push_back(n);
    }
    return out;
  }
};

struct ModelConfig {
  std::string name;
  std::size_t n_layers = 0;
  std::size_t embed_dim = 0;
  std::size_t ffn_dim = 0;
  std::size_t n_heads = 0;
  ConvFrontendSpec frontend{};
  std::size_t pos_conv_kernel = 128;
  std::size_t pos_conv_groups = 16;
  double norm_eps = 1e-5;

  void validate() const {
    if (n_layers == 0 || embed_dim == 0 || ffn_dim == 0 || n_heads == 0) {
      throw ConfigError("model '" + name + "': all dims must be positive");
    }
    if (embed_dim % n_heads != 0) {
      throw ConfigError("model '" + name + "': embed_dim " +
                        std::to_string(embed_dim) + " not divisible by " +
                        std::to_string(n_heads) + " heads");
    }
    if (embed_dim % pos_conv_groups != 0) {
      throw ConfigError("model '" + name + "': embed_dim " +
                        std::to_string(embed_dim) + " not divisible by " +
                        std::to_string(pos_conv_groups) +
                        " positional conv groups");
    }
    if (frontend.channels == 0) {
      throw ConfigError("model '" + name + "': frontend channels must be > 0");
    }
  }

  std::size_t head_dim() const { return embed_dim / n_heads; }
};

// Published size (in millions of parameters) for a known configuration.
struct PresetEntry {
  ModelConfig config;
  double reference_million_params;
};

inline const std::vector<std::pair<std::string, PresetEntry>>& model_presets() {
  static const std::vector<std::pair<std::string, PresetEntry>> kPresets = [] {
    auto mk = [](std::string name, std::size_t layers, std::size_t d,
                 std::size_t f, std::size_t h) {
      ModelConfig c;
      c.name = std::move(name);
      c.n_layers = layers;
      c.embed_dim = d;
      c.ffn_dim = f;
      c.n_heads = h;
      return c;
    };
    std::vector<std::pair<std::string, PresetEntry>> v;
    v.push_back({"hubert-base", {mk("hubert-base", 12, 768, 3072, 12), 94.68}});
    v.push_back(
        {"hubert-large", {mk("hubert-large", 24, 1024, 4096, 16), 316.61}});
    v.push_back(
        {"distilhubert", {mk("distilhubert", 2, 768, 3072, 12), 23.49}});
    v.push_back({"12l-half", {mk("12l-half", 12, 384, 1536, 6), 26.87}});
    v.push_back({"12l-fourth", {mk("12l-fourth", 12, 192, 768, 3), 9.93}});
    v.push_back({"3l-one", {mk("3l-one", 3, 768, 3072, 12), 30.58}});
    v.push_back({"3l-half", {mk("3l-half", 3, 384, 1536, 6), 10.90}});
    v.push_back({"6l-half", {mk("6l-half", 6, 384, 1536, 6), 16.23}});
    return v;
  }();
  return kPresets;
}

inline const PresetEntry& find_preset(const std::string& name) {
  for (const auto& [key, entry] : model_presets()) {
    if (key == name) return entry;
  }
  throw ConfigError("unknown model preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// parameter enumeration (single source of truth for build and counting)
// ---------------------------------------------------------------------------

inline std::vector<std::pair<std::string, Shape>> parameter_shapes(
    const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t c = cfg.frontend.channels;
  const std::size_t d = cfg.embed_dim;
  const std::size_t f = cfg.ffn_dim;
  for (std::size_t i = 0; i < ConvFrontendSpec::kLayers; ++i) {
    std::size_t cin = i == 0 ? 1 : c;
    out.push_back({"frontend.conv" + std::to_string(i) + ".weight",
                   {c, cin, ConvFrontendSpec::kKernels[i]}});
  }
  out.push_back({"frontend.norm.gain", {c}});
  out.push_back({"frontend.norm.bias", {c}});
  out.push_back({"post.norm.gain", {c}});
  out.push_back({"post.norm.bias", {c}});
  out.push_back({"post.proj.weight", {c, d}});
  out.push_back({"post.proj.bias", {d}});
  out.push_back(
      {"pos_conv.weight", {d, d / cfg.pos_conv_groups, cfg.pos_conv_kernel}});
  out.push_back({"pos_conv.bias", {d}});
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    std::string p = "block" + std::to_string(i) + ".";
    out.push_back({p + "norm1.gain", {d}});
    out.push_back({p + "norm1.bias", {d}});
    for (const char* part : {"q", "k", "v", "out"}) {
      out.push_back({p + "attn." + part + ".weight", {d, d}});
      out.push_back({p + "attn." + part + ".bias", {d}});
    }
    out.push_back({p + "norm2.gain", {d}});
    out.push_back({p + "norm2.bias", {d}});
    out.push_back({p + "ffn.w1", {d, f}});
    out.push_back({p + "ffn.b1", {f}});
    out.push_back({p + "ffn.w2", {f, d}});
    out.push_back({p + "ffn.b2", {d}});
  }
  out.push_back({"final_norm.gain", {d}});
  out.push_back({"final_norm.bias", {d}});
  return out;
}

// Core parameter count. Auxiliary distillation attachments (prediction
// heads, student-side projections) are excluded: they are removed before
// any evaluation, so published sizes never include them.
inline std::size_t count_params(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    total += shape_numel(shape);
  }
  return total;
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

namespace detail {

inline double fan_in_of(const std::string& name, const Shape& shape) {
  if (shape.size() == 3) {
    // conv weight (Cout, Cin/g, K)
    return static_cast<double>(shape[1] * shape[2]);
  }
  if (shape.size() == 2) {
    // affine weight (in, out)
    return static_cast<double>(shape[0]);
  }
  (void)name;
  return 1.0;
}

inline bool is_norm_gain(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
}

inline bool is_bias(const std::string& name) {
  if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0)
    return true;
  if (name.size() >= 3 && name.compare(name.size() - 3, 3, ".b1") == 0)
    return true;
  if (name.size() >= 3 && name.compare(name.size() - 3, 3, ".b2") == 0)
    return true;
  return false;
}

// Weights draw from a per-parameter stream keyed by name, so the values
// of one tensor never depend on how many tensors were built before it.
inline Tensor init_param(const std::string& name, const Shape& shape,
                         const RngStream& model_stream) {
  std::size_t n = shape_numel(shape);
  std::vector<double> vals(n);
  if (is_norm_gain(name)) {
    std::fill(vals.begin(), vals.end(), 1.0);
  } else if (is_bias(name)) {
    std::fill(vals.begin(), vals.end(), 0.0);
  } else {
    RngStream s = model_stream.split(name);
    double std_dev = 1.0 / std::sqrt(fan_in_of(name, shape));
    for (double& v : vals) v = std_dev * s.next_normal();
  }
  Tensor t = Tensor::from_data(shape, std::move(vals));
  t.set_requires_grad(true);
  return t;
}

}  // namespace detail

// Affine attachment that maps one width to another; used for prediction
// heads and layer-to-layer projections. Removed by strip_aux.
struct AuxAffine {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)
};

// Transformer speech encoder over a conv frontend. Pre-norm blocks with
// learned biases everywhere; positional conv output passes gelu and adds
// residually before the first block. All forward passes are per item;
// batched entry points slice, run, and re-stack so that padding can
// never leak into valid frames.
class Encoder {
 public:
  Encoder(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    RngStream model_stream = RngStream(seed).split("model");
    for (const auto& [name, shape] : parameter_shapes(cfg_)) {
      params_.push_back({name, detail::init_param(name, shape, model_stream)});
      index_[name] = params_.size() - 1;
    }
  }

  const ModelConfig& config() const { return cfg_; }

  // --- parameters ---

  std::vector<NamedParam>& core_params() { return params_; }
  const std::vector<NamedParam>& core_params() const { return params_; }

  Tensor param(const std::string& name) const {
    auto it = index_.find(name);
    if (it != index_.end()) return params_[it->second].tensor;
    for (const auto& p : all_params()) {
      if (p.name == name) return p.tensor;
    }
    throw ContractError("encoder has no parameter '" + name + "'");
  }

  // Core plus auxiliary parameters, in checkpoint order.
  std::vector<NamedParam> all_params() const {
    std::vector<NamedParam> out = params_;
    for (std::size_t i = 0; i < heads_.size(); ++i) {
      out.push_back({"head" + std::to_string(i) + ".weight", heads_[i].weight});
      out.push_back({"head" + std::to_string(i) + ".bias", heads_[i].bias});
    }
    for (std::size_t i = 0; i < projections_.size(); ++i) {
      out.push_back(
          {"proj" + std::to_string(i) + ".weight", projections_[i].weight});
      out.push_back(
          {"proj" + std::to_string(i) + ".bias", projections_[i].bias});
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : all_params()) n += p.tensor.numel();
    return n;
  }

  void set_requires_grad(bool rg) {
    for (auto& p : params_) p.tensor.set_requires_grad(rg);
    for (auto& h : heads_) {
      h.weight.set_requires_grad(rg);
      h.bias.set_requires_grad(rg);
    }
    for (auto& pr : projections_) {
      pr.weight.set_requires_grad(rg);
      pr.bias.set_requires_grad(rg);
    }
  }

  void set_frontend_requires_grad(bool rg) {
    for (auto& p : params_) {
      if (p.name.rfind("frontend.", 0) == 0) p.tensor.set_requires_grad(rg);
    }
  }

  std::vector<NamedParam> trainable_params() const {
    std::vector<NamedParam> out;
    for (const auto& p : all_params()) {
      if (p.tensor.requires_grad()) out.push_back(p);
    }
    return out;
  }

  // --- auxiliary attachments ---

  void attach_heads(std::size_t count, std::size_t target_dim,
                    const RngStream& stream) {
    heads_.clear();
    for (std::size_t i = 0; i < count; ++i) {
      heads_.push_back(make_aux("head" + std::to_string(i), target_dim,
                                stream));
    }
  }

  void attach_projections(std::size_t count, std::size_t target_dim,
                          const RngStream& stream) {
    projections_.clear();
    for (std::size_t i = 0; i < count; ++i) {
      projections_.push_back(
          make_aux("proj" + std::to_string(i), target_dim, stream));
    }
  }

  std::size_t head_count() const { return heads_.size(); }
  std::size_t projection_count() const { return projections_.size(); }

  Tensor apply_head(std::size_t i, const Tensor& x) const {
    if (i >= heads_.size()) throw ContractError("apply_head: index out of range");
    return linear(x, heads_[i].weight, heads_[i].bias);
  }

  Tensor apply_projection(std::size_t i, const Tensor& x) const {
    if (i >= projections_.size()) {
      throw ContractError("apply_projection: index out of range");
    }
    return linear(x, projections_[i].weight, projections_[i].bias);
  }

  // Returns a copy without heads or projections. Core parameters are
  // shared, so hidden states are bit-identical before and after; calling
  // it twice is a no-op.
  Encoder strip_aux() const {
    Encoder copy = *this;
    copy.heads_.clear();
    copy.projections_.clear();
    return copy;
  }

  // --- forward (per item) ---

  // wave: rank-1 (samples) -> frames (F, channels)
  Tensor frontend_frames(const Tensor& wave) const {
    if (wave.rank() != 1) throw ShapeError("frontend: wave must be rank 1");
    std::size_t samples = wave.dim(0);
    cfg_.frontend.output_length(samples);  // validates the minimum
    Tensor x = reshape(wave, {1, 1, samples});
    for (std::size_t i = 0; i < ConvFrontendSpec::kLayers; ++i) {
      x = conv1d(x, param("frontend.conv" + std::to_string(i) + ".weight"),
                 ConvFrontendSpec::kStrides[i], 1);
      if (i == 0) {
        // one group per channel, stats over time
        Tensor flat = reshape(x, {x.dim(1), x.dim(2)});
        flat = group_norm(flat, cfg_.frontend.channels,
                          param("frontend.norm.gain"),
                          param("frontend.norm.bias"), cfg_.norm_eps);
        x = reshape(flat, {1, flat.dim(0), flat.dim(1)});
      }
      x = gelu(x);
    }
    return transpose2d(reshape(x, {x.dim(1), x.dim(2)}));
  }

  // frames (F, channels) -> per-block hidden states, each (F, embed_dim)
  std::vector<Tensor> states_from_frames(const Tensor& frames) const {
    if (frames.rank() != 2 || frames.dim(1) != cfg_.frontend.channels) {
      throw ShapeError("encoder: frames must be (F, " +
                       std::to_string(cfg_.frontend.channels) + ")");
    }
    Tensor x = layer_norm(frames, param("post.norm.gain"),
                          param("post.norm.bias"), cfg_.norm_eps);
    x = linear(x, param("post.proj.weight"), param("post.proj.bias"));
    x = add(x, positional_conv(x));
    std::vector<Tensor> states;
    states.reserve(cfg_.n_layers);
    for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
      x = block_forward(i, x);
      states.push_back(x);
    }
    return states;
  }

  std::vector<Tensor> hidden_states(const Tensor& wave) const {
    return states_from_frames(frontend_frames(wave));
  }

  // Final layer norm over the last block's output; this is the encoder's
  // output feature map, distinct from the per-block distillation taps.
  Tensor final_output(const Tensor& last_state) const {
    return layer_norm(last_state, param("final_norm.gain"),
                      param("final_norm.bias"), cfg_.norm_eps);
  }

 private:
  AuxAffine make_aux(const std::string& name, std::size_t target_dim,
                     const RngStream& stream) {
    Shape wshape{cfg_.embed_dim, target_dim};
    AuxAffine a;
    a.weight = detail::init_param(name + ".weight", wshape, stream);
    a.bias = detail::init_param(name + ".bias", {target_dim}, stream);
    return a;
  }

  // Same-padded grouped conv over time, gelu; caller adds the residual.
  Tensor positional_conv(const Tensor& x) const {
    std::size_t f = x.dim(0);
    std::size_t k = cfg_.pos_conv_kernel;
    std::size_t half = k / 2;
    Tensor ct = pad_cols(transpose2d(x), half, half);  // (D, F + 2*half)
    ct = reshape(ct, {1, cfg_.embed_dim, ct.dim(1)});
    ct = conv1d(ct, param("pos_conv.weight"), param("pos_conv.bias"), 1,
                cfg_.pos_conv_groups);
    ct = reshape(ct, {cfg_.embed_dim, ct.dim(2)});
    if (k % 2 == 0) {
      // even kernel with symmetric padding yields F+1 positions; drop the
      // trailing one to restore the input length
      ct = slice_cols(ct, 0, f);
    }
    return gelu(transpose2d(ct));
  }

  Tensor block_forward(std::size_t i, const Tensor& x) const {
    std::string p = "block" + std::to_string(i) + ".";
    std::size_t dh = cfg_.head_dim();
    double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor h = layer_norm(x, param(p + "norm1.gain"), param(p + "norm1.bias"),
                          cfg_.norm_eps);
    Tensor q = linear(h, param(p + "attn.q.weight"), param(p + "attn.q.bias"));
    Tensor k = linear(h, param(p + "attn.k.weight"), param(p + "attn.k.bias"));
    Tensor v = linear(h, param(p + "attn.v.weight"), param(p + "attn.v.bias"));
    std::vector<Tensor> ctx;
    ctx.reserve(cfg_.n_heads);
    for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
      Tensor qh = slice_cols(q, hd * dh, (hd + 1) * dh);
      Tensor kh = slice_cols(k, hd * dh, (hd + 1) * dh);
      Tensor vh = slice_cols(v, hd * dh, (hd + 1) * dh);
      Tensor scores = scale(matmul(qh, transpose2d(kh)), att_scale);
      Tensor probs = softmax(scores);
      ctx.push_back(matmul(probs, vh));
    }
    Tensor attn = concat_cols(ctx);
    attn = linear(attn, param(p + "attn.out.weight"),
                  param(p + "attn.out.bias"));
    Tensor y = add(x, attn);

    Tensor h2 = layer_norm(y, param(p + "norm2.gain"), param(p + "norm2.bias"),
                           cfg_.norm_eps);
    Tensor ffn = linear(gelu(linear(h2, param(p + "ffn.w1"), param(p + "ffn.b1"))),
                        param(p + "ffn.w2"), param(p + "ffn.b2"));
    return add(y, ffn);
  }

  ModelConfig cfg_;
  std::vector<NamedParam> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<AuxAffine> heads_;
  std::vector<AuxAffine> projections_;
};

// ---------------------------------------------------------------------------
// batched entry points
// ---------------------------------------------------------------------------

struct BatchedFrames {
  Tensor frames;  // (B, F_max, channels); rows past each item's length are 0
  std::vector<std::size_t> frame_lengths;
};

// waves: (B, S) zero-padded; lengths: true sample counts. Each item is
// sliced to its true length before any convolution, so padded samples
// cannot influence any valid frame (group-norm statistics included).
inline BatchedFrames frontend_forward(const Encoder& model,
                                      const Tensor& waves,
                                      const std::vector<std::size_t>& lengths) {
  if (waves.rank() != 2) throw ShapeError("frontend_forward: waves must be (B,S)");
  std::size_t b = waves.dim(0);
  if (lengths.size() != b) {
    throw ShapeError("frontend_forward: lengths size mismatch");
  }
  BatchedFrames out;
  std::vector<Tensor> items;
  std::size_t f_max = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (lengths[i] > waves.dim(1)) {
      throw ShapeError("frontend_forward: length exceeds padded width");
    }
    Tensor row = slice_rows(waves, i, i + 1);            // (1, S)
    Tensor item = reshape(slice_cols(row, 0, lengths[i]), {lengths[i]});
    Tensor frames = model.frontend_frames(item);
    f_max = std::max(f_max, frames.dim(0));
    out.frame_lengths.push_back(frames.dim(0));
    items.push_back(std::move(frames));
  }
  out.frames = stack_items(items, f_max);
  return out;
}

// frames from frontend_forward -> per-layer hidden states (B, F_max, D).
// Items are sliced back out per frame length, so attention and the
// positional conv only ever see valid frames.
inline std::vector<Tensor> encoder_forward(const Encoder& model,
                                           const BatchedFrames& input) {
  if (input.frames.rank() != 3) {
    throw ShapeError("encoder_forward: frames must be (B,F,C)");
  }
  std::size_t b = input.frames.dim(0);
  std::size_t f_max = input.frames.dim(1);
  if (input.frame_lengths.size() != b) {
    throw ShapeError("encoder_forward: frame_lengths size mismatch");
  }
  std::vector<std::vector<Tensor>> per_item;
  per_item.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor frames = slice_item(input.frames, i, input.frame_lengths[i]);
    per_item.push_back(model.states_from_frames(frames));
  }
  std::size_t layers = model.config().n_layers;
  std::vector<Tensor> out;
  out.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<Tensor> layer_items;
    layer_items.reserve(b);
    for (std::size_t i = 0; i < b; ++i) layer_items.push_back(per_item[i][l]);
    out.push_back(stack_items(layer_items, f_max));
  }
  return out;
}

}  // namespace distillkit
