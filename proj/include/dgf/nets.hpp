#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dgf/conv.hpp"
#include "dgf/deform.hpp"
#include "dgf/norms.hpp"
#include "dgf/rng.hpp"

namespace dgf {

/// Architecture hyperparameters. width_multiplier scales every hidden channel
/// count (1 = reference widths); style_dim and num_styles are never scaled.
struct NetworkConfig {
  int64_t image_size = 80;
  int64_t image_channels = 3;
  int64_t style_dim = 128;
  int64_t num_styles = 3;
  double width_multiplier = 0.25;
  int num_fdsc = 2;                // 0..3 skip connections, lowest level first
  int64_t fdsc_kernel = 3;         // 1 for offset-visualization runs
  int content_deform_layers = 3;   // leading content-encoder layers that deform

  int64_t scaled(int64_t c) const {
    return std::max<int64_t>(1, static_cast<int64_t>(std::llround(c * width_multiplier)));
  }

  void validate() const {
    if (image_size < 4 || image_size % 4 != 0)
      throw ConfigError("image_size must be a positive multiple of 4");
    if (width_multiplier <= 0.0 || width_multiplier > 1.0)
      throw ConfigError("width_multiplier must lie in (0, 1]");
    if (num_fdsc < 0 || num_fdsc > 3) throw ConfigError("num_fdsc must be in 0..3");
    if (fdsc_kernel != 1 && fdsc_kernel != 3) throw ConfigError("fdsc_kernel must be 1 or 3");
    if (num_styles < 1) throw ConfigError("num_styles must be positive");
    if (content_deform_layers < 0 || content_deform_layers > 3)
      throw ConfigError("content_deform_layers must be in 0..3");
  }
};

enum class InitKind { kConvHe, kLinearNormal, kZero, kOne };

/// Ordered registry of named parameters and normalization buffers; the
/// registration order defines the checkpoint manifest and the init stream.
template <typename S>
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor<S> tensor;
    InitKind init;
    bool weight_decay;  // true only for conv / linear weights
  };
  std::vector<Entry> entries;
  std::vector<std::pair<std::string, std::shared_ptr<RunningStats<S>>>> stats;

  Tensor<S> add(const std::string& name, Shape shape, InitKind init) {
    for (const auto& e : entries)
      if (e.name == name) throw UsageError("duplicate parameter name: " + name);
    Tensor<S> t = Tensor<S>::param(std::move(shape), {});
    const bool decay = init == InitKind::kConvHe || init == InitKind::kLinearNormal;
    entries.push_back({name, t, init, decay});
    return t;
  }

  Tensor<S> add(const std::string& name, Shape shape, InitKind init, bool decay) {
    Tensor<S> t = add(name, std::move(shape), init);
    entries.back().weight_decay = decay;
    return t;
  }

  void set_decay(const std::string& name, bool decay) {
    for (auto& e : entries)
      if (e.name == name) {
        e.weight_decay = decay;
        return;
      }
    throw UsageError("parameter not found: " + name);
  }

  std::shared_ptr<RunningStats<S>> add_stats(const std::string& name, int64_t channels) {
    auto s = std::make_shared<RunningStats<S>>();
    s->mean.assign(static_cast<size_t>(channels), S(0));
    s->var.assign(static_cast<size_t>(channels), S(1));
    stats.emplace_back(name, s);
    return s;
  }

  int64_t total_parameters() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.tensor.numel();
    return n;
  }

  std::vector<Entry> with_prefix(const std::string& prefix) const {
    std::vector<Entry> out;
    for (const auto& e : entries)
      if (e.name.rfind(prefix, 0) == 0) out.push_back(e);
    return out;
  }
};

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <typename S>
struct Conv2dLayer {
  Tensor<S> weight, bias;
  Conv2dAttrs attrs;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<S>& ps, const std::string& prefix, int64_t cin, int64_t cout, int64_t k,
              int64_t stride, int64_t pad, InitKind init = InitKind::kConvHe) {
    attrs = Conv2dAttrs::square(k, stride, pad);
    weight = ps.add(prefix + ".weight", {cout, cin, k, k}, init);
    bias = ps.add(prefix + ".bias", {cout}, InitKind::kZero, /*decay=*/false);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return conv2d(x, weight, bias, attrs); }
};

template <typename S>
struct LinearLayer {
  Tensor<S> weight, bias;

  LinearLayer() = default;
  LinearLayer(ParamStore<S>& ps, const std::string& prefix, int64_t in, int64_t out,
              InitKind init = InitKind::kLinearNormal) {
    weight = ps.add(prefix + ".weight", {out, in}, init);
    bias = ps.add(prefix + ".bias", {out}, InitKind::kZero, /*decay=*/false);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return fully_connected(x, weight, bias); }
};

/// Deformable convolution whose offsets and masks come from a zero-initialized
/// 3x3 predictor branch over the layer input (2K offset channels followed by
/// K mask channels through a sigmoid).
template <typename S>
struct DeformConv2dLayer {
  Tensor<S> weight, bias;
  Conv2dLayer<S> predictor;
  Conv2dAttrs attrs;

  DeformConv2dLayer() = default;
  DeformConv2dLayer(ParamStore<S>& ps, const std::string& prefix, int64_t cin, int64_t cout,
                    int64_t k, int64_t stride, int64_t pad) {
    attrs = Conv2dAttrs::square(k, stride, pad);
    weight = ps.add(prefix + ".weight", {cout, cin, k, k}, InitKind::kConvHe);
    bias = ps.add(prefix + ".bias", {cout}, InitKind::kZero, /*decay=*/false);
    const int64_t taps = k * k;
    predictor = Conv2dLayer<S>(ps, prefix + ".predictor", cin, 3 * taps, 3, stride, 1,
                               InitKind::kZero);
    ps.set_decay(prefix + ".predictor.weight", true);  // still a convolution weight
  }

  struct Out {
    Tensor<S> feature;
    Tensor<S> offsets;
    Tensor<S> masks;
  };

  Out forward(const Tensor<S>& x) const {
    const int64_t K = attrs.kh * attrs.kw;
    Tensor<S> theta = predictor.forward(x);
    Tensor<S> offsets = slice_channels(theta, 0, 2 * K);
    Tensor<S> masks = sigmoid(slice_channels(theta, 2 * K, 3 * K));
    Tensor<S> y = deform_conv2d(x, weight, bias, DeformParams<S>{offsets, masks}, attrs);
    return {y, offsets, masks};
  }
};

/// Per-site affine projection of the style code into AdaIN statistics.
/// Predicted deviations pass through softplus and a small floor to stay
/// strictly positive.
template <typename S>
struct AdainProj {
  LinearLayer<S> fc;
  int64_t channels = 0;

  AdainProj() = default;
  AdainProj(ParamStore<S>& ps, const std::string& prefix, int64_t style_dim, int64_t channels_)
      : fc(ps, prefix, style_dim, 2 * channels_), channels(channels_) {}

  struct Stats {
    Tensor<S> mean, stddev;
  };

  Stats project(const Tensor<S>& z_s) const {
    Tensor<S> raw = fc.forward(z_s);  // [B, 2C]
    const int64_t B = raw.dim(0);
    Tensor<S> r4 = reshape(raw, {B, 2 * channels, 1, 1});
    Tensor<S> mean = reshape(slice_channels(r4, 0, channels), {B, channels});
    Tensor<S> dev = reshape(slice_channels(r4, channels, 2 * channels), {B, channels});
    return {mean, add_scalar(softplus(dev), S(1e-4))};
  }
};

enum class BlockNorm { kInstance, kFrn, kAdain };

/// Residual block: two 3x3 convolutions with the block's normalization and a
/// ReLU between them, identity shortcut (1x1 projection only when the channel
/// count changes), optional trailing 2x2 average-pool downsample.
template <typename S>
struct ResBlock {
  Conv2dLayer<S> conv1, conv2, proj;
  Tensor<S> g1, b1, g2, b2;       // instance / filter-response affine
  AdainProj<S> ada1, ada2;        // style-projected statistics
  BlockNorm norm = BlockNorm::kInstance;
  bool pool = false;
  bool has_proj = false;

  ResBlock() = default;
  ResBlock(ParamStore<S>& ps, const std::string& prefix, int64_t cin, int64_t cout, BlockNorm n,
           bool pool_, int64_t style_dim = 0)
      : norm(n), pool(pool_) {
    conv1 = Conv2dLayer<S>(ps, prefix + ".conv1", cin, cout, 3, 1, 1);
    conv2 = Conv2dLayer<S>(ps, prefix + ".conv2", cout, cout, 3, 1, 1);
    if (cin != cout) {
      has_proj = true;
      proj = Conv2dLayer<S>(ps, prefix + ".proj", cin, cout, 1, 1, 0);
    }
    if (n == BlockNorm::kAdain) {
      ada1 = AdainProj<S>(ps, prefix + ".ada1", style_dim, cout);
      ada2 = AdainProj<S>(ps, prefix + ".ada2", style_dim, cout);
    } else {
      g1 = ps.add(prefix + ".norm1.gamma", {cout}, InitKind::kOne, false);
      b1 = ps.add(prefix + ".norm1.beta", {cout}, InitKind::kZero, false);
      g2 = ps.add(prefix + ".norm2.gamma", {cout}, InitKind::kOne, false);
      b2 = ps.add(prefix + ".norm2.beta", {cout}, InitKind::kZero, false);
    }
  }

  Tensor<S> apply_norm(const Tensor<S>& h, const Tensor<S>& gamma, const Tensor<S>& beta) const {
    return norm == BlockNorm::kInstance ? instance_norm(h, gamma, beta) : frn(h, gamma, beta);
  }

  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& z_s = {}) const {
    Tensor<S> h = conv1.forward(x);
    if (norm == BlockNorm::kAdain) {
      auto s = ada1.project(z_s);
      h = adain(h, s.mean, s.stddev);
    } else {
      h = apply_norm(h, g1, b1);
    }
    h = relu(h);
    h = conv2.forward(h);
    if (norm == BlockNorm::kAdain) {
      auto s = ada2.project(z_s);
      h = adain(h, s.mean, s.stddev);
    } else {
      h = apply_norm(h, g2, b2);
    }
    Tensor<S> shortcut = has_proj ? proj.forward(x) : x;
    Tensor<S> y = add(h, shortcut);
    if (pool) y = avg_pool2d(y, Pool2dAttrs{2, 2, 0});
    return y;
  }
};

// ---------------------------------------------------------------------------
// style encoder (VGG-style stack, batch norm, max-pool downsampling)
// ---------------------------------------------------------------------------

template <typename S>
struct StyleEncoder {
  struct Stage {
    Conv2dLayer<S> conv;
    Tensor<S> gamma, beta;
    std::shared_ptr<RunningStats<S>> stats;
    bool pool = false;
  };
  std::vector<Stage> stages;
  LinearLayer<S> fc;
  NetworkConfig cfg;

  StyleEncoder() = default;
  StyleEncoder(ParamStore<S>& ps, const NetworkConfig& config) : cfg(config) {
    static constexpr int64_t kWidths[8] = {64, 128, 256, 256, 512, 512, 512, 512};
    static constexpr bool kPool[8] = {true, true, false, true, false, true, false, true};
    int64_t cin = cfg.image_channels;
    for (int i = 0; i < 8; ++i) {
      const int64_t cout = cfg.scaled(kWidths[i]);
      const std::string prefix = "style_encoder.stage" + std::to_string(i + 1);
      Stage st;
      st.conv = Conv2dLayer<S>(ps, prefix + ".conv", cin, cout, 3, 1, 1);
      st.gamma = ps.add(prefix + ".bn.gamma", {cout}, InitKind::kOne, false);
      st.beta = ps.add(prefix + ".bn.beta", {cout}, InitKind::kZero, false);
      st.stats = ps.add_stats(prefix + ".bn", cout);
      st.pool = kPool[i];
      stages.push_back(std::move(st));
      cin = cout;
    }
    fc = LinearLayer<S>(ps, "style_encoder.fc", cin, cfg.style_dim);
  }

  /// [B,3,S,S] -> [B,style_dim].
  Tensor<S> forward(const Tensor<S>& images, bool training) const {
    if (images.rank() != 4 || images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size)
      throw DimensionError("style_encoder: expected [B,3," + std::to_string(cfg.image_size) + "," +
                           std::to_string(cfg.image_size) + "], got " + shape_str(images.shape()));
    Tensor<S> h = images;
    for (const auto& st : stages) {
      h = st.conv.forward(h);
      h = batch_norm(h, st.gamma, st.beta, st.stats.get(), training);
      h = relu(h);
      if (st.pool) h = max_pool2d(h, Pool2dAttrs{2, 2, 0});
    }
    Tensor<S> pooled = global_avg_pool(h);  // [B, C]
    return fc.forward(pooled);
  }
};

// ---------------------------------------------------------------------------
// content encoder (deformable stem + residual blocks, instance norm)
// ---------------------------------------------------------------------------

template <typename S>
struct ContentEncoder {
  struct Layer {
    bool deform = false;
    DeformConv2dLayer<S> dconv;
    Conv2dLayer<S> conv;
    Tensor<S> gamma, beta;
  };
  Layer layers[3];
  ResBlock<S> block1, block2;
  NetworkConfig cfg;

  ContentEncoder() = default;
  ContentEncoder(ParamStore<S>& ps, const NetworkConfig& config) : cfg(config) {
    const int64_t c1 = cfg.scaled(64), c2 = cfg.scaled(128), c3 = cfg.scaled(256);
    const int64_t cins[3] = {cfg.image_channels, c1, c2};
    const int64_t couts[3] = {c1, c2, c3};
    const int64_t kernel[3] = {7, 4, 4};
    const int64_t stride[3] = {1, 2, 2};
    const int64_t pad[3] = {3, 1, 1};
    for (int i = 0; i < 3; ++i) {
      const std::string prefix = "content_encoder.layer" + std::to_string(i + 1);
      Layer& l = layers[i];
      l.deform = i < cfg.content_deform_layers;
      if (l.deform)
        l.dconv = DeformConv2dLayer<S>(ps, prefix, cins[i], couts[i], kernel[i], stride[i], pad[i]);
      else
        l.conv = Conv2dLayer<S>(ps, prefix, cins[i], couts[i], kernel[i], stride[i], pad[i]);
      l.gamma = ps.add(prefix + ".in.gamma", {couts[i]}, InitKind::kOne, false);
      l.beta = ps.add(prefix + ".in.beta", {couts[i]}, InitKind::kZero, false);
    }
    block1 = ResBlock<S>(ps, "content_encoder.block1", c3, c3, BlockNorm::kInstance, false);
    block2 = ResBlock<S>(ps, "content_encoder.block2", c3, c3, BlockNorm::kInstance, false);
  }

  struct Out {
    Tensor<S> z_c;   // [B, C3, S/4, S/4]
    Tensor<S> tap1;  // after layer 1, full resolution
    Tensor<S> tap2;  // after layer 2, half resolution
    Tensor<S> tap3;  // after layer 3, quarter resolution (third skip level)
  };

  Out forward(const Tensor<S>& images) const {
    if (images.rank() != 4 || images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size)
      throw DimensionError("content_encoder: bad input shape " + shape_str(images.shape()));
    Out out;
    Tensor<S> h = images;
    for (int i = 0; i < 3; ++i) {
      const Layer& l = layers[i];
      h = l.deform ? l.dconv.forward(h).feature : l.conv.forward(h);
      h = instance_norm(h, l.gamma, l.beta);
      h = relu(h);
      if (i == 0) out.tap1 = h;
      if (i == 1) out.tap2 = h;
      if (i == 2) out.tap3 = h;
    }
    h = block1.forward(h);
    h = block2.forward(h);
    out.z_c = h;
    return out;
  }
};

// ---------------------------------------------------------------------------
// feature deformation skip connection
// ---------------------------------------------------------------------------

/// Predicts per-position sampling offsets and masks from the concatenated
/// style-injected and content features, deforms the content feature with
/// them, and returns the deformed feature concatenated back onto the style
/// feature, exposing the offsets for regularization and visualization.
template <typename S>
struct FdscModule {
  Conv2dLayer<S> predictor;  // concat(K_s, K_c) -> 2K offsets + K masks
  Tensor<S> weight, bias;    // deformable kernel over K_c, channel-preserving
  Conv2dAttrs attrs;

  FdscModule() = default;
  FdscModule(ParamStore<S>& ps, const std::string& prefix, int64_t content_channels,
             int64_t style_channels, int64_t kernel) {
    attrs = Conv2dAttrs::square(kernel, 1, (kernel - 1) / 2);
    const int64_t taps = kernel * kernel;
    predictor = Conv2dLayer<S>(ps, prefix + ".predictor", style_channels + content_channels,
                               3 * taps, 3, 1, 1, InitKind::kZero);
    ps.set_decay(prefix + ".predictor.weight", true);
    weight = ps.add(prefix + ".weight", {content_channels, content_channels, kernel, kernel},
                    InitKind::kConvHe);
    bias = ps.add(prefix + ".bias", {content_channels}, InitKind::kZero, false);
  }

  struct Out {
    Tensor<S> merged;    // concat(K'_c, K_s)
    Tensor<S> deformed;  // K'_c
    Tensor<S> offsets;   // [B, 2K, H, W]
    Tensor<S> masks;     // [B, K, H, W]
  };

  Out apply(const Tensor<S>& k_c, const Tensor<S>& k_s) const {
    if (k_c.dim(0) != k_s.dim(0) || k_c.dim(2) != k_s.dim(2) || k_c.dim(3) != k_s.dim(3))
      throw DimensionError("fdsc: content/style feature extents disagree: " +
                           shape_str(k_c.shape()) + " vs " + shape_str(k_s.shape()));
    const int64_t K = attrs.kh * attrs.kw;
    Tensor<S> theta = predictor.forward(concat_channels(k_s, k_c));
    Tensor<S> offsets = slice_channels(theta, 0, 2 * K);
    Tensor<S> masks = sigmoid(slice_channels(theta, 2 * K, 3 * K));
    Tensor<S> deformed = deform_conv2d(k_c, weight, bias, DeformParams<S>{offsets, masks}, attrs);
    return {concat_channels(deformed, k_s), deformed, offsets, masks};
  }
};

// ---------------------------------------------------------------------------
// mixer (decoder with AdaIN style injection and FDSC merges)
// ---------------------------------------------------------------------------

template <typename S>
struct Mixer {
  ResBlock<S> block1, block2;
  Conv2dLayer<S> up1, up2, to_image;
  AdainProj<S> ada_up1, ada_up2;
  FdscModule<S> fdsc1, fdsc2, fdsc3;
  NetworkConfig cfg;

  Mixer() = default;
  Mixer(ParamStore<S>& ps, const NetworkConfig& config) : cfg(config) {
    const int64_t c1 = cfg.scaled(64), c2 = cfg.scaled(128), c3 = cfg.scaled(256);
    block1 = ResBlock<S>(ps, "mixer.block1", c3, c3, BlockNorm::kAdain, false, cfg.style_dim);
    block2 = ResBlock<S>(ps, "mixer.block2", c3, c3, BlockNorm::kAdain, false, cfg.style_dim);
    if (cfg.num_fdsc >= 3) fdsc3 = FdscModule<S>(ps, "fdsc3", c3, c3, cfg.fdsc_kernel);
    const int64_t up1_in = cfg.num_fdsc >= 3 ? 2 * c3 : c3;
    up1 = Conv2dLayer<S>(ps, "mixer.up1", up1_in, c2, 5, 1, 2);
    ada_up1 = AdainProj<S>(ps, "mixer.up1.ada", cfg.style_dim, c2);
    if (cfg.num_fdsc >= 2) fdsc2 = FdscModule<S>(ps, "fdsc2", c2, c2, cfg.fdsc_kernel);
    const int64_t up2_in = cfg.num_fdsc >= 2 ? 2 * c2 : c2;
    up2 = Conv2dLayer<S>(ps, "mixer.up2", up2_in, c1, 5, 1, 2);
    ada_up2 = AdainProj<S>(ps, "mixer.up2.ada", cfg.style_dim, c1);
    if (cfg.num_fdsc >= 1) fdsc1 = FdscModule<S>(ps, "fdsc1", c1, c1, cfg.fdsc_kernel);
    const int64_t out_in = cfg.num_fdsc >= 1 ? 2 * c1 : c1;
    to_image = Conv2dLayer<S>(ps, "mixer.to_image", out_in, cfg.image_channels, 7, 1, 3);
  }

  struct Out {
    Tensor<S> image;                  // [B,3,S,S] in (-1,1)
    std::vector<Tensor<S>> offsets;   // per active FDSC module, lowest level first
    std::vector<Tensor<S>> deformed;  // matching K'_c features
  };

  Out forward(const Tensor<S>& z_c, const Tensor<S>& z_s, const Tensor<S>& tap1,
              const Tensor<S>& tap2, const Tensor<S>& tap3) const {
    Out out;
    Tensor<S> offsets1, offsets2, offsets3, def1, def2, def3;
    Tensor<S> h = block1.forward(z_c, z_s);
    h = block2.forward(h, z_s);
    if (cfg.num_fdsc >= 3) {
      auto f = fdsc3.apply(tap3, h);
      h = f.merged;
      offsets3 = f.offsets;
      def3 = f.deformed;
    }
    h = upsample_nearest(h, 2);
    h = up1.forward(h);
    {
      auto s = ada_up1.project(z_s);
      h = adain(h, s.mean, s.stddev);
    }
    h = relu(h);
    if (cfg.num_fdsc >= 2) {
      auto f = fdsc2.apply(tap2, h);  // K_s is the feature right after this AdaIN stage
      h = f.merged;
      offsets2 = f.offsets;
      def2 = f.deformed;
    }
    h = upsample_nearest(h, 2);
    h = up2.forward(h);
    {
      auto s = ada_up2.project(z_s);
      h = adain(h, s.mean, s.stddev);
    }
    h = relu(h);
    if (cfg.num_fdsc >= 1) {
      auto f = fdsc1.apply(tap1, h);
      h = f.merged;
      offsets1 = f.offsets;
      def1 = f.deformed;
    }
    out.image = tanh_op(to_image.forward(h));
    if (cfg.num_fdsc >= 1) {
      out.offsets.push_back(offsets1);
      out.deformed.push_back(def1);
    }
    if (cfg.num_fdsc >= 2) {
      out.offsets.push_back(offsets2);
      out.deformed.push_back(def2);
    }
    if (cfg.num_fdsc >= 3) {
      out.offsets.push_back(offsets3);
      out.deformed.push_back(def3);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// multi-task discriminator (one real/fake logit per style)
// ---------------------------------------------------------------------------

template <typename S>
struct Discriminator {
  Conv2dLayer<S> stem, conv4, to_logits;
  std::vector<ResBlock<S>> blocks;
  NetworkConfig cfg;

  Discriminator() = default;
  Discriminator(ParamStore<S>& ps, const NetworkConfig& config) : cfg(config) {
    const int64_t widths[8] = {64, 128, 128, 256, 256, 512, 512, 1024};
    const bool pool[8] = {false, true, false, true, false, true, false, true};
    int64_t cin = cfg.scaled(64);
    stem = Conv2dLayer<S>(ps, "discriminator.stem", cfg.image_channels, cin, 3, 1, 1);
    for (int i = 0; i < 8; ++i) {
      const int64_t cout = cfg.scaled(widths[i]);
      blocks.emplace_back(ps, "discriminator.block" + std::to_string(i + 1), cin, cout,
                          BlockNorm::kFrn, pool[i]);
      cin = cout;
    }
    conv4 = Conv2dLayer<S>(ps, "discriminator.conv4", cin, cin, 4, 1, 1);
    to_logits = Conv2dLayer<S>(ps, "discriminator.to_logits", cin, cfg.num_styles, 1, 1, 0);
  }

  /// [B,3,S,S] -> [B, num_styles].
  Tensor<S> forward(const Tensor<S>& images) const {
    if (images.rank() != 4 || images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size)
      throw DimensionError("discriminator: bad input shape " + shape_str(images.shape()));
    Tensor<S> h = stem.forward(images);
    for (const auto& b : blocks) h = b.forward(h);
    h = leaky_relu(h, S(0.2));
    h = conv4.forward(h);
    h = leaky_relu(h, S(0.2));
    h = to_logits.forward(h);
    return global_avg_pool(h);
  }
};

// ---------------------------------------------------------------------------
// bundle
// ---------------------------------------------------------------------------

/// The five sub-networks plus the shared parameter registry. Parameter names
/// are unique, stable, and prefix-grouped: style_encoder., content_encoder.,
/// mixer., fdsc1..3., discriminator.
template <typename S>
struct ModelBundle {
  NetworkConfig config;
  ParamStore<S> params;
  StyleEncoder<S> style_encoder;
  ContentEncoder<S> content_encoder;
  Mixer<S> mixer;
  Discriminator<S> discriminator;

  explicit ModelBundle(const NetworkConfig& cfg) : config(cfg) {
    config.validate();
    style_encoder = StyleEncoder<S>(params, config);
    content_encoder = ContentEncoder<S>(params, config);
    mixer = Mixer<S>(params, config);
    discriminator = Discriminator<S>(params, config);
  }

  struct GenerateOut {
    Tensor<S> image;
    Tensor<S> z_c;
    typename ContentEncoder<S>::Out content;
    typename Mixer<S>::Out mix;
  };

  /// Full generator pass G(style, content); deterministic for fixed inputs.
  GenerateOut generate_detailed(const Tensor<S>& content_images, const Tensor<S>& style_images,
                                bool training) const {
    Tensor<S> z_s = style_encoder.forward(style_images, training);
    auto enc = content_encoder.forward(content_images);
    auto mix = mixer.forward(enc.z_c, z_s, enc.tap1, enc.tap2, enc.tap3);
    return {mix.image, enc.z_c, enc, mix};
  }

  /// Generator pass from a precomputed style code.
  GenerateOut generate_with_code(const Tensor<S>& content_images, const Tensor<S>& z_s) const {
    auto enc = content_encoder.forward(content_images);
    auto mix = mixer.forward(enc.z_c, z_s, enc.tap1, enc.tap2, enc.tap3);
    return {mix.image, enc.z_c, enc, mix};
  }
};

template <typename S>
Tensor<S> generate(const Tensor<S>& content_images, const Tensor<S>& style_images,
                   const ModelBundle<S>& model, bool training = false) {
  return model.generate_detailed(content_images, style_images, training).image;
}

template <typename S>
Tensor<S> discriminate(const Tensor<S>& images, const ModelBundle<S>& model) {
  return model.discriminator.forward(images);
}

template <typename S>
Tensor<S> style_encode(const Tensor<S>& images, const ModelBundle<S>& model, bool training = false) {
  return model.style_encoder.forward(images, training);
}

/// Arithmetic mean of the style codes of the reference images; refs is a
/// [R,3,S,S] batch. Returns [1, style_dim].
template <typename S>
Tensor<S> average_style_code(const Tensor<S>& refs, const ModelBundle<S>& model) {
  if (refs.rank() != 4 || refs.dim(0) < 1)
    throw UsageError("average_style_code requires at least one reference image");
  Tensor<S> codes = model.style_encoder.forward(refs, /*training=*/false);  // [R, D]
  Tensor<S> mean = mul_scalar(col_sum(codes), S(1) / static_cast<S>(refs.dim(0)));
  return reshape(mean, {1, model.config.style_dim});
}

/// Replicates a [1,D] style code across a batch.
template <typename S>
Tensor<S> tile_style_code(const Tensor<S>& code, int64_t batch) {
  return bcast_rows(reshape(code, {code.dim(1)}), batch);
}

// ---------------------------------------------------------------------------
// parameter initialization
// ---------------------------------------------------------------------------

/// He-normal convolution weights (std = sqrt(2 / fan_in)), N(0, 0.01) linear
/// weights, zeros for biases and for every offset/mask predictor, ones for
/// normalization gains. Deterministic in registration order for a fixed seed.
template <typename S>
void init_parameters(ModelBundle<S>& model, uint64_t seed) {
  Rng rng(seed);
  for (auto& e : model.params.entries) {
    auto& v = e.tensor.mutable_values();
    switch (e.init) {
      case InitKind::kZero:
        std::fill(v.begin(), v.end(), S(0));
        break;
      case InitKind::kOne:
        std::fill(v.begin(), v.end(), S(1));
        break;
      case InitKind::kConvHe: {
        const auto& s = e.tensor.shape();
        const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
        const double std_dev = std::sqrt(2.0 / fan_in);
        for (auto& x : v) x = static_cast<S>(rng.normal(0.0, std_dev));
        break;
      }
      case InitKind::kLinearNormal:
        for (auto& x : v) x = static_cast<S>(rng.normal(0.0, 0.01));
        break;
    }
    e.tensor.clear_grad();
  }
  for (auto& [name, st] : model.params.stats) {
    std::fill(st->mean.begin(), st->mean.end(), S(0));
    std::fill(st->var.begin(), st->var.end(), S(1));
  }
}

}  // namespace dgf
