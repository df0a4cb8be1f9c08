#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "terracer/ops.hpp"
#include "terracer/rng.hpp"

namespace terracer {

// ----------------------------------------------------------- configuration

/// Encoder/decoder plan for the dense-connectivity segmentation nets.
/// encoder_blocks lists layers per encoding block, decoder_blocks must be
/// its mirror, growth is the channels added by every dense layer. With
/// first_block_3d the stem is dropped and the first block runs 3x3x3
/// convolutions over a (spectral depth, height, width) volume, closed by a
/// squeeze convolution spanning the full remaining spectral depth.
struct DenseNetConfig {
  std::vector<int> encoder_blocks;
  int bottleneck_layers = 4;
  std::vector<int> decoder_blocks;
  int growth = 12;
  int stem_filters = 48;
  bool first_block_3d = false;
  int input_bands = 13;
  int num_classes = 23;

  void validate() const {
    if (encoder_blocks.empty())
      throw ConfigError("densenet: encoder plan is empty");
    for (int l : encoder_blocks)
      if (l <= 0) throw ConfigError("densenet: encoder block with no layers");
    if (bottleneck_layers <= 0)
      throw ConfigError("densenet: bottleneck needs at least one layer");
    std::vector<int> mirror(encoder_blocks.rbegin(), encoder_blocks.rend());
    if (decoder_blocks != mirror) {
      std::string msg = "densenet: decoder plan [";
      for (size_t i = 0; i < decoder_blocks.size(); ++i)
        msg += (i ? "," : "") + std::to_string(decoder_blocks[i]);
      msg += "] is not the mirror of the encoder plan [";
      for (size_t i = 0; i < encoder_blocks.size(); ++i)
        msg += (i ? "," : "") + std::to_string(encoder_blocks[i]);
      msg += "]";
      throw ConfigError(msg);
    }
    if (growth <= 0) throw ConfigError("densenet: growth must be positive");
    if (input_bands <= 0 || num_classes <= 0)
      throw ConfigError("densenet: bands and classes must be positive");
    if (!first_block_3d && stem_filters <= 0)
      throw ConfigError("densenet: stem_filters must be positive");
    if (first_block_3d && input_bands != 9)
      throw ConfigError(
          "3D spectral-fusion model requires exactly 9 bands (B1-B8a), got " +
          std::to_string(input_bands));
  }
};

/// VGG-16 encoder with pooling-index skips and one 1x1 label head per
/// decoder block. head_scales selects which strides emit heads; all five
/// by default, averaged by the loss.
struct SegNetConfig {
  int input_bands = 13;
  int num_classes = 23;
  std::vector<int> head_scales = {16, 8, 4, 2, 1};

  static constexpr std::array<int, 5> kBlockConvs = {2, 2, 3, 3, 3};
  static constexpr std::array<int, 5> kBlockChannels = {64, 128, 256, 512,
                                                        512};

  void validate() const {
    if (input_bands <= 0 || num_classes <= 0)
      throw ConfigError("segnet: bands and classes must be positive");
    if (head_scales.empty())
      throw ConfigError("segnet: at least one label head is required");
    for (int s : head_scales)
      if (s != 16 && s != 8 && s != 4 && s != 2 && s != 1)
        throw ConfigError("segnet: head stride " + std::to_string(s) +
                          " is not one of 16,8,4,2,1");
  }
};

/// Largest decoder stride whose estimation grid is strictly finer than the
/// ground truth; the decoder must reach at least this head.
inline int coarsest_stride_finer_than(double input_res_m, double label_res_m,
                                      const std::vector<int>& strides) {
  int best = 0;
  for (int s : strides)
    if (input_res_m * s < label_res_m && s > best) best = s;
  if (best == 0)
    throw ConfigError("no decoder head is finer than the ground truth grid");
  return best;
}

// ----------------------------------------------------------------- layers

template <typename T>
struct ParamSet {
  explicit ParamSet(uint64_t seed) : rng(seed) {}

  Var<T> he_uniform(const std::string& name, Shape shape, int64_t fan_in) {
    Tensor<T> t(std::move(shape));
    const T bound = static_cast<T>(std::sqrt(6.0 / double(fan_in)));
    fill_uniform(t, rng, -bound, bound);
    return track(params, name, std::move(t), true);
  }
  Var<T> constant(const std::string& name, Shape shape, T v) {
    return track(params, name, Tensor<T>::full(std::move(shape), v), true);
  }
  Var<T> buffer(const std::string& name, Shape shape, T v) {
    return track(buffers, name, Tensor<T>::full(std::move(shape), v), false);
  }

  std::mt19937_64 rng;
  std::vector<std::pair<std::string, Var<T>>> params, buffers;

 private:
  Var<T> track(std::vector<std::pair<std::string, Var<T>>>& list,
               const std::string& name, Tensor<T> t, bool requires_grad) {
    auto v = make_leaf(std::move(t), requires_grad, name);
    list.emplace_back(name, v);
    return v;
  }
};

template <typename T>
struct Conv2dLayer {
  Var<T> w, b;
  int stride = 1, pad = 0;
  Var<T> operator()(const Var<T>& x) const {
    return ops::conv2d(x, w, b, stride, pad);
  }
};

template <typename T>
Conv2dLayer<T> make_conv2d(ParamSet<T>& ps, const std::string& name, int cin,
                           int cout, int k, int pad, int stride = 1) {
  Conv2dLayer<T> l;
  l.w = ps.he_uniform(name + ".w", {cout, cin, k, k}, (int64_t)cin * k * k);
  l.b = ps.constant(name + ".b", {cout}, T(0));
  l.pad = pad;
  l.stride = stride;
  return l;
}

template <typename T>
struct Conv3dLayer {
  Var<T> w, b;
  std::array<int, 3> pad = {0, 0, 0};
  Var<T> operator()(const Var<T>& x) const {
    return ops::conv3d(x, w, b, {1, 1, 1}, pad);
  }
};

template <typename T>
Conv3dLayer<T> make_conv3d(ParamSet<T>& ps, const std::string& name, int cin,
                           int cout, std::array<int, 3> kernel,
                           std::array<int, 3> pad) {
  Conv3dLayer<T> l;
  l.w = ps.he_uniform(name + ".w", {cout, cin, kernel[0], kernel[1], kernel[2]},
                      (int64_t)cin * kernel[0] * kernel[1] * kernel[2]);
  l.b = ps.constant(name + ".b", {cout}, T(0));
  l.pad = pad;
  return l;
}

template <typename T>
struct BatchNormLayer {
  Var<T> gamma, beta, run_mean, run_var;
  Var<T> operator()(const Var<T>& x, bool train) const {
    return ops::batch_norm(x, gamma, beta, run_mean, run_var, train);
  }
};

template <typename T>
BatchNormLayer<T> make_batchnorm(ParamSet<T>& ps, const std::string& name,
                                 int c) {
  BatchNormLayer<T> l;
  l.gamma = ps.constant(name + ".gamma", {c}, T(1));
  l.beta = ps.constant(name + ".beta", {c}, T(0));
  l.run_mean = ps.buffer(name + ".running_mean", {c}, T(0));
  l.run_var = ps.buffer(name + ".running_var", {c}, T(1));
  return l;
}

// ----------------------------------------------------------- dense blocks

// Each layer is batchnorm -> relu -> conv producing `growth` channels and
// consumes the concatenation of the block input and every previous layer
// output. forward() returns both the full concatenation (the block output)
// and the concatenation of the new features alone, which is what the
// decoder's transition-up consumes.

template <typename T>
struct DenseLayer2d {
  BatchNormLayer<T> bn;
  Conv2dLayer<T> conv;
};

template <typename T>
struct DenseBlock2d {
  std::vector<DenseLayer2d<T>> layers;
  int in_channels = 0, growth = 0;

  int out_channels() const {
    return in_channels + static_cast<int>(layers.size()) * growth;
  }

  std::pair<Var<T>, Var<T>> forward(const Var<T>& x, bool train) const {
    std::vector<Var<T>> feats{x}, fresh;
    for (const auto& l : layers) {
      Var<T> in = feats.size() == 1 ? feats[0] : ops::concat_channels(feats);
      Var<T> y = l.conv(ops::relu(l.bn(in, train)));
      feats.push_back(y);
      fresh.push_back(y);
    }
    Var<T> full = ops::concat_channels(feats);
    Var<T> newc = fresh.size() == 1 ? fresh[0] : ops::concat_channels(fresh);
    return {full, newc};
  }
};

template <typename T>
DenseBlock2d<T> make_dense_block2d(ParamSet<T>& ps, const std::string& name,
                                   int in_channels, int layers, int growth) {
  DenseBlock2d<T> b;
  b.in_channels = in_channels;
  b.growth = growth;
  for (int i = 0; i < layers; ++i) {
    const int cin = in_channels + i * growth;
    DenseLayer2d<T> l;
    l.bn = make_batchnorm(ps, name + ".l" + std::to_string(i) + ".bn", cin);
    l.conv = make_conv2d(ps, name + ".l" + std::to_string(i) + ".conv", cin,
                         growth, 3, 1);
    b.layers.push_back(std::move(l));
  }
  return b;
}

template <typename T>
struct DenseLayer3d {
  BatchNormLayer<T> bn;
  Conv3dLayer<T> conv;
};

template <typename T>
struct DenseBlock3d {
  std::vector<DenseLayer3d<T>> layers;
  int in_channels = 0, growth = 0;

  std::pair<Var<T>, Var<T>> forward(const Var<T>& x, bool train) const {
    std::vector<Var<T>> feats{x}, fresh;
    for (const auto& l : layers) {
      Var<T> in = feats.size() == 1 ? feats[0] : ops::concat_channels(feats);
      Var<T> y = l.conv(ops::relu(l.bn(in, train)));
      feats.push_back(y);
      fresh.push_back(y);
    }
    Var<T> full = ops::concat_channels(feats);
    Var<T> newc = fresh.size() == 1 ? fresh[0] : ops::concat_channels(fresh);
    return {full, newc};
  }
};

template <typename T>
DenseBlock3d<T> make_dense_block3d(ParamSet<T>& ps, const std::string& name,
                                   int in_channels, int layers, int growth) {
  DenseBlock3d<T> b;
  b.in_channels = in_channels;
  b.growth = growth;
  for (int i = 0; i < layers; ++i) {
    const int cin = in_channels + i * growth;
    DenseLayer3d<T> l;
    l.bn = make_batchnorm(ps, name + ".l" + std::to_string(i) + ".bn", cin);
    l.conv = make_conv3d(ps, name + ".l" + std::to_string(i) + ".conv", cin,
                         growth, {3, 3, 3}, {1, 1, 1});
    b.layers.push_back(std::move(l));
  }
  return b;
}

// ------------------------------------------------------------------ model

/// A built network: named parameters/buffers plus a forward closure.
/// forward() returns one full-resolution logit map for the dense nets and
/// one logit map per head (coarse to fine) for SegNet.
template <typename T>
struct Model {
  std::string preset_id;
  std::string family;  // "densenet" | "densenet3d" | "segnet"
  int input_bands = 0, num_classes = 0;
  int num_scales = 0;
  int divisibility = 1;      // required divisor of input spatial extents
  int spectral_rf = 0;       // bands seen by the deepest 3D layer (3D only)
  std::vector<int> head_strides;
  std::vector<std::pair<std::string, Var<T>>> params, buffers;
  std::function<std::vector<Var<T>>(const Var<T>&, bool)> forward;

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params) n += v->value.numel();
    return n;
  }
  std::vector<Var<T>> param_vars() const {
    std::vector<Var<T>> out;
    out.reserve(params.size());
    for (const auto& [name, v] : params) out.push_back(v);
    return out;
  }
  Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : params)
      if (n == name) return v;
    for (const auto& [n, v] : buffers)
      if (n == name) return v;
    return nullptr;
  }
};

// ------------------------------------------------------- densenet builder

template <typename T>
struct DenseNetSeg {
  DenseNetConfig cfg;
  Conv2dLayer<T> stem;  // 2D variant only
  DenseBlock3d<T> block3d;
  BatchNormLayer<T> squeeze_bn;
  Conv3dLayer<T> squeeze;  // 3D variant only
  std::vector<DenseBlock2d<T>> enc;
  std::vector<Conv2dLayer<T>> td;  // 1x1 transition-down convs
  DenseBlock2d<T> bottleneck;
  std::vector<Conv2dLayer<T>> tu;  // 3x3 transition-up convs
  std::vector<DenseBlock2d<T>> dec;
  Conv2dLayer<T> classifier;

  std::vector<Var<T>> forward(const Var<T>& input, bool train) const {
    const Shape& s = input->value.shape();
    if (s.size() != 4)
      throw ConfigError("densenet forward: input must be [N,bands,H,W]");
    if (s[1] != cfg.input_bands)
      throw ConfigError("densenet forward: expected " +
                        std::to_string(cfg.input_bands) + " bands, got " +
                        std::to_string(s[1]));
    const int e = static_cast<int>(cfg.encoder_blocks.size());
    const int div = 1 << e;
    if (s[2] % div != 0 || s[3] % div != 0)
      throw ConfigError("densenet forward: input extents must be divisible by " +
                        std::to_string(div));

    Var<T> x = input;
    std::vector<Var<T>> skips;
    size_t e2d = 0;
    for (int bi = 0; bi < e; ++bi) {
      Var<T> full;
      if (bi == 0 && cfg.first_block_3d) {
        Var<T> vol = ops::reshape(x, {s[0], 1, cfg.input_bands, s[2], s[3]});
        auto [f3, n3] = block3d.forward(vol, train);
        Var<T> sq = squeeze(ops::relu(squeeze_bn(f3, train)));
        full = ops::reshape(sq, {s[0], sq->value.dim(1), s[2], s[3]});
      } else if (bi == 0) {
        auto [f, nf] = enc[e2d++].forward(stem(x), train);
        full = f;
      } else {
        auto [f, nf] = enc[e2d++].forward(x, train);
        full = f;
      }
      skips.push_back(full);
      x = ops::maxpool2d(td[bi](full)).values;
    }
    auto [bfull, bnew] = bottleneck.forward(x, train);
    Var<T> carry = bnew;
    Var<T> last_full;
    for (int di = 0; di < e; ++di) {
      Var<T> up = tu[di](ops::upsample_nearest(carry, 2));
      Var<T> cat = ops::concat_channels<T>({up, skips[e - 1 - di]});
      auto [dfull, dnew] = dec[di].forward(cat, train);
      carry = dnew;
      last_full = dfull;
    }
    return {classifier(last_full)};
  }
};

template <typename T>
Model<T> build_densenet_any(const DenseNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamSet<T> ps(seed);
  auto net = std::make_shared<DenseNetSeg<T>>();
  net->cfg = cfg;

  const int e = static_cast<int>(cfg.encoder_blocks.size());
  const int g = cfg.growth;
  int c = 0;
  std::vector<int> skip_ch(e);
  for (int bi = 0; bi < e; ++bi) {
    const int layers = cfg.encoder_blocks[bi];
    if (bi == 0 && cfg.first_block_3d) {
      net->block3d = make_dense_block3d(ps, "enc0_3d", 1, layers, g);
      const int c3 = 1 + layers * g;
      net->squeeze_bn = make_batchnorm(ps, "squeeze.bn", c3);
      net->squeeze = make_conv3d(ps, "squeeze", c3, c3,
                                 {cfg.input_bands, 1, 1}, {0, 0, 0});
      c = c3;
    } else if (bi == 0) {
      net->stem = make_conv2d(ps, "stem", cfg.input_bands, cfg.stem_filters,
                              3, 1);
      net->enc.push_back(
          make_dense_block2d(ps, "enc0", cfg.stem_filters, layers, g));
      c = cfg.stem_filters + layers * g;
    } else {
      net->enc.push_back(make_dense_block2d(
          ps, "enc" + std::to_string(bi), c, layers, g));
      c += layers * g;
    }
    skip_ch[bi] = c;
    net->td.push_back(
        make_conv2d(ps, "td" + std::to_string(bi), c, c, 1, 0));
  }

  net->bottleneck =
      make_dense_block2d(ps, "bottleneck", c, cfg.bottleneck_layers, g);
  int carry = cfg.bottleneck_layers * g;
  int last_full = 0;
  for (int di = 0; di < e; ++di) {
    net->tu.push_back(
        make_conv2d(ps, "tu" + std::to_string(di), carry, carry, 3, 1));
    const int cat = carry + skip_ch[e - 1 - di];
    const int layers = cfg.decoder_blocks[di];
    net->dec.push_back(
        make_dense_block2d(ps, "dec" + std::to_string(di), cat, layers, g));
    last_full = cat + layers * g;
    carry = layers * g;
  }
  net->classifier =
      make_conv2d(ps, "classifier", last_full, cfg.num_classes, 1, 0);

  Model<T> m;
  m.family = cfg.first_block_3d ? "densenet3d" : "densenet";
  m.input_bands = cfg.input_bands;
  m.num_classes = cfg.num_classes;
  m.num_scales = e + 1;
  m.divisibility = 1 << e;
  m.spectral_rf =
      cfg.first_block_3d ? 1 + 2 * cfg.encoder_blocks.front() : 0;
  m.head_strides = {1};
  m.params = std::move(ps.params);
  m.buffers = std::move(ps.buffers);
  m.forward = [net](const Var<T>& x, bool train) {
    return net->forward(x, train);
  };
  return m;
}

template <typename T>
Model<T> build_densenet_seg(const DenseNetConfig& cfg, uint64_t seed) {
  if (cfg.first_block_3d)
    throw ConfigError("build_densenet_seg: config asks for a 3D first block");
  return build_densenet_any<T>(cfg, seed);
}

template <typename T>
Model<T> build_densenet3d_seg(const DenseNetConfig& cfg, uint64_t seed) {
  if (!cfg.first_block_3d)
    throw ConfigError("build_densenet3d_seg: config lacks the 3D first block");
  return build_densenet_any<T>(cfg, seed);
}

// --------------------------------------------------------- segnet builder

template <typename T>
struct SegNetSeg {
  SegNetConfig cfg;
  struct ConvBn {
    Conv2dLayer<T> conv;
    BatchNormLayer<T> bn;
  };
  std::vector<std::vector<ConvBn>> enc, dec;
  std::vector<int> head_of_block;  // index into heads, or -1
  std::vector<Conv2dLayer<T>> heads;

  std::vector<Var<T>> forward(const Var<T>& input, bool train) const {
    const Shape& s = input->value.shape();
    if (s.size() != 4)
      throw ConfigError("segnet forward: input must be [N,bands,H,W]");
    if (s[1] != cfg.input_bands)
      throw ConfigError("segnet forward: expected " +
                        std::to_string(cfg.input_bands) + " bands, got " +
                        std::to_string(s[1]));
    if (s[2] % 32 != 0 || s[3] % 32 != 0)
      throw ConfigError(
          "segnet forward: input extents must be divisible by 32 (five "
          "pooling halvings), got " +
          std::to_string(s[2]) + "x" + std::to_string(s[3]));

    Var<T> x = input;
    std::vector<std::shared_ptr<ops::PoolIndices>> inds;
    std::vector<std::pair<int, int>> sizes;
    for (const auto& block : enc) {
      for (const auto& cb : block) x = ops::relu(cb.bn(cb.conv(x), train));
      sizes.emplace_back(x->value.dim(2), x->value.dim(3));
      auto pooled = ops::maxpool2d(x);
      x = pooled.values;
      inds.push_back(pooled.indices);
    }
    std::vector<Var<T>> outs;
    for (size_t i = 0; i < dec.size(); ++i) {
      const size_t eidx = dec.size() - 1 - i;
      x = ops::max_unpool2d(x, inds[eidx], sizes[eidx].first,
                            sizes[eidx].second);
      for (const auto& cb : dec[i]) x = ops::relu(cb.bn(cb.conv(x), train));
      if (head_of_block[i] >= 0) outs.push_back(heads[head_of_block[i]](x));
    }
    return outs;
  }
};

template <typename T>
Model<T> build_segnet_multiscale(const SegNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamSet<T> ps(seed);
  auto net = std::make_shared<SegNetSeg<T>>();
  net->cfg = cfg;

  const auto& counts = SegNetConfig::kBlockConvs;
  const auto& chans = SegNetConfig::kBlockChannels;

  int c = cfg.input_bands;
  for (int b = 0; b < 5; ++b) {
    std::vector<typename SegNetSeg<T>::ConvBn> block;
    for (int i = 0; i < counts[b]; ++i) {
      const std::string name =
          "enc" + std::to_string(b) + ".c" + std::to_string(i);
      typename SegNetSeg<T>::ConvBn cb;
      cb.conv = make_conv2d(ps, name + ".conv", c, chans[b], 3, 1);
      cb.bn = make_batchnorm(ps, name + ".bn", chans[b]);
      c = chans[b];
      block.push_back(std::move(cb));
    }
    net->enc.push_back(std::move(block));
  }

  std::vector<int> head_strides;
  for (int i = 0; i < 5; ++i) {
    const int e = 4 - i;  // mirrored encoder block
    const int in_ch = chans[e];
    const int out_ch = e == 0 ? chans[0] : chans[e - 1];
    std::vector<typename SegNetSeg<T>::ConvBn> block;
    for (int j = 0; j < counts[e]; ++j) {
      const bool last = j == counts[e] - 1;
      const int cin = j == 0 ? in_ch : chans[e];
      const int cout = last ? out_ch : chans[e];
      const std::string name =
          "dec" + std::to_string(i) + ".c" + std::to_string(j);
      typename SegNetSeg<T>::ConvBn cb;
      cb.conv = make_conv2d(ps, name + ".conv", cin, cout, 3, 1);
      cb.bn = make_batchnorm(ps, name + ".bn", cout);
      block.push_back(std::move(cb));
    }
    net->dec.push_back(std::move(block));

    const int stride = 1 << (4 - i);
    const bool wants_head =
        std::find(cfg.head_scales.begin(), cfg.head_scales.end(), stride) !=
        cfg.head_scales.end();
    if (wants_head) {
      net->heads.push_back(make_conv2d(
          ps, "head" + std::to_string(i), out_ch, cfg.num_classes, 1, 0));
      net->head_of_block.push_back(static_cast<int>(net->heads.size()) - 1);
      head_strides.push_back(stride);
    } else {
      net->head_of_block.push_back(-1);
    }
  }

  Model<T> m;
  m.family = "segnet";
  m.input_bands = cfg.input_bands;
  m.num_classes = cfg.num_classes;
  m.num_scales = 5;
  m.divisibility = 32;
  m.head_strides = std::move(head_strides);
  m.params = std::move(ps.params);
  m.buffers = std::move(ps.buffers);
  m.forward = [net](const Var<T>& x, bool train) {
    return net->forward(x, train);
  };
  return m;
}

// ---------------------------------------------------------------- presets

inline const std::vector<std::string>& preset_ids() {
  static const std::vector<std::string> ids = {
      "dn-e23-g12",    "dn-e45-g16",     "dn-e444-g16",
      "dn3d-e45-g16",  "dn3d-e444-g16",  "segnet-13"};
  return ids;
}

struct PresetSpec {
  bool is_segnet = false;
  DenseNetConfig dn;
  SegNetConfig sn;
};

inline PresetSpec preset_spec(const std::string& id) {
  PresetSpec p;
  if (id == "dn-e23-g12") {
    p.dn = {{2, 3}, 4, {3, 2}, 12, 48, false, 13, 23};
  } else if (id == "dn-e45-g16") {
    p.dn = {{4, 5}, 7, {5, 4}, 16, 48, false, 13, 23};
  } else if (id == "dn-e444-g16") {
    p.dn = {{4, 4, 4}, 4, {4, 4, 4}, 16, 48, false, 13, 23};
  } else if (id == "dn3d-e45-g16") {
    p.dn = {{4, 5}, 7, {5, 4}, 16, 48, true, 9, 23};
  } else if (id == "dn3d-e444-g16") {
    p.dn = {{4, 4, 4}, 4, {4, 4, 4}, 16, 48, true, 9, 23};
  } else if (id == "segnet-13") {
    p.is_segnet = true;
    p.sn = SegNetConfig{};
  } else {
    std::string msg = "unknown model preset '" + id + "'; available:";
    for (const auto& s : preset_ids()) msg += " " + s;
    throw ConfigError(msg);
  }
  return p;
}

/// 2D counterpart of a 3D preset (for the parameter-reduction report).
inline std::optional<std::string> counterpart_2d(const std::string& id) {
  if (id.rfind("dn3d-", 0) == 0) return "dn-" + id.substr(5);
  return std::nullopt;
}

template <typename T>
Model<T> build_preset(const std::string& id, uint64_t seed, int bands = -1,
                      int classes = -1) {
  PresetSpec p = preset_spec(id);
  Model<T> m;
  if (p.is_segnet) {
    if (bands > 0) p.sn.input_bands = bands;
    if (classes > 0) p.sn.num_classes = classes;
    m = build_segnet_multiscale<T>(p.sn, seed);
  } else {
    if (bands > 0) p.dn.input_bands = bands;
    if (classes > 0) p.dn.num_classes = classes;
    m = p.dn.first_block_3d ? build_densenet3d_seg<T>(p.dn, seed)
                            : build_densenet_seg<T>(p.dn, seed);
  }
  m.preset_id = id;
  return m;
}

}  // namespace terracer
