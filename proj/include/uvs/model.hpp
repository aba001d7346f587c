#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "uvs/geometry.hpp"
#include "uvs/nn.hpp"
#include "uvs/tensor.hpp"

namespace uvs {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline int ilog2_exact(int64_t v, const char* what) {
  int p = 0;
  int64_t x = v;
  while (x > 1) {
    if (x % 2) throw ConfigError(std::string(what) + " must be a power of two, got " + std::to_string(v));
    x /= 2;
    ++p;
  }
  return p;
}
}  // namespace detail

struct ModelConfig {
  int image_size = 64;
  std::vector<int> encoder_channels = {16, 32, 64, 128};
  int token_conv_layers = 3;
  int volume_size = 16;     // D
  int volume_channels = 8;  // vc
  Pose reference_pose{0.0, 0.0};
  std::vector<int> discriminator_channels = {16, 32, 64};

  int feature_spatial() const { return image_size >> encoder_channels.size(); }
  int token_count() const { return encoder_channels.back(); }
  int token_length() const { return feature_spatial() * feature_spatial(); }

  // Channel-reduction/upsampling blocks back to image size: reversed encoder
  // widths (minus the deepest) ending in 3 output channels.
  std::vector<int> refine_channels() const {
    std::vector<int> out(encoder_channels.rbegin() + 1, encoder_channels.rend());
    out.push_back(3);
    return out;
  }

  int lift_stages() const {
    return detail::ilog2_exact(image_size / volume_size, "image_size / volume_size");
  }

  // Stride-2 2D stack taking the intrinsic representation down to
  // [volume_size, volume_size] with volume_size * volume_channels channels.
  std::vector<int> lift2d_channels() const {
    int n = lift_stages();
    std::vector<int> out(n);
    out[n - 1] = volume_size * volume_channels;
    for (int i = n - 2; i >= 0; --i) out[i] = std::max(8, out[i + 1] / 4);
    return out;
  }

  // 2D decoder widths from the collapsed volume back up to image size.
  std::vector<int> decoder_channels() const {
    int n = lift_stages();
    std::vector<int> out(n);
    int cur = volume_size * volume_channels;
    for (int i = 0; i < n; ++i) {
      cur = std::max(4, cur / 2);
      out[i] = cur;
    }
    return out;
  }

  void validate() const {
    if (encoder_channels.empty()) throw ConfigError("encoder_channels must be non-empty");
    if (image_size % (1 << encoder_channels.size()))
      throw ConfigError("image_size must be divisible by 2^encoder_layers");
    if (feature_spatial() < 2)
      throw ConfigError("image_size / 2^encoder_layers must be >= 2, got " +
                        std::to_string(feature_spatial()));
    if (volume_size < 2) throw ConfigError("volume_size must be >= 2");
    if (volume_channels < 1) throw ConfigError("volume_channels must be >= 1");
    if (lift_stages() < 1) throw ConfigError("volume_size must be smaller than image_size");
    if (token_conv_layers < 1) throw ConfigError("token_conv_layers must be >= 1");
    if (discriminator_channels.empty()) throw ConfigError("discriminator_channels must be non-empty");
    if (image_size >> discriminator_channels.size() < 1)
      throw ConfigError("too many discriminator layers for image size");
  }
};

template <typename T>
struct ParamSet {
  std::vector<NamedParam<T>> items;
  std::unordered_map<std::string, size_t> index;

  void add(const std::string& name, Tensor<T> t) {
    index.emplace(name, items.size());
    items.push_back({name, std::move(t)});
  }
  Tensor<T>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter '" + name + "'");
    return items[it->second].value;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter '" + name + "'");
    return items[it->second].value;
  }
  bool has(const std::string& name) const { return index.count(name) != 0; }
};

template <typename T>
struct ModelParams {
  ParamSet<T> gen;
  ParamSet<T> disc;
};

// All learnable parameters, He-initialized, deterministic per seed.
template <typename T>
ModelParams<T> init_model_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams<T> p;
  Rng master(seed);
  uint64_t layer = 0;
  auto next_seed = [&]() { return master.split(layer++).seed(); };
  auto add_conv2d = [&](ParamSet<T>& set, const std::string& name, int ci, int co, int k) {
    set.add(name + ".w", init_conv_weights<T>(ConvSpec{ci, co, k, 1, 0, 2}, next_seed()));
    set.add(name + ".b", init_bias<T>(co));
  };
  auto add_conv3d = [&](ParamSet<T>& set, const std::string& name, int ci, int co) {
    set.add(name + ".w", init_conv_weights<T>(ConvSpec{ci, co, 3, 1, 1, 3}, next_seed()));
    set.add(name + ".b", init_bias<T>(co));
  };

  int ci = 3;
  for (size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
    add_conv2d(p.gen, "enc." + std::to_string(i), ci, cfg.encoder_channels[i], 3);
    ci = cfg.encoder_channels[i];
  }
  int L = cfg.token_length();
  for (int i = 0; i < cfg.token_conv_layers; ++i) {
    Shape ws{L, L, 1, 3};
    double std = std::sqrt(2.0 / static_cast<double>(L * 3));
    Rng r(next_seed());
    std::vector<T> wv(shape_numel(ws));
    for (auto& x : wv) x = static_cast<T>(r.normal() * std);
    p.gen.add("ttm." + std::to_string(i) + ".w", Tensor<T>::from(ws, std::move(wv), true));
    p.gen.add("ttm." + std::to_string(i) + ".b", init_bias<T>(L));
  }
  ci = cfg.token_count();
  auto refine = cfg.refine_channels();
  for (size_t i = 0; i < refine.size(); ++i) {
    add_conv2d(p.gen, "ref." + std::to_string(i), ci, refine[i], 3);
    ci = refine[i];
  }
  ci = 3;
  auto lift = cfg.lift2d_channels();
  for (size_t i = 0; i < lift.size(); ++i) {
    add_conv2d(p.gen, "lift2d." + std::to_string(i), ci, lift[i], 3);
    ci = lift[i];
  }
  add_conv3d(p.gen, "lift3d.0", cfg.volume_channels, cfg.volume_channels);
  add_conv3d(p.gen, "lift3d.1", cfg.volume_channels, cfg.volume_channels);
  add_conv3d(p.gen, "rend3d.0", cfg.volume_channels, cfg.volume_channels);
  add_conv3d(p.gen, "rend3d.1", cfg.volume_channels, cfg.volume_channels);
  ci = cfg.volume_size * cfg.volume_channels;
  auto dec = cfg.decoder_channels();
  for (size_t i = 0; i < dec.size(); ++i) {
    add_conv2d(p.gen, "dec." + std::to_string(i), ci, dec[i], 3);
    ci = dec[i];
  }
  add_conv2d(p.gen, "head_img", ci, 3, 3);
  add_conv2d(p.gen, "head_seg", ci, 1, 3);

  ci = 3;
  for (size_t i = 0; i < cfg.discriminator_channels.size(); ++i) {
    add_conv2d(p.disc, "d." + std::to_string(i), ci, cfg.discriminator_channels[i], 3);
    ci = cfg.discriminator_channels[i];
  }
  add_conv2d(p.disc, "d.out", ci, 1, 3);
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// Stride-2 relu encoder producing the deep feature map [N, C_last, S', S'].
template <typename T>
Tensor<T> encode2d(const Tensor<T>& image, const ParamSet<T>& gen, const ModelConfig& cfg) {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size)
    throw ShapeError("encode2d expects [N,3," + std::to_string(cfg.image_size) + "," +
                     std::to_string(cfg.image_size) + "], got " + shape_str(s));
  Tensor<T> x = image;
  for (size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
    const std::string base = "enc." + std::to_string(i);
    x = relu(conv2d_hw(x, gen.at(base + ".w"), gen.at(base + ".b"), 2, 2, 1, 1));
  }
  return x;
}

// Token i is channel i's spatial content flattened row-major: pure reshape.
template <typename T>
Tensor<T> features_to_tokens(const Tensor<T>& f) {
  const Shape& s = f.shape();
  if (s.size() != 4) throw ShapeError("features_to_tokens expects [N,C,H,W], got " + shape_str(s));
  return reshape(f, {s[0], s[1], s[2] * s[3]});
}

template <typename T>
Tensor<T> tokens_to_features(const Tensor<T>& t, int spatial) {
  const Shape& s = t.shape();
  if (s.size() != 3 || s[2] != static_cast<int64_t>(spatial) * spatial)
    throw ShapeError("tokens_to_features: token length does not match spatial size");
  return reshape(t, {s[0], s[1], spatial, spatial});
}

// 1-D convolutions along the token axis (channel count C is the sequence
// length, token length L the channel width), kernel 3, relu between layers,
// none after the last.
template <typename T>
Tensor<T> transform_tokens(const Tensor<T>& tokens, const ParamSet<T>& gen,
                           const ModelConfig& cfg) {
  const Shape& s = tokens.shape();
  if (s.size() != 3) throw ShapeError("transform_tokens expects [N,C,L], got " + shape_str(s));
  int64_t N = s[0], C = s[1], L = s[2];
  Tensor<T> x = reshape(permute(tokens, {0, 2, 1}), {N, L, 1, C});
  for (int i = 0; i < cfg.token_conv_layers; ++i) {
    const std::string base = "ttm." + std::to_string(i);
    x = conv2d_hw(x, gen.at(base + ".w"), gen.at(base + ".b"), 1, 1, 0, 1);
    if (i + 1 < cfg.token_conv_layers) x = relu(x);
  }
  return permute(reshape(x, {N, L, C}), {0, 2, 1});
}

// Channel reduction + upsampling back to an [N,3,S,S] map in (0,1).
template <typename T>
Tensor<T> refine_to_image(const Tensor<T>& tokens, const ParamSet<T>& gen,
                          const ModelConfig& cfg) {
  Tensor<T> x = tokens_to_features(tokens, cfg.feature_spatial());
  auto refine = cfg.refine_channels();
  for (size_t i = 0; i < refine.size(); ++i) {
    const std::string base = "ref." + std::to_string(i);
    x = conv2d_hw(x, gen.at(base + ".w"), gen.at(base + ".b"), 1, 1, 1, 1);
    x = (i + 1 < refine.size()) ? relu(x) : sigmoid(x);
    x = upsample2x(x);
  }
  return x;
}

// Full TTM: features -> tokens -> 1-D mixing -> features -> refined map.
template <typename T>
Tensor<T> intrinsic_representation(const Tensor<T>& image, const ParamSet<T>& gen,
                                   const ModelConfig& cfg) {
  auto feats = encode2d(image, gen, cfg);
  auto tokens = transform_tokens(features_to_tokens(feats), gen, cfg);
  return refine_to_image(tokens, gen, cfg);
}

// 2D downsampling stack, reshape to a volume, two 3D refinement convs.
template <typename T>
Tensor<T> vgm_lift(const Tensor<T>& ir, const ParamSet<T>& gen, const ModelConfig& cfg) {
  const Shape& s = ir.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size)
    throw ShapeError("vgm_lift expects [N,3,S,S] intrinsic representation, got " + shape_str(s));
  Tensor<T> x = ir;
  auto lift = cfg.lift2d_channels();
  for (size_t i = 0; i < lift.size(); ++i) {
    const std::string base = "lift2d." + std::to_string(i);
    x = relu(conv2d_hw(x, gen.at(base + ".w"), gen.at(base + ".b"), 2, 2, 1, 1));
  }
  int64_t N = s[0], D = cfg.volume_size, vc = cfg.volume_channels;
  x = reshape(x, {N, vc, D, D, D});
  x = relu(conv3d(x, gen.at("lift3d.0.w"), gen.at("lift3d.0.b"), 1, 1));
  x = relu(conv3d(x, gen.at("lift3d.1.w"), gen.at("lift3d.1.b"), 1, 1));
  return x;
}

template <typename T>
struct RenderOut {
  Tensor<T> image;    // [N,3,S,S], sigmoid
  Tensor<T> segment;  // [N,1,S,S], sigmoid
};

// Explicit rotation from the reference pose to each target pose, two 3D convs,
// depth-to-channel collapse, 2D decoding, and the two sigmoid heads.
template <typename T>
RenderOut<T> vgm_render(const Tensor<T>& volume, const std::vector<Pose>& targets,
                        const Pose& reference, const ParamSet<T>& gen, const ModelConfig& cfg) {
  const Shape& s = volume.shape();
  int64_t N = s[0], D = cfg.volume_size, vc = cfg.volume_channels;
  if (s.size() != 5 || s[1] != vc || s[2] != D || s[3] != D || s[4] != D)
    throw ShapeError("vgm_render: unexpected volume shape " + shape_str(s));
  if (targets.size() != 1 && targets.size() != static_cast<size_t>(N))
    throw GeometryError("vgm_render: need 1 or N target poses");
  std::vector<RotationMatrix> Rs;
  Rs.reserve(targets.size());
  for (const auto& t : targets) Rs.push_back(rotation_between(reference, t));
  Tensor<T> x = rotate_volume(volume, Rs, Interp::trilinear);
  x = relu(conv3d(x, gen.at("rend3d.0.w"), gen.at("rend3d.0.b"), 1, 1));
  x = relu(conv3d(x, gen.at("rend3d.1.w"), gen.at("rend3d.1.b"), 1, 1));
  x = reshape(x, {N, vc * D, D, D});
  auto dec = cfg.decoder_channels();
  for (size_t i = 0; i < dec.size(); ++i) {
    const std::string base = "dec." + std::to_string(i);
    x = upsample2x(relu(conv2d_hw(x, gen.at(base + ".w"), gen.at(base + ".b"), 1, 1, 1, 1)));
  }
  RenderOut<T> out;
  out.image = sigmoid(conv2d_hw(x, gen.at("head_img.w"), gen.at("head_img.b"), 1, 1, 1, 1));
  out.segment = sigmoid(conv2d_hw(x, gen.at("head_seg.w"), gen.at("head_seg.b"), 1, 1, 1, 1));
  return out;
}

template <typename T>
struct ForwardOut {
  Tensor<T> ir;
  Tensor<T> volume;
  Tensor<T> image;
  Tensor<T> segment;
};

// Whole generator pipeline with per-sample target poses (training form).
template <typename T>
ForwardOut<T> forward_model(const Tensor<T>& images, const std::vector<Pose>& targets,
                            const ModelParams<T>& params, const ModelConfig& cfg) {
  ForwardOut<T> out;
  out.ir = intrinsic_representation(images, params.gen, cfg);
  out.volume = vgm_lift(out.ir, params.gen, cfg);
  auto r = vgm_render(out.volume, targets, cfg.reference_pose, params.gen, cfg);
  out.image = r.image;
  out.segment = r.segment;
  return out;
}

// Novel view from a single image. There is no source-pose parameter: the
// source pose is neither known nor needed at synthesis time.
template <typename T>
Tensor<T> synthesize(const Tensor<T>& source_image, const Pose& target,
                     const ModelParams<T>& params, const ModelConfig& cfg) {
  return forward_model(source_image, {target}, params, cfg).image;
}

// Patch discriminator: stride-2 leaky-relu convs, final 1-channel conv with
// no activation (least-squares objective on raw scores).
template <typename T>
Tensor<T> discriminate(const Tensor<T>& image, const ParamSet<T>& disc, const ModelConfig& cfg) {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size)
    throw ShapeError("discriminate expects [N,3,S,S], got " + shape_str(s));
  Tensor<T> x = image;
  for (size_t i = 0; i < cfg.discriminator_channels.size(); ++i) {
    const std::string base = "d." + std::to_string(i);
    x = leaky_relu(conv2d_hw(x, disc.at(base + ".w"), disc.at(base + ".b"), 2, 2, 1, 1), T(0.2));
  }
  return conv2d_hw(x, disc.at("d.out.w"), disc.at("d.out.b"), 1, 1, 1, 1);
}

// Micro configuration used by gradient-check and smoke tests.
inline ModelConfig micro_model_config() {
  ModelConfig cfg;
  cfg.image_size = 16;
  cfg.encoder_channels = {8, 16};
  cfg.token_conv_layers = 2;
  cfg.volume_size = 4;
  cfg.volume_channels = 2;
  cfg.discriminator_channels = {8, 16};
  return cfg;
}

}  // namespace uvs
