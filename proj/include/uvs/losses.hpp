#pragma once

#include <functional>
#include <vector>

#include "uvs/nn.hpp"
#include "uvs/tensor.hpp"

namespace uvs {

// Eq-style loss weights: total = rec + alpha*ssim + beta*feature + gamma*shape
// + lambda*adversarial. Defaults follow the published setting (1, 5, 10, 0.5).
struct LossWeights {
  double alpha = 1.0;
  double beta = 5.0;
  double gamma = 10.0;
  double lambda = 0.5;
};

template <typename T>
struct LossBreakdown {
  Tensor<T> rec;    // pixel-wise L1
  Tensor<T> ssim;   // 1 - SSIM
  Tensor<T> feat;   // frozen-feature distance
  Tensor<T> shape;  // edge-map L1
  Tensor<T> adv;    // generator-side least-squares GAN term
  Tensor<T> total;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// Mean absolute difference over all elements.
template <typename T>
Tensor<T> color_loss(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "color_loss");
  return mean(abs(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Frozen feature network (stands in for a pretrained perceptual net)
// ---------------------------------------------------------------------------

// Four stride-2 tanh conv layers; activations are tapped after layers 2 and 4.
// Weights are seeded and frozen; externally supplied weights may replace them.
template <typename T>
struct FeatureNet {
  std::vector<NamedParam<T>> params;
  static constexpr int kLayers = 4;

  static FeatureNet seeded(uint64_t seed, int in_channels = 3) {
    int channels[kLayers + 1] = {in_channels, 8, 16, 16, 16};
    FeatureNet net;
    Rng rng(seed);
    for (int i = 0; i < kLayers; ++i) {
      ConvSpec spec{channels[i], channels[i + 1], 3, 2, 1, 2};
      net.params.push_back({"fnet." + std::to_string(i) + ".w",
                            init_conv_weights<T>(spec, rng.split(i * 2).seed(), false)});
      net.params.push_back(
          {"fnet." + std::to_string(i) + ".b", init_bias<T>(channels[i + 1], false)});
    }
    return net;
  }

  std::vector<Tensor<T>> taps(const Tensor<T>& img) const {
    std::vector<Tensor<T>> out;
    Tensor<T> x = img;
    for (int i = 0; i < kLayers; ++i) {
      const auto& w = params[i * 2].value;
      const auto& b = params[i * 2 + 1].value;
      x = tanh(conv2d_hw(x, w, b, 2, 2, 1, 1));
      if (i == 1 || i == 3) out.push_back(x);
    }
    return out;
  }
};

// Mean squared distance between frozen-net activations, summed over taps.
template <typename T>
Tensor<T> feature_loss(const Tensor<T>& a, const Tensor<T>& b, const FeatureNet<T>& net) {
  check_same_shape(a, b, "feature_loss");
  auto ta = net.taps(a);
  auto tb = net.taps(b);
  Tensor<T> loss = Tensor<T>::scalar(T(0));
  for (size_t i = 0; i < ta.size(); ++i) {
    auto d = sub(ta[i], tb[i]);
    loss = add(loss, mean(mul(d, d)));
  }
  return loss;
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

// Uniform-window SSIM for unit dynamic range, mean over windows and channels.
// C1 = 0.01^2, C2 = 0.03^2 by default.
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, int window = 7, double C1 = 1e-4,
               double C2 = 9e-4) {
  check_same_shape(a, b, "ssim");
  if (a.shape().size() != 4) throw ShapeError("ssim expects [N,C,H,W], got " + shape_str(a.shape()));
  if (window % 2 == 0) throw ShapeError("ssim window must be odd");
  auto c1 = Tensor<T>::scalar(static_cast<T>(C1));
  auto c2 = Tensor<T>::scalar(static_cast<T>(C2));
  auto two = Tensor<T>::scalar(T(2));
  auto mu_a = box_filter2d(a, window);
  auto mu_b = box_filter2d(b, window);
  auto var_a = sub(box_filter2d(mul(a, a), window), mul(mu_a, mu_a));
  auto var_b = sub(box_filter2d(mul(b, b), window), mul(mu_b, mu_b));
  auto cov = sub(box_filter2d(mul(a, b), window), mul(mu_a, mu_b));
  auto num = mul(add(mul(mul(two, mu_a), mu_b), c1), add(mul(two, cov), c2));
  auto den = mul(add(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1), add(add(var_a, var_b), c2));
  return mean(div(num, den));
}

template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& a, const Tensor<T>& b, int window = 7) {
  return sub(Tensor<T>::scalar(T(1)), ssim(a, b, window));
}

// ---------------------------------------------------------------------------
// Edge map and shape loss
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
const Tensor<T>& sobel_x() {
  static Tensor<T> k = Tensor<T>::from({1, 1, 3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
  return k;
}
template <typename T>
const Tensor<T>& sobel_y() {
  static Tensor<T> k = Tensor<T>::from({1, 1, 3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
  return k;
}
}  // namespace detail

// Channel-mean grayscale, 3x3 Sobel magnitude over a replicate-padded border,
// normalized per image to [0,1] by max(magnitude, 1e-6). A 1e-12 floor inside
// the square root keeps the magnitude differentiable on flat regions; its
// offset is subtracted back out so constant images map to exactly zero.
template <typename T>
Tensor<T> edge_map(const Tensor<T>& img) {
  if (img.shape().size() != 4)
    throw ShapeError("edge_map expects [N,C,H,W], got " + shape_str(img.shape()));
  auto gray = replicate_pad2d(mean(img, {1}, true), 1);
  auto zero_b = Tensor<T>::zeros({1});
  auto gx = conv2d_hw(gray, detail::sobel_x<T>(), zero_b, 1, 1, 0, 0);
  auto gy = conv2d_hw(gray, detail::sobel_y<T>(), zero_b, 1, 1, 0, 0);
  auto eps = Tensor<T>::scalar(T(1e-12));
  auto mag = sub(sqrt(add(add(mul(gx, gx), mul(gy, gy)), eps)), sqrt(eps));
  auto peak = clamp_min(reduce_max(mag, {1, 2, 3}, true), T(1e-6));
  return div(mag, peak);
}

// Mean absolute difference between edge maps.
template <typename T>
Tensor<T> shape_loss(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "shape_loss");
  return mean(abs(sub(edge_map(a), edge_map(b))));
}

// Variant used with dataset samples: the target side is a stored segment map.
template <typename T>
Tensor<T> shape_loss_vs_map(const Tensor<T>& synthesized, const Tensor<T>& target_map) {
  auto e = edge_map(synthesized);
  check_same_shape(e, target_map, "shape_loss_vs_map");
  return mean(abs(sub(e, target_map)));
}

// ---------------------------------------------------------------------------
// Least-squares GAN terms
// ---------------------------------------------------------------------------

template <typename T>
using DiscFn = std::function<Tensor<T>(const Tensor<T>&)>;

// L_D = mean((D(real)-1)^2) + mean(D(fake_detached)^2); the fake branch is
// detached so no gradient reaches the generator from this loss.
template <typename T>
Tensor<T> disc_loss(const DiscFn<T>& discriminator, const Tensor<T>& real, const Tensor<T>& fake) {
  auto one = Tensor<T>::scalar(T(1));
  auto dr = sub(discriminator(real), one);
  auto df = discriminator(fake.detach());
  return add(mean(mul(dr, dr)), mean(mul(df, df)));
}

// L_A = mean((D(fake)-1)^2); gradients flow into the generator through fake.
template <typename T>
Tensor<T> gen_adv_loss(const DiscFn<T>& discriminator, const Tensor<T>& fake) {
  auto one = Tensor<T>::scalar(T(1));
  auto d = sub(discriminator(fake), one);
  return mean(mul(d, d));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> adversarial_losses(const DiscFn<T>& discriminator,
                                                   const Tensor<T>& real, const Tensor<T>& fake) {
  return {gen_adv_loss(discriminator, fake), disc_loss(discriminator, real, fake)};
}

// ---------------------------------------------------------------------------
// Weighted combination
// ---------------------------------------------------------------------------

// Total = rec + alpha*ssim + beta*feat + gamma*shape + lambda*adv, built as
// one differentiable expression. When target_seg is given it replaces the
// source-side edge map in the shape term.
template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& source, const Tensor<T>& synthesized,
                            const LossWeights& w, const FeatureNet<T>& fnet,
                            const DiscFn<T>& discriminator,
                            const Tensor<T>* target_seg = nullptr) {
  LossBreakdown<T> out;
  out.rec = color_loss(synthesized, source);
  out.ssim = ssim_loss(synthesized, source);
  out.feat = feature_loss(synthesized, source, fnet);
  out.shape = target_seg ? shape_loss_vs_map(synthesized, *target_seg)
                         : shape_loss(source, synthesized);
  out.adv = gen_adv_loss(discriminator, synthesized);
  out.total = add(
      add(add(add(out.rec, mul(out.ssim, static_cast<T>(w.alpha))),
              mul(out.feat, static_cast<T>(w.beta))),
          mul(out.shape, static_cast<T>(w.gamma))),
      mul(out.adv, static_cast<T>(w.lambda)));
  return out;
}

}  // namespace uvs
