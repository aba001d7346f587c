#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "uvs/rng.hpp"
#include "uvs/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uvs {

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int dims = 2;  // 2 or 3
};

inline int64_t conv_out_size(int64_t in, int kernel, int stride, int padding) {
  int64_t out = (in + 2 * padding - kernel) / stride + 1;
  if (out < 1)
    throw ShapeError("convolution output size < 1 for input " + std::to_string(in) + ", kernel " +
                     std::to_string(kernel) + ", stride " + std::to_string(stride) + ", padding " +
                     std::to_string(padding));
  return out;
}

namespace detail {

// Output-index bounds for which the sampled input index stays in range:
// in = out*stride + k - pad, 0 <= in < limit.
inline void conv_bounds(int64_t limit, int stride, int off, int64_t out_n, int64_t& lo,
                        int64_t& hi) {
  lo = off < 0 ? (-off + stride - 1) / stride : 0;
  hi = (limit - 1 - off) / stride;
  if (hi > out_n - 1) hi = out_n - 1;
}

}  // namespace detail

// 2D cross-correlation with zero padding; separate h/w kernel geometry so the
// 1-D token convolution can reuse it with a (1,k) kernel.
template <typename T>
Tensor<T> conv2d_hw(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int sh, int sw,
                    int ph, int pw) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4)
    throw ShapeError("conv2d expects input [N,C,H,W] and weights [O,C,kh,kw], got " +
                     shape_str(xs) + " and " + shape_str(ws));
  int64_t N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  int64_t Co = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != Ci)
    throw ShapeError("conv2d channel mismatch: input " + shape_str(xs) + " vs weights " +
                     shape_str(ws));
  if (b.numel() != Co) throw ShapeError("conv2d bias size != out channels");
  int64_t Ho = conv_out_size(H, static_cast<int>(kh), sh, ph);
  int64_t Wo = conv_out_size(W, static_cast<int>(kw), sw, pw);

  std::vector<T> out(N * Co * Ho * Wo);
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  const T* bv = b.values().data();

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (N * Co * Ho * Wo > 4096)
#endif
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Co; ++co) {
      T* op = out.data() + ((n * Co + co) * Ho) * Wo;
      std::fill(op, op + Ho * Wo, bv[co]);
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const T* xp = xv + ((n * Ci + ci) * H) * W;
        const T* wp = wv + ((co * Ci + ci) * kh) * kw;
        for (int64_t r = 0; r < kh; ++r) {
          for (int64_t c = 0; c < kw; ++c) {
            T wval = wp[r * kw + c];
            if (wval == T(0)) continue;
            int offh = static_cast<int>(r) - ph;
            int offw = static_cast<int>(c) - pw;
            int64_t ho_lo, ho_hi, wo_lo, wo_hi;
            detail::conv_bounds(H, sh, offh, Ho, ho_lo, ho_hi);
            detail::conv_bounds(W, sw, offw, Wo, wo_lo, wo_hi);
            for (int64_t ho = ho_lo; ho <= ho_hi; ++ho) {
              const T* xrow = xp + (ho * sh + offh) * W + offw;
              T* orow = op + ho * Wo;
              for (int64_t wo = wo_lo; wo <= wo_hi; ++wo) orow[wo] += wval * xrow[wo * sw];
            }
          }
        }
      }
    }
  }

  Tensor<T> xc = x, wc = w, bc = b;
  return make_op<T>(
      "conv2d", {N, Co, Ho, Wo}, std::move(out), {x, w, b},
      [xc, wc, bc, N, Ci, H, W, Co, kh, kw, Ho, Wo, sh, sw, ph, pw](const std::vector<T>& g,
                                                                    GradSink<T>& sink) {
        const T* xv = xc.values().data();
        const T* wv = wc.values().data();
        if (bc.requires_grad()) {
          auto& gb = sink.buffer(bc.node().get());
          for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Co; ++co) {
              const T* gp = g.data() + ((n * Co + co) * Ho) * Wo;
              T acc = 0;
              for (int64_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
              gb[co] += acc;
            }
        }
        if (wc.requires_grad()) {
          auto& gw = sink.buffer(wc.node().get());
          T* gwp = gw.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (Co * Ci * kh * kw > 256)
#endif
          for (int64_t co = 0; co < Co; ++co) {
            for (int64_t ci = 0; ci < Ci; ++ci) {
              for (int64_t r = 0; r < kh; ++r) {
                for (int64_t c = 0; c < kw; ++c) {
                  int offh = static_cast<int>(r) - ph;
                  int offw = static_cast<int>(c) - pw;
                  int64_t ho_lo, ho_hi, wo_lo, wo_hi;
                  detail::conv_bounds(H, sh, offh, Ho, ho_lo, ho_hi);
                  detail::conv_bounds(W, sw, offw, Wo, wo_lo, wo_hi);
                  T acc = 0;
                  for (int64_t n = 0; n < N; ++n) {
                    const T* xp = xv + ((n * Ci + ci) * H) * W;
                    const T* gp = g.data() + ((n * Co + co) * Ho) * Wo;
                    for (int64_t ho = ho_lo; ho <= ho_hi; ++ho) {
                      const T* xrow = xp + (ho * sh + offh) * W + offw;
                      const T* grow = gp + ho * Wo;
                      for (int64_t wo = wo_lo; wo <= wo_hi; ++wo) acc += grow[wo] * xrow[wo * sw];
                    }
                  }
                  gwp[((co * Ci + ci) * kh + r) * kw + c] += acc;
                }
              }
            }
          }
        }
        if (xc.requires_grad()) {
          auto& gx = sink.buffer(xc.node().get());
          T* gxp = gx.data();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (N * Ci * H * W > 4096)
#endif
          for (int64_t n = 0; n < N; ++n) {
            for (int64_t ci = 0; ci < Ci; ++ci) {
              T* gxs = gxp + ((n * Ci + ci) * H) * W;
              for (int64_t co = 0; co < Co; ++co) {
                const T* gp = g.data() + ((n * Co + co) * Ho) * Wo;
                const T* wp = wv + ((co * Ci + ci) * kh) * kw;
                for (int64_t r = 0; r < kh; ++r) {
                  for (int64_t c = 0; c < kw; ++c) {
                    T wval = wp[r * kw + c];
                    if (wval == T(0)) continue;
                    int offh = static_cast<int>(r) - ph;
                    int offw = static_cast<int>(c) - pw;
                    int64_t ho_lo, ho_hi, wo_lo, wo_hi;
                    detail::conv_bounds(H, sh, offh, Ho, ho_lo, ho_hi);
                    detail::conv_bounds(W, sw, offw, Wo, wo_lo, wo_hi);
                    for (int64_t ho = ho_lo; ho <= ho_hi; ++ho) {
                      T* gxrow = gxs + (ho * sh + offh) * W + offw;
                      const T* grow = gp + ho * Wo;
                      for (int64_t wo = wo_lo; wo <= wo_hi; ++wo)
                        gxrow[wo * sw] += wval * grow[wo];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

// 3D cross-correlation, cubic kernel geometry.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 5)
    throw ShapeError("conv3d expects input [N,C,D,H,W] and weights [O,C,k,k,k], got " +
                     shape_str(xs) + " and " + shape_str(ws));
  int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
  int64_t Co = ws[0], k = ws[2];
  if (ws[1] != Ci || ws[3] != k || ws[4] != k)
    throw ShapeError("conv3d weight shape mismatch: " + shape_str(ws) + " for input " +
                     shape_str(xs));
  if (b.numel() != Co) throw ShapeError("conv3d bias size != out channels");
  int64_t Do = conv_out_size(D, static_cast<int>(k), stride, pad);
  int64_t Ho = conv_out_size(H, static_cast<int>(k), stride, pad);
  int64_t Wo = conv_out_size(W, static_cast<int>(k), stride, pad);

  std::vector<T> out(N * Co * Do * Ho * Wo);
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  const T* bv = b.values().data();

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (N * Co * Do * Ho * Wo > 4096)
#endif
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Co; ++co) {
      T* op = out.data() + ((n * Co + co) * Do) * Ho * Wo;
      std::fill(op, op + Do * Ho * Wo, bv[co]);
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const T* xp = xv + ((n * Ci + ci) * D) * H * W;
        const T* wp = wv + (((co * Ci + ci) * k) * k) * k;
        for (int64_t rd = 0; rd < k; ++rd) {
          for (int64_t rh = 0; rh < k; ++rh) {
            for (int64_t rc = 0; rc < k; ++rc) {
              T wval = wp[(rd * k + rh) * k + rc];
              if (wval == T(0)) continue;
              int offd = static_cast<int>(rd) - pad;
              int offh = static_cast<int>(rh) - pad;
              int offw = static_cast<int>(rc) - pad;
              int64_t do_lo, do_hi, ho_lo, ho_hi, wo_lo, wo_hi;
              detail::conv_bounds(D, stride, offd, Do, do_lo, do_hi);
              detail::conv_bounds(H, stride, offh, Ho, ho_lo, ho_hi);
              detail::conv_bounds(W, stride, offw, Wo, wo_lo, wo_hi);
              for (int64_t zo = do_lo; zo <= do_hi; ++zo) {
                for (int64_t ho = ho_lo; ho <= ho_hi; ++ho) {
                  const T* xrow = xp + ((zo * stride + offd) * H + ho * stride + offh) * W + offw;
                  T* orow = op + (zo * Ho + ho) * Wo;
                  for (int64_t wo = wo_lo; wo <= wo_hi; ++wo) orow[wo] += wval * xrow[wo * stride];
                }
              }
            }
          }
        }
      }
    }
  }

  Tensor<T> xc = x, wc = w, bc = b;
  return make_op<T>(
      "conv3d", {N, Co, Do, Ho, Wo}, std::move(out), {x, w, b},
      [xc, wc, bc, N, Ci, D, H, W, Co, k, Do, Ho, Wo, stride, pad](const std::vector<T>& g,
                                                                   GradSink<T>& sink) {
        const T* xv = xc.values().data();
        const T* wv = wc.values().data();
        if (bc.requires_grad()) {
          auto& gb = sink.buffer(bc.node().get());
          for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Co; ++co) {
              const T* gp = g.data() + ((n * Co + co) * Do) * Ho * Wo;
              T acc = 0;
              for (int64_t i = 0; i < Do * Ho * Wo; ++i) acc += gp[i];
              gb[co] += acc;
            }
        }
        if (wc.requires_grad()) {
          auto& gw = sink.buffer(wc.node().get());
          T* gwp = gw.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (Co > 1)
#endif
          for (int64_t co = 0; co < Co; ++co) {
            for (int64_t ci = 0; ci < Ci; ++ci) {
              for (int64_t rd = 0; rd < k; ++rd) {
                for (int64_t rh = 0; rh < k; ++rh) {
                  for (int64_t rc = 0; rc < k; ++rc) {
                    int offd = static_cast<int>(rd) - pad;
                    int offh = static_cast<int>(rh) - pad;
                    int offw = static_cast<int>(rc) - pad;
                    int64_t do_lo, do_hi, ho_lo, ho_hi, wo_lo, wo_hi;
                    detail::conv_bounds(D, stride, offd, Do, do_lo, do_hi);
                    detail::conv_bounds(H, stride, offh, Ho, ho_lo, ho_hi);
                    detail::conv_bounds(W, stride, offw, Wo, wo_lo, wo_hi);
                    T acc = 0;
                    for (int64_t n = 0; n < N; ++n) {
                      const T* xp = xv + ((n * Ci + ci) * D) * H * W;
                      const T* gp = g.data() + ((n * Co + co) * Do) * Ho * Wo;
                      for (int64_t zo = do_lo; zo <= do_hi; ++zo) {
                        for (int64_t ho = ho_lo; ho <= ho_hi; ++ho) {
                          const T* xrow =
                              xp + ((zo * stride + offd) * H + ho * stride + offh) * W + offw;
                          const T* grow = gp + (zo * Ho + ho) * Wo;
                          for (int64_t wo = wo_lo; wo <= wo_hi; ++wo)
                            acc += grow[wo] * xrow[wo * stride];
                        }
                      }
                    }
                    gwp[(((co * Ci + ci) * k + rd) * k + rh) * k + rc] += acc;
                  }
                }
              }
            }
          }
        }
        if (xc.requires_grad()) {
          auto& gx = sink.buffer(xc.node().get());
          T* gxp = gx.data();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (N * Ci > 1)
#endif
          for (int64_t n = 0; n < N; ++n) {
            for (int64_t ci = 0; ci < Ci; ++ci) {
              T* gxs = gxp + ((n * Ci + ci) * D) * H * W;
              for (int64_t co = 0; co < Co; ++co) {
                const T* gp = g.data() + ((n * Co + co) * Do) * Ho * Wo;
                const T* wp = wv + (((co * Ci + ci) * k) * k) * k;
                for (int64_t rd = 0; rd < k; ++rd) {
                  for (int64_t rh = 0; rh < k; ++rh) {
                    for (int64_t rc = 0; rc < k; ++rc) {
                      T wval = wp[(rd * k + rh) * k + rc];
                      if (wval == T(0)) continue;
                      int offd = static_cast<int>(rd) - pad;
                      int offh = static_cast<int>(rh) - pad;
                      int offw = static_cast<int>(rc) - pad;
                      int64_t do_lo, do_hi, ho_lo, ho_hi, wo_lo, wo_hi;
                      detail::conv_bounds(D, stride, offd, Do, do_lo, do_hi);
                      detail::conv_bounds(H, stride, offh, Ho, ho_lo, ho_hi);
                      detail::conv_bounds(W, stride, offw, Wo, wo_lo, wo_hi);
                      for (int64_t zo = do_lo; zo <= do_hi; ++zo) {
                        for (int64_t ho = ho_lo; ho <= ho_hi; ++ho) {
                          T* gxrow =
                              gxs + ((zo * stride + offd) * H + ho * stride + offh) * W + offw;
                          const T* grow = gp + (zo * Ho + ho) * Wo;
                          for (int64_t wo = wo_lo; wo <= wo_hi; ++wo)
                            gxrow[wo * stride] += wval * grow[wo];
                        }
                      }
                    }
                  }
                }
              }
            }
          }
        }
      });
}

// Spec-surface convolution: square/cubic kernels per ConvSpec.
template <typename T>
Tensor<T> conv(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights,
               const Tensor<T>& bias) {
  if (spec.dims == 2) {
    if (input.shape().size() != 4)
      throw ShapeError("conv dims=2 expects rank-4 input, got " + shape_str(input.shape()));
    if (input.shape()[1] != spec.in_channels)
      throw ShapeError("conv input channels " + std::to_string(input.shape()[1]) +
                       " != spec in_channels " + std::to_string(spec.in_channels));
    return conv2d_hw(input, weights, bias, spec.stride, spec.stride, spec.padding, spec.padding);
  }
  if (spec.dims == 3) {
    if (input.shape().size() != 5)
      throw ShapeError("conv dims=3 expects rank-5 input, got " + shape_str(input.shape()));
    if (input.shape()[1] != spec.in_channels)
      throw ShapeError("conv input channels " + std::to_string(input.shape()[1]) +
                       " != spec in_channels " + std::to_string(spec.in_channels));
    return conv3d(input, weights, bias, spec.stride, spec.padding);
  }
  throw ShapeError("conv dims must be 2 or 3");
}

// Nearest-neighbor doubling of every spatial dim; gradient sums over the
// replicated cells.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  const Shape& xs = x.shape();
  if (xs.size() < 3)
    throw ShapeError("upsample2x expects [N,C,spatial...], got " + shape_str(xs));
  size_t nspatial = xs.size() - 2;
  Shape out = xs;
  for (size_t i = 2; i < xs.size(); ++i) out[i] *= 2;
  int64_t n_out = shape_numel(out);
  const auto& xv = x.values();
  std::vector<T> v(n_out);

  // map[out_spatial_linear] = in_spatial_linear, shared by every (n, c) slab
  int64_t in_sp = 1, out_sp = 1;
  for (size_t i = 2; i < xs.size(); ++i) {
    in_sp *= xs[i];
    out_sp *= out[i];
  }
  std::vector<int64_t> map(out_sp);
  {
    std::vector<int64_t> in_strides(nspatial, 1);
    for (int64_t i = static_cast<int64_t>(nspatial) - 2; i >= 0; --i)
      in_strides[i] = in_strides[i + 1] * xs[i + 3];
    std::vector<int64_t> idx(nspatial, 0);
    for (int64_t o = 0; o < out_sp; ++o) {
      int64_t src = 0;
      for (size_t d = 0; d < nspatial; ++d) src += (idx[d] / 2) * in_strides[d];
      map[o] = src;
      for (size_t d = nspatial; d-- > 0;) {
        if (++idx[d] < out[d + 2]) break;
        idx[d] = 0;
      }
    }
  }
  int64_t slabs = xs[0] * xs[1];
  for (int64_t s = 0; s < slabs; ++s) {
    const T* xin = xv.data() + s * in_sp;
    T* xout = v.data() + s * out_sp;
    for (int64_t o = 0; o < out_sp; ++o) xout[o] = xin[map[o]];
  }
  Tensor<T> xc = x;
  return make_op<T>("upsample2x", std::move(out), std::move(v), {x},
                    [xc, map = std::move(map), slabs, in_sp, out_sp](const std::vector<T>& g,
                                                                     GradSink<T>& sink) {
                      if (!xc.requires_grad()) return;
                      auto& buf = sink.buffer(xc.node().get());
                      for (int64_t s = 0; s < slabs; ++s) {
                        const T* gp = g.data() + s * out_sp;
                        T* bp = buf.data() + s * in_sp;
                        for (int64_t o = 0; o < out_sp; ++o) bp[map[o]] += gp[o];
                      }
                    });
}

// Border-replicating pad on the two trailing spatial dims.
template <typename T>
Tensor<T> replicate_pad2d(const Tensor<T>& x, int p) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("replicate_pad2d expects [N,C,H,W], got " + shape_str(xs));
  int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  int64_t Ho = H + 2 * p, Wo = W + 2 * p;
  std::vector<int64_t> map(Ho * Wo);
  for (int64_t i = 0; i < Ho; ++i) {
    int64_t si = std::clamp<int64_t>(i - p, 0, H - 1);
    for (int64_t j = 0; j < Wo; ++j) {
      int64_t sj = std::clamp<int64_t>(j - p, 0, W - 1);
      map[i * Wo + j] = si * W + sj;
    }
  }
  std::vector<T> out(N * C * Ho * Wo);
  const T* xv = x.values().data();
  for (int64_t s = 0; s < N * C; ++s) {
    const T* xp = xv + s * H * W;
    T* op = out.data() + s * Ho * Wo;
    for (int64_t i = 0; i < Ho * Wo; ++i) op[i] = xp[map[i]];
  }
  Tensor<T> xc = x;
  return make_op<T>("replicate_pad2d", {N, C, Ho, Wo}, std::move(out), {x},
                    [xc, map = std::move(map), N, C, H, W, Ho, Wo](const std::vector<T>& g,
                                                                   GradSink<T>& sink) {
                      if (!xc.requires_grad()) return;
                      auto& buf = sink.buffer(xc.node().get());
                      for (int64_t s = 0; s < N * C; ++s) {
                        const T* gp = g.data() + s * Ho * Wo;
                        T* bp = buf.data() + s * H * W;
                        for (int64_t i = 0; i < Ho * Wo; ++i) bp[map[i]] += gp[i];
                      }
                    });
}

// Per-channel k x k box-filter mean over valid windows (stride 1, no padding).
template <typename T>
Tensor<T> box_filter2d(const Tensor<T>& x, int k) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("box_filter2d expects [N,C,H,W], got " + shape_str(xs));
  int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (k < 1 || k > H || k > W)
    throw ShapeError("box_filter2d window " + std::to_string(k) + " invalid for " + shape_str(xs));
  int64_t Ho = H - k + 1, Wo = W - k + 1;
  T inv = T(1) / static_cast<T>(k * k);
  std::vector<T> out(N * C * Ho * Wo, T(0));
  const T* xv = x.values().data();
  for (int64_t s = 0; s < N * C; ++s) {
    const T* xp = xv + s * H * W;
    T* op = out.data() + s * Ho * Wo;
    for (int64_t ho = 0; ho < Ho; ++ho) {
      for (int64_t wo = 0; wo < Wo; ++wo) {
        T acc = 0;
        for (int64_t r = 0; r < k; ++r) {
          const T* row = xp + (ho + r) * W + wo;
          for (int64_t c = 0; c < k; ++c) acc += row[c];
        }
        op[ho * Wo + wo] = acc * inv;
      }
    }
  }
  Tensor<T> xc = x;
  return make_op<T>("box_filter2d", {N, C, Ho, Wo}, std::move(out), {x},
                    [xc, N, C, H, W, Ho, Wo, k, inv](const std::vector<T>& g, GradSink<T>& sink) {
                      if (!xc.requires_grad()) return;
                      auto& buf = sink.buffer(xc.node().get());
                      for (int64_t s = 0; s < N * C; ++s) {
                        const T* gp = g.data() + s * Ho * Wo;
                        T* bp = buf.data() + s * H * W;
                        for (int64_t ho = 0; ho < Ho; ++ho) {
                          for (int64_t wo = 0; wo < Wo; ++wo) {
                            T gval = gp[ho * Wo + wo] * inv;
                            for (int64_t r = 0; r < k; ++r) {
                              T* row = bp + (ho + r) * W + wo;
                              for (int64_t c = 0; c < k; ++c) row[c] += gval;
                            }
                          }
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

// He-style fan-in scaled normal init, deterministic per seed.
template <typename T>
Tensor<T> init_conv_weights(const ConvSpec& spec, uint64_t seed, bool requires_grad = true) {
  int64_t ksize = 1;
  for (int d = 0; d < spec.dims; ++d) ksize *= spec.kernel;
  int64_t fan_in = spec.in_channels * ksize;
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  Shape shape;
  shape.push_back(spec.out_channels);
  shape.push_back(spec.in_channels);
  for (int d = 0; d < spec.dims; ++d) shape.push_back(spec.kernel);
  Rng rng(seed);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * std);
  return Tensor<T>::from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> init_bias(int out_channels, bool requires_grad = true) {
  return Tensor<T>::zeros({out_channels}, requires_grad);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> value;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void ensure(const std::vector<NamedParam<T>>& params) {
    if (m.size() == params.size()) return;
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.value.numel(), T(0));
      v.emplace_back(p.value.numel(), T(0));
    }
  }
};

class OptimError : public std::runtime_error {
 public:
  explicit OptimError(const std::string& msg) : std::runtime_error(msg) {}
};

// Standard Adam update with bias correction. Parameters with no gradient
// entry are treated as zero-gradient (their moments decay).
template <typename T>
void adam_step(std::vector<NamedParam<T>>& params, const GradientMap<T>& grads,
               AdamState<T>& state, double lr) {
  if (lr <= 0) throw OptimError("adam_step: lr must be positive");
  state.ensure(params);
  state.t += 1;
  double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    Tensor<T> g = grads.at(p.value);
    const auto& gv = g.values();
    auto& pv = p.value.raw_values();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    T beta1 = static_cast<T>(state.beta1), beta2 = static_cast<T>(state.beta2);
    for (size_t i = 0; i < pv.size(); ++i) {
      T gi = gv[i];
      if (!std::isfinite(static_cast<double>(gi)))
        throw OptimError("non-finite gradient for parameter '" + p.name + "' at element " +
                         std::to_string(i));
      m[i] = beta1 * m[i] + (T(1) - beta1) * gi;
      v[i] = beta2 * v[i] + (T(1) - beta2) * gi * gi;
      T mhat = m[i] / static_cast<T>(b1t);
      T vhat = v[i] / static_cast<T>(b2t);
      pv[i] -= static_cast<T>(lr) * mhat / (std::sqrt(vhat) + static_cast<T>(state.eps));
    }
  }
}

}  // namespace uvs
