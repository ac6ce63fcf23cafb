#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hseg/parallel.hpp"
#include "hseg/tensor.hpp"

namespace hseg {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

// Square-kernel 2-D convolution weights. kernel is (out_ch, in_ch/groups, k, k);
// bias is (out_ch,1,1,1) when has_bias.
template <class Real>
struct ConvWeights {
  Tensor<Real> kernel;
  Tensor<Real> bias;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  bool has_bias = false;

  ConvWeights() = default;
  ConvWeights(int out_ch, int in_ch, int k, int stride_, int padding_, int groups_,
              bool bias_)
      : kernel(out_ch, in_ch / groups_, k, k),
        bias(bias_ ? out_ch : 0, bias_ ? 1 : 0, bias_ ? 1 : 0, bias_ ? 1 : 0),
        stride(stride_),
        padding(padding_),
        groups(groups_),
        has_bias(bias_) {
    require(stride_ >= 1, "conv: stride must be positive");
    require(padding_ >= 0, "conv: padding must be non-negative");
    require(groups_ >= 1 && in_ch % groups_ == 0 && out_ch % groups_ == 0,
            "conv: groups must divide both channel counts");
  }

  int out_ch() const { return kernel.n; }
  int in_ch() const { return kernel.c * groups; }
  int k() const { return kernel.h; }

  void init_he(Rng& rng) {
    const double fan_in = static_cast<double>(kernel.c) * kernel.h * kernel.w;
    fill_normal(kernel, rng, std::sqrt(2.0 / fan_in));
    bias.fill(Real(0));
  }
};

inline int conv_out_extent(int in, int k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

inline int floor_div(int a, int b) {
  const int q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const ConvWeights<Real>& wts) {
  require(x.c == wts.in_ch(), "conv2d: input " + x.shape_str() + " does not match kernel " +
                                  wts.kernel.shape_str() + " with groups=" +
                                  std::to_string(wts.groups));
  const int k = wts.k(), s = wts.stride, p = wts.padding;
  const int oh = conv_out_extent(x.h, k, s, p);
  const int ow = conv_out_extent(x.w, k, s, p);
  require(oh >= 1 && ow >= 1, "conv2d: no valid output positions for input " +
                                  x.shape_str() + " with k=" + std::to_string(k) +
                                  " s=" + std::to_string(s) + " p=" + std::to_string(p));
  const int oc_total = wts.out_ch();
  const int icpg = x.c / wts.groups;
  const int ocpg = oc_total / wts.groups;

  Tensor<Real> y(x.n, oc_total, oh, ow);
  parallel_for(0, static_cast<long>(x.n) * oc_total, [&](long job) {
    const int in = static_cast<int>(job / oc_total);
    const int oc = static_cast<int>(job % oc_total);
    const int g = oc / ocpg;
    Real* yp = y.plane(in, oc);
    if (wts.has_bias) {
      const Real b = wts.bias.v[static_cast<size_t>(oc)];
      for (int i = 0; i < oh * ow; ++i) yp[i] = b;
    }
    for (int icg = 0; icg < icpg; ++icg) {
      const Real* xp = x.plane(in, g * icpg + icg);
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Real wv = wts.kernel.at(oc, icg, ky, kx);
          if (wv == Real(0)) continue;
          // valid output ranges for this kernel tap
          const int oy_lo = std::max(0, (p - ky + s - 1) / s);
          const int oy_hi = std::min(oh, floor_div(x.h - 1 - ky + p, s) + 1);
          const int ox_lo = std::max(0, (p - kx + s - 1) / s);
          const int ox_hi = std::min(ow, floor_div(x.w - 1 - kx + p, s) + 1);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const int iy = oy * s - p + ky;
            Real* yrow = yp + static_cast<size_t>(oy) * ow;
            const Real* xrow = xp + static_cast<size_t>(iy) * x.w;
            if (s == 1) {
              const Real* xs = xrow - p + kx;
              for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xs[ox];
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                yrow[ox] += wv * xrow[ox * s - p + kx];
            }
          }
        }
      }
    }
  });
  return y;
}

// Gradients of conv2d. grad_x may be null when the input gradient is not needed
// (first layer). grad_w/grad_b are accumulated into.
template <class Real>
void conv2d_backward(const Tensor<Real>& x, const ConvWeights<Real>& wts,
                     const Tensor<Real>& gy, Tensor<Real>* grad_x,
                     Tensor<Real>& grad_w, Tensor<Real>& grad_b) {
  const int k = wts.k(), s = wts.stride, p = wts.padding;
  const int oh = gy.h, ow = gy.w;
  const int oc_total = wts.out_ch();
  const int icpg = x.c / wts.groups;
  const int ocpg = oc_total / wts.groups;

  // weight and bias gradients: each oc slice has a single writer
  parallel_for(0, oc_total, [&](long ocl) {
    const int oc = static_cast<int>(ocl);
    const int g = oc / ocpg;
    if (wts.has_bias) {
      double acc = 0.0;
      for (int in = 0; in < x.n; ++in) {
        const Real* gp = gy.plane(in, oc);
        for (int i = 0; i < oh * ow; ++i) acc += gp[i];
      }
      grad_b.v[static_cast<size_t>(oc)] += static_cast<Real>(acc);
    }
    for (int icg = 0; icg < icpg; ++icg) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (int in = 0; in < x.n; ++in) {
            const Real* gp = gy.plane(in, oc);
            const Real* xp = x.plane(in, g * icpg + icg);
            const int oy_lo = std::max(0, (p - ky + s - 1) / s);
            const int oy_hi = std::min(oh, floor_div(x.h - 1 - ky + p, s) + 1);
            const int ox_lo = std::max(0, (p - kx + s - 1) / s);
            const int ox_hi = std::min(ow, floor_div(x.w - 1 - kx + p, s) + 1);
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const int iy = oy * s - p + ky;
              const Real* grow = gp + static_cast<size_t>(oy) * ow;
              const Real* xrow = xp + static_cast<size_t>(iy) * x.w;
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                acc += grow[ox] * xrow[ox * s - p + kx];
            }
          }
          grad_w.at(oc, icg, ky, kx) += static_cast<Real>(acc);
        }
      }
    }
  });

  if (!grad_x) return;
  // input gradient: scatter per image, single writer per image plane set
  parallel_for(0, x.n, [&](long inl) {
    const int in = static_cast<int>(inl);
    for (int oc = 0; oc < oc_total; ++oc) {
      const int g = oc / ocpg;
      const Real* gp = gy.plane(in, oc);
      for (int icg = 0; icg < icpg; ++icg) {
        Real* gxp = grad_x->plane(in, g * icpg + icg);
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const Real wv = wts.kernel.at(oc, icg, ky, kx);
            if (wv == Real(0)) continue;
            const int oy_lo = std::max(0, (p - ky + s - 1) / s);
            const int oy_hi = std::min(oh, floor_div(x.h - 1 - ky + p, s) + 1);
            const int ox_lo = std::max(0, (p - kx + s - 1) / s);
            const int ox_hi = std::min(ow, floor_div(x.w - 1 - kx + p, s) + 1);
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const int iy = oy * s - p + ky;
              const Real* grow = gp + static_cast<size_t>(oy) * ow;
              Real* gxrow = gxp + static_cast<size_t>(iy) * x.w;
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                gxrow[ox * s - p + kx] += wv * grow[ox];
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Bilinear sampling (zero padding outside, used by DCN) and upsampling
// (edge clamped, align_corners=false)
// ---------------------------------------------------------------------------

// One bilinear read of plane (H,W) at fractional (px, py); neighbours outside
// the map contribute zero. Also returns d(value)/d(px), d(value)/d(py).
template <class Real>
struct BilinearTap {
  Real value = 0, ddx = 0, ddy = 0;
};

template <class Real>
BilinearTap<Real> bilinear_tap(const Real* plane, int h, int w, Real px, Real py) {
  BilinearTap<Real> out;
  if (py <= Real(-1) || py >= Real(h) || px <= Real(-1) || px >= Real(w)) return out;
  const int y0 = static_cast<int>(std::floor(py));
  const int x0 = static_cast<int>(std::floor(px));
  const Real ty = py - y0, tx = px - x0;
  Real v00 = 0, v01 = 0, v10 = 0, v11 = 0;
  const bool y0i = y0 >= 0 && y0 < h, y1i = y0 + 1 >= 0 && y0 + 1 < h;
  const bool x0i = x0 >= 0 && x0 < w, x1i = x0 + 1 >= 0 && x0 + 1 < w;
  if (y0i && x0i) v00 = plane[static_cast<size_t>(y0) * w + x0];
  if (y0i && x1i) v01 = plane[static_cast<size_t>(y0) * w + x0 + 1];
  if (y1i && x0i) v10 = plane[static_cast<size_t>(y0 + 1) * w + x0];
  if (y1i && x1i) v11 = plane[static_cast<size_t>(y0 + 1) * w + x0 + 1];
  out.value = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
  out.ddx = (1 - ty) * (v01 - v00) + ty * (v11 - v10);
  out.ddy = (1 - tx) * (v10 - v00) + tx * (v11 - v01);
  return out;
}

// Scatter g into the bilinear neighbourhood of (px, py) (transpose of the read).
template <class Real>
void bilinear_tap_backward(Real* grad_plane, int h, int w, Real px, Real py, Real g) {
  if (py <= Real(-1) || py >= Real(h) || px <= Real(-1) || px >= Real(w)) return;
  const int y0 = static_cast<int>(std::floor(py));
  const int x0 = static_cast<int>(std::floor(px));
  const Real ty = py - y0, tx = px - x0;
  const bool y0i = y0 >= 0 && y0 < h, y1i = y0 + 1 >= 0 && y0 + 1 < h;
  const bool x0i = x0 >= 0 && x0 < w, x1i = x0 + 1 >= 0 && x0 + 1 < w;
  if (y0i && x0i) grad_plane[static_cast<size_t>(y0) * w + x0] += g * (1 - ty) * (1 - tx);
  if (y0i && x1i) grad_plane[static_cast<size_t>(y0) * w + x0 + 1] += g * (1 - ty) * tx;
  if (y1i && x0i) grad_plane[static_cast<size_t>(y0 + 1) * w + x0] += g * ty * (1 - tx);
  if (y1i && x1i) grad_plane[static_cast<size_t>(y0 + 1) * w + x0 + 1] += g * ty * tx;
}

// Per-channel bilinear read of a single image tensor (n must be 1).
template <class Real>
std::vector<Real> bilinear_sample(const Tensor<Real>& map, Real px, Real py) {
  require(map.n == 1, "bilinear_sample: expects a single image, got " + map.shape_str());
  std::vector<Real> out(static_cast<size_t>(map.c));
  for (int ic = 0; ic < map.c; ++ic)
    out[static_cast<size_t>(ic)] = bilinear_tap(map.plane(0, ic), map.h, map.w, px, py).value;
  return out;
}

// Source coordinate for align_corners=false resize, clamped low like the
// standard formulation so border samples replicate the edge value.
inline double resize_src_coord(int dst, int in_extent, int out_extent) {
  const double scale = static_cast<double>(in_extent) / out_extent;
  return std::max(0.0, (dst + 0.5) * scale - 0.5);
}

// General bilinear resize (either direction). Used raw by the data pipeline;
// bilinear_upsample below is the differentiable op with the out>=in contract.
template <class Real>
Tensor<Real> resize_bilinear(const Tensor<Real>& x, int oh, int ow) {
  require(oh >= 1 && ow >= 1, "resize: output extents must be positive");
  if (oh == x.h && ow == x.w) return x;
  Tensor<Real> y(x.n, x.c, oh, ow);
  std::vector<int> x0s(static_cast<size_t>(ow)), x1s(static_cast<size_t>(ow));
  std::vector<Real> txs(static_cast<size_t>(ow));
  for (int ox = 0; ox < ow; ++ox) {
    const double s = resize_src_coord(ox, x.w, ow);
    int x0 = static_cast<int>(s);
    x0 = std::min(x0, x.w - 1);
    x0s[ox] = x0;
    x1s[ox] = std::min(x0 + 1, x.w - 1);
    txs[ox] = static_cast<Real>(s - x0);
  }
  parallel_for(0, static_cast<long>(x.n) * x.c, [&](long job) {
    const int in = static_cast<int>(job / x.c);
    const int ic = static_cast<int>(job % x.c);
    const Real* xp = x.plane(in, ic);
    Real* yp = y.plane(in, ic);
    for (int oy = 0; oy < oh; ++oy) {
      const double sy = resize_src_coord(oy, x.h, oh);
      int y0 = static_cast<int>(sy);
      y0 = std::min(y0, x.h - 1);
      const int y1 = std::min(y0 + 1, x.h - 1);
      const Real ty = static_cast<Real>(sy - y0);
      const Real* r0 = xp + static_cast<size_t>(y0) * x.w;
      const Real* r1 = xp + static_cast<size_t>(y1) * x.w;
      Real* yrow = yp + static_cast<size_t>(oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        const Real tx = txs[ox];
        const Real top = (1 - tx) * r0[x0s[ox]] + tx * r0[x1s[ox]];
        const Real bot = (1 - tx) * r1[x0s[ox]] + tx * r1[x1s[ox]];
        yrow[ox] = (1 - ty) * top + ty * bot;
      }
    }
  });
  return y;
}

template <class Real>
Tensor<Real> bilinear_upsample(const Tensor<Real>& x, int oh, int ow) {
  require(oh >= x.h && ow >= x.w,
          "bilinear_upsample: requested " + std::to_string(oh) + "x" + std::to_string(ow) +
              " is smaller than input " + x.shape_str());
  return resize_bilinear(x, oh, ow);
}

template <class Real>
Tensor<Real> bilinear_upsample_backward(const Tensor<Real>& gy, int ih, int iw) {
  Tensor<Real> gx(gy.n, gy.c, ih, iw);
  if (ih == gy.h && iw == gy.w) {
    gx.v = gy.v;
    return gx;
  }
  for (int in = 0; in < gy.n; ++in) {
    for (int ic = 0; ic < gy.c; ++ic) {
      const Real* gp = gy.plane(in, ic);
      Real* gxp = gx.plane(in, ic);
      for (int oy = 0; oy < gy.h; ++oy) {
        const double sy = resize_src_coord(oy, ih, gy.h);
        int y0 = std::min(static_cast<int>(sy), ih - 1);
        const int y1 = std::min(y0 + 1, ih - 1);
        const Real ty = static_cast<Real>(sy - y0);
        for (int ox = 0; ox < gy.w; ++ox) {
          const double sx = resize_src_coord(ox, iw, gy.w);
          int x0 = std::min(static_cast<int>(sx), iw - 1);
          const int x1 = std::min(x0 + 1, iw - 1);
          const Real tx = static_cast<Real>(sx - x0);
          const Real g = gp[static_cast<size_t>(oy) * gy.w + ox];
          gxp[static_cast<size_t>(y0) * iw + x0] += g * (1 - ty) * (1 - tx);
          gxp[static_cast<size_t>(y0) * iw + x1] += g * (1 - ty) * tx;
          gxp[static_cast<size_t>(y1) * iw + x0] += g * ty * (1 - tx);
          gxp[static_cast<size_t>(y1) * iw + x1] += g * ty * tx;
        }
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Act { relu, h_swish, sigmoid, h_sigmoid };

inline const char* act_name(Act a) {
  switch (a) {
    case Act::relu: return "relu";
    case Act::h_swish: return "h_swish";
    case Act::sigmoid: return "sigmoid";
    case Act::h_sigmoid: return "h_sigmoid";
  }
  return "?";
}

template <class Real>
Real act_eval(Act a, Real t) {
  switch (a) {
    case Act::relu:
      return t > Real(0) ? t : Real(0);
    case Act::sigmoid:
      return Real(1) / (Real(1) + std::exp(-t));
    case Act::h_sigmoid:
      return std::min(Real(1), std::max(Real(0), (t + Real(3)) / Real(6)));
    case Act::h_swish:
      return t * std::min(Real(1), std::max(Real(0), (t + Real(3)) / Real(6)));
  }
  return Real(0);
}

template <class Real>
Real act_grad(Act a, Real t) {  // derivative w.r.t. pre-activation t
  switch (a) {
    case Act::relu:
      return t > Real(0) ? Real(1) : Real(0);
    case Act::sigmoid: {
      const Real s = Real(1) / (Real(1) + std::exp(-t));
      return s * (Real(1) - s);
    }
    case Act::h_sigmoid:
      return (t > Real(-3) && t < Real(3)) ? Real(1) / Real(6) : Real(0);
    case Act::h_swish:
      if (t <= Real(-3)) return Real(0);
      if (t >= Real(3)) return Real(1);
      return (Real(2) * t + Real(3)) / Real(6);
  }
  return Real(0);
}

template <class Real>
Tensor<Real> activation(const Tensor<Real>& x, Act a) {
  Tensor<Real> y = x;
  for (auto& t : y.v) t = act_eval(a, t);
  return y;
}

template <class Real>
Tensor<Real> activation_backward(const Tensor<Real>& x, Act a, const Tensor<Real>& gy) {
  Tensor<Real> gx = gy;
  for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= act_grad(a, x.v[i]);
  return gx;
}

// ---------------------------------------------------------------------------
// Channel concat / slice
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (b.c == 0) return a;
  if (a.c == 0) return b;
  require(a.n == b.n && a.h == b.h && a.w == b.w,
          "concat_channels: spatial/batch mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<Real> y(a.n, a.c + b.c, a.h, a.w);
  const size_t plane = static_cast<size_t>(a.h) * a.w;
  for (int in = 0; in < a.n; ++in) {
    std::copy_n(a.v.data() + static_cast<size_t>(in) * a.c * plane, static_cast<size_t>(a.c) * plane,
                y.v.data() + static_cast<size_t>(in) * y.c * plane);
    std::copy_n(b.v.data() + static_cast<size_t>(in) * b.c * plane, static_cast<size_t>(b.c) * plane,
                y.v.data() + static_cast<size_t>(in) * y.c * plane + static_cast<size_t>(a.c) * plane);
  }
  return y;
}

// Channels [c0, c1) of x.
template <class Real>
Tensor<Real> slice_channels(const Tensor<Real>& x, int c0, int c1) {
  require(0 <= c0 && c0 <= c1 && c1 <= x.c, "slice_channels: bad range");
  Tensor<Real> y(x.n, c1 - c0, x.h, x.w);
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  for (int in = 0; in < x.n; ++in)
    std::copy_n(x.v.data() + (static_cast<size_t>(in) * x.c + c0) * plane,
                static_cast<size_t>(c1 - c0) * plane,
                y.v.data() + static_cast<size_t>(in) * y.c * plane);
  return y;
}

// Accumulate gy (shaped like the slice) back into channels [c0, c0+gy.c) of gx.
template <class Real>
void slice_channels_backward(Tensor<Real>& gx, const Tensor<Real>& gy, int c0) {
  const size_t plane = static_cast<size_t>(gx.h) * gx.w;
  for (int in = 0; in < gy.n; ++in) {
    const Real* src = gy.v.data() + static_cast<size_t>(in) * gy.c * plane;
    Real* dst = gx.v.data() + (static_cast<size_t>(in) * gx.c + c0) * plane;
    for (size_t i = 0; i < static_cast<size_t>(gy.c) * plane; ++i) dst[i] += src[i];
  }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <class Real>
struct BatchNorm {
  Tensor<Real> gamma, beta;          // (1,C,1,1)
  Tensor<Real> running_mean, running_var;
  Real eps = Real(1e-5);
  Real momentum = Real(0.1);

  // caches for backward
  Tensor<Real> cached_x;
  std::vector<Real> mean_, ivar_;
  bool cached_train = false;

  BatchNorm() = default;
  explicit BatchNorm(int channels)
      : gamma(Tensor<Real>::full(1, channels, 1, 1, Real(1))),
        beta(1, channels, 1, 1),
        running_mean(1, channels, 1, 1),
        running_var(Tensor<Real>::full(1, channels, 1, 1, Real(1))) {}

  int channels() const { return gamma.c; }

  Tensor<Real> forward(const Tensor<Real>& x, bool train, bool update_stats = true) {
    require(x.c == channels(), "batchnorm: channel mismatch " + x.shape_str());
    cached_x = x;
    cached_train = train;
    const int C = x.c;
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    const size_t m = static_cast<size_t>(x.n) * plane;
    mean_.assign(static_cast<size_t>(C), Real(0));
    ivar_.assign(static_cast<size_t>(C), Real(0));
    Tensor<Real> y(x.n, x.c, x.h, x.w);
    for (int ic = 0; ic < C; ++ic) {
      Real mu, iv;
      if (train) {
        double sum = 0.0, sq = 0.0;
        for (int in = 0; in < x.n; ++in) {
          const Real* xp = x.plane(in, ic);
          for (size_t i = 0; i < plane; ++i) {
            sum += xp[i];
            sq += static_cast<double>(xp[i]) * xp[i];
          }
        }
        const double mud = sum / static_cast<double>(m);
        const double var = std::max(0.0, sq / static_cast<double>(m) - mud * mud);
        mu = static_cast<Real>(mud);
        iv = static_cast<Real>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        if (update_stats) {
          const double unbiased = m > 1 ? var * static_cast<double>(m) / (m - 1) : var;
          running_mean.v[ic] = (Real(1) - momentum) * running_mean.v[ic] + momentum * mu;
          running_var.v[ic] =
              (Real(1) - momentum) * running_var.v[ic] + momentum * static_cast<Real>(unbiased);
        }
      } else {
        mu = running_mean.v[ic];
        iv = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(running_var.v[ic]) +
                                               static_cast<double>(eps)));
      }
      mean_[ic] = mu;
      ivar_[ic] = iv;
      const Real g = gamma.v[ic], b = beta.v[ic];
      for (int in = 0; in < x.n; ++in) {
        const Real* xp = x.plane(in, ic);
        Real* yp = y.plane(in, ic);
        for (size_t i = 0; i < plane; ++i) yp[i] = g * (xp[i] - mu) * iv + b;
      }
    }
    return y;
  }

  // Returns grad_x; accumulates grad_gamma/grad_beta. Train mode differentiates
  // through the batch statistics.
  Tensor<Real> backward(const Tensor<Real>& gy, Tensor<Real>& grad_gamma,
                        Tensor<Real>& grad_beta) {
    const Tensor<Real>& x = cached_x;
    const int C = x.c;
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    const size_t m = static_cast<size_t>(x.n) * plane;
    Tensor<Real> gx(x.n, x.c, x.h, x.w);
    for (int ic = 0; ic < C; ++ic) {
      const Real mu = mean_[ic], iv = ivar_[ic], g = gamma.v[ic];
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (int in = 0; in < x.n; ++in) {
        const Real* gp = gy.plane(in, ic);
        const Real* xp = x.plane(in, ic);
        for (size_t i = 0; i < plane; ++i) {
          sum_gy += gp[i];
          sum_gy_xhat += static_cast<double>(gp[i]) * ((xp[i] - mu) * iv);
        }
      }
      grad_beta.v[ic] += static_cast<Real>(sum_gy);
      grad_gamma.v[ic] += static_cast<Real>(sum_gy_xhat);
      if (cached_train) {
        const Real mean_gy = static_cast<Real>(sum_gy / static_cast<double>(m));
        const Real mean_gy_xhat = static_cast<Real>(sum_gy_xhat / static_cast<double>(m));
        for (int in = 0; in < x.n; ++in) {
          const Real* gp = gy.plane(in, ic);
          const Real* xp = x.plane(in, ic);
          Real* gxp = gx.plane(in, ic);
          for (size_t i = 0; i < plane; ++i) {
            const Real xhat = (xp[i] - mu) * iv;
            gxp[i] = g * iv * (gp[i] - mean_gy - xhat * mean_gy_xhat);
          }
        }
      } else {
        for (int in = 0; in < x.n; ++in) {
          const Real* gp = gy.plane(in, ic);
          Real* gxp = gx.plane(in, ic);
          for (size_t i = 0; i < plane; ++i) gxp[i] = g * iv * gp[i];
        }
      }
    }
    return gx;
  }

  void clear_cache() { cached_x = Tensor<Real>(); }
};

// ---------------------------------------------------------------------------
// Dense layer on (N,C,1,1) tensors, used by squeeze-excitation
// ---------------------------------------------------------------------------

template <class Real>
struct Linear {
  Tensor<Real> weight;  // (out, in, 1, 1)
  Tensor<Real> bias;    // (out, 1, 1, 1)

  Linear() = default;
  Linear(int out, int in) : weight(out, in, 1, 1), bias(out, 1, 1, 1) {}

  void init_he(Rng& rng) {
    fill_normal(weight, rng, std::sqrt(2.0 / weight.c));
    bias.fill(Real(0));
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    require(x.c == weight.c && x.h == 1 && x.w == 1,
            "linear: expected (N," + std::to_string(weight.c) + ",1,1), got " + x.shape_str());
    Tensor<Real> y(x.n, weight.n, 1, 1);
    for (int in = 0; in < x.n; ++in) {
      const Real* xp = x.plane(in, 0);
      for (int o = 0; o < weight.n; ++o) {
        double acc = bias.v[o];
        const Real* wr = weight.plane(o, 0);
        for (int i = 0; i < weight.c; ++i) acc += static_cast<double>(wr[i]) * xp[i];
        y.at(in, o, 0, 0) = static_cast<Real>(acc);
      }
    }
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& x, const Tensor<Real>& gy, Tensor<Real>& grad_w,
                        Tensor<Real>& grad_b) const {
    Tensor<Real> gx(x.n, weight.c, 1, 1);
    for (int in = 0; in < x.n; ++in) {
      const Real* xp = x.plane(in, 0);
      Real* gxp = gx.plane(in, 0);
      for (int o = 0; o < weight.n; ++o) {
        const Real g = gy.at(in, o, 0, 0);
        grad_b.v[o] += g;
        const Real* wr = weight.plane(o, 0);
        Real* gwr = grad_w.plane(o, 0);
        for (int i = 0; i < weight.c; ++i) {
          gwr[i] += g * xp[i];
          gxp[i] += g * wr[i];
        }
      }
    }
    return gx;
  }
};

template <class Real>
Tensor<Real> global_avg_pool(const Tensor<Real>& x) {
  Tensor<Real> y(x.n, x.c, 1, 1);
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      const Real* xp = x.plane(in, ic);
      double acc = 0.0;
      for (size_t i = 0; i < plane; ++i) acc += xp[i];
      y.at(in, ic, 0, 0) = static_cast<Real>(acc / static_cast<double>(plane));
    }
  }
  return y;
}

template <class Real>
Tensor<Real> global_avg_pool_backward(const Tensor<Real>& gy, int h, int w) {
  Tensor<Real> gx(gy.n, gy.c, h, w);
  const Real inv = Real(1) / static_cast<Real>(static_cast<size_t>(h) * w);
  for (int in = 0; in < gy.n; ++in)
    for (int ic = 0; ic < gy.c; ++ic) {
      const Real g = gy.at(in, ic, 0, 0) * inv;
      Real* gxp = gx.plane(in, ic);
      for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) gxp[i] = g;
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Parameter registry and layer wrappers
// ---------------------------------------------------------------------------

// One named parameter: value, gradient twin, and whether weight decay applies
// (off for biases and BN affine).
template <class Real>
struct ParamRef {
  std::string name;
  Tensor<Real>* value = nullptr;
  Tensor<Real>* grad = nullptr;
  bool decay = true;
};

// Named state tensor (parameters plus BN running stats) for checkpointing.
template <class Real>
struct StateRef {
  std::string name;
  Tensor<Real>* value = nullptr;
};

template <class Real>
struct Conv2dLayer {
  ConvWeights<Real> w;
  Tensor<Real> grad_kernel, grad_bias;
  Tensor<Real> cached_x;

  Conv2dLayer() = default;
  Conv2dLayer(int out_ch, int in_ch, int k, int stride, int padding, int groups, bool bias)
      : w(out_ch, in_ch, k, stride, padding, groups, bias) {
    grad_kernel = Tensor<Real>(w.kernel.n, w.kernel.c, w.kernel.h, w.kernel.w);
    grad_bias = Tensor<Real>(w.bias.n, w.bias.c, w.bias.h, w.bias.w);
  }

  Tensor<Real> forward(const Tensor<Real>& x) {
    cached_x = x;
    return conv2d(x, w);
  }
  Tensor<Real> backward(const Tensor<Real>& gy, bool need_input_grad = true) {
    Tensor<Real> gx;
    if (need_input_grad) gx = Tensor<Real>(cached_x.n, cached_x.c, cached_x.h, cached_x.w);
    conv2d_backward(cached_x, w, gy, need_input_grad ? &gx : nullptr, grad_kernel, grad_bias);
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Real>>& out) {
    out.push_back({prefix + ".weight", &w.kernel, &grad_kernel, true});
    if (w.has_bias) out.push_back({prefix + ".bias", &w.bias, &grad_bias, false});
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Real>>& out) {
    out.push_back({prefix + ".weight", &w.kernel});
    if (w.has_bias) out.push_back({prefix + ".bias", &w.bias});
  }
  void clear_cache() { cached_x = Tensor<Real>(); }
};

template <class Real>
struct BatchNormLayer {
  BatchNorm<Real> bn;
  Tensor<Real> grad_gamma, grad_beta;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int channels)
      : bn(channels), grad_gamma(1, channels, 1, 1), grad_beta(1, channels, 1, 1) {}

  Tensor<Real> forward(const Tensor<Real>& x, bool train) { return bn.forward(x, train); }
  Tensor<Real> backward(const Tensor<Real>& gy) { return bn.backward(gy, grad_gamma, grad_beta); }

  void collect(const std::string& prefix, std::vector<ParamRef<Real>>& out) {
    out.push_back({prefix + ".gamma", &bn.gamma, &grad_gamma, false});
    out.push_back({prefix + ".beta", &bn.beta, &grad_beta, false});
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Real>>& out) {
    out.push_back({prefix + ".gamma", &bn.gamma});
    out.push_back({prefix + ".beta", &bn.beta});
    out.push_back({prefix + ".running_mean", &bn.running_mean});
    out.push_back({prefix + ".running_var", &bn.running_var});
  }
  void clear_cache() { bn.clear_cache(); }
};

// conv -> BN -> activation, the standard stem/decoder building unit
template <class Real>
struct ConvBnAct {
  Conv2dLayer<Real> conv;
  BatchNormLayer<Real> norm;
  Act act = Act::h_swish;
  bool has_act = true;
  Tensor<Real> cached_pre_act;

  ConvBnAct() = default;
  ConvBnAct(int out_ch, int in_ch, int k, int stride, int groups, Act a, bool with_act = true)
      : conv(out_ch, in_ch, k, stride, k / 2, groups, /*bias=*/false),
        norm(out_ch),
        act(a),
        has_act(with_act) {}

  Tensor<Real> forward(const Tensor<Real>& x, bool train) {
    Tensor<Real> y = norm.forward(conv.forward(x), train);
    if (!has_act) return y;
    cached_pre_act = y;
    return activation(y, act);
  }
  Tensor<Real> backward(const Tensor<Real>& gy, bool need_input_grad = true) {
    Tensor<Real> g = has_act ? activation_backward(cached_pre_act, act, gy) : gy;
    return conv.backward(norm.backward(g), need_input_grad);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Real>>& out) {
    conv.collect(prefix + ".conv", out);
    norm.collect(prefix + ".bn", out);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Real>>& out) {
    conv.collect_state(prefix + ".conv", out);
    norm.collect_state(prefix + ".bn", out);
  }
  void clear_cache() {
    conv.clear_cache();
    norm.clear_cache();
    cached_pre_act = Tensor<Real>();
  }
};

}  // namespace hseg
