#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hseg/ops.hpp"
#include "hseg/parallel.hpp"
#include "hseg/tensor.hpp"

namespace hseg {

// Modulated deformable convolution. The sampling grid of a k x k kernel is
// displaced per output location by learned 2-D offsets and each tap is gated
// by a modulation factor in [0,1]. One deformation field is shared across
// input and output channels.
//
// Offset channel layout: tap i = ky*k + kx owns channels (2i, 2i+1) =
// (dy, dx); modulation logits occupy the last K branch channels.

template <class Real>
struct DcnForwardOut {
  Tensor<Real> offsets;     // (N, 2K, H, W), raw
  Tensor<Real> modulation;  // (N, K, H, W), sigmoid-activated
};

// Offset/modulation branch: a k x k stride-1 conv on the same input, 3K output
// channels. Offsets pass through raw, modulation logits through sigmoid.
template <class Real>
DcnForwardOut<Real> dcn_branch_split(const Tensor<Real>& branch_out, int K) {
  require(branch_out.c == 3 * K,
          "dcn_branch: expected " + std::to_string(3 * K) + " channels, got " +
              branch_out.shape_str());
  DcnForwardOut<Real> out;
  out.offsets = slice_channels(branch_out, 0, 2 * K);
  out.modulation = activation(slice_channels(branch_out, 2 * K, 3 * K), Act::sigmoid);
  return out;
}

// y(p) = sum_i w_i * x(p + p_i + dp_i(p)) * dm_i(p), summed over input
// channels, bilinear reads with zero padding. Passing modulation = 1
// recovers the offset-only form; zero offsets and unit modulation recover
// standard convolution.
template <class Real>
Tensor<Real> dcn_forward(const Tensor<Real>& x, const ConvWeights<Real>& main,
                         const Tensor<Real>& offsets, const Tensor<Real>& modulation) {
  const int k = main.k();
  const int K = k * k;
  require(main.stride == 1 && main.groups == 1, "dcn_forward: main conv must be stride 1, groups 1");
  require(x.c == main.in_ch(), "dcn_forward: input " + x.shape_str() + " vs weights expecting " +
                                   std::to_string(main.in_ch()) + " channels");
  require(offsets.n == x.n && offsets.c == 2 * K && offsets.h == x.h && offsets.w == x.w,
          "dcn_forward: offsets " + offsets.shape_str() + " do not match input " + x.shape_str() +
              " with K=" + std::to_string(K));
  require(modulation.n == x.n && modulation.c == K && modulation.h == x.h &&
              modulation.w == x.w,
          "dcn_forward: modulation " + modulation.shape_str() + " does not match input " +
              x.shape_str());
  const int p = main.padding;
  const int C = x.c, OC = main.out_ch();

  Tensor<Real> y(x.n, OC, x.h, x.w);
  parallel_for(0, x.n, [&](long inl) {
    const int in = static_cast<int>(inl);
    std::vector<Real> gated(static_cast<size_t>(C) * K);  // sample * modulation, w-row order
    for (int oy = 0; oy < x.h; ++oy) {
      for (int ox = 0; ox < x.w; ++ox) {
        for (int i = 0; i < K; ++i) {
          const int ky = i / k, kx = i % k;
          const Real sy = oy - p + ky + offsets.at(in, 2 * i, oy, ox);
          const Real sx = ox - p + kx + offsets.at(in, 2 * i + 1, oy, ox);
          const Real m = modulation.at(in, i, oy, ox);
          for (int ic = 0; ic < C; ++ic)
            gated[static_cast<size_t>(ic) * K + i] =
                m * bilinear_tap(x.plane(in, ic), x.h, x.w, sx, sy).value;
        }
        for (int oc = 0; oc < OC; ++oc) {
          const Real* wrow = main.kernel.plane(oc, 0);
          double acc = main.has_bias ? static_cast<double>(main.bias.v[oc]) : 0.0;
          for (size_t j = 0; j < gated.size(); ++j) acc += static_cast<double>(wrow[j]) * gated[j];
          y.at(in, oc, oy, ox) = static_cast<Real>(acc);
        }
      }
    }
  });
  return y;
}

// Analytic gradients for all four inputs of dcn_forward. Offset gradients flow
// through the bilinear interpolation weights.
template <class Real>
void dcn_backward(const Tensor<Real>& x, const ConvWeights<Real>& main,
                  const Tensor<Real>& offsets, const Tensor<Real>& modulation,
                  const Tensor<Real>& gy, Tensor<Real>* grad_x, Tensor<Real>& grad_w,
                  Tensor<Real>& grad_b, Tensor<Real>* grad_offsets,
                  Tensor<Real>* grad_modulation) {
  const int k = main.k();
  const int K = k * k;
  const int p = main.padding;
  const int C = x.c, OC = main.out_ch();

  for (int in = 0; in < x.n; ++in) {
    std::vector<Real> raw(static_cast<size_t>(C) * K);
    std::vector<Real> ddx(static_cast<size_t>(C) * K), ddy(static_cast<size_t>(C) * K);
    std::vector<Real> upstream(static_cast<size_t>(C) * K);  // A[ic*K+i] = sum_oc gy*w
    std::vector<Real> coord_sx(static_cast<size_t>(K)), coord_sy(static_cast<size_t>(K));
    for (int oy = 0; oy < x.h; ++oy) {
      for (int ox = 0; ox < x.w; ++ox) {
        for (int i = 0; i < K; ++i) {
          const int ky = i / k, kx = i % k;
          coord_sy[i] = oy - p + ky + offsets.at(in, 2 * i, oy, ox);
          coord_sx[i] = ox - p + kx + offsets.at(in, 2 * i + 1, oy, ox);
          for (int ic = 0; ic < C; ++ic) {
            const auto tap = bilinear_tap(x.plane(in, ic), x.h, x.w, coord_sx[i], coord_sy[i]);
            raw[static_cast<size_t>(ic) * K + i] = tap.value;
            ddx[static_cast<size_t>(ic) * K + i] = tap.ddx;
            ddy[static_cast<size_t>(ic) * K + i] = tap.ddy;
          }
        }
        std::fill(upstream.begin(), upstream.end(), Real(0));
        for (int oc = 0; oc < OC; ++oc) {
          const Real g = gy.at(in, oc, oy, ox);
          if (main.has_bias) grad_b.v[oc] += g;
          if (g == Real(0)) continue;
          const Real* wrow = main.kernel.plane(oc, 0);
          Real* gwrow = grad_w.plane(oc, 0);
          for (int i = 0; i < K; ++i) {
            const Real m = modulation.at(in, i, oy, ox);
            for (int ic = 0; ic < C; ++ic) {
              const size_t j = static_cast<size_t>(ic) * K + i;
              gwrow[j] += g * m * raw[j];
              upstream[j] += g * wrow[j];
            }
          }
        }
        for (int i = 0; i < K; ++i) {
          const Real m = modulation.at(in, i, oy, ox);
          Real gm = 0, gdx = 0, gdy = 0;
          for (int ic = 0; ic < C; ++ic) {
            const size_t j = static_cast<size_t>(ic) * K + i;
            const Real a = upstream[j];
            if (a == Real(0)) continue;
            gm += a * raw[j];
            gdx += a * m * ddx[j];
            gdy += a * m * ddy[j];
            if (grad_x)
              bilinear_tap_backward(grad_x->plane(in, ic), x.h, x.w, coord_sx[i], coord_sy[i],
                                    a * m);
          }
          if (grad_modulation) grad_modulation->at(in, i, oy, ox) += gm;
          if (grad_offsets) {
            grad_offsets->at(in, 2 * i, oy, ox) += gdy;
            grad_offsets->at(in, 2 * i + 1, oy, ox) += gdx;
          }
        }
      }
    }
  }
}

// Full DCN layer: offset/modulation branch plus the deformable main conv.
// Branch weights start at zero so training begins exactly at standard
// convolution (offsets 0, modulation 0.5). No BN or activation follows.
template <class Real>
struct DcnLayer {
  Conv2dLayer<Real> main;    // k x k, stride 1, bias
  Conv2dLayer<Real> branch;  // k x k, stride 1, 3K outputs, bias
  int K = 0;

  Tensor<Real> cached_offsets, cached_modulation;

  DcnLayer() = default;
  DcnLayer(int out_ch, int in_ch, int k)
      : main(out_ch, in_ch, k, 1, k / 2, 1, /*bias=*/true),
        branch(3 * k * k, in_ch, k, 1, k / 2, 1, /*bias=*/true),
        K(k * k) {}

  void init(Rng& rng) {
    main.w.init_he(rng);
    branch.w.kernel.fill(Real(0));
    branch.w.bias.fill(Real(0));
  }

  DcnForwardOut<Real> run_branch(const Tensor<Real>& x) {
    return dcn_branch_split(branch.forward(x), K);
  }

  Tensor<Real> forward(const Tensor<Real>& x) {
    auto br = run_branch(x);
    cached_offsets = std::move(br.offsets);
    cached_modulation = std::move(br.modulation);
    return dcn_forward(x, main.w, cached_offsets, cached_modulation);
  }

  Tensor<Real> backward(const Tensor<Real>& gy, bool need_input_grad = true) {
    // forward runs the main conv through dcn_forward, so the branch holds the input
    const Tensor<Real>& xin = branch.cached_x;
    Tensor<Real> gx(xin.n, xin.c, xin.h, xin.w);
    Tensor<Real> goff(xin.n, 2 * K, xin.h, xin.w);
    Tensor<Real> gmod(xin.n, K, xin.h, xin.w);
    dcn_backward(xin, main.w, cached_offsets, cached_modulation, gy,
                 need_input_grad ? &gx : nullptr, main.grad_kernel, main.grad_bias, &goff, &gmod);
    // back through the sigmoid on modulation logits, then the branch conv
    Tensor<Real> glogits = gmod;
    for (size_t i = 0; i < glogits.v.size(); ++i) {
      const Real m = cached_modulation.v[i];
      glogits.v[i] *= m * (Real(1) - m);
    }
    Tensor<Real> gbranch = concat_channels(goff, glogits);
    Tensor<Real> gx_branch = branch.backward(gbranch, need_input_grad);
    if (need_input_grad)
      for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gx_branch.v[i];
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Real>>& out) {
    main.collect(prefix + ".main", out);
    branch.collect(prefix + ".branch", out);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Real>>& out) {
    main.collect_state(prefix + ".main", out);
    branch.collect_state(prefix + ".branch", out);
  }
  void clear_cache() {
    main.clear_cache();
    branch.clear_cache();
    cached_offsets = Tensor<Real>();
    cached_modulation = Tensor<Real>();
  }
};

}  // namespace hseg
