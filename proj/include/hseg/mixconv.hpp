#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "hseg/ops.hpp"
#include "hseg/tensor.hpp"

namespace hseg {

// Near-equal channel partition for MixConv: floor(c/g) per group, remainder
// distributed one each to the first groups.
inline std::vector<int> split_channels(int channels, int num_groups) {
  require(num_groups >= 1 && channels >= num_groups,
          "split_channels: need at least " + std::to_string(num_groups) + " channels, got " +
              std::to_string(channels));
  std::vector<int> sizes(static_cast<size_t>(num_groups), channels / num_groups);
  for (int i = 0; i < channels % num_groups; ++i) sizes[static_cast<size_t>(i)] += 1;
  return sizes;
}

inline std::vector<int> split_channels(int channels, const std::vector<int>& kernel_sizes) {
  return split_channels(channels, static_cast<int>(kernel_sizes.size()));
}

// Mixed depthwise convolution: channels are partitioned into groups, group j
// runs a depthwise conv with kernel_sizes[j] (padding k/2 so every group keeps
// the same output extent), outputs concatenated in group order.
template <class Real>
struct MixConvLayer {
  std::vector<int> kernel_sizes;
  std::vector<int> group_channels;
  std::vector<Conv2dLayer<Real>> groups;
  int stride = 1;
  int channels = 0;

  MixConvLayer() = default;
  MixConvLayer(int channels_, const std::vector<int>& kernel_sizes_, int stride_)
      : kernel_sizes(kernel_sizes_), stride(stride_), channels(channels_) {
    for (int k : kernel_sizes_)
      require(k >= 1 && k % 2 == 1, "mixconv: kernel sizes must be odd, got " + std::to_string(k));
    group_channels = split_channels(channels_, kernel_sizes_);
    groups.reserve(kernel_sizes_.size());
    for (size_t j = 0; j < kernel_sizes_.size(); ++j) {
      const int gc = group_channels[j];
      const int k = kernel_sizes_[j];
      groups.emplace_back(gc, gc, k, stride_, k / 2, /*groups=*/gc, /*bias=*/false);
    }
  }

  void init(Rng& rng) {
    for (auto& g : groups) g.w.init_he(rng);
  }

  Tensor<Real> forward(const Tensor<Real>& x) {
    require(x.c == channels, "mixconv: input " + x.shape_str() + " must have " +
                                 std::to_string(channels) + " channels");
    Tensor<Real> out;
    int c0 = 0;
    for (size_t j = 0; j < groups.size(); ++j) {
      Tensor<Real> part = groups[j].forward(slice_channels(x, c0, c0 + group_channels[j]));
      out = j == 0 ? std::move(part) : concat_channels(out, part);
      c0 += group_channels[j];
    }
    return out;
  }

  Tensor<Real> backward(const Tensor<Real>& gy, bool need_input_grad = true) {
    Tensor<Real> gx;
    if (need_input_grad) {
      const auto& x0 = groups[0].cached_x;
      gx = Tensor<Real>(x0.n, channels, x0.h, x0.w);
    }
    int c0 = 0;
    for (size_t j = 0; j < groups.size(); ++j) {
      Tensor<Real> gpart = groups[j].backward(slice_channels(gy, c0, c0 + group_channels[j]),
                                              need_input_grad);
      if (need_input_grad) slice_channels_backward(gx, gpart, c0);
      c0 += group_channels[j];
    }
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Real>>& out) {
    for (size_t j = 0; j < groups.size(); ++j)
      groups[j].collect(prefix + ".k" + std::to_string(kernel_sizes[j]), out);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Real>>& out) {
    for (size_t j = 0; j < groups.size(); ++j)
      groups[j].collect_state(prefix + ".k" + std::to_string(kernel_sizes[j]), out);
  }
  void clear_cache() {
    for (auto& g : groups) g.clear_cache();
  }
};

// Squeeze-excitation: global pool -> linear -> relu -> linear -> h_sigmoid,
// gate multiplied back onto the feature map.
template <class Real>
struct SeBlock {
  Linear<Real> fc1, fc2;
  Tensor<Real> grad_w1, grad_b1, grad_w2, grad_b2;

  Tensor<Real> cached_x, cached_pooled, cached_mid_pre, cached_mid, cached_logits, cached_gate;

  SeBlock() = default;
  SeBlock(int channels, int squeeze)
      : fc1(squeeze, channels),
        fc2(channels, squeeze),
        grad_w1(squeeze, channels, 1, 1),
        grad_b1(squeeze, 1, 1, 1),
        grad_w2(channels, squeeze, 1, 1),
        grad_b2(channels, 1, 1, 1) {}

  // Squeeze width from the op contract: ceil(C * se_ratio).
  static int squeeze_width(int channels, double se_ratio) {
    require(se_ratio > 0.0 && se_ratio <= 1.0, "se_block: ratio must be in (0,1]");
    return static_cast<int>(std::ceil(channels * se_ratio));
  }

  void init(Rng& rng) {
    fc1.init_he(rng);
    fc2.init_he(rng);
  }

  Tensor<Real> forward(const Tensor<Real>& x) {
    cached_x = x;
    cached_pooled = global_avg_pool(x);
    cached_mid_pre = fc1.forward(cached_pooled);
    cached_mid = activation(cached_mid_pre, Act::relu);
    cached_logits = fc2.forward(cached_mid);
    cached_gate = activation(cached_logits, Act::h_sigmoid);
    Tensor<Real> y = x;
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    for (int in = 0; in < x.n; ++in)
      for (int ic = 0; ic < x.c; ++ic) {
        const Real g = cached_gate.at(in, ic, 0, 0);
        Real* yp = y.plane(in, ic);
        for (size_t i = 0; i < plane; ++i) yp[i] *= g;
      }
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& gy) {
    const Tensor<Real>& x = cached_x;
    const size_t plane = static_cast<size_t>(x.h) * x.w;
    Tensor<Real> ggate(x.n, x.c, 1, 1);
    Tensor<Real> gx = gy;
    for (int in = 0; in < x.n; ++in)
      for (int ic = 0; ic < x.c; ++ic) {
        const Real g = cached_gate.at(in, ic, 0, 0);
        const Real* gp = gy.plane(in, ic);
        const Real* xp = x.plane(in, ic);
        Real* gxp = gx.plane(in, ic);
        double acc = 0.0;
        for (size_t i = 0; i < plane; ++i) {
          acc += static_cast<double>(gp[i]) * xp[i];
          gxp[i] = gp[i] * g;
        }
        ggate.at(in, ic, 0, 0) = static_cast<Real>(acc);
      }
    Tensor<Real> glogits = activation_backward(cached_logits, Act::h_sigmoid, ggate);
    Tensor<Real> gmid = fc2.backward(cached_mid, glogits, grad_w2, grad_b2);
    Tensor<Real> gmid_pre = activation_backward(cached_mid_pre, Act::relu, gmid);
    Tensor<Real> gpooled = fc1.backward(cached_pooled, gmid_pre, grad_w1, grad_b1);
    Tensor<Real> gx_pool = global_avg_pool_backward(gpooled, x.h, x.w);
    for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gx_pool.v[i];
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Real>>& out) {
    out.push_back({prefix + ".fc1.weight", &fc1.weight, &grad_w1, true});
    out.push_back({prefix + ".fc1.bias", &fc1.bias, &grad_b1, false});
    out.push_back({prefix + ".fc2.weight", &fc2.weight, &grad_w2, true});
    out.push_back({prefix + ".fc2.bias", &fc2.bias, &grad_b2, false});
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Real>>& out) {
    out.push_back({prefix + ".fc1.weight", &fc1.weight});
    out.push_back({prefix + ".fc1.bias", &fc1.bias});
    out.push_back({prefix + ".fc2.weight", &fc2.weight});
    out.push_back({prefix + ".fc2.bias", &fc2.bias});
  }
  void clear_cache() {
    cached_x = cached_pooled = cached_mid_pre = cached_mid = cached_logits = cached_gate =
        Tensor<Real>();
  }
};

// Free-function form of the squeeze-excitation op.
template <class Real>
Tensor<Real> se_block(const Tensor<Real>& x, double se_ratio, SeBlock<Real>& weights) {
  require(weights.fc1.weight.c == x.c &&
              weights.fc1.weight.n == SeBlock<Real>::squeeze_width(x.c, se_ratio),
          "se_block: weight shapes do not match ratio " + std::to_string(se_ratio));
  return weights.forward(x);
}

// Declarative description of one MNBlock row.
struct MnBlockSpec {
  int in_ch = 0;
  int out_ch = 0;
  int stride = 1;
  double expansion = 1.0;             // t
  std::vector<int> kernel_sizes{3};
  double se_ratio = 0.0;              // 0 = no SE

  int expanded() const { return static_cast<int>(std::lround(in_ch * expansion)); }
  bool has_residual() const { return stride == 1 && in_ch == out_ch; }
  bool has_se() const { return se_ratio > 0.0; }
  // MixNet-style squeeze width: computed from the block input channels.
  int se_width() const { return static_cast<int>(std::ceil(in_ch * se_ratio)); }
  // Pointwise convs run in 2 groups when the channel counts allow it
  // (MixNet lineage; keeps the parameter budget).
  int pw_groups(int a, int b) const { return (a % 2 == 0 && b % 2 == 0) ? 2 : 1; }
};

// Inverted bottleneck with the depthwise stage replaced by MixConv:
// 1x1 expand + BN + h_swish -> MixConv + BN + h_swish -> optional SE ->
// 1x1 project + BN, residual when stride 1 and in == out.
template <class Real>
struct MnBlock {
  MnBlockSpec spec;
  ConvBnAct<Real> expand;
  MixConvLayer<Real> mix;
  BatchNormLayer<Real> mix_bn;
  SeBlock<Real> se;
  ConvBnAct<Real> project;  // no activation

  Tensor<Real> cached_mix_pre_act;

  MnBlock() = default;
  explicit MnBlock(const MnBlockSpec& s) : spec(s) {
    const int exp_ch = s.expanded();
    expand = ConvBnAct<Real>(exp_ch, s.in_ch, 1, 1, s.pw_groups(s.in_ch, exp_ch), Act::h_swish);
    mix = MixConvLayer<Real>(exp_ch, s.kernel_sizes, s.stride);
    mix_bn = BatchNormLayer<Real>(exp_ch);
    if (s.has_se()) se = SeBlock<Real>(exp_ch, s.se_width());
    project = ConvBnAct<Real>(s.out_ch, exp_ch, 1, 1, s.pw_groups(exp_ch, s.out_ch), Act::relu,
                              /*with_act=*/false);
  }

  void init(Rng& rng) {
    expand.conv.w.init_he(rng);
    mix.init(rng);
    if (spec.has_se()) se.init(rng);
    project.conv.w.init_he(rng);
  }

  Tensor<Real> forward(const Tensor<Real>& x, bool train) {
    require(x.c == spec.in_ch, "mnblock: input " + x.shape_str() + " must have " +
                                   std::to_string(spec.in_ch) + " channels");
    Tensor<Real> t = expand.forward(x, train);
    t = mix_bn.forward(mix.forward(t), train);
    cached_mix_pre_act = t;
    t = activation(t, Act::h_swish);
    if (spec.has_se()) t = se.forward(t);
    t = project.forward(t, train);
    if (spec.has_residual())
      for (size_t i = 0; i < t.v.size(); ++i) t.v[i] += x.v[i];
    return t;
  }

  Tensor<Real> backward(const Tensor<Real>& gy, bool need_input_grad = true) {
    Tensor<Real> g = project.backward(gy);
    if (spec.has_se()) g = se.backward(g);
    g = activation_backward(cached_mix_pre_act, Act::h_swish, g);
    g = mix.backward(mix_bn.backward(g));
    g = expand.backward(g, need_input_grad);
    if (spec.has_residual() && need_input_grad)
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += gy.v[i];
    return g;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Real>>& out) {
    expand.collect(prefix + ".expand", out);
    mix.collect(prefix + ".mix", out);
    mix_bn.collect(prefix + ".mix_bn", out);
    if (spec.has_se()) se.collect(prefix + ".se", out);
    project.collect(prefix + ".project", out);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Real>>& out) {
    expand.collect_state(prefix + ".expand", out);
    mix.collect_state(prefix + ".mix", out);
    mix_bn.collect_state(prefix + ".mix_bn", out);
    if (spec.has_se()) se.collect_state(prefix + ".se", out);
    project.collect_state(prefix + ".project", out);
  }
  void clear_cache() {
    expand.clear_cache();
    mix.clear_cache();
    mix_bn.clear_cache();
    se.clear_cache();
    project.clear_cache();
    cached_mix_pre_act = Tensor<Real>();
  }
};

}  // namespace hseg
