#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hseg/dcn.hpp"
#include "hseg/gradcheck.hpp"
#include "hseg/loss_metrics.hpp"
#include "hseg/mixconv.hpp"
#include "hseg/network.hpp"
#include "hseg/ops.hpp"

namespace hseg {

namespace gc_detail {

template <class Real>
double dot(const Tensor<Real>& a, const Tensor<Real>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) acc += static_cast<double>(a.v[i]) * b.v[i];
  return acc;
}

// Push values away from the listed kink points so a finite-difference window
// never straddles one.
template <class Real>
void nudge_from_kinks(Tensor<Real>& t, const std::vector<double>& kinks, double margin) {
  for (auto& v : t.v)
    for (double k : kinks)
      if (std::abs(static_cast<double>(v) - k) < margin)
        v = static_cast<Real>(k + (v >= Real(k) ? margin : -margin));
}

template <class Real>
std::vector<GradSlot<Real>> slots_from_params(std::vector<ParamRef<Real>>& params) {
  std::vector<GradSlot<Real>> slots;
  for (auto& p : params) slots.push_back({p.name, p.value, p.grad});
  return slots;
}

}  // namespace gc_detail

// One differentiable-op instance wired for checking: named slots (value +
// analytic gradient), a scalar objective, and a backward that fills every
// slot's gradient. State is owned by the case so closures outlive the builder.
template <class Real>
struct CheckCase {
  std::string name;
  std::vector<GradSlot<Real>> slots;
  std::function<double()> forward;
  std::function<void()> backward;
  std::shared_ptr<void> state;
};

namespace gc_detail {

template <class Real>
CheckCase<Real> case_conv2d(uint64_t seed) {
  struct St {
    Tensor<Real> x, r, gx, gw, gb;
    ConvWeights<Real> w;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, 1));
  st->x = Tensor<Real>(1, 2, 5, 5);
  fill_normal(st->x, rng, 1.0);
  st->w = ConvWeights<Real>(2, 2, 3, 1, 1, 1, true);
  st->w.init_he(rng);
  fill_normal(st->w.bias, rng, 0.2);
  st->r = Tensor<Real>(1, 2, 5, 5);
  fill_normal(st->r, rng, 1.0);
  st->gx = Tensor<Real>(1, 2, 5, 5);
  st->gw = Tensor<Real>(2, 2, 3, 3);
  st->gb = Tensor<Real>(2, 1, 1, 1);
  CheckCase<Real> c;
  c.name = "conv2d";
  c.state = st;
  c.forward = [st] { return dot(conv2d(st->x, st->w), st->r); };
  c.backward = [st] {
    st->gx.fill(0);
    st->gw.fill(0);
    st->gb.fill(0);
    conv2d_backward(st->x, st->w, st->r, &st->gx, st->gw, st->gb);
  };
  c.slots = {{"x", &st->x, &st->gx},
             {"weight", &st->w.kernel, &st->gw},
             {"bias", &st->w.bias, &st->gb}};
  return c;
}

template <class Real>
CheckCase<Real> case_conv2d_s2_g2(uint64_t seed) {
  struct St {
    Tensor<Real> x, r, gx, gw, gb;
    ConvWeights<Real> w;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, 2));
  st->x = Tensor<Real>(1, 4, 6, 6);
  fill_normal(st->x, rng, 1.0);
  st->w = ConvWeights<Real>(4, 4, 3, 2, 1, 2, true);
  st->w.init_he(rng);
  fill_normal(st->w.bias, rng, 0.2);
  st->r = Tensor<Real>(1, 4, 3, 3);
  fill_normal(st->r, rng, 1.0);
  st->gx = Tensor<Real>(1, 4, 6, 6);
  st->gw = Tensor<Real>(4, 2, 3, 3);
  st->gb = Tensor<Real>(4, 1, 1, 1);
  CheckCase<Real> c;
  c.name = "conv2d_s2_g2";
  c.state = st;
  c.forward = [st] { return dot(conv2d(st->x, st->w), st->r); };
  c.backward = [st] {
    st->gx.fill(0);
    st->gw.fill(0);
    st->gb.fill(0);
    conv2d_backward(st->x, st->w, st->r, &st->gx, st->gw, st->gb);
  };
  c.slots = {{"x", &st->x, &st->gx},
             {"weight", &st->w.kernel, &st->gw},
             {"bias", &st->w.bias, &st->gb}};
  return c;
}

template <class Real>
CheckCase<Real> case_batchnorm(uint64_t seed, bool train_stats) {
  struct St {
    BatchNormLayer<Real> bn;
    Tensor<Real> x, r, gx;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, train_stats ? 4 : 3));
  st->bn = BatchNormLayer<Real>(3);
  fill_uniform(st->bn.bn.gamma, rng, 0.5, 1.5);
  fill_normal(st->bn.bn.beta, rng, 0.3);
  fill_normal(st->bn.bn.running_mean, rng, 0.5);
  fill_uniform(st->bn.bn.running_var, rng, 0.3, 1.5);
  st->x = Tensor<Real>(2, 3, 4, 4);
  fill_normal(st->x, rng, 1.0);
  st->r = Tensor<Real>(2, 3, 4, 4);
  fill_normal(st->r, rng, 1.0);
  CheckCase<Real> c;
  c.name = train_stats ? "batchnorm_batch_stats" : "batchnorm_frozen";
  c.state = st;
  c.forward = [st, train_stats] {
    return dot(st->bn.bn.forward(st->x, train_stats, /*update_stats=*/false), st->r);
  };
  c.backward = [st] {
    st->bn.grad_gamma.fill(0);
    st->bn.grad_beta.fill(0);
    st->gx = st->bn.backward(st->r);
  };
  c.slots = {{"x", &st->x, &st->gx},
             {"gamma", &st->bn.bn.gamma, &st->bn.grad_gamma},
             {"beta", &st->bn.bn.beta, &st->bn.grad_beta}};
  return c;
}

template <class Real>
CheckCase<Real> case_activation(uint64_t seed, Act a) {
  struct St {
    Tensor<Real> x, r, gx;
    Act act;
  };
  auto st = std::make_shared<St>();
  st->act = a;
  Rng rng(mix_seed(seed, 5 + static_cast<int>(a)));
  st->x = Tensor<Real>(1, 2, 4, 4);
  fill_uniform(st->x, rng, -4.0, 4.0);
  nudge_from_kinks(st->x, {-3.0, 0.0, 3.0}, 0.05);
  st->r = Tensor<Real>(1, 2, 4, 4);
  fill_normal(st->r, rng, 1.0);
  CheckCase<Real> c;
  c.name = std::string("activation_") + act_name(a);
  c.state = st;
  c.forward = [st] { return dot(activation(st->x, st->act), st->r); };
  c.backward = [st] { st->gx = activation_backward(st->x, st->act, st->r); };
  c.slots = {{"x", &st->x, &st->gx}};
  return c;
}

template <class Real>
CheckCase<Real> case_upsample(uint64_t seed) {
  struct St {
    Tensor<Real> x, r, gx;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, 9));
  st->x = Tensor<Real>(1, 2, 4, 5);
  fill_normal(st->x, rng, 1.0);
  st->r = Tensor<Real>(1, 2, 7, 9);
  fill_normal(st->r, rng, 1.0);
  CheckCase<Real> c;
  c.name = "bilinear_upsample";
  c.state = st;
  c.forward = [st] { return dot(bilinear_upsample(st->x, 7, 9), st->r); };
  c.backward = [st] { st->gx = bilinear_upsample_backward(st->r, 4, 5); };
  c.slots = {{"x", &st->x, &st->gx}};
  return c;
}

template <class Real>
CheckCase<Real> case_dcn_forward(uint64_t seed) {
  struct St {
    Tensor<Real> x, off, mod, r, gx, gw, gb, goff, gmod;
    ConvWeights<Real> w;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, 10));
  st->x = Tensor<Real>(1, 2, 6, 6);
  fill_normal(st->x, rng, 1.0);
  st->w = ConvWeights<Real>(2, 2, 3, 1, 1, 1, true);
  st->w.init_he(rng);
  fill_normal(st->w.bias, rng, 0.2);
  st->off = Tensor<Real>(1, 18, 6, 6);
  fill_uniform(st->off, rng, 0.1, 0.4);  // off-lattice: sampler kinks sit on integers
  st->mod = Tensor<Real>(1, 9, 6, 6);
  fill_uniform(st->mod, rng, 0.2, 0.8);
  st->r = Tensor<Real>(1, 2, 6, 6);
  fill_normal(st->r, rng, 1.0);
  st->gx = Tensor<Real>(1, 2, 6, 6);
  st->gw = Tensor<Real>(2, 2, 3, 3);
  st->gb = Tensor<Real>(2, 1, 1, 1);
  st->goff = Tensor<Real>(1, 18, 6, 6);
  st->gmod = Tensor<Real>(1, 9, 6, 6);
  CheckCase<Real> c;
  c.name = "dcn_forward";
  c.state = st;
  c.forward = [st] { return dot(dcn_forward(st->x, st->w, st->off, st->mod), st->r); };
  c.backward = [st] {
    st->gx.fill(0);
    st->gw.fill(0);
    st->gb.fill(0);
    st->goff.fill(0);
    st->gmod.fill(0);
    dcn_backward(st->x, st->w, st->off, st->mod, st->r, &st->gx, st->gw, st->gb, &st->goff,
                 &st->gmod);
  };
  c.slots = {{"x", &st->x, &st->gx},
             {"weight", &st->w.kernel, &st->gw},
             {"bias", &st->w.bias, &st->gb},
             {"offsets", &st->off, &st->goff},
             {"modulation", &st->mod, &st->gmod}};
  return c;
}

template <class Real>
CheckCase<Real> case_dcn_layer(uint64_t seed) {
  struct St {
    DcnLayer<Real> layer;
    Tensor<Real> x, r, gx;
    std::vector<ParamRef<Real>> params;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, 11));
  st->layer = DcnLayer<Real>(2, 2, 3);
  st->layer.main.w.init_he(rng);
  fill_normal(st->layer.main.w.bias, rng, 0.2);
  // small branch kernel + biased offsets keep every sample in (0.08, 0.42)
  // fractionally, clear of the sampler's lattice kinks
  fill_normal(st->layer.branch.w.kernel, rng, 0.003);
  for (int ch = 0; ch < 18; ++ch)
    st->layer.branch.w.bias.v[ch] = static_cast<Real>(rng.uniform(0.15, 0.35));
  for (int ch = 18; ch < 27; ++ch)
    st->layer.branch.w.bias.v[ch] = static_cast<Real>(rng.uniform(-0.5, 0.5));
  st->x = Tensor<Real>(1, 2, 6, 6);
  fill_normal(st->x, rng, 1.0);
  st->r = Tensor<Real>(1, 2, 6, 6);
  fill_normal(st->r, rng, 1.0);
  st->layer.collect("dcn", st->params);
  CheckCase<Real> c;
  c.name = "dcn_layer";
  c.state = st;
  c.forward = [st] { return dot(st->layer.forward(st->x), st->r); };
  c.backward = [st] {
    st->layer.forward(st->x);
    for (auto& p : st->params) p.grad->fill(0);
    st->gx = st->layer.backward(st->r);
  };
  c.slots = slots_from_params(st->params);
  c.slots.push_back({"x", &st->x, &st->gx});
  return c;
}

template <class Real>
CheckCase<Real> case_mixconv(uint64_t seed) {
  struct St {
    MixConvLayer<Real> layer;
    Tensor<Real> x, r, gx;
    std::vector<ParamRef<Real>> params;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, 12));
  st->layer = MixConvLayer<Real>(4, {3, 5}, 1);
  st->layer.init(rng);
  st->x = Tensor<Real>(1, 4, 6, 6);
  fill_normal(st->x, rng, 1.0);
  st->r = Tensor<Real>(1, 4, 6, 6);
  fill_normal(st->r, rng, 1.0);
  st->layer.collect("mixconv", st->params);
  CheckCase<Real> c;
  c.name = "mixconv";
  c.state = st;
  c.forward = [st] { return dot(st->layer.forward(st->x), st->r); };
  c.backward = [st] {
    st->layer.forward(st->x);
    for (auto& p : st->params) p.grad->fill(0);
    st->gx = st->layer.backward(st->r);
  };
  c.slots = slots_from_params(st->params);
  c.slots.push_back({"x", &st->x, &st->gx});
  return c;
}

template <class Real>
CheckCase<Real> case_se_block(uint64_t seed) {
  struct St {
    SeBlock<Real> se;
    Tensor<Real> x, r, gx;
    std::vector<ParamRef<Real>> params;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, 13));
  st->se = SeBlock<Real>(4, 2);
  st->se.init(rng);
  fill_uniform(st->se.fc1.bias, rng, 0.3, 0.6);  // keep relu inputs off zero
  st->x = Tensor<Real>(1, 4, 3, 3);
  fill_normal(st->x, rng, 1.0);
  st->r = Tensor<Real>(1, 4, 3, 3);
  fill_normal(st->r, rng, 1.0);
  st->se.collect("se", st->params);
  CheckCase<Real> c;
  c.name = "se_block";
  c.state = st;
  c.forward = [st] { return dot(st->se.forward(st->x), st->r); };
  c.backward = [st] {
    st->se.forward(st->x);
    for (auto& p : st->params) p.grad->fill(0);
    st->gx = st->se.backward(st->r);
  };
  c.slots = slots_from_params(st->params);
  c.slots.push_back({"x", &st->x, &st->gx});
  return c;
}

template <class Real>
CheckCase<Real> case_mnblock(uint64_t seed, bool stride2) {
  struct St {
    MnBlock<Real> block;
    Tensor<Real> x, r, gx;
    std::vector<ParamRef<Real>> params;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, stride2 ? 15 : 14));
  MnBlockSpec bs;
  bs.in_ch = 4;
  bs.out_ch = stride2 ? 6 : 4;
  bs.stride = stride2 ? 2 : 1;
  bs.expansion = 3.0;
  bs.kernel_sizes = stride2 ? std::vector<int>{3} : std::vector<int>{3, 5};
  bs.se_ratio = stride2 ? 0.0 : 0.5;
  st->block = MnBlock<Real>(bs);
  st->block.init(rng);
  if (bs.has_se()) fill_uniform(st->block.se.fc1.bias, rng, 0.3, 0.6);
  st->x = Tensor<Real>(1, 4, 6, 6);
  fill_normal(st->x, rng, 0.7);
  st->r = Tensor<Real>(1, bs.out_ch, stride2 ? 3 : 6, stride2 ? 3 : 6);
  fill_normal(st->r, rng, 1.0);
  st->block.collect(stride2 ? "mnblock_s2" : "mnblock", st->params);
  CheckCase<Real> c;
  c.name = stride2 ? "mnblock_s2" : "mnblock";
  c.state = st;
  c.forward = [st] { return dot(st->block.forward(st->x, /*train=*/true), st->r); };
  c.backward = [st] {
    st->block.forward(st->x, /*train=*/true);
    for (auto& p : st->params) p.grad->fill(0);
    st->gx = st->block.backward(st->r);
  };
  c.slots = slots_from_params(st->params);
  c.slots.push_back({"x", &st->x, &st->gx});
  return c;
}

template <class Real>
CheckCase<Real> case_combined_loss(uint64_t seed) {
  struct St {
    Tensor<Real> yhat, y, g;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, 16));
  st->yhat = Tensor<Real>(1, 1, 4, 4);
  fill_uniform(st->yhat, rng, 0.05, 0.95);  // away from the clamp boundaries
  st->y = Tensor<Real>(1, 1, 4, 4);
  for (auto& v : st->y.v) v = rng.uniform() < 0.4 ? Real(1) : Real(0);
  CheckCase<Real> c;
  c.name = "combined_loss";
  c.state = st;
  c.forward = [st] { return combined_loss(st->yhat, st->y, 0.5).value; };
  c.backward = [st] { st->g = combined_loss(st->yhat, st->y, 0.5).grad; };
  c.slots = {{"yhat", &st->yhat, &st->g}};
  return c;
}

template <class Real>
CheckCase<Real> case_mixed_loss(uint64_t seed) {
  struct St {
    std::vector<Tensor<Real>> stages, grads;
    Tensor<Real> y;
  };
  auto st = std::make_shared<St>();
  Rng rng(mix_seed(seed, 17));
  st->stages.assign(4, Tensor<Real>(1, 1, 4, 4));
  st->grads.resize(4);
  for (auto& s : st->stages) fill_uniform(s, rng, 0.05, 0.95);
  st->y = Tensor<Real>(1, 1, 4, 4);
  for (auto& v : st->y.v) v = rng.uniform() < 0.4 ? Real(1) : Real(0);
  CheckCase<Real> c;
  c.name = "mixed_loss";
  c.state = st;
  c.forward = [st] { return mixed_loss(st->stages, st->y, 0.5).value; };
  c.backward = [st] {
    auto res = mixed_loss(st->stages, st->y, 0.5);
    for (int i = 0; i < 4; ++i) st->grads[static_cast<size_t>(i)] = std::move(res.grads[i]);
  };
  for (int i = 0; i < 4; ++i)
    c.slots.push_back({"stage" + std::to_string(i), &st->stages[static_cast<size_t>(i)],
                       &st->grads[static_cast<size_t>(i)]});
  return c;
}

template <class Real>
std::vector<CheckCase<Real>> build_cases(uint64_t seed) {
  std::vector<CheckCase<Real>> cases;
  cases.push_back(case_conv2d<Real>(seed));
  cases.push_back(case_conv2d_s2_g2<Real>(seed));
  cases.push_back(case_batchnorm<Real>(seed, false));
  cases.push_back(case_batchnorm<Real>(seed, true));
  for (Act a : {Act::relu, Act::h_swish, Act::sigmoid, Act::h_sigmoid})
    cases.push_back(case_activation<Real>(seed, a));
  cases.push_back(case_upsample<Real>(seed));
  cases.push_back(case_dcn_forward<Real>(seed));
  cases.push_back(case_dcn_layer<Real>(seed));
  cases.push_back(case_mixconv<Real>(seed));
  cases.push_back(case_se_block<Real>(seed));
  cases.push_back(case_mnblock<Real>(seed, false));
  cases.push_back(case_mnblock<Real>(seed, true));
  cases.push_back(case_combined_loss<Real>(seed));
  cases.push_back(case_mixed_loss<Real>(seed));
  return cases;
}

}  // namespace gc_detail

// 64-bit mode: analytic gradients against central finite differences of the
// double-precision ops (step 1e-4).
inline std::vector<GradCheckReport> gradcheck_suite_fd(uint64_t seed, double tol) {
  std::vector<GradCheckReport> reports;
  for (auto& c : gc_detail::build_cases<double>(seed))
    reports.push_back(grad_check<double>(c.name, c.slots, c.forward, c.backward, tol));
  return reports;
}

// 32-bit mode: float32 analytic gradients against the 64-bit shadow gradient
// of the same instance (the double path is itself finite-difference
// verified). This sidesteps the ~1e-3 quantisation noise float-valued
// finite differences would carry.
inline std::vector<GradCheckReport> gradcheck_suite_shadow32(uint64_t seed, double tol) {
  auto f32 = gc_detail::build_cases<float>(seed);
  auto f64 = gc_detail::build_cases<double>(seed);
  require(f32.size() == f64.size(), "gradcheck: case list mismatch");
  std::vector<GradCheckReport> reports;
  for (size_t ci = 0; ci < f32.size(); ++ci) {
    f32[ci].forward();
    f32[ci].backward();
    f64[ci].forward();
    f64[ci].backward();
    GradCheckReport rep;
    rep.op_name = f32[ci].name;
    for (size_t si = 0; si < f32[ci].slots.size(); ++si) {
      double worst = 0.0;
      const auto& gs32 = *f32[ci].slots[si].grad;
      const auto& gs64 = *f64[ci].slots[si].grad;
      for (size_t i = 0; i < gs32.v.size(); ++i) {
        const double a = gs32.v[i], b = gs64.v[i];
        const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
        worst = std::max(worst, std::abs(a - b) / denom);
      }
      rep.per_parameter[f32[ci].slots[si].name] = worst;
      rep.max_rel_err = std::max(rep.max_rel_err, worst);
    }
    rep.passed = rep.max_rel_err < tol;
    reports.push_back(rep);
  }
  return reports;
}

template <class Real>
std::vector<GradCheckReport> gradcheck_suite(uint64_t seed, double tol) {
  if constexpr (sizeof(Real) == sizeof(double)) return gradcheck_suite_fd(seed, tol);
  else return gradcheck_suite_shadow32(seed, tol);
}

// Whole-model check: width-divided encoder on a 32x32 input, mixed loss
// against a random mask, every parameter tensor probed at a strided sample of
// its entries plus the full input gradient.
template <class Real>
GradCheckReport gradcheck_whole_model(uint64_t seed, double tol, size_t max_per_slot = 4) {
  Rng rng(mix_seed(seed, 99));
  Model<Real> model = Model<Real>::build(EncoderSpec::table1().scaled(8), seed, {8, 5, 3, 2});
  // The build leaves DCN branches at zero, which parks every deformable
  // sample exactly on a lattice kink of the sampler; move them off it.
  for (auto& layer : model.encoder_layers())
    if (auto* dcn = std::get_if<DcnLayer<Real>>(&layer)) {
      fill_normal(dcn->branch.w.kernel, rng, 0.003);
      const int K = dcn->K;
      for (int ch = 0; ch < 2 * K; ++ch)
        dcn->branch.w.bias.v[ch] = static_cast<Real>(rng.uniform(0.15, 0.35));
      for (int ch = 2 * K; ch < 3 * K; ++ch)
        dcn->branch.w.bias.v[ch] = static_cast<Real>(rng.uniform(-0.5, 0.5));
    }
  Tensor<Real> x(1, 3, 32, 32);
  fill_uniform(x, rng, 0.0, 1.0);
  Tensor<Real> gt(1, 1, 32, 32);
  for (auto& v : gt.v) v = rng.uniform() < 0.3 ? Real(1) : Real(0);

  Tensor<Real> gx;
  std::vector<ParamRef<Real>> params;
  model.collect_params(params);

  auto fwd = [&] {
    ForwardOut<Real> f = model.forward(x, /*train=*/true);
    std::vector<Tensor<Real>> probs;
    for (auto& l : f.stage_logits) probs.push_back(activation(l, Act::sigmoid));
    return mixed_loss(probs, gt, 0.5).value;
  };
  auto bwd = [&] {
    ForwardOut<Real> f = model.forward(x, /*train=*/true);
    std::vector<Tensor<Real>> probs;
    for (auto& l : f.stage_logits) probs.push_back(activation(l, Act::sigmoid));
    auto ml = mixed_loss(probs, gt, 0.5);
    std::vector<Tensor<Real>> grad_logits(4);
    for (int i = 0; i < 4; ++i) {
      grad_logits[static_cast<size_t>(i)] = std::move(ml.grads[static_cast<size_t>(i)]);
      auto& g = grad_logits[static_cast<size_t>(i)];
      const auto& p = probs[static_cast<size_t>(i)];
      for (size_t q = 0; q < g.v.size(); ++q) g.v[q] *= p.v[q] * (Real(1) - p.v[q]);
    }
    model.zero_grads();
    gx = model.backward(grad_logits, /*need_input_grad=*/true);
  };

  auto slots = gc_detail::slots_from_params(params);
  slots.push_back({"input", &x, &gx});
  // BN statistics over the 2x2 deepest maps make the loss extremely curved at
  // this scale; 3e-5 sits at the truncation/round-off optimum here.
  const double step = sizeof(Real) == sizeof(double) ? 3e-5 : fd_step<Real>();
  return grad_check<Real>("whole_model", slots, fwd, bwd, tol, step, max_per_slot);
}

}  // namespace hseg
