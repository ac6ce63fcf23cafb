#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "hseg/data.hpp"
#include "hseg/loss_metrics.hpp"
#include "hseg/network.hpp"

namespace hseg {

struct TrainConfig {
  double lr = 0.001;
  double weight_decay = 0.0005;
  int batch_size = 2;           // DRIVE/CHASE_DB1; HRF uses 1
  int max_epochs = 500;
  int patience = 30;
  bool mixed_loss_enabled = true;
  double w = 0.5;
  uint64_t seed = 0;
  double threshold = 0.5;
  double stop_dice = 0.0;       // optional: stop once val Dice reaches this (0 = off)
  AugmentConfig augment;

  void validate() const {
    require(lr > 0.0, "train config: lr must be positive");
    require(patience >= 1, "train config: patience must be >= 1");
    require(batch_size >= 1, "train config: batch_size must be >= 1");
    require(max_epochs >= 1, "train config: max_epochs must be >= 1");
    require(w >= 0.0 && w <= 1.0, "train config: w must be in [0,1]");
  }

  static int default_batch_size(DatasetKind k) { return k == DatasetKind::hrf ? 1 : 2; }
};

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay; decay skipped for biases and BN affine)
// ---------------------------------------------------------------------------

template <class Real>
struct AdamwState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::vector<Tensor<Real>> m, v;

  void ensure(const std::vector<ParamRef<Real>>& params) {
    if (!m.empty()) return;
    for (const auto& p : params) {
      m.emplace_back(p.value->n, p.value->c, p.value->h, p.value->w);
      v.emplace_back(p.value->n, p.value->c, p.value->h, p.value->w);
    }
  }
};

// One optimizer step. Non-finite gradients reject the step, naming the
// parameter.
template <class Real>
void adamw_step(std::vector<ParamRef<Real>>& params, AdamwState<Real>& state, double lr,
                double weight_decay) {
  state.ensure(params);
  require(state.m.size() == params.size(), "adamw: state/parameter count mismatch");
  for (auto& p : params)
    for (Real g : p.grad->v)
      if (!std::isfinite(static_cast<double>(g)))
        throw std::runtime_error("adamw: non-finite gradient in parameter '" + p.name + "'");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    const double wd = p.decay ? weight_decay : 0.0;
    for (size_t i = 0; i < p.value->v.size(); ++i) {
      const double g = p.grad->v[i];
      const double mi = state.beta1 * m.v[i] + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * v.v[i] + (1.0 - state.beta2) * g * g;
      m.v[i] = static_cast<Real>(mi);
      v.v[i] = static_cast<Real>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      double x = p.value->v[i];
      x -= lr * (mhat / (std::sqrt(vhat) + state.eps));
      x -= lr * wd * static_cast<double>(p.value->v[i]);
      p.value->v[i] = static_cast<Real>(x);
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

template <class Real>
struct EvalResult {
  std::vector<std::string> ids;
  std::vector<MetricsReport> per_image;
  MetricsReport mean;

  std::string csv() const {
    std::string out = metrics_csv_header() + "\n";
    for (size_t i = 0; i < per_image.size(); ++i)
      out += metrics_csv_row(ids[i], per_image[i]) + "\n";
    out += metrics_csv_row("mean", mean) + "\n";
    return out;
  }
};

// Inference-mode metrics per image plus the unweighted mean report.
template <class Real>
EvalResult<Real> evaluate(Model<Real>& model, const Dataset& set, double threshold = 0.5) {
  require(!set.empty(), "evaluate: empty dataset");
  EvalResult<Real> out;
  for (const auto& s : set) {
    Tensor<Real> x = s.image.template cast<Real>();
    Tensor<Real> gt = s.mask.template cast<Real>();
    ForwardOut<Real> f = model.forward(x, /*train=*/false);
    MetricsReport m = metrics(confusion(f.prob, gt, threshold));
    const bool single_class = m.conf.tp + m.conf.fn == 0 || m.conf.tn + m.conf.fp == 0;
    m.auc = single_class ? 1.0 : auc(f.prob, gt);
    out.ids.push_back(s.id);
    out.per_image.push_back(m);
  }
  MetricsReport& mean = out.mean;
  for (const auto& m : out.per_image) {
    mean.sen += m.sen;
    mean.sp += m.sp;
    mean.f1 += m.f1;
    mean.acc += m.acc;
    mean.iou += m.iou;
    mean.auc += m.auc;
    mean.conf.tp += m.conf.tp;
    mean.conf.tn += m.conf.tn;
    mean.conf.fp += m.conf.fp;
    mean.conf.fn += m.conf.fn;
  }
  const double k = static_cast<double>(out.per_image.size());
  mean.sen /= k;
  mean.sp /= k;
  mean.f1 /= k;
  mean.acc /= k;
  mean.iou /= k;
  mean.auc /= k;
  model.clear_caches();
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  MetricsReport val;
  bool is_best = false;
};

template <class Real>
struct TrainResult {
  Model<Real> best_model;
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_dice = 0.0;

  std::string history_csv(bool mixed_loss) const {
    std::ostringstream os;
    os << "epoch,train_loss,val_dice,val_acc,val_sen,val_sp,val_iou,val_auc,loss_mode\n";
    os.precision(6);
    os << std::fixed;
    for (const auto& e : history)
      os << e.epoch << "," << e.train_loss << "," << e.val.f1 << "," << e.val.acc << ","
         << e.val.sen << "," << e.val.sp << "," << e.val.iou << "," << e.val.auc << ","
         << (mixed_loss ? "mixed" : "single") << "\n";
    return os.str();
  }
};

template <class Real>
Tensor<Real> stack_batch(const Dataset& set, const std::vector<size_t>& order, size_t begin,
                         size_t end, bool masks, uint64_t seed, int epoch,
                         const AugmentConfig& aug) {
  const Sample& first = set[order[begin]];
  const int c = masks ? 1 : 3;
  Tensor<Real> out(static_cast<int>(end - begin), c, first.image.h, first.image.w);
  for (size_t b = begin; b < end; ++b) {
    Sample s = augment(set[order[b]], mix_seed(seed, mix_seed(epoch, order[b])), aug);
    const Tensor<float>& src = masks ? s.mask : s.image;
    require(src.h == out.h && src.w == out.w, "train: samples disagree on dims");
    std::copy(src.v.begin(), src.v.end(),
              out.v.begin() + (b - begin) * static_cast<size_t>(c) * out.h * out.w);
  }
  return out;
}

// One optimisation step on a batch: forward, mixed or final-head-only loss,
// backward, AdamW. Returns the loss. Exposed separately so the ablation
// harness can compare first-batch activations across loss modes.
template <class Real>
double train_step(Model<Real>& model, std::vector<ParamRef<Real>>& params,
                  AdamwState<Real>& opt, const Tensor<Real>& images, const Tensor<Real>& masks,
                  const TrainConfig& cfg, ForwardOut<Real>* captured = nullptr) {
  ForwardOut<Real> f = model.forward(images, /*train=*/true);
  if (captured) *captured = f;

  std::vector<Tensor<Real>> stage_probs;
  stage_probs.reserve(4);
  for (const auto& logits : f.stage_logits) stage_probs.push_back(activation(logits, Act::sigmoid));

  double loss = 0.0;
  std::vector<Tensor<Real>> grad_logits(4);
  if (cfg.mixed_loss_enabled) {
    MixedLossResult<Real> ml = mixed_loss(stage_probs, masks, cfg.w);
    loss = ml.value;
    for (int i = 0; i < 4; ++i) {
      grad_logits[static_cast<size_t>(i)] = std::move(ml.grads[static_cast<size_t>(i)]);
      auto& g = grad_logits[static_cast<size_t>(i)];
      const auto& p = stage_probs[static_cast<size_t>(i)];
      for (size_t q = 0; q < g.v.size(); ++q) g.v[q] *= p.v[q] * (Real(1) - p.v[q]);
    }
  } else {
    LossResult<Real> single = combined_loss(stage_probs[3], masks, cfg.w);
    loss = single.value;
    for (int i = 0; i < 3; ++i)
      grad_logits[static_cast<size_t>(i)] =
          Tensor<Real>(masks.n, 1, masks.h, masks.w);
    grad_logits[3] = std::move(single.grad);
    auto& g = grad_logits[3];
    const auto& p = stage_probs[3];
    for (size_t q = 0; q < g.v.size(); ++q) g.v[q] *= p.v[q] * (Real(1) - p.v[q]);
  }
  if (!std::isfinite(loss)) throw std::runtime_error("train: non-finite loss");

  model.zero_grads();
  model.backward(grad_logits);
  adamw_step(params, opt, cfg.lr, cfg.weight_decay);
  return loss;
}

// Seeded epochs of shuffle + augment + step; after each epoch the validation
// mean Dice is measured in inference mode, the best snapshot kept, and
// training stops after `patience` epochs without improvement (or max_epochs).
template <class Real>
TrainResult<Real> train(Model<Real>& model, const Dataset& train_set, const Dataset& val_set,
                        const TrainConfig& cfg) {
  cfg.validate();
  require(!train_set.empty() && !val_set.empty(), "train: empty dataset");

  std::vector<ParamRef<Real>> params;
  model.collect_params(params);
  AdamwState<Real> opt;

  TrainResult<Real> result;
  result.best_model = model;
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5511));
  int since_best = 0;

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      Tensor<Real> images =
          stack_batch<Real>(train_set, order, begin, end, false, cfg.seed, epoch, cfg.augment);
      Tensor<Real> masks =
          stack_batch<Real>(train_set, order, begin, end, true, cfg.seed, epoch, cfg.augment);
      try {
        loss_sum += train_step(model, params, opt, images, masks, cfg);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches) + ")");
      }
      ++batches;
    }

    EvalResult<Real> val = evaluate(model, val_set, cfg.threshold);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / std::max(1, batches);
    stats.val = val.mean;
    if (val.mean.f1 > result.best_dice || result.history.empty()) {
      result.best_dice = val.mean.f1;
      result.best_epoch = epoch;
      result.best_model = model;
      stats.is_best = true;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.history.push_back(stats);
    if (cfg.stop_dice > 0.0 && val.mean.f1 >= cfg.stop_dice) break;
    if (since_best >= cfg.patience) break;
  }
  model.clear_caches();
  result.best_model.clear_caches();
  return result;
}

}  // namespace hseg
