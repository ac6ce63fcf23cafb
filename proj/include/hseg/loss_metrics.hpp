#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hseg/tensor.hpp"

namespace hseg {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <class Real>
struct LossResult {
  double value = 0.0;
  Tensor<Real> grad;  // d loss / d yhat
};

// L = w * BCE + (1-w) * (1 - mean_i[ y*yhat / (y + yhat - y*yhat + eps) ]).
// The right term is the per-pixel soft overlap (Jaccard) ratio; the source
// text calls it Dice loss but the formula is the ratio implemented here.
// yhat is clamped to [1e-7, 1-1e-7] before logs; eps = 1e-7 forces the 0/0
// background case to contribute nothing.
template <class Real>
LossResult<Real> combined_loss(const Tensor<Real>& yhat, const Tensor<Real>& y, double w) {
  require(yhat.same_shape(y), "combined_loss: shape mismatch " + yhat.shape_str() + " vs " +
                                  y.shape_str());
  require(w >= 0.0 && w <= 1.0, "combined_loss: w must be in [0,1]");
  constexpr double kClamp = 1e-7;
  constexpr double kEps = 1e-7;
  const size_t count = yhat.size();
  require(count > 0, "combined_loss: empty tensors");

  LossResult<Real> out;
  out.grad = Tensor<Real>(yhat.n, yhat.c, yhat.h, yhat.w);
  double bce = 0.0, overlap = 0.0;
  const double inv_n = 1.0 / static_cast<double>(count);
  for (size_t i = 0; i < count; ++i) {
    const double yi = y.v[i];
    const double raw = yhat.v[i];
    const double p = std::min(1.0 - kClamp, std::max(kClamp, raw));
    bce -= yi * std::log(p) + (1.0 - yi) * std::log(1.0 - p);
    const double den = yi + raw - yi * raw + kEps;
    overlap += yi * raw / den;

    double g = 0.0;
    if (raw > kClamp && raw < 1.0 - kClamp)
      g += w * inv_n * (-(yi / p) + (1.0 - yi) / (1.0 - p));
    g -= (1.0 - w) * inv_n * (yi * (den - raw * (1.0 - yi)) / (den * den));
    out.grad.v[i] = static_cast<Real>(g);
  }
  out.value = w * bce * inv_n + (1.0 - w) * (1.0 - overlap * inv_n);
  return out;
}

// L_mixed = (1 + 1/n) * sum_i L(stage_i, gt), n = 4 decoder stages. The scale
// factor is kept verbatim even though it only rescales gradients uniformly.
template <class Real>
struct MixedLossResult {
  double value = 0.0;
  std::vector<Tensor<Real>> grads;  // per stage, d loss / d stage_prob
};

template <class Real>
MixedLossResult<Real> mixed_loss(const std::vector<Tensor<Real>>& stage_probs,
                                 const Tensor<Real>& gt, double w) {
  require(stage_probs.size() == 4,
          "mixed_loss: expected 4 stages, got " + std::to_string(stage_probs.size()));
  const double scale = 1.0 + 1.0 / static_cast<double>(stage_probs.size());
  MixedLossResult<Real> out;
  for (const auto& stage : stage_probs) {
    LossResult<Real> one = combined_loss(stage, gt, w);
    out.value += scale * one.value;
    for (auto& g : one.grad.v) g = static_cast<Real>(g * scale);
    out.grads.push_back(std::move(one.grad));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Confusion {
  uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  uint64_t total() const { return tp + tn + fp + fn; }
};

template <class Real>
Confusion confusion(const Tensor<Real>& prob, const Tensor<Real>& gt, double threshold = 0.5) {
  require(prob.same_shape(gt), "confusion: shape mismatch " + prob.shape_str() + " vs " +
                                   gt.shape_str());
  Confusion c;
  for (size_t i = 0; i < prob.size(); ++i) {
    const bool pred = static_cast<double>(prob.v[i]) >= threshold;
    const bool pos = gt.v[i] > Real(0.5);
    if (pred && pos) ++c.tp;
    else if (pred && !pos) ++c.fp;
    else if (!pred && pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct MetricsReport {
  double sen = 0, sp = 0, f1 = 0, acc = 0, iou = 0, auc = 0;
  Confusion conf;

  std::string key_value_block() const {
    std::ostringstream os;
    os << "sen=" << sen << "\nsp=" << sp << "\nf1=" << f1 << "\nacc=" << acc << "\niou=" << iou
       << "\nauc=" << auc << "\ntp=" << conf.tp << "\ntn=" << conf.tn << "\nfp=" << conf.fp
       << "\nfn=" << conf.fn << "\n";
    return os.str();
  }
};

// 0/0 ratios are defined as 1.0 (perfect vacuous class); only degenerate
// single-class inputs hit this.
inline double safe_ratio(uint64_t num, uint64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline MetricsReport metrics(const Confusion& c) {
  require(c.total() > 0, "metrics: empty confusion");
  MetricsReport m;
  m.conf = c;
  m.sen = safe_ratio(c.tp, c.tp + c.fn);
  m.sp = safe_ratio(c.tn, c.tn + c.fp);
  m.f1 = safe_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.iou = safe_ratio(c.tp, c.tp + c.fp + c.fn);
  return m;
}

// Exact ROC AUC by the rank statistic (Mann-Whitney): the probability a random
// positive outranks a random negative, ties contributing one half.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size() && !scores.empty(), "auc: size mismatch or empty");
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  uint64_t n_pos = 0;
  for (int l : labels) n_pos += l > 0 ? 1 : 0;
  const uint64_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, "auc: undefined for single-class input");

  // average ranks over tie runs, accumulate positive rank sum in 64-bit
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t q = i; q <= j; ++q)
      if (labels[order[q]] > 0) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

template <class Real>
double auc(const Tensor<Real>& prob, const Tensor<Real>& gt) {
  std::vector<double> scores(prob.size());
  std::vector<int> labels(prob.size());
  for (size_t i = 0; i < prob.size(); ++i) {
    scores[i] = static_cast<double>(prob.v[i]);
    labels[i] = gt.v[i] > Real(0.5) ? 1 : 0;
  }
  return auc(scores, labels);
}

// CSV row layout shared by evaluate() and the CLI.
inline std::string metrics_csv_header() { return "image_id,sen,sp,f1,acc,iou,auc"; }

inline std::string metrics_csv_row(const std::string& image_id, const MetricsReport& m) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << image_id << "," << m.sen << "," << m.sp << "," << m.f1 << "," << m.acc
     << "," << m.iou << "," << m.auc;
  return os.str();
}

}  // namespace hseg
