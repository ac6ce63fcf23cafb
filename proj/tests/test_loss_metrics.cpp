#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hseg/gradcheck_suite.hpp"
#include "hseg/hseg.hpp"

using namespace hseg;

namespace {

// Brute-force scalar re-evaluation of the combined loss in 64-bit.
double combined_loss_oracle(const Tensor<float>& yhat, const Tensor<float>& y, double w) {
  double bce = 0.0, overlap = 0.0;
  const double n = static_cast<double>(yhat.size());
  for (size_t i = 0; i < yhat.size(); ++i) {
    const double p = std::min(1.0 - 1e-7, std::max(1e-7, static_cast<double>(yhat.v[i])));
    const double t = y.v[i];
    bce += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    const double raw = yhat.v[i];
    overlap += t * raw / (t + raw - t * raw + 1e-7);
  }
  return w * bce / n + (1.0 - w) * (1.0 - overlap / n);
}

// O(n^2) pairwise AUC oracle, ties counted half.
double auc_oracle(const std::vector<double>& s, const std::vector<int>& l) {
  double wins = 0.0;
  uint64_t pairs = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (l[i] <= 0) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      if (l[j] > 0) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("combined_loss: perfect all-foreground prediction is ~0") {
  Tensor<float> y = Tensor<float>::full(1, 1, 4, 4, 1.0f);
  const auto res = combined_loss(y, y, 0.5);
  CHECK(res.value >= 0.0);
  CHECK(res.value < 1e-6);
}

TEST_CASE("combined_loss: w=1 with yhat=0.5 is ln 2") {
  Rng rng(1);
  Tensor<float> yhat = Tensor<float>::full(1, 1, 8, 8, 0.5f);
  Tensor<float> y(1, 1, 8, 8);
  for (auto& v : y.v) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
  const auto res = combined_loss(yhat, y, 1.0);
  CHECK(res.value == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("combined_loss: exact binary prediction leaves the background fraction") {
  Rng rng(2);
  Tensor<float> y(1, 1, 8, 8);
  for (auto& v : y.v) v = rng.uniform() < 0.3 ? 1.0f : 0.0f;
  double fg = 0.0;
  for (float v : y.v) fg += v;
  fg /= static_cast<double>(y.size());
  const auto res = combined_loss(y, y, 0.0);  // overlap term only
  CHECK(res.value == doctest::Approx(1.0 - fg).epsilon(1e-5));
}

TEST_CASE("combined_loss matches the 64-bit scalar oracle") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    Tensor<float> yhat(1, 1, 4, 4);
    fill_uniform(yhat, rng, 0.001, 0.999);
    Tensor<float> y(1, 1, 4, 4);
    for (auto& v : y.v) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    const double w = rng.uniform();
    CHECK(combined_loss(yhat, y, w).value ==
          doctest::Approx(combined_loss_oracle(yhat, y, w)).epsilon(1e-6));
  }
}

TEST_CASE("combined_loss is non-negative on random inputs") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Tensor<float> yhat(1, 1, 5, 5);
    fill_uniform(yhat, rng, 0.0, 1.0);
    Tensor<float> y(1, 1, 5, 5);
    for (auto& v : y.v) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    CHECK(combined_loss(yhat, y, rng.uniform()).value >= 0.0);
  }
}

TEST_CASE("combined_loss rejects shape mismatch") {
  Tensor<float> a(1, 1, 4, 4), b(1, 1, 4, 5);
  CHECK_THROWS_AS(combined_loss(a, b, 0.5), std::invalid_argument);
}

TEST_CASE("mixed_loss: four identical stages give 5x the single loss") {
  Rng rng(3);
  Tensor<float> m(1, 1, 4, 4);
  fill_uniform(m, rng, 0.1, 0.9);
  Tensor<float> y(1, 1, 4, 4);
  for (auto& v : y.v) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
  std::vector<Tensor<float>> stages(4, m);
  const double single = combined_loss(m, y, 0.5).value;
  CHECK(mixed_loss(stages, y, 0.5).value == doctest::Approx(5.0 * single).epsilon(1e-9));
}

TEST_CASE("mixed_loss: all-perfect stages on all-foreground gt give 0") {
  Tensor<float> y = Tensor<float>::full(1, 1, 4, 4, 1.0f);
  std::vector<Tensor<float>> stages(4, y);
  CHECK(mixed_loss(stages, y, 0.5).value < 5e-6);
}

TEST_CASE("mixed_loss is permutation-invariant in its stages") {
  Rng rng(4);
  std::vector<Tensor<float>> stages(4, Tensor<float>(1, 1, 4, 4));
  for (auto& s : stages) fill_uniform(s, rng, 0.05, 0.95);
  Tensor<float> y(1, 1, 4, 4);
  for (auto& v : y.v) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
  const double base = mixed_loss(stages, y, 0.5).value;
  std::swap(stages[0], stages[3]);
  std::swap(stages[1], stages[2]);
  CHECK(mixed_loss(stages, y, 0.5).value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("mixed_loss rejects wrong stage count") {
  Tensor<float> y = Tensor<float>::full(1, 1, 4, 4, 1.0f);
  std::vector<Tensor<float>> three(3, y);
  CHECK_THROWS_AS(mixed_loss(three, y, 0.5), std::invalid_argument);
}

TEST_CASE("confusion counts match a naive loop exactly") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    Tensor<float> prob(1, 1, 8, 8);
    fill_uniform(prob, rng, 0.0, 1.0);
    Tensor<float> gt(1, 1, 8, 8);
    for (auto& v : gt.v) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    const Confusion c = confusion(prob, gt, 0.5);
    uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < prob.size(); ++i) {
      const bool pred = prob.v[i] >= 0.5f;
      const bool pos = gt.v[i] > 0.5f;
      tp += pred && pos;
      fp += pred && !pos;
      fn += !pred && pos;
      tn += !pred && !pos;
    }
    CHECK(c.tp == tp);
    CHECK(c.tn == tn);
    CHECK(c.fp == fp);
    CHECK(c.fn == fn);
    CHECK(c.total() == prob.size());
  }
}

TEST_CASE("confusion degenerate predictions") {
  Rng rng(5);
  Tensor<float> gt(1, 1, 6, 6);
  for (auto& v : gt.v) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
  uint64_t fg = 0;
  for (float v : gt.v) fg += v > 0.5f;

  Confusion exact = confusion(gt, gt, 0.5);
  CHECK(exact.fp == 0);
  CHECK(exact.fn == 0);

  Tensor<float> ones = Tensor<float>::full(1, 1, 6, 6, 1.0f);
  Confusion allpos = confusion(ones, gt, 0.5);
  CHECK(allpos.tn == 0);
  CHECK(allpos.fn == 0);
  CHECK(allpos.tp == fg);
  CHECK(allpos.fp == 36 - fg);
}

TEST_CASE("metrics worked example") {
  Confusion c{6, 80, 4, 10};
  const MetricsReport m = metrics(c);
  CHECK(m.sen == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(m.sp == doctest::Approx(80.0 / 84.0).epsilon(1e-9));
  CHECK(m.f1 == doctest::Approx(12.0 / 26.0).epsilon(1e-9));
  CHECK(m.acc == doctest::Approx(0.86).epsilon(1e-12));
  CHECK(m.iou == doctest::Approx(0.30).epsilon(1e-12));
}

TEST_CASE("metrics: zero-error confusion gives all ones") {
  const MetricsReport m = metrics(Confusion{10, 20, 0, 0});
  CHECK(m.sen == 1.0);
  CHECK(m.sp == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.acc == 1.0);
  CHECK(m.iou == 1.0);
}

TEST_CASE("iou = f1 / (2 - f1) on 1000 random confusions") {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    Confusion c{static_cast<uint64_t>(rng.uniform_int(1000)),
                static_cast<uint64_t>(rng.uniform_int(1000)),
                static_cast<uint64_t>(rng.uniform_int(1000)),
                static_cast<uint64_t>(rng.uniform_int(1000))};
    if (c.total() == 0) continue;
    const MetricsReport m = metrics(c);
    CHECK(std::abs(m.iou - m.f1 / (2.0 - m.f1)) < 1e-12);
  }
}

TEST_CASE("metrics swap symmetry: tp<->tn, fp<->fn exchanges Sen and Sp") {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    Confusion c{static_cast<uint64_t>(1 + rng.uniform_int(500)),
                static_cast<uint64_t>(1 + rng.uniform_int(500)),
                static_cast<uint64_t>(rng.uniform_int(500)),
                static_cast<uint64_t>(rng.uniform_int(500))};
    Confusion swapped{c.tn, c.tp, c.fn, c.fp};
    const MetricsReport a = metrics(c), b = metrics(swapped);
    CHECK(a.sen == doctest::Approx(b.sp).epsilon(1e-12));
    CHECK(a.sp == doctest::Approx(b.sen).epsilon(1e-12));
    CHECK(a.acc == doctest::Approx(b.acc).epsilon(1e-12));
  }
}

TEST_CASE("auc closed forms") {
  CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == doctest::Approx(0.0));
  CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST_CASE("auc matches the pairwise oracle with ties") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::vector<double> s(200);
    std::vector<int> l(200);
    for (auto& v : s) v = std::round(rng.uniform() * 20.0) / 20.0;  // force ties
    bool has_pos = false, has_neg = false;
    for (auto& v : l) {
      v = rng.uniform() < 0.5 ? 1 : 0;
      (v ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    CHECK(std::abs(auc(s, l) - auc_oracle(s, l)) < 1e-12);
  }
}

TEST_CASE("auc is invariant under strictly monotone transforms") {
  Rng rng(8);
  std::vector<double> s(150);
  std::vector<int> l(150);
  for (auto& v : s) v = rng.uniform(0.01, 1.0);
  for (auto& v : l) v = rng.uniform() < 0.4 ? 1 : 0;
  const double base = auc(s, l);
  std::vector<double> affine(s), cubed(s);
  for (auto& v : affine) v = 2.0 * v + 7.0;
  for (auto& v : cubed) v = v * v * v;
  CHECK(auc(affine, l) == doctest::Approx(base).epsilon(1e-15));
  CHECK(auc(cubed, l) == doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("metrics CSV layout") {
  CHECK(metrics_csv_header() == std::string("image_id,sen,sp,f1,acc,iou,auc"));
  MetricsReport m;
  m.sen = 0.5;
  const std::string row = metrics_csv_row("img_01", m);
  CHECK(row.substr(0, 7) == "img_01,");
  CHECK(std::count(row.begin(), row.end(), ',') == 6);
}

TEST_CASE("metrics key=value block names every field") {
  MetricsReport m = metrics(Confusion{6, 80, 4, 10});
  const std::string block = m.key_value_block();
  for (const char* key : {"sen=", "sp=", "f1=", "acc=", "iou=", "auc=", "tp=6", "tn=80",
                          "fp=4", "fn=10"})
    CHECK(block.find(key) != std::string::npos);
}

TEST_CASE("loss gradients pass finite differences, five seeds") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto& r : gradcheck_suite<double>(seed, 1e-6)) {
      if (r.op_name != "combined_loss" && r.op_name != "mixed_loss") continue;
      INFO("op ", r.op_name, " seed ", seed, " err ", r.max_rel_err);
      CHECK(r.passed);
    }
  }
}
