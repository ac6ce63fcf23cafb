#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hseg/hseg.hpp"

using namespace hseg;

namespace {

std::vector<ParamRef<double>> single_param(Tensor<double>& value, Tensor<double>& grad,
                                           bool decay) {
  return {{"p", &value, &grad, decay}};
}

Model<float> tiny_model(uint64_t seed) {
  return Model<float>::build(EncoderSpec::table1().scaled(8), seed, {8, 5, 3, 2});
}

}  // namespace

TEST_CASE("adamw: zero gradient and zero decay change nothing") {
  Tensor<double> p = Tensor<double>::full(1, 1, 1, 3, 0.7);
  Tensor<double> g(1, 1, 1, 3);
  auto params = single_param(p, g, true);
  AdamwState<double> st;
  for (int i = 0; i < 5; ++i) adamw_step(params, st, 0.01, 0.0);
  for (double v : p.v) CHECK(v == 0.7);
}

TEST_CASE("adamw: lr = 0 changes nothing even with gradients") {
  Tensor<double> p = Tensor<double>::full(1, 1, 1, 3, 0.7);
  Tensor<double> g = Tensor<double>::full(1, 1, 1, 3, 0.3);
  auto params = single_param(p, g, true);
  AdamwState<double> st;
  adamw_step(params, st, 0.0, 0.01);
  for (double v : p.v) CHECK(v == 0.7);
}

TEST_CASE("adamw: zero gradient with decay is a pure multiplicative shrink") {
  Tensor<double> p = Tensor<double>::full(1, 1, 1, 1, 2.0);
  Tensor<double> g(1, 1, 1, 1);
  auto params = single_param(p, g, true);
  AdamwState<double> st;
  const double lr = 0.01, wd = 0.1;
  double want = 2.0;
  for (int i = 0; i < 7; ++i) {
    adamw_step(params, st, lr, wd);
    want *= 1.0 - lr * wd;
    CHECK(p.v[0] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("adamw: decay skips parameters flagged no-decay") {
  Tensor<double> p = Tensor<double>::full(1, 1, 1, 1, 2.0);
  Tensor<double> g(1, 1, 1, 1);
  auto params = single_param(p, g, /*decay=*/false);
  AdamwState<double> st;
  adamw_step(params, st, 0.01, 0.5);
  CHECK(p.v[0] == 2.0);
}

TEST_CASE("adamw matches a hand-rolled scalar oracle over 20 steps") {
  const double lr = 0.001, wd = 0.01, g = 0.3;
  Tensor<double> p = Tensor<double>::full(1, 1, 1, 1, 0.5);
  Tensor<double> grad = Tensor<double>::full(1, 1, 1, 1, g);
  auto params = single_param(p, grad, true);
  AdamwState<double> st;

  double x = 0.5, m = 0.0, v = 0.0;
  for (int k = 1; k <= 20; ++k) {
    adamw_step(params, st, lr, wd);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, k));
    const double vhat = v / (1.0 - std::pow(0.999, k));
    // param <- param - lr*mhat/(sqrt(vhat)+eps) - lr*wd*param, decay decoupled
    x = x - lr * mhat / (std::sqrt(vhat) + 1e-8) - lr * wd * x;
    CHECK(std::abs(p.v[0] - x) < 1e-10);
  }
}

TEST_CASE("adamw rejects non-finite gradients naming the parameter") {
  Tensor<double> p = Tensor<double>::full(1, 1, 1, 2, 1.0);
  Tensor<double> g(1, 1, 1, 2);
  g.v[1] = std::numeric_limits<double>::quiet_NaN();
  auto params = single_param(p, g, true);
  params[0].name = "enc.0.conv.weight";
  AdamwState<double> st;
  CHECK_THROWS_WITH_AS(adamw_step(params, st, 0.01, 0.0),
                       doctest::Contains("enc.0.conv.weight"), std::runtime_error);
}

TEST_CASE("train: patience 1 with a never-improving metric stops at epoch 2") {
  Dataset ds = synth_vessels(3, 32, 2);
  auto model = tiny_model(1);
  // pin the final head so prob ~ 0 everywhere: val dice is exactly 0 forever
  std::vector<ParamRef<float>> ps;
  model.collect_params(ps);
  for (auto& p : ps)
    if (p.name == "head.3.bias") p.value->fill(-30.0f);
  TrainConfig cfg;
  cfg.seed = 1;
  cfg.lr = 1e-12;
  cfg.batch_size = 2;
  cfg.max_epochs = 50;
  cfg.patience = 1;
  cfg.augment = AugmentConfig::none();
  auto res = train(model, ds, ds, cfg);
  CHECK(res.history.size() == 2);
  CHECK(res.best_epoch == 1);
}

TEST_CASE("train: fixed seed reproduces the history bitwise") {
  Dataset ds = synth_vessels(4, 32, 2);
  TrainConfig cfg;
  cfg.seed = 7;
  cfg.batch_size = 2;
  cfg.max_epochs = 3;
  cfg.patience = 10;
  auto m1 = tiny_model(7);
  auto m2 = tiny_model(7);
  auto r1 = train(m1, ds, ds, cfg);
  auto r2 = train(m2, ds, ds, cfg);
  REQUIRE(r1.history.size() == r2.history.size());
  for (size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
    CHECK(r1.history[i].val.f1 == r2.history[i].val.f1);
  }
}

TEST_CASE("train: best snapshot carries the maximum recorded val dice") {
  Dataset ds = synth_vessels(5, 32, 2);
  auto model = tiny_model(2);
  TrainConfig cfg;
  cfg.seed = 2;
  cfg.batch_size = 2;
  cfg.max_epochs = 8;
  cfg.patience = 20;
  cfg.augment = AugmentConfig::none();
  auto res = train(model, ds, ds, cfg);
  double best = 0.0;
  for (const auto& e : res.history) best = std::max(best, e.val.f1);
  CHECK(res.best_dice == doctest::Approx(best));
  auto eval = evaluate(res.best_model, ds, 0.5);
  CHECK(eval.mean.f1 == doctest::Approx(res.best_dice).epsilon(1e-9));
}

TEST_CASE("train: loss heads downhill on the tiny model within 12 epochs") {
  Dataset ds = synth_vessels(6, 32, 4);
  auto model = tiny_model(3);
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.batch_size = 2;
  cfg.max_epochs = 12;
  cfg.patience = 50;
  cfg.augment = AugmentConfig::none();
  auto res = train(model, ds, ds, cfg);
  CHECK(res.history.back().train_loss < res.history.front().train_loss);
}

TEST_CASE("ablation toggle: identical streams, loss computation differs") {
  Dataset ds = synth_vessels(8, 32, 2);
  TrainConfig mixed_cfg;
  mixed_cfg.seed = 11;
  mixed_cfg.batch_size = 2;
  TrainConfig single_cfg = mixed_cfg;
  single_cfg.mixed_loss_enabled = false;

  auto ma = tiny_model(11);
  auto mb = tiny_model(11);
  std::vector<ParamRef<float>> pa, pb;
  ma.collect_params(pa);
  mb.collect_params(pb);
  AdamwState<float> oa, ob;

  std::vector<size_t> order{0, 1};
  Tensor<float> images = stack_batch<float>(ds, order, 0, 2, false, mixed_cfg.seed, 1,
                                            mixed_cfg.augment);
  Tensor<float> masks =
      stack_batch<float>(ds, order, 0, 2, true, mixed_cfg.seed, 1, mixed_cfg.augment);
  Tensor<float> images_b = stack_batch<float>(ds, order, 0, 2, false, single_cfg.seed, 1,
                                              single_cfg.augment);
  CHECK(images.v == images_b.v);  // augmentation stream independent of the toggle

  ForwardOut<float> fa, fb;
  const double la = train_step(ma, pa, oa, images, masks, mixed_cfg, &fa);
  const double lb = train_step(mb, pb, ob, images, masks, single_cfg, &fb);
  for (int i = 0; i < 4; ++i) CHECK(fa.stage_logits[i].v == fb.stage_logits[i].v);
  CHECK(la != lb);  // the loss value itself differs between arms
}

TEST_CASE("evaluate: constant-zero output scores Sen 0, Sp 1") {
  Dataset ds = synth_vessels(9, 32, 2);
  auto model = tiny_model(4);
  // slam the final head bias low so prob ~ 0 everywhere
  std::vector<ParamRef<float>> ps;
  model.collect_params(ps);
  for (auto& p : ps)
    if (p.name == "head.3.bias") p.value->fill(-30.0f);
  auto res = evaluate(model, ds, 0.5);
  CHECK(res.mean.sen == 0.0);
  CHECK(res.mean.sp == 1.0);
  auto res2 = evaluate(model, ds, 0.5);
  for (size_t i = 0; i < res.per_image.size(); ++i) {
    CHECK(res.per_image[i].f1 == res2.per_image[i].f1);
    CHECK(res.per_image[i].auc == res2.per_image[i].auc);
  }
}

TEST_CASE("evaluate csv carries one row per image plus the mean") {
  Dataset ds = synth_vessels(10, 32, 3);
  auto model = tiny_model(5);
  auto res = evaluate(model, ds, 0.5);
  const std::string csv = res.csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 3 rows + mean
  CHECK(csv.find("image_id,sen,sp,f1,acc,iou,auc") == 0);
  CHECK(csv.find("mean,") != std::string::npos);
}

TEST_CASE("history csv labels the loss mode") {
  Dataset ds = synth_vessels(12, 32, 2);
  auto model = tiny_model(6);
  TrainConfig cfg;
  cfg.seed = 6;
  cfg.batch_size = 2;
  cfg.max_epochs = 2;
  auto res = train(model, ds, ds, cfg);
  const std::string csv = res.history_csv(cfg.mixed_loss_enabled);
  CHECK(csv.find("loss_mode") != std::string::npos);
  CHECK(csv.find("mixed") != std::string::npos);
  CHECK(res.history_csv(false).find("single") != std::string::npos);
}
