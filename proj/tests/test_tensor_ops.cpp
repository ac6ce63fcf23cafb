#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hseg/gradcheck_suite.hpp"
#include "hseg/hseg.hpp"

using namespace hseg;

namespace {

// Naive quadruple-loop convolution oracle, zero padding, groups = 1.
Tensor<double> conv_oracle(const Tensor<double>& x, const ConvWeights<double>& w) {
  const int k = w.k(), s = w.stride, p = w.padding;
  const int oh = conv_out_extent(x.h, k, s, p), ow = conv_out_extent(x.w, k, s, p);
  Tensor<double> y(x.n, w.out_ch(), oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int oc = 0; oc < w.out_ch(); ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = w.has_bias ? w.bias.v[oc] : 0.0;
          for (int ic = 0; ic < x.c; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s - p + ky, ix = ox * s - p + kx;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += w.kernel.at(oc, ic, ky, kx) * x.at(n, ic, iy, ix);
              }
          y.at(n, oc, oy, ox) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  Tensor<float> x(1, 1, 3, 3);
  for (int i = 0; i < 9; ++i) x.v[i] = static_cast<float>(i + 1);
  ConvWeights<float> w(1, 1, 1, 1, 0, 1, false);
  w.kernel.v[0] = 1.0f;
  Tensor<float> y = conv2d(x, w);
  CHECK(y.same_shape(x));
  for (int i = 0; i < 9; ++i) CHECK(y.v[i] == x.v[i]);
}

TEST_CASE("conv2d all-ones 3x3, padded") {
  Tensor<float> x = Tensor<float>::full(1, 1, 3, 3, 1.0f);
  ConvWeights<float> w(1, 1, 3, 1, 1, 1, false);
  w.kernel.fill(1.0f);
  Tensor<float> y = conv2d(x, w);
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx(9.0));
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4.0));
  CHECK(y.at(0, 0, 2, 2) == doctest::Approx(4.0));
  CHECK(y.at(0, 0, 0, 1) == doctest::Approx(6.0));
}

TEST_CASE("conv2d depthwise identity") {
  Rng rng(7);
  Tensor<float> x(1, 3, 4, 4);
  fill_normal(x, rng, 1.0);
  ConvWeights<float> w(3, 3, 1, 1, 0, 3, false);
  w.kernel.fill(1.0f);
  Tensor<float> y = conv2d(x, w);
  for (size_t i = 0; i < x.v.size(); ++i) CHECK(y.v[i] == x.v[i]);
}

TEST_CASE("conv2d shape mismatch rejected with both shapes named") {
  Tensor<float> x(1, 3, 4, 4);
  ConvWeights<float> w(2, 2, 3, 1, 1, 1, false);
  CHECK_THROWS_WITH_AS(conv2d(x, w),
                       doctest::Contains("(1,3,4,4)"), std::invalid_argument);
}

TEST_CASE("conv2d matches the quadruple-loop oracle exactly") {
  for (uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    Tensor<double> x(2, 4, 8, 8);
    fill_normal(x, rng, 1.0);
    for (int k : {1, 3}) {
      for (int s : {1, 2}) {
        ConvWeights<double> w(3, 4, k, s, k / 2, 1, true);
        w.init_he(rng);
        fill_normal(w.bias, rng, 0.1);
        Tensor<double> got = conv2d(x, w);
        Tensor<double> want = conv_oracle(x, w);
        REQUIRE(got.same_shape(want));
        for (size_t i = 0; i < got.v.size(); ++i) CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("conv2d deterministic replay") {
  Rng rng(11);
  Tensor<float> x(1, 3, 6, 6);
  fill_normal(x, rng, 1.0);
  ConvWeights<float> w(4, 3, 3, 1, 1, 1, true);
  w.init_he(rng);
  Tensor<float> a = conv2d(x, w), b = conv2d(x, w);
  CHECK(a.v == b.v);
}

TEST_CASE("bilinear_sample lattice, interior, outside") {
  Tensor<float> map(1, 1, 4, 5);
  for (size_t i = 0; i < map.v.size(); ++i) map.v[i] = static_cast<float>(i);
  // integer coordinates hit the lattice value at (x=2, y=3)
  CHECK(bilinear_sample(map, 2.0f, 3.0f)[0] == map.at(0, 0, 3, 2));

  Tensor<float> quad(1, 1, 2, 2);
  quad.v = {0, 1, 2, 3};
  CHECK(bilinear_sample(quad, 0.5f, 0.5f)[0] == doctest::Approx(1.5));

  auto far = bilinear_sample(map, -5.0f, -5.0f);
  CHECK(far[0] == 0.0f);
}

TEST_CASE("bilinear_sample is linear along each axis between lattice points") {
  Rng rng(3);
  Tensor<float> map(1, 2, 5, 5);
  fill_normal(map, rng, 1.0);
  for (float t : {0.25f, 0.5f, 0.75f}) {
    for (int c = 0; c < 2; ++c) {
      const float v = bilinear_sample(map, 1.0f + t, 2.0f)[c];
      const float want = (1 - t) * map.at(0, c, 2, 1) + t * map.at(0, c, 2, 2);
      CHECK(v == doctest::Approx(want).epsilon(1e-6));
      const float vy = bilinear_sample(map, 1.0f, 2.0f + t)[c];
      const float wanty = (1 - t) * map.at(0, c, 2, 1) + t * map.at(0, c, 3, 1);
      CHECK(vy == doctest::Approx(wanty).epsilon(1e-6));
    }
  }
}

TEST_CASE("bilinear_upsample constants, identity, hand case") {
  Tensor<float> c7 = Tensor<float>::full(2, 3, 4, 6, 7.0f);
  Tensor<float> up = bilinear_upsample(c7, 8, 12);
  for (float v : up.v) CHECK(v == doctest::Approx(7.0));

  Tensor<float> same = bilinear_upsample(c7, 4, 6);
  CHECK(same.v == c7.v);

  Tensor<float> pair(1, 1, 1, 2);
  pair.v = {0.0f, 1.0f};
  Tensor<float> w4 = bilinear_upsample(pair, 1, 4);
  const float want[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int i = 0; i < 4; ++i) CHECK(w4.v[i] == doctest::Approx(want[i]));

  CHECK_THROWS_AS(bilinear_upsample(c7, 2, 6), std::invalid_argument);
}

TEST_CASE("bilinear_upsample preserves global min/max bounds") {
  for (uint64_t seed : {1, 2, 3, 4, 5}) {
    Rng rng(seed);
    Tensor<float> x(1, 2, 5, 7);
    fill_normal(x, rng, 2.0);
    const auto [mn, mx] = std::minmax_element(x.v.begin(), x.v.end());
    Tensor<float> up = bilinear_upsample(x, 11, 16);
    for (float v : up.v) {
      CHECK(v >= *mn - 1e-6f);
      CHECK(v <= *mx + 1e-6f);
    }
  }
}

TEST_CASE("batchnorm gamma=0 broadcasts beta") {
  Rng rng(5);
  BatchNorm<float> bn(3);
  bn.gamma.fill(0.0f);
  bn.beta.v = {1.5f, -2.0f, 0.25f};
  Tensor<float> x(2, 3, 4, 4);
  fill_normal(x, rng, 3.0);
  Tensor<float> y = bn.forward(x, true);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 16; ++i) CHECK(y.plane(n, c)[i] == bn.beta.v[c]);
}

TEST_CASE("batchnorm is a fixed point on normalized input") {
  // exact zero-mean unit-variance (biased) per channel
  Tensor<float> x(1, 1, 2, 2);
  x.v = {-1.0f, 1.0f, -1.0f, 1.0f};
  BatchNorm<float> bn(1);
  Tensor<float> y = bn.forward(x, true);
  for (size_t i = 0; i < x.v.size(); ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm matches hand statistics on two constant images") {
  BatchNorm<float> bn(1);
  Tensor<float> x(2, 1, 2, 2);
  const float a = 2.0f, b = 0.0f;
  for (int i = 0; i < 4; ++i) x.v[i] = a;
  for (int i = 4; i < 8; ++i) x.v[i] = b;
  Tensor<float> y = bn.forward(x, true);
  const double mean = (a + b) / 2.0;
  const double var = ((a - mean) * (a - mean) + (b - mean) * (b - mean)) / 2.0;
  const double ya = (a - mean) / std::sqrt(var + 1e-5);
  for (int i = 0; i < 4; ++i) CHECK(y.v[i] == doctest::Approx(ya).epsilon(1e-6));
  for (int i = 4; i < 8; ++i) CHECK(y.v[i] == doctest::Approx(-ya).epsilon(1e-6));
  // running stats moved toward batch statistics with momentum 0.1
  CHECK(bn.running_mean.v[0] == doctest::Approx(0.1 * mean).epsilon(1e-6));
}

TEST_CASE("activation closed-form points") {
  CHECK(act_eval(Act::sigmoid, 0.0f) == doctest::Approx(0.5));
  CHECK(act_eval(Act::h_swish, 3.0f) == doctest::Approx(3.0));
  CHECK(act_eval(Act::h_swish, -3.0f) == doctest::Approx(0.0));
  CHECK(act_eval(Act::h_sigmoid, 0.0f) == doctest::Approx(0.5));
  CHECK(act_eval(Act::h_sigmoid, 10.0f) == doctest::Approx(1.0));

  Tensor<float> x(1, 1, 1, 4);
  x.v = {-2.0f, -0.5f, 0.5f, 2.0f};
  Tensor<float> y = activation(x, Act::relu);
  CHECK(y.v[0] == 0.0f);
  CHECK(y.v[1] == 0.0f);
  CHECK(y.v[2] == 0.5f);
  CHECK(y.v[3] == 2.0f);
}

TEST_CASE("concat_channels and slice round-trip") {
  Rng rng(9);
  Tensor<float> a(2, 16, 3, 3), b(2, 24, 3, 3);
  fill_normal(a, rng, 1.0);
  fill_normal(b, rng, 1.0);
  Tensor<float> y = concat_channels(a, b);
  CHECK(y.c == 40);
  Tensor<float> a2 = slice_channels(y, 0, 16);
  Tensor<float> b2 = slice_channels(y, 16, 40);
  CHECK(a2.v == a.v);
  CHECK(b2.v == b.v);

  Tensor<float> empty(2, 0, 3, 3);
  Tensor<float> same = concat_channels(a, empty);
  CHECK(same.v == a.v);

  Tensor<float> wrong(2, 4, 5, 5);
  CHECK_THROWS_AS(concat_channels(a, wrong), std::invalid_argument);
}

TEST_CASE("grad_check: conv2d well under 1e-5 in 64-bit mode") {
  auto reports = gradcheck_suite<double>(42, 1e-5);
  for (const auto& r : reports)
    if (r.op_name == "conv2d") {
      CHECK(r.passed);
      CHECK(r.max_rel_err < 1e-5);
    }
}

TEST_CASE("grad_check: zero upstream gradient zeroes all parameter gradients") {
  Rng rng(4);
  Tensor<double> x(1, 2, 5, 5);
  fill_normal(x, rng, 1.0);
  ConvWeights<double> w(2, 2, 3, 1, 1, 1, true);
  w.init_he(rng);
  Tensor<double> gy(1, 2, 5, 5);  // zeros
  Tensor<double> gx(1, 2, 5, 5), gw(2, 2, 3, 3), gb(2, 1, 1, 1);
  conv2d_backward(x, w, gy, &gx, gw, gb);
  for (double v : gx.v) CHECK(v == 0.0);
  for (double v : gw.v) CHECK(v == 0.0);
  for (double v : gb.v) CHECK(v == 0.0);
}

TEST_CASE("gradcheck suite: every op passes at 1e-6 (64-bit) and 1e-3 (32-bit), 5 seeds") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto& r : gradcheck_suite<double>(seed, 1e-6)) {
      INFO("op ", r.op_name, " seed ", seed, " err ", r.max_rel_err);
      CHECK(r.passed);
    }
    for (const auto& r : gradcheck_suite<float>(seed, 1e-3)) {
      INFO("op ", r.op_name, " seed ", seed, " err ", r.max_rel_err);
      CHECK(r.passed);
    }
  }
}
