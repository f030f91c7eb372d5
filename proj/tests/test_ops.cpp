#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstring>

#include "sdcl/ops.hpp"
#include "sdcl/rng.hpp"
#include "sdcl/tensor.hpp"

using namespace sdcl;

TEST_CASE("conv2d all-ones 3x3 kernel sums the full window at the center") {
  auto x = TensorF::filled({1, 1, 3, 3}, 1.0f);
  auto w = TensorF::filled({1, 1, 3, 3}, 1.0f);
  auto y = conv2d(x, w);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  REQUIRE(y.data()[4] == Catch::Approx(9.0f));  // center: full window
  REQUIRE(y.data()[0] == Catch::Approx(4.0f));  // corner: 2x2 valid taps
}

TEST_CASE("conv2d with a center-only kernel is the identity") {
  auto rng = make_rng(3);
  auto x = TensorF::randn({2, 3, 8, 8}, rng, 1.0f);
  auto w = TensorF::zeros({3, 3, 3, 3});
  for (int o = 0; o < 3; ++o) w.data()[((o * 3 + o) * 3 + 1) * 3 + 1] = 1.0f;
  auto y = conv2d(x, w);
  for (int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d on a constant image yields c * kernel_sum on the interior") {
  auto rng = make_rng(11);
  const float c = 0.37f;
  auto x = TensorF::filled({1, 2, 9, 9}, c);
  auto w = TensorF::randn({4, 2, 3, 3}, rng, 1.0f);
  auto y = conv2d(x, w);
  for (int o = 0; o < 4; ++o) {
    float ks = 0.f;
    for (int j = 0; j < 2 * 9; ++j) ks += w.data()[o * 18 + j];
    // interior point (4,4): every tap lands inside the constant image
    REQUIRE(y.data()[(o * 9 + 4) * 9 + 4] == Catch::Approx(c * ks).margin(1e-5));
  }
}

TEST_CASE("conv2d stride-2 same padding halves spatial dims") {
  auto x = TensorF::filled({1, 1, 32, 32}, 1.0f);
  auto w = TensorF::filled({5, 1, 3, 3}, 0.1f);
  auto y = conv2d(x, w, 2);
  REQUIRE(y.shape() == Shape{1, 5, 16, 16});
}

TEST_CASE("conv2d rejects channel mismatches with a dimension message") {
  auto x = TensorF::zeros({1, 3, 8, 8});
  auto w = TensorF::zeros({4, 2, 3, 3});
  REQUIRE_THROWS_WITH(conv2d(x, w),
                      Catch::Matchers::ContainsSubstring("channels"));
}

TEST_CASE("conv2d forward is bit-deterministic") {
  auto rng = make_rng(17);
  auto x = TensorF::randn({3, 4, 16, 16}, rng, 1.0f);
  auto w = TensorF::randn({8, 4, 3, 3}, rng, 0.5f);
  auto y1 = conv2d(x, w);
  auto y2 = conv2d(x, w);
  REQUIRE(std::memcmp(y1.data(), y2.data(), y1.numel() * sizeof(float)) == 0);
}

TEST_CASE("batchnorm train-mode output is standardized per channel") {
  auto rng = make_rng(5);
  auto x = TensorF::randn({8, 4, 6, 6}, rng, 2.5f);
  auto gamma = TensorF::filled({4}, 1.0f);
  auto beta = TensorF::zeros({4});
  BatchNormStats<float> stats(4);
  auto y = batchnorm(x, gamma, beta, stats, true);
  const int64_t count = 8 * 6 * 6;
  for (int c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (int n = 0; n < 8; ++n)
      for (int s = 0; s < 36; ++s) mean += y.data()[(n * 4 + c) * 36 + s];
    mean /= count;
    for (int n = 0; n < 8; ++n)
      for (int s = 0; s < 36; ++s) {
        double d = y.data()[(n * 4 + c) * 36 + s] - mean;
        var += d * d;
      }
    var /= count;
    REQUIRE(std::fabs(mean) < 1e-5);
    REQUIRE(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm rejects batch of one in training mode") {
  auto x = TensorF::zeros({1, 4, 6, 6});
  auto gamma = TensorF::filled({4}, 1.0f);
  auto beta = TensorF::zeros({4});
  BatchNormStats<float> stats(4);
  REQUIRE_THROWS_AS(batchnorm(x, gamma, beta, stats, true), NumericalError);
  // eval mode accepts singleton batches
  REQUIRE_NOTHROW(batchnorm(x, gamma, beta, stats, false));
}

TEST_CASE("batchnorm eval mode uses running statistics") {
  auto rng = make_rng(6);
  auto gamma = TensorF::filled({2}, 1.0f);
  auto beta = TensorF::zeros({2});
  BatchNormStats<float> stats(2);
  for (int i = 0; i < 50; ++i) {
    auto x = TensorF::randn({16, 2}, rng, 3.0f);
    for (int64_t j = 0; j < x.numel(); ++j) x.data()[j] += 1.0f;
    batchnorm(x, gamma, beta, stats, true);
  }
  REQUIRE(stats.running_mean[0] == Catch::Approx(1.0).margin(0.2));
  REQUIRE(stats.running_var[0] == Catch::Approx(9.0).margin(2.0));
  auto x0 = TensorF::filled({1, 2}, 1.0f);
  auto y = batchnorm(x0, gamma, beta, stats, false);
  REQUIRE(std::fabs(y.data()[0]) < 0.1);  // (1 - ~1)/~3
}

TEST_CASE("upsample_nearest(3) then aligned maxpool(3,3) is the identity") {
  auto rng = make_rng(9);
  auto x = TensorF::randn({2, 3, 5, 5}, rng, 1.0f);
  auto up = upsample_nearest(x, 3);
  REQUIRE(up.shape() == Shape{2, 3, 15, 15});
  auto back = maxpool2d(up, 3, 3);
  REQUIRE(back.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(back.data()[i] == x.data()[i]);
}

TEST_CASE("avgpool_global on a constant image returns that constant") {
  auto x = TensorF::filled({2, 3, 7, 7}, 0.625f);
  auto y = avgpool_global(x);
  REQUIRE(y.shape() == Shape{2, 3});
  for (int64_t i = 0; i < y.numel(); ++i)
    REQUIRE(y.data()[i] == Catch::Approx(0.625f));
}

TEST_CASE("maxpool routes gradient to the first maximum on ties") {
  auto x = TensorD::filled({1, 1, 2, 2}, 1.0, true);
  auto y = sum_all(maxpool2d(x, 2, 2));
  y.backward();
  REQUIRE(x.grad()[0] == 1.0);
  REQUIRE(x.grad()[1] == 0.0);
  REQUIRE(x.grad()[3] == 0.0);
}

TEST_CASE("linear computes x W^T + b") {
  auto x = TensorF::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto w = TensorF::from_data({2, 3}, {1, 0, 0, 0, 1, 0});
  auto b = TensorF::from_data({2}, {10, 20});
  auto y = linear(x, w, b);
  REQUIRE(y.data()[0] == 11.0f);
  REQUIRE(y.data()[1] == 22.0f);
  REQUIRE(y.data()[2] == 14.0f);
  REQUIRE(y.data()[3] == 25.0f);
}

TEST_CASE("softmax cross entropy equals ln(L) for uniform logits") {
  const int L = 7;
  auto logits = TensorF::zeros({4, L});
  auto loss = softmax_cross_entropy(logits, {0, 1, 2, 3});
  REQUIRE(loss.item() == Catch::Approx(std::log((float)L)).epsilon(1e-6));
}

TEST_CASE("softmax cross entropy goes to zero with a dominant logit") {
  auto logits = TensorF::zeros({2, 3});
  logits.data()[0] = 50.0f;
  logits.data()[5] = 50.0f;
  auto loss = softmax_cross_entropy(logits, {0, 2});
  REQUIRE(loss.item() < 1e-6f);
}

TEST_CASE("softmax cross entropy matches an independent log-sum-exp oracle") {
  auto rng = make_rng(21);
  const int n = 5, L = 4;
  auto logits = TensorD::randn({n, L}, rng, 2.0);
  std::vector<int> labels = {3, 0, 2, 1, 1};
  auto loss = softmax_cross_entropy(logits, labels);
  // oracle: direct long-double evaluation of mean(LSE(row) - row[label])
  long double acc = 0;
  for (int r = 0; r < n; ++r) {
    long double z = 0;
    for (int j = 0; j < L; ++j) z += expl((long double)logits.data()[r * L + j]);
    acc += logl(z) - (long double)logits.data()[r * L + labels[r]];
  }
  REQUIRE(loss.item() == Catch::Approx((double)(acc / n)).epsilon(1e-9));
}

TEST_CASE("l2_normalize_rows produces unit rows and rejects zero rows") {
  auto rng = make_rng(30);
  auto z = TensorF::randn({6, 5}, rng, 1.0f);
  auto y = l2_normalize_rows(z);
  for (int r = 0; r < 6; ++r) {
    float s = 0;
    for (int j = 0; j < 5; ++j) s += y.data()[r * 5 + j] * y.data()[r * 5 + j];
    REQUIRE(s == Catch::Approx(1.0f).epsilon(1e-5));
  }
  auto zero = TensorF::zeros({2, 5});
  REQUIRE_THROWS_AS(l2_normalize_rows(zero), NumericalError);
}

TEST_CASE("concat_cols splits gradient between its inputs") {
  auto a = TensorD::from_data({2, 2}, {1, 2, 3, 4}, true);
  auto b = TensorD::from_data({2, 1}, {5, 6}, true);
  auto y = concat_cols(a, b);
  REQUIRE(y.shape() == Shape{2, 3});
  REQUIRE(y.data()[2] == 5.0);
  REQUIRE(y.data()[5] == 6.0);
  sum_all(y).backward();
  REQUIRE(a.grad() == std::vector<double>{1, 1, 1, 1});
  REQUIRE(b.grad() == std::vector<double>{1, 1});
}
