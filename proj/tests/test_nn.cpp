#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "safesign/nn.hpp"
#include "test_helpers.hpp"

using namespace safesign;
using namespace safesign::nn;
using safesign::testing::check_param_gradients;
using safesign::testing::random_tensor;

namespace {

// Scalar probe loss: weighted sum of the outputs, with fixed weights so the
// loss is a deterministic linear functional of the layer output.
Tensor probe_weights(const std::vector<int>& shape, uint64_t seed) {
  Rng rng(seed);
  return random_tensor(shape, rng, -1.0, 1.0);
}

double weighted_sum(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (long i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d matches finite differences") {
  Rng rng(11);
  Conv2d conv("c", 3, 4, 3, rng);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor pw = probe_weights({2, 4, 8, 8}, 99);
  std::vector<ParamPtr> params;
  conv.collect(params);
  auto compute = [&] {
    zero_grads(params);
    Tensor y = conv.forward(x);
    conv.backward(pw);
    return weighted_sum(y, pw);
  };
  auto res = check_param_gradients(params, compute, 6, 7);
  CHECK_MESSAGE(res.ok(), res.worst_at, " rel=", res.worst_rel);
}

TEST_CASE("conv2d input gradient matches finite differences") {
  Rng rng(12);
  Conv2d conv("c", 2, 3, 3, rng);
  Tensor x = random_tensor({1, 2, 6, 6}, rng);
  Tensor pw = probe_weights({1, 3, 6, 6}, 98);
  Tensor dx;
  auto loss = [&] { return weighted_sum(conv.forward(x), pw); };
  {
    conv.forward(x);
    std::vector<ParamPtr> params;
    conv.collect(params);
    zero_grads(params);
    dx = conv.backward(pw);
  }
  auto res = safesign::testing::check_input_gradient(x, dx, loss, 12, 5);
  CHECK_MESSAGE(res.ok(), res.worst_at, " rel=", res.worst_rel);
}

TEST_CASE("transposed conv doubles spatial size and matches finite differences") {
  Rng rng(13);
  ConvTranspose2x2 up("u", 3, 2, rng);
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor y = up.forward(x);
  CHECK(y.shape() == std::vector<int>{2, 2, 8, 8});

  Tensor pw = probe_weights(y.shape(), 97);
  std::vector<ParamPtr> params;
  up.collect(params);
  auto compute = [&] {
    zero_grads(params);
    Tensor out = up.forward(x);
    up.backward(pw);
    return weighted_sum(out, pw);
  };
  auto res = check_param_gradients(params, compute, 8, 3);
  CHECK_MESSAGE(res.ok(), res.worst_at, " rel=", res.worst_rel);
}

TEST_CASE("batchnorm normalizes and matches finite differences") {
  Rng rng(14);
  BatchNorm2d bn("b", 3);
  Tensor x = random_tensor({4, 3, 5, 5}, rng, 0.0, 2.0);
  Tensor y = bn.forward(x, /*train=*/true);
  // unit gamma, zero beta: per-channel batch mean ~0, variance ~1
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) mean += y(n, c, i, j);
    mean /= 100.0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) var += (y(n, c, i, j) - mean) * (y(n, c, i, j) - mean);
    var /= 100.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  Tensor pw = probe_weights(x.shape(), 96);
  std::vector<ParamPtr> params;
  bn.collect(params);
  auto compute = [&] {
    zero_grads(params);
    Tensor out = bn.forward(x, true);
    bn.backward(pw);
    return weighted_sum(out, pw);
  };
  auto res = check_param_gradients(params, compute, 6, 21);
  CHECK_MESSAGE(res.ok(), res.worst_at, " rel=", res.worst_rel);

  // input gradient through the batch statistics
  Tensor dx;
  {
    zero_grads(params);
    bn.forward(x, true);
    dx = bn.backward(pw);
  }
  auto loss = [&] { return weighted_sum(bn.forward(x, true), pw); };
  auto res2 = safesign::testing::check_input_gradient(x, dx, loss, 12, 22);
  CHECK_MESSAGE(res2.ok(), res2.worst_at, " rel=", res2.worst_rel);
}

TEST_CASE("linear matches finite differences") {
  Rng rng(15);
  Linear fc("f", 7, 4, rng);
  Tensor x = random_tensor({3, 7}, rng);
  Tensor pw = probe_weights({3, 4}, 95);
  std::vector<ParamPtr> params;
  fc.collect(params);
  auto compute = [&] {
    zero_grads(params);
    Tensor y = fc.forward(x);
    fc.backward(pw);
    return weighted_sum(y, pw);
  };
  auto res = check_param_gradients(params, compute, 8, 31);
  CHECK_MESSAGE(res.ok(), res.worst_at, " rel=", res.worst_rel);
}

TEST_CASE("maxpool picks maxima and routes gradients to them") {
  Tensor x({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x[i] = i * 0.1;
  MaxPool2x2 pool;
  Tensor y = pool.forward(x);
  CHECK(y.shape() == std::vector<int>{1, 1, 2, 2});
  CHECK(y(0, 0, 0, 0) == doctest::Approx(0.5));
  CHECK(y(0, 0, 1, 1) == doctest::Approx(1.5));
  Tensor g({1, 1, 2, 2});
  g.fill(1.0);
  Tensor dx = pool.backward(g);
  CHECK(dx(0, 0, 1, 1) == 1.0);  // argmax of the first window
  CHECK(dx(0, 0, 0, 0) == 0.0);
}

TEST_CASE("softmax cross entropy: values and gradient") {
  Tensor logits({2, 3});
  logits(0, 0) = 1.0; logits(0, 1) = 2.0; logits(0, 2) = 0.5;
  logits(1, 0) = -1.0; logits(1, 1) = 0.0; logits(1, 2) = 3.0;
  std::vector<int> labels{1, 2};
  Tensor dlogits, probs;
  const double loss = softmax_cross_entropy(logits, labels, &dlogits, &probs);

  // direct recomputation
  double expect = 0.0;
  for (int n = 0; n < 2; ++n) {
    double z = 0.0;
    for (int k = 0; k < 3; ++k) z += std::exp(logits(n, k));
    expect += -std::log(std::exp(logits(n, labels[static_cast<size_t>(n)])) / z);
  }
  expect /= 2.0;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  for (int n = 0; n < 2; ++n) {
    double sum = 0.0;
    for (int k = 0; k < 3; ++k) sum += probs(n, k);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  // finite differences on the logits
  for (int n = 0; n < 2; ++n) {
    for (int k = 0; k < 3; ++k) {
      const double h = 1e-5;
      const double saved = logits(n, k);
      logits(n, k) = saved + h;
      const double lp = softmax_cross_entropy(logits, labels, nullptr);
      logits(n, k) = saved - h;
      const double lm = softmax_cross_entropy(logits, labels, nullptr);
      logits(n, k) = saved;
      CHECK(dlogits(n, k) == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-4));
    }
  }
}

TEST_CASE("adam descends a quadratic") {
  auto p = std::make_shared<Param>("p", Tensor::full({4}, 5.0));
  Adam opt;
  opt.lr = 0.5;
  for (int it = 0; it < 400; ++it) {
    p->zero_grad();
    for (long i = 0; i < 4; ++i) p->grad[i] = 2.0 * p->value[i];
    opt.step({p});
  }
  for (long i = 0; i < 4; ++i) CHECK(std::abs(p->value[i]) < 1e-2);
}

TEST_CASE("concat and split are inverse") {
  Rng rng(16);
  Tensor a = random_tensor({2, 3, 4, 4}, rng);
  Tensor b = random_tensor({2, 2, 4, 4}, rng);
  Tensor cat = concat_channels(a, b);
  CHECK(cat.shape() == std::vector<int>{2, 5, 4, 4});
  Tensor ga, gb;
  split_channels(cat, 3, &ga, &gb);
  for (long i = 0; i < a.size(); ++i) CHECK(ga[i] == a[i]);
  for (long i = 0; i < b.size(); ++i) CHECK(gb[i] == b[i]);
}

TEST_CASE("pairwise mean of a constant channel is exact") {
  Tensor t({1, 64, 64});
  t.fill(0.1);
  CHECK(mean_of(t) == 0.1);  // bitwise, not approximate
}

TEST_CASE("param hash changes with values") {
  Rng rng(17);
  auto p = std::make_shared<Param>("p", random_tensor({8}, rng));
  const uint64_t h1 = hash_params({p});
  p->value[3] += 1e-12;
  CHECK(hash_params({p}) != h1);
}
