#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "safesign/harness.hpp"
#include "safesign/tsr_classifier.hpp"
#include "test_helpers.hpp"

using namespace safesign;
using namespace safesign::tsr_classifier;

namespace {

ClassifierConfig tiny_arch(int classes = 4) {
  ClassifierConfig cfg;
  cfg.classes = classes;
  cfg.conv_channels = {4, 6, 6};
  cfg.fc_hidden = 24;
  cfg.init_seed = 5;
  return cfg;
}

SignImage toy_image(int cls, uint64_t seed) {
  auto d = harness::make_toy_dataset(4, 1, seed);
  return d.train[static_cast<size_t>(cls)].image;
}

}  // namespace

TEST_CASE("prediction probabilities form a distribution") {
  Classifier c(tiny_arch());
  auto [label, probs] = c.predict(toy_image(0, 3));
  double sum = 0.0;
  for (double p : probs) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(label >= 0);
  CHECK(label < 4);
}

TEST_CASE("zeroed final layer emits uniform probabilities") {
  Classifier c(tiny_arch());
  c.zero_final_layer();
  auto [label, probs] = c.predict(toy_image(1, 4));
  for (double p : probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("wrong input shape is rejected") {
  Classifier c(tiny_arch());
  CHECK_THROWS_AS(c.predict(Tensor({3, 32, 32})), std::invalid_argument);
  CHECK_THROWS_AS(c.forward_logits(Tensor({1, 3, 32, 32}), false), std::invalid_argument);
}

TEST_CASE("feature self-similarity is one on every layer") {
  Classifier c(tiny_arch());
  SignImage x = toy_image(2, 5);
  auto sims = feature_similarity(c, x, x);
  CHECK(sims.size() == 5);  // three conv stages + two fully connected layers
  for (const auto& s : sims) {
    REQUIRE(s.has_value());
    CHECK(*s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("negated input flips the sign of the linear first-layer features") {
  Classifier c(tiny_arch());  // fresh network, conv biases start at zero
  SignImage x = toy_image(3, 6);
  Tensor neg(x.shape());
  for (long i = 0; i < x.size(); ++i) neg[i] = -x[i];
  auto sims = feature_similarity(c, x, neg);
  REQUIRE(sims[0].has_value());
  CHECK(*sims[0] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("zero-norm features are flagged undefined") {
  Classifier c(tiny_arch());
  SignImage zero = make_sign_image();  // all-zero image, zero bias -> zero conv output
  auto sims = feature_similarity(c, zero, toy_image(0, 7));
  CHECK_FALSE(sims[0].has_value());
}

TEST_CASE("metrics from a known confusion matrix") {
  // predictions [A,A,B] against truth [A,B,B]
  Tensor confusion({2, 2});
  confusion(0, 0) = 1;  // A predicted A
  confusion(1, 0) = 1;  // B predicted A
  confusion(1, 1) = 1;  // B predicted B
  Metrics m = metrics_from_confusion(confusion);
  CHECK(m.accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class_precision[0] == doctest::Approx(0.5));
  CHECK(m.per_class_precision[1] == doctest::Approx(1.0));
  CHECK(m.precision_defined[0]);
  CHECK(m.precision_defined[1]);

  // a class never predicted is flagged
  Tensor c2({2, 2});
  c2(0, 0) = 3;
  c2(1, 0) = 2;
  Metrics m2 = metrics_from_confusion(c2);
  CHECK_FALSE(m2.precision_defined[1]);
  CHECK(m2.per_class_precision[1] == 0.0);

  // all-correct predictions
  Tensor c3({2, 2});
  c3(0, 0) = 4;
  c3(1, 1) = 6;
  Metrics m3 = metrics_from_confusion(c3);
  CHECK(m3.accuracy == 1.0);
  CHECK(m3.per_class_precision[0] == 1.0);
  CHECK(m3.per_class_precision[1] == 1.0);
}

TEST_CASE("evaluate counts every sample and validates input") {
  auto d = harness::make_toy_dataset(4, 8, 17);
  Classifier c(tiny_arch());
  auto m = evaluate(c, harness::test_pairs(d));
  double total = 0.0, diag = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) total += m.confusion(i, j);
  for (int i = 0; i < 4; ++i) diag += m.confusion(i, i);
  CHECK(total == static_cast<double>(d.test.size()));
  CHECK(m.accuracy == doctest::Approx(diag / total).epsilon(1e-12));
  CHECK_THROWS_AS(evaluate(c, {}), std::invalid_argument);
}

TEST_CASE("training guards degenerate datasets") {
  auto d = harness::make_toy_dataset(4, 4, 30);
  // single-class degenerate dataset
  sign_data::Dataset solo;
  solo.class_names = {"only"};
  for (auto s : d.train)
    if (s.label == 0) {
      s.label = 0;
      s.class_name = "only";
      solo.train.push_back(s);
    }
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train_classifier(solo, tiny_arch(1), tc), std::invalid_argument);

  // class missing from the train split entirely
  sign_data::Dataset missing = d;
  missing.train.erase(std::remove_if(missing.train.begin(), missing.train.end(),
                                     [](const sign_data::SignSample& s) { return s.label == 2; }),
                      missing.train.end());
  CHECK_THROWS_AS(train_classifier(missing, tiny_arch(4), tc), std::invalid_argument);
}

TEST_CASE("training is deterministic and freezes the model") {
  auto d = harness::make_toy_dataset(3, 8, 21);
  TrainConfig tc;
  tc.epochs = 4;
  tc.lr = 1e-3;
  tc.batch = 8;
  tc.seed = 9;
  std::vector<double> curve1, curve2;
  Classifier a = train_classifier(d, tiny_arch(3), tc, &curve1);
  Classifier b = train_classifier(d, tiny_arch(3), tc, &curve2);
  CHECK(a.frozen());
  CHECK(a.param_hash() == b.param_hash());
  CHECK(curve1 == curve2);
  CHECK(curve1.size() == 4);
  CHECK(curve1.back() < curve1.front());  // loss moves down on this easy corpus

  // frozen models refuse mutation
  CHECK_THROWS_AS(a.zero_final_layer(), std::logic_error);
}

TEST_CASE("checkpoint round trip preserves behavior") {
  auto d = harness::make_toy_dataset(3, 6, 22);
  TrainConfig tc;
  tc.epochs = 1;
  tc.lr = 1e-3;
  Classifier a = train_classifier(d, tiny_arch(3), tc);
  const std::string path = "/tmp/safesign_clf_rt.ckpt";
  a.to_checkpoint().save(path);
  Classifier b = Classifier::from_checkpoint(Checkpoint::load(path));
  CHECK(b.frozen());
  CHECK(b.param_hash() == a.param_hash());
  CHECK(b.class_names() == a.class_names());
  auto [la, pa] = a.predict(d.test[0].image);
  auto [lb, pb] = b.predict(d.test[0].image);
  CHECK(la == lb);
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
  std::filesystem::remove(path);
}

TEST_CASE("input gradient matches finite differences") {
  Classifier c(tiny_arch());
  SignImage x = toy_image(1, 8);
  // keep pixels interior so the finite-difference probes stay in range
  for (long i = 0; i < x.size(); ++i) x[i] = 0.1 + 0.8 * x[i];
  const int label = 2;
  Tensor analytic = input_gradient(c, x, label);

  auto loss_only = [&] {
    Tensor batch({1, kSignChannels, kSignSize, kSignSize});
    std::copy(x.data(), x.data() + x.size(), batch.data());
    Tensor logits = c.forward_logits(batch, false);
    return nn::softmax_cross_entropy(logits, {label}, nullptr);
  };
  auto res = safesign::testing::check_input_gradient(x, analytic, loss_only, 12, 77);
  CHECK_MESSAGE(res.ok(), res.worst_at, " rel=", res.worst_rel);
}
