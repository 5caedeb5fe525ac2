#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <numeric>

#include "safesign/harness.hpp"
#include "safesign/reconstructor.hpp"
#include "test_helpers.hpp"

using namespace safesign;
using namespace safesign::reconstructor;

namespace {

ReconConfig tiny_recon(bool attention = true) {
  ReconConfig cfg;
  cfg.extractor_hidden = 4;
  cfg.attn_dim = 4;
  cfg.attention = attention;
  cfg.init_seed = 31;
  return cfg;
}

tsr_classifier::ClassifierConfig tiny_clf(int classes) {
  tsr_classifier::ClassifierConfig cfg;
  cfg.classes = classes;
  cfg.conv_channels = {4, 6, 6};
  cfg.fc_hidden = 24;
  cfg.init_seed = 5;
  return cfg;
}

Tensor stack_views(const std::vector<SignImage>& views) {
  Tensor out({static_cast<int>(views.size()), 3, 64, 64});
  for (size_t i = 0; i < views.size(); ++i)
    std::copy(views[i].data(), views[i].data() + views[i].size(),
              &out(static_cast<int>(i), 0, 0, 0));
  return out;
}

}  // namespace

TEST_CASE("squeeze descriptor of a constant channel is the constant, exactly") {
  Tensor f({3, 64, 64});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      f(0, y, x) = 0.1;
      f(1, y, x) = 0.7;
      f(2, y, x) = 0.3;
    }
  auto s = squeeze_descriptor(f);
  CHECK(s[0] == 0.1);
  CHECK(s[1] == 0.7);
  CHECK(s[2] == 0.3);
}

TEST_CASE("unit excitation hook makes recalibration an identity") {
  Reconstructor r(tiny_recon());
  Rng rng(3);
  Tensor f = testing::random_tensor({3, 16, 16}, rng);
  Tensor out = r.se_recalibrate(f, /*unit_excitation=*/true);
  for (long i = 0; i < f.size(); ++i) CHECK(out[i] == f[i]);
}

TEST_CASE("zero features recalibrate to zero and weights stay in (0,1)") {
  Reconstructor r(tiny_recon());
  Tensor zero({3, 16, 16});
  Tensor out = r.se_recalibrate(zero);
  for (long i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);

  Rng rng(4);
  SqueezeExcite se("se_test", rng);
  Tensor x = testing::random_tensor({5, 3, 8, 8}, rng);
  se.forward(x, false);
  const Tensor& w = se.last_weights();
  for (long i = 0; i < w.size(); ++i) {
    CHECK(w[i] > 0.0);
    CHECK(w[i] < 1.0);
  }
}

TEST_CASE("squeeze-excite gradients match finite differences") {
  Rng rng(5);
  SqueezeExcite se("se_fd", rng);
  Tensor x = testing::random_tensor({2, 3, 6, 6}, rng);
  Tensor pw = testing::random_tensor({2, 3, 6, 6}, rng);
  std::vector<nn::ParamPtr> params;
  se.collect(params);
  auto compute = [&] {
    nn::zero_grads(params);
    Tensor y = se.forward(x, true);
    se.backward(pw);
    double s = 0.0;
    for (long i = 0; i < y.size(); ++i) s += y[i] * pw[i];
    return s;
  };
  auto res = testing::check_param_gradients(params, compute, 3, 88);
  CHECK_MESSAGE(res.ok(), res.worst_at, " rel=", res.worst_rel);

  // input gradient including both the direct and the squeeze paths
  Tensor dx;
  {
    nn::zero_grads(params);
    se.forward(x, true);
    dx = se.backward(pw);
  }
  auto loss_only = [&] {
    Tensor y = se.forward(x, true);
    double s = 0.0;
    for (long i = 0; i < y.size(); ++i) s += y[i] * pw[i];
    return s;
  };
  auto res2 = testing::check_input_gradient(x, dx, loss_only, 10, 89);
  CHECK_MESSAGE(res2.ok(), res2.worst_at, " rel=", res2.worst_rel);
}

TEST_CASE("identical views attract uniform attention weights that sum to one") {
  Reconstructor r(tiny_recon());
  Rng rng(6);
  SignImage view = testing::random_tensor({3, 64, 64}, rng, 0.0, 1.0);
  const int R = 4;
  Tensor feats({R, 3, 64, 64});
  for (int i = 0; i < R; ++i)
    std::copy(view.data(), view.data() + view.size(), &feats(i, 0, 0, 0));

  Tensor weights;
  SignImage fused = r.fuse_views(feats, &weights);
  CHECK(fused.shape() == std::vector<int>{3, 64, 64});
  for (int rq = 0; rq < R; ++rq)
    for (long pos = 0; pos < 64 * 64; ++pos) {
      double sum = 0.0;
      for (int rk = 0; rk < R; ++rk) {
        CHECK(weights(rq, rk, static_cast<int>(pos)) == doctest::Approx(0.25).epsilon(1e-9));
        sum += weights(rq, rk, static_cast<int>(pos));
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("attention weights sum to one for arbitrary views") {
  Reconstructor r(tiny_recon());
  Rng rng(7);
  Tensor feats = testing::random_tensor({5, 3, 64, 64}, rng, 0.0, 1.0);
  Tensor weights;
  r.fuse_views(feats, &weights);
  for (int rq = 0; rq < 5; ++rq)
    for (long pos = 0; pos < 64 * 64; ++pos) {
      double sum = 0.0;
      for (int rk = 0; rk < 5; ++rk) sum += weights(rq, rk, static_cast<int>(pos));
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("fusing a single view is rejected") {
  Reconstructor r(tiny_recon());
  Rng rng(8);
  Tensor feats = testing::random_tensor({1, 3, 64, 64}, rng);
  CHECK_THROWS_AS(r.fuse_views(feats), std::invalid_argument);
}

TEST_CASE("repair output contract and view-count range") {
  Reconstructor r(tiny_recon());
  auto d = harness::make_toy_dataset(2, 1, 60);
  MultiViewInput mv;
  Rng rng(9);
  mv.views = synthesize_views(d.train[0].image, 6, ViewJitter{}, rng);
  mv.label = d.train[0].label;
  mv.base = d.train[0].image;
  SignImage out = r.repair(mv);
  CHECK(out.shape() == std::vector<int>{3, 64, 64});
  CHECK(out.min_value() >= 0.0);
  CHECK(out.max_value() <= 1.0);

  // deterministic per (parameters, input)
  SignImage out2 = r.repair(mv);
  for (long i = 0; i < out.size(); ++i) CHECK(out[i] == out2[i]);

  MultiViewInput too_few = mv;
  too_few.views.resize(1);
  CHECK_THROWS_AS(r.repair(too_few), std::invalid_argument);
  MultiViewInput too_many = mv;
  for (int i = 0; i < 6; ++i) too_many.views.push_back(mv.views[0]);
  CHECK_THROWS_AS(r.repair(too_many), std::invalid_argument);
}

TEST_CASE("shared weights make repair invariant to view order") {
  Reconstructor r(tiny_recon());
  auto d = harness::make_toy_dataset(2, 1, 61);
  Rng rng(10);
  MultiViewInput mv;
  mv.views = synthesize_views(d.train[0].image, 5, ViewJitter{}, rng);
  mv.label = 0;
  mv.base = d.train[0].image;
  SignImage a = r.repair(mv);

  std::rotate(mv.views.begin(), mv.views.begin() + 2, mv.views.end());
  std::swap(mv.views[0], mv.views[3]);
  SignImage b = r.repair(mv);
  for (long i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
}

TEST_CASE("per-view weight mode works at its pinned view count") {
  ReconConfig cfg = tiny_recon();
  cfg.shared_weights = false;
  cfg.fixed_views = 3;
  Reconstructor r(cfg);
  auto d = harness::make_toy_dataset(2, 1, 62);
  Rng rng(11);
  MultiViewInput mv;
  mv.views = synthesize_views(d.train[0].image, 3, ViewJitter{}, rng);
  mv.label = 0;
  mv.base = d.train[0].image;
  CHECK_NOTHROW(r.repair(mv));
  MultiViewInput wrong = mv;
  wrong.views.push_back(mv.views[0]);
  CHECK_THROWS_AS(r.repair(wrong), std::invalid_argument);
}

TEST_CASE("repair objective gradients match finite differences") {
  auto d = harness::make_toy_dataset(2, 3, 63);
  tsr_classifier::TrainConfig tc;
  tc.epochs = 1;
  tc.lr = 1e-3;
  auto clf = tsr_classifier::train_classifier(d, tiny_clf(2), tc);

  Reconstructor r(tiny_recon());
  Rng rng(12);
  const int R = 3;
  std::vector<SignImage> v1 = synthesize_views(d.train[0].image, R, ViewJitter{}, rng);
  std::vector<SignImage> v2 = synthesize_views(d.train[1].image, R, ViewJitter{}, rng);
  Tensor views({2 * R, 3, 64, 64});
  for (int i = 0; i < R; ++i) {
    std::copy(v1[static_cast<size_t>(i)].data(), v1[static_cast<size_t>(i)].data() + 3 * 64 * 64,
              &views(i, 0, 0, 0));
    std::copy(v2[static_cast<size_t>(i)].data(), v2[static_cast<size_t>(i)].data() + 3 * 64 * 64,
              &views(R + i, 0, 0, 0));
  }
  std::vector<int> labels{d.train[0].label, d.train[1].label};
  const double fid = 0.1;
  auto params = r.params();

  auto compute = [&] {
    nn::zero_grads(params);
    Tensor out = r.forward_groups(views, {R, R}, /*train=*/true);
    nn::zero_grads(clf.params());
    Tensor logits = clf.forward_logits(out, false);
    Tensor dlogits;
    double loss = nn::softmax_cross_entropy(logits, labels, &dlogits);
    Tensor dout = clf.backward_to_input(dlogits);
    const long pix = 3 * 64 * 64;
    double fid_term = 0.0;
    for (int g = 0; g < 2; ++g) {
      const SignImage& base = g == 0 ? d.train[0].image : d.train[1].image;
      for (long k = 0; k < pix; ++k) {
        const double diff = out[g * pix + k] - base[k];
        fid_term += std::abs(diff);
        dout[g * pix + k] += fid / (2.0 * pix) * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
      }
    }
    loss += fid * fid_term / (2.0 * pix);
    r.backward_groups(dout);
    return loss;
  };
  auto res = testing::check_param_gradients(params, compute, 1, 321);
  CHECK(res.checked >= 10);
  CHECK_MESSAGE(res.ok(), res.worst_at, " rel=", res.worst_rel);
}

TEST_CASE("view synthesis is seeded and canonical") {
  auto d = harness::make_toy_dataset(2, 1, 64);
  Rng a(5), b(5), c(6);
  auto va = synthesize_views(d.train[0].image, 4, ViewJitter{}, a);
  auto vb = synthesize_views(d.train[0].image, 4, ViewJitter{}, b);
  auto vc = synthesize_views(d.train[0].image, 4, ViewJitter{}, c);
  REQUIRE(va.size() == 4);
  bool any_diff = false;
  for (size_t i = 0; i < va.size(); ++i) {
    CHECK(is_canonical(va[i]));
    for (long k = 0; k < va[i].size(); ++k) {
      CHECK(va[i][k] == vb[i][k]);
      if (va[i][k] != vc[i][k]) any_diff = true;
    }
  }
  CHECK(any_diff);  // a different seed jitters differently
}

TEST_CASE("training refuses an unfrozen classifier and leaves the frozen one intact") {
  auto d = harness::make_toy_dataset(2, 4, 65);
  tsr_classifier::TrainConfig tc;
  tc.epochs = 1;
  tc.lr = 1e-3;
  auto clf = tsr_classifier::train_classifier(d, tiny_clf(2), tc);
  const uint64_t hash_before = clf.param_hash();

  patch_forge::GeneratorConfig gcfg;
  gcfg.stage_widths = {4, 4, 4, 4};
  gcfg.patterns = 2;
  patch_forge::Generator gen(gcfg);
  auto masks = mask_lab::default_mask_suite({1});

  Reconstructor r(tiny_recon());
  ReconTrainConfig rc;
  rc.views = 3;
  rc.group_batch = 2;
  rc.epochs = 1;
  rc.max_steps = 4;
  train_reconstructor(r, clf, d, gen, masks, rc);
  CHECK(clf.param_hash() == hash_before);

  tsr_classifier::Classifier fresh(tiny_clf(2));
  Reconstructor r2(tiny_recon());
  CHECK_THROWS_AS(train_reconstructor(r2, fresh, d, gen, masks, rc), std::logic_error);
}

TEST_CASE("reconstructor checkpoints round trip") {
  Reconstructor r(tiny_recon());
  const std::string path = "/tmp/safesign_rec_rt.ckpt";
  r.to_checkpoint().save(path);
  Reconstructor h = Reconstructor::from_checkpoint(Checkpoint::load(path));
  CHECK(h.param_hash() == r.param_hash());
  auto d = harness::make_toy_dataset(2, 1, 66);
  Rng rng(13);
  MultiViewInput mv;
  mv.views = synthesize_views(d.train[0].image, 4, ViewJitter{}, rng);
  mv.label = 0;
  mv.base = d.train[0].image;
  SignImage a = r.repair(mv);
  SignImage b = h.repair(mv);
  for (long i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  std::filesystem::remove(path);
}
