#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "safesign/light_attacks.hpp"
#include "test_helpers.hpp"

using namespace safesign;
using namespace safesign::light_attacks;

namespace {

SignImage flat_image(double v) { return Tensor::full({3, 64, 64}, v); }

double luma(const SignImage& img, int y, int x) {
  return 0.299 * img(0, y, x) + 0.587 * img(1, y, x) + 0.114 * img(2, y, x);
}

}  // namespace

TEST_CASE("full-opacity infrared spot paints its interior exactly") {
  AttackSpec spec;
  spec.kind = AttackKind::IS;
  spec.geometry = SpotGeometry{32, 32, 8};
  spec.color = {1.0, 0.3, 0.9};
  spec.intensity = 1.0;

  SignImage x = flat_image(0.2);
  SignImage out = apply_light_patch(x, spec);
  // interior (inside the 1-px falloff ring) equals the spot color exactly
  CHECK(out(0, 32, 32) == 1.0);
  CHECK(out(1, 32, 32) == 0.3);
  CHECK(out(2, 32, 32) == 0.9);
  CHECK(out(0, 32, 36) == 1.0);
  // exterior bit-identical
  CHECK(out(0, 32, 41) == 0.2);
  CHECK(out(0, 0, 0) == 0.2);
}

TEST_CASE("shadow darkens multiplicatively") {
  AttackSpec spec;
  spec.kind = AttackKind::NLS;
  spec.geometry = PolygonGeometry{{{10, 10}, {50, 10}, {50, 50}, {10, 50}}};
  spec.intensity = 0.5;

  SignImage x = flat_image(0.8);
  SignImage out = apply_light_patch(x, spec);
  CHECK(out(0, 30, 30) == doctest::Approx(0.4));
  CHECK(out(0, 5, 5) == 0.8);
  // never increases any pixel
  for (long i = 0; i < out.size(); ++i) CHECK(out[i] <= x[i]);
}

TEST_CASE("locality: nothing changes outside the declared footprint") {
  auto d_img = flat_image(0.5);
  Rng rng(7);
  for (auto kind : {AttackKind::IS, AttackKind::LL, AttackKind::NLS, AttackKind::PG}) {
    auto suite = make_attack_suite(kind, 10, 99);
    for (const auto& spec : suite) {
      SignImage x = testing::random_tensor({3, 64, 64}, rng, 0.0, 1.0);
      Tensor fp = footprint(spec);
      SignImage out = apply_light_patch(x, spec);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 64; ++y)
          for (int xx = 0; xx < 64; ++xx)
            if (fp(y, xx) == 0.0) CHECK(out(c, y, xx) == x(c, y, xx));
      CHECK(out.min_value() >= 0.0);
      CHECK(out.max_value() <= 1.0);
    }
  }
}

TEST_CASE("bright blends never darken where the patch color is brighter") {
  Rng rng(8);
  for (auto kind : {AttackKind::IS, AttackKind::LL}) {
    auto suite = make_attack_suite(kind, 8, 31);
    for (const auto& spec : suite) {
      SignImage x = testing::random_tensor({3, 64, 64}, rng, 0.0, 1.0);
      SignImage out = apply_light_patch(x, spec);
      const double patch_luma =
          0.299 * spec.color[0] + 0.587 * spec.color[1] + 0.114 * spec.color[2];
      for (int y = 0; y < 64; ++y)
        for (int xx = 0; xx < 64; ++xx)
          if (luma(x, y, xx) <= patch_luma)
            CHECK(luma(out, y, xx) >= luma(x, y, xx) - 1e-12);
    }
  }
}

TEST_CASE("suites are seeded, sized, and ranged") {
  auto a = make_attack_suite(AttackKind::IS, 3000, 5);
  CHECK(a.size() == 3000);
  auto b = make_attack_suite(AttackKind::IS, 3000, 5);
  CHECK(suite_to_json(a) == suite_to_json(b));
  auto c = make_attack_suite(AttackKind::IS, 3000, 6);
  CHECK(suite_to_json(a) != suite_to_json(c));

  for (const auto& spec : make_attack_suite(AttackKind::NLS, 50, 11)) {
    CHECK(spec.intensity > 0.0);
    CHECK(spec.intensity < 1.0);
  }
  CHECK_THROWS_AS(make_attack_suite(AttackKind::LL, 0, 1), std::invalid_argument);
}

TEST_CASE("degenerate geometry is rejected") {
  SignImage x = flat_image(0.5);
  AttackSpec s;
  s.kind = AttackKind::IS;
  s.geometry = SpotGeometry{32, 32, 0.0};
  CHECK_THROWS_AS(apply_light_patch(x, s), std::invalid_argument);

  s.kind = AttackKind::LL;
  s.geometry = LineGeometry{10, 10, 10, 10, 4};
  CHECK_THROWS_AS(apply_light_patch(x, s), std::invalid_argument);

  s.kind = AttackKind::NLS;
  s.geometry = PolygonGeometry{{{0, 0}, {10, 0}, {20, 0}}};  // zero area
  s.intensity = 0.5;
  CHECK_THROWS_AS(apply_light_patch(x, s), std::invalid_argument);

  s.kind = AttackKind::PG;
  s.geometry = RectGeometry{60, 60, 32, 32, 1};  // spills outside the frame
  s.intensity = 0.8;
  CHECK_THROWS_AS(apply_light_patch(x, s), std::invalid_argument);

  s.kind = AttackKind::NLS;
  s.geometry = PolygonGeometry{{{0, 0}, {63, 0}, {63, 63}, {0, 63}}};
  s.intensity = 1.0;  // NLS must strictly darken
  CHECK_THROWS_AS(apply_light_patch(x, s), std::invalid_argument);
}

TEST_CASE("json round trip reproduces renderer behavior") {
  Rng rng(9);
  SignImage x = testing::random_tensor({3, 64, 64}, rng, 0.0, 1.0);
  for (auto kind : {AttackKind::IS, AttackKind::LL, AttackKind::NLS, AttackKind::PG}) {
    auto suite = make_attack_suite(kind, 5, 77);
    auto restored = suite_from_json(suite_to_json(suite));
    REQUIRE(restored.size() == suite.size());
    for (size_t i = 0; i < suite.size(); ++i) {
      SignImage a = apply_light_patch(x, suite[i]);
      SignImage b = apply_light_patch(x, restored[i]);
      for (long k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
    }
  }
}

TEST_CASE("kind names round trip and reject unknowns") {
  for (auto kind : {AttackKind::IS, AttackKind::LL, AttackKind::NLS, AttackKind::PG})
    CHECK(kind_from_name(kind_name(kind)) == kind);
  CHECK_THROWS_AS(kind_from_name("XX"), std::invalid_argument);
}
