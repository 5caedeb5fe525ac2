#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "safesign/harness.hpp"
#include "safesign/image.hpp"
#include "safesign/rng.hpp"
#include "safesign/sign_data.hpp"

namespace fs = std::filesystem;
using namespace safesign;
using namespace safesign::sign_data;

namespace {

SignImage random_image(uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  SignImage img = make_sign_image();
  for (long i = 0; i < img.size(); ++i) img[i] = rng.uniform(lo, hi);
  return img;
}

bool images_equal(const SignImage& a, const SignImage& b) {
  for (long i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("affine identity is a no-op") {
  SignImage img = random_image(1);
  CHECK(images_equal(affine_transform(img, affine_identity()), img));
}

TEST_CASE("two quarter rotations equal one half rotation (nearest neighbor)") {
  SignImage img = random_image(2);
  SignImage once = affine_transform(img, affine_rotation_deg(90), Interp::Nearest);
  SignImage twice = affine_transform(once, affine_rotation_deg(90), Interp::Nearest);
  SignImage half = affine_transform(img, affine_rotation_deg(180), Interp::Nearest);
  CHECK(images_equal(twice, half));
}

TEST_CASE("rotation by 90 then -90 restores the image exactly") {
  SignImage img = random_image(21);
  SignImage fwd = affine_transform(img, affine_rotation_deg(90), Interp::Nearest);
  SignImage back = affine_transform(fwd, affine_rotation_deg(-90), Interp::Nearest);
  CHECK(images_equal(back, img));
}

TEST_CASE("translation shifts pixels and zero-fills, against a scatter oracle") {
  SignImage img = make_sign_image();
  img(0, 10, 20) = 1.0;
  img(1, 10, 20) = 1.0;
  img(2, 10, 20) = 1.0;
  img(0, 40, 60) = 0.5;

  const AffineParams shift = affine_translation(5, 0);
  SignImage out = affine_transform(img, shift, Interp::Nearest);

  // brute-force forward-scatter oracle: every source pixel lands at A*b+c
  SignImage oracle = make_sign_image();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const int dx = static_cast<int>(std::lround(shift.a00 * x + shift.a01 * y + shift.c0));
        const int dy = static_cast<int>(std::lround(shift.a10 * x + shift.a11 * y + shift.c1));
        if (dx >= 0 && dx < 64 && dy >= 0 && dy < 64) oracle(c, dy, dx) = img(c, y, x);
      }
  CHECK(images_equal(out, oracle));
  CHECK(out(0, 10, 25) == 1.0);
  CHECK(out(0, 10, 20) == 0.0);
  // a pixel near the right edge leaves the frame
  CHECK(out(0, 40, 63) == 0.0);
}

TEST_CASE("singular matrices are rejected") {
  AffineParams bad;
  bad.a00 = 1;
  bad.a01 = 2;
  bad.a10 = 2;
  bad.a11 = 4;
  CHECK(bad.det() == 0.0);
  CHECK_THROWS_AS(affine_transform(random_image(3), bad), std::invalid_argument);
}

TEST_CASE("photometric identity and zero saturation") {
  SignImage img = random_image(4);
  CHECK(images_equal(photometric_adjust(img, PhotometricParams{}), img));

  SignImage gray = photometric_adjust(img, PhotometricParams{1.0, 0.0, 1.0});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      CHECK(gray(0, y, x) == doctest::Approx(gray(1, y, x)).epsilon(1e-12));
      CHECK(gray(1, y, x) == doctest::Approx(gray(2, y, x)).epsilon(1e-12));
    }
}

TEST_CASE("brightness doubling below the clamp is an exact scalar multiply") {
  SignImage img = random_image(5, 0.0, 0.4);
  SignImage out = photometric_adjust(img, PhotometricParams{2.0, 1.0, 1.0});
  for (long i = 0; i < img.size(); ++i) CHECK(out[i] == img[i] * 2.0);
}

TEST_CASE("photometric parameter validation") {
  SignImage img = random_image(6);
  CHECK_THROWS_AS(photometric_adjust(img, PhotometricParams{0.0, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(photometric_adjust(img, PhotometricParams{-1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(photometric_adjust(img, PhotometricParams{1, -0.1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(photometric_adjust(img, PhotometricParams{1, 1, 0.0}), std::invalid_argument);
}

TEST_CASE("augmentation expands the train split eight-fold") {
  auto d = harness::make_toy_dataset(4, 10, 99);
  const size_t train_before = d.train.size();
  Dataset aug = augment_dataset(d, default_recipe(), 7);
  CHECK(aug.train.size() == 8 * train_before);
  CHECK(aug.test.size() == d.test.size());
  // labels and view groups inherited
  CHECK(aug.train[0].label == d.train[0].label);
  CHECK(aug.train[0].view_group == d.train[0].view_group);
  // outputs stay canonical and in range
  for (const auto& s : aug.train) {
    CHECK(is_canonical(s.image));
    CHECK(s.image.min_value() >= 0.0);
    CHECK(s.image.max_value() <= 1.0);
  }
}

TEST_CASE("identity-only recipe reproduces the originals") {
  auto d = harness::make_toy_dataset(3, 6, 42);
  Dataset aug = augment_dataset(d, {affine_identity()}, 0);
  REQUIRE(aug.train.size() == d.train.size());
  for (size_t i = 0; i < d.train.size(); ++i)
    CHECK(images_equal(aug.train[i].image, d.train[i].image));
}

TEST_CASE("augmentation is deterministic under the same seed") {
  auto d = harness::make_toy_dataset(3, 6, 43);
  Dataset a = augment_dataset(d, default_recipe(), 5);
  Dataset b = augment_dataset(d, default_recipe(), 5);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i)
    CHECK(images_equal(a.train[i].image, b.train[i].image));
  CHECK_THROWS_AS(augment_dataset(d, {}, 0), std::invalid_argument);
}

TEST_CASE("canonicalization is idempotent") {
  SignImage img = random_image(7);
  SignImage once = crop_and_canonicalize(img, std::nullopt);
  SignImage twice = crop_and_canonicalize(once, std::nullopt);
  CHECK(images_equal(once, twice));
  CHECK(images_equal(once, img));  // already canonical input is untouched
}

TEST_CASE("roi crop resizes anisotropically to 64x64") {
  Tensor big({3, 100, 80});
  for (long i = 0; i < big.size(); ++i) big[i] = 0.25;
  SignImage out = crop_and_canonicalize(big, Roi{10, 20, 40, 60});
  CHECK(is_canonical(out));
  CHECK(out(0, 32, 32) == doctest::Approx(0.25));
  CHECK_THROWS_AS(crop_and_canonicalize(big, Roi{50, 20, 40, 60}), std::invalid_argument);
}

TEST_CASE("toy corpus round-trips through the manifest format byte-for-byte") {
  TempDir dir1("safesign_rt1"), dir2("safesign_rt2");
  auto d = harness::make_toy_dataset(3, 5, 11);
  save_manifest_dataset(d, dir1.path.string());
  Dataset loaded = load_manifest(dir1.path.string());
  CHECK(loaded.train.size() == d.train.size());
  CHECK(loaded.test.size() == d.test.size());
  // the toy corpus is quantized at creation, so pixels survive the PNG hop
  for (size_t i = 0; i < d.train.size(); ++i)
    CHECK(images_equal(loaded.train[i].image, d.train[i].image));

  // writing what was loaded reproduces identical files
  save_manifest_dataset(loaded, dir2.path.string());
  for (const auto& entry : fs::recursive_directory_iterator(dir1.path)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir1.path);
    std::ifstream f1(entry.path(), std::ios::binary);
    std::ifstream f2(dir2.path / rel, std::ios::binary);
    REQUIRE(f2.good());
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
  }
}

TEST_CASE("manifest error paths") {
  TempDir dir("safesign_manifest_err");
  CHECK_THROWS_WITH_AS(load_manifest(dir.path.string()),
                       doctest::Contains("manifest not found"), std::runtime_error);

  // a manifest row pointing at a missing image names the file
  {
    std::ofstream out(dir.path / "manifest.csv");
    out << "relative_path,label_index,class_name,view_group,split,roi_x,roi_y,roi_w,roi_h\n";
    out << "images/ghost.png,0,stop,g0,train,,,,\n";
  }
  CHECK_THROWS_WITH_AS(load_manifest(dir.path.string()), doctest::Contains("ghost.png"),
                       std::runtime_error);
}

TEST_CASE("labels outside the declared class count are rejected") {
  TempDir dir("safesign_manifest_label");
  fs::create_directories(dir.path / "images");
  write_png((dir.path / "images" / "a.png").string(), make_sign_image());
  std::ofstream out(dir.path / "manifest.json");
  out << R"({"class_names":["a","b","c"],
             "samples":[{"path":"images/a.png","label":7,"split":"train"}]})";
  out.close();
  CHECK_THROWS_WITH_AS(load_manifest(dir.path.string()),
                       doctest::Contains("outside declared class count"), std::invalid_argument);
}

TEST_CASE("manifest loader counts splits and classes") {
  TempDir dir("safesign_manifest_counts");
  fs::create_directories(dir.path / "images");
  std::ofstream out(dir.path / "manifest.csv");
  out << "relative_path,label_index,class_name,view_group,split,roi_x,roi_y,roi_w,roi_h\n";
  int idx = 0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) {
      const std::string rel = "images/img" + std::to_string(idx++) + ".png";
      SignImage img = random_image(static_cast<uint64_t>(100 + idx));
      quantize_u8(img);
      write_png((dir.path / rel).string(), img);
      out << rel << ',' << c << ",class" << c << ",g" << idx << ','
          << (i < 3 ? "train" : "test") << ",,,,\n";
    }
  }
  out.close();
  Dataset d = load_manifest(dir.path.string());
  CHECK(d.classes() == 3);
  CHECK(d.train.size() == 9);
  CHECK(d.test.size() == 3);
}

TEST_CASE("arbitrary rotations recover most pixels after a round trip") {
  // nearest-neighbor resampling twice cannot be pixel-exact for arbitrary
  // angles; the round trip must still be close on the interior
  SignImage img = harness::make_toy_dataset(2, 1, 3).train[0].image;
  SignImage fwd = affine_transform(img, affine_rotation_deg(15), Interp::Nearest);
  SignImage back = affine_transform(fwd, affine_rotation_deg(-15), Interp::Nearest);
  double diff = 0.0;
  long count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 8; y < 56; ++y)
      for (int x = 8; x < 56; ++x) {
        diff += std::abs(back(c, y, x) - img(c, y, x));
        ++count;
      }
  CHECK(diff / count < 0.03);
}
