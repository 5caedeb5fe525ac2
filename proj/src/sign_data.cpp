#include "safesign/sign_data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "safesign/rng.hpp"

namespace fs = std::filesystem;

namespace safesign::sign_data {

namespace {

constexpr double kCenter = (kSignSize - 1) / 2.0;  // 31.5, pixel-center convention

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

AffineParams affine_identity() { return AffineParams{}; }

AffineParams affine_translation(double dx, double dy) {
  AffineParams p;
  p.c0 = dx;
  p.c1 = dy;
  return p;
}

AffineParams affine_rotation_deg(double degrees) {
  const double th = degrees * 3.14159265358979323846 / 180.0;
  AffineParams p;
  p.a00 = std::cos(th);
  p.a01 = -std::sin(th);
  p.a10 = std::sin(th);
  p.a11 = std::cos(th);
  p.c0 = kCenter - (p.a00 * kCenter + p.a01 * kCenter);
  p.c1 = kCenter - (p.a10 * kCenter + p.a11 * kCenter);
  return p;
}

AffineParams affine_shear_x(double k) {
  AffineParams p;
  p.a01 = k;
  p.c0 = kCenter - (p.a00 * kCenter + p.a01 * kCenter);
  p.c1 = 0;
  return p;
}

AffineParams affine_scale(double sx, double sy) {
  AffineParams p;
  p.a00 = sx;
  p.a11 = sy;
  p.c0 = kCenter - sx * kCenter;
  p.c1 = kCenter - sy * kCenter;
  return p;
}

AffineParams affine_compose(const AffineParams& o, const AffineParams& i) {
  AffineParams p;
  p.a00 = o.a00 * i.a00 + o.a01 * i.a10;
  p.a01 = o.a00 * i.a01 + o.a01 * i.a11;
  p.a10 = o.a10 * i.a00 + o.a11 * i.a10;
  p.a11 = o.a10 * i.a01 + o.a11 * i.a11;
  p.c0 = o.a00 * i.c0 + o.a01 * i.c1 + o.c0;
  p.c1 = o.a10 * i.c0 + o.a11 * i.c1 + o.c1;
  return p;
}

SignImage affine_transform(const SignImage& image, const AffineParams& p, Interp interp) {
  require_canonical(image, "affine_transform");
  const double det = p.det();
  if (std::abs(det) < 1e-12) throw std::invalid_argument("affine_transform: singular matrix");
  // inverse of d = A b + c
  const double i00 = p.a11 / det, i01 = -p.a01 / det;
  const double i10 = -p.a10 / det, i11 = p.a00 / det;

  SignImage out = make_sign_image();
  for (int y = 0; y < kSignSize; ++y) {
    for (int x = 0; x < kSignSize; ++x) {
      const double rx = x - p.c0, ry = y - p.c1;
      const double sx = i00 * rx + i01 * ry;
      const double sy = i10 * rx + i11 * ry;
      if (interp == Interp::Nearest) {
        const int xi = static_cast<int>(std::lround(sx));
        const int yi = static_cast<int>(std::lround(sy));
        if (xi < 0 || xi >= kSignSize || yi < 0 || yi >= kSignSize) continue;  // fill 0
        for (int c = 0; c < kSignChannels; ++c) out(c, y, x) = image(c, yi, xi);
      } else {
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double wx = sx - x0, wy = sy - y0;
        for (int c = 0; c < kSignChannels; ++c) {
          auto tap = [&](int yy, int xx) -> double {
            if (xx < 0 || xx >= kSignSize || yy < 0 || yy >= kSignSize) return 0.0;
            return image(c, yy, xx);
          };
          out(c, y, x) = (1 - wy) * ((1 - wx) * tap(y0, x0) + wx * tap(y0, x0 + 1)) +
                         wy * ((1 - wx) * tap(y0 + 1, x0) + wx * tap(y0 + 1, x0 + 1));
        }
      }
    }
  }
  out.clamp01();
  return out;
}

SignImage photometric_adjust(const SignImage& image, const PhotometricParams& p) {
  require_canonical(image, "photometric_adjust");
  if (p.brightness <= 0.0) throw std::invalid_argument("photometric_adjust: brightness must be > 0");
  if (p.contrast <= 0.0) throw std::invalid_argument("photometric_adjust: contrast must be > 0");
  if (p.saturation < 0.0) throw std::invalid_argument("photometric_adjust: saturation must be >= 0");

  SignImage out = image;
  // factor 1.0 is skipped entirely so identity settings are exact no-ops
  if (p.brightness != 1.0)
    for (long i = 0; i < out.size(); ++i) out[i] *= p.brightness;
  if (p.saturation != 1.0) {
    for (int y = 0; y < kSignSize; ++y) {
      for (int x = 0; x < kSignSize; ++x) {
        const double l = luma(out(0, y, x), out(1, y, x), out(2, y, x));
        for (int c = 0; c < kSignChannels; ++c)
          out(c, y, x) = l + p.saturation * (out(c, y, x) - l);
      }
    }
  }
  if (p.contrast != 1.0) {
    const double mean = mean_of(out);
    for (long i = 0; i < out.size(); ++i) out[i] = mean + p.contrast * (out[i] - mean);
  }
  out.clamp01();
  return out;
}

SignImage apply_augment(const SignImage& image, const AugmentOp& op) {
  if (std::holds_alternative<AffineParams>(op))
    return affine_transform(image, std::get<AffineParams>(op));
  return photometric_adjust(image, std::get<PhotometricParams>(op));
}

std::vector<AugmentOp> default_recipe() {
  std::vector<AugmentOp> r;
  r.emplace_back(affine_identity());
  r.emplace_back(affine_rotation_deg(15.0));
  r.emplace_back(affine_rotation_deg(-15.0));
  r.emplace_back(affine_shear_x(0.15));
  r.emplace_back(PhotometricParams{0.7, 1.0, 1.0});
  r.emplace_back(PhotometricParams{1.3, 1.0, 1.0});
  r.emplace_back(PhotometricParams{1.0, 0.6, 1.0});
  r.emplace_back(PhotometricParams{1.0, 1.0, 1.4});
  return r;
}

Dataset augment_dataset(const Dataset& d, const std::vector<AugmentOp>& recipe, uint64_t /*seed*/) {
  if (recipe.empty()) throw std::invalid_argument("augment_dataset: empty recipe");
  Dataset out;
  out.class_names = d.class_names;
  out.test = d.test;
  out.train.reserve(d.train.size() * recipe.size());
  for (const SignSample& s : d.train) {
    for (size_t k = 0; k < recipe.size(); ++k) {
      SignSample derived = s;
      derived.image = apply_augment(s.image, recipe[k]);
      derived.id = s.id + "#aug" + std::to_string(k);
      out.train.push_back(std::move(derived));
    }
  }
  return out;
}

void validate_dataset(const Dataset& d) {
  const int m = d.classes();
  require(m >= 1, "dataset: no classes declared");
  std::set<std::string> ids;
  std::vector<bool> in_train(static_cast<size_t>(m), false);
  auto check = [&](const SignSample& s, bool train) {
    require(s.label >= 0 && s.label < m,
            "dataset: label " + std::to_string(s.label) + " outside declared class count for " + s.id);
    require_canonical(s.image, "dataset sample");
    require(s.image.min_value() >= 0.0 && s.image.max_value() <= 1.0,
            "dataset: pixel values outside [0,1] for " + s.id);
    require(ids.insert(s.id).second, "dataset: duplicate sample id " + s.id);
    if (train) in_train[static_cast<size_t>(s.label)] = true;
  };
  for (const SignSample& s : d.train) check(s, true);
  for (const SignSample& s : d.test) check(s, false);
  for (int c = 0; c < m; ++c)
    require(in_train[static_cast<size_t>(c)],
            "dataset: class " + std::to_string(c) + " absent from the train split");
}

namespace {

struct ManifestRow {
  std::string path;
  int label = 0;
  std::string class_name;
  std::string view_group;
  std::string split;  // "train" | "test" | ""
  std::optional<Roi> roi;
};

Dataset build_dataset(const std::string& root, std::vector<ManifestRow> rows,
                      std::vector<std::string> declared_classes) {
  // class book-keeping
  int m = static_cast<int>(declared_classes.size());
  if (m == 0) {
    for (const ManifestRow& r : rows) m = std::max(m, r.label + 1);
    declared_classes.assign(static_cast<size_t>(m), "");
    for (const ManifestRow& r : rows) {
      if (r.label >= 0 && r.label < m) {
        std::string& name = declared_classes[static_cast<size_t>(r.label)];
        if (name.empty()) name = r.class_name;
        else if (!r.class_name.empty() && name != r.class_name)
          throw std::invalid_argument("manifest: inconsistent class_name for label " +
                                      std::to_string(r.label));
      }
    }
    for (size_t i = 0; i < declared_classes.size(); ++i)
      if (declared_classes[i].empty()) declared_classes[i] = "class_" + std::to_string(i);
  }

  Dataset d;
  d.class_names = std::move(declared_classes);
  for (ManifestRow& r : rows) {
    if (r.label < 0 || r.label >= m)
      throw std::invalid_argument("manifest: label " + std::to_string(r.label) +
                                  " outside declared class count in " + r.path);
    SignSample s;
    s.id = r.path;
    s.label = r.label;
    s.class_name = d.class_names[static_cast<size_t>(r.label)];
    s.view_group = r.view_group.empty() ? r.path : r.view_group;
    Tensor raw = read_png((fs::path(root) / r.path).string());
    s.image = crop_and_canonicalize(raw, r.roi);

    std::string split = r.split;
    if (split.empty()) {
      // deterministic seeded split keyed on the sample id
      uint64_t h = 0xcbf29ce484222325ull;
      for (char ch : s.id) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ull;
      }
      split = Rng(mix_seed(h, 0x5eed5917)).uniform() < 0.8 ? "train" : "test";
    }
    if (split == "train") d.train.push_back(std::move(s));
    else if (split == "test") d.test.push_back(std::move(s));
    else throw std::invalid_argument("manifest: unknown split '" + split + "' in " + r.path);
  }

  // a class that only landed in test (possible with the hashed split) is pulled
  // back into train so every class is trainable
  std::vector<bool> seen(static_cast<size_t>(m), false);
  for (const SignSample& s : d.train) seen[static_cast<size_t>(s.label)] = true;
  for (int c = 0; c < m; ++c) {
    if (seen[static_cast<size_t>(c)]) continue;
    auto it = std::find_if(d.test.begin(), d.test.end(),
                           [c](const SignSample& s) { return s.label == c; });
    if (it != d.test.end()) {
      d.train.push_back(*it);
      d.test.erase(it);
    }
  }

  validate_dataset(d);
  return d;
}

}  // namespace

Dataset load_manifest(const std::string& root) {
  const fs::path csv = fs::path(root) / "manifest.csv";
  const fs::path jsn = fs::path(root) / "manifest.json";
  std::vector<ManifestRow> rows;
  std::vector<std::string> declared;

  if (fs::exists(csv)) {
    std::ifstream in(csv);
    if (!in) throw std::runtime_error("cannot open manifest: " + csv.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty manifest: " + csv.string());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = split_csv_line(line);
      if (f.size() < 5)
        throw std::invalid_argument("manifest row needs at least 5 fields: " + line);
      ManifestRow r;
      r.path = f[0];
      r.label = std::stoi(f[1]);
      r.class_name = f[2];
      r.view_group = f[3];
      r.split = f[4];
      if (f.size() >= 9 && !f[5].empty() && !f[6].empty() && !f[7].empty() && !f[8].empty())
        r.roi = Roi{std::stoi(f[5]), std::stoi(f[6]), std::stoi(f[7]), std::stoi(f[8])};
      rows.push_back(std::move(r));
    }
  } else if (fs::exists(jsn)) {
    std::ifstream in(jsn);
    if (!in) throw std::runtime_error("cannot open manifest: " + jsn.string());
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.contains("class_names"))
      declared = j["class_names"].get<std::vector<std::string>>();
    for (const auto& e : j["samples"]) {
      ManifestRow r;
      r.path = e.at("path").get<std::string>();
      r.label = e.at("label").get<int>();
      r.class_name = e.value("class_name", std::string());
      r.view_group = e.value("view_group", std::string());
      r.split = e.value("split", std::string());
      if (e.contains("roi")) {
        auto v = e["roi"].get<std::vector<int>>();
        if (v.size() != 4) throw std::invalid_argument("manifest: roi must have 4 entries in " + r.path);
        r.roi = Roi{v[0], v[1], v[2], v[3]};
      }
      rows.push_back(std::move(r));
    }
  } else {
    throw std::runtime_error("manifest not found in " + root +
                             " (expected manifest.csv or manifest.json)");
  }
  return build_dataset(root, std::move(rows), std::move(declared));
}

void save_manifest_dataset(const Dataset& d, const std::string& root) {
  validate_dataset(d);
  fs::create_directories(fs::path(root) / "images");
  std::ofstream out(fs::path(root) / "manifest.csv");
  if (!out) throw std::runtime_error("cannot write manifest in " + root);
  out << "relative_path,label_index,class_name,view_group,split,roi_x,roi_y,roi_w,roi_h\n";
  int idx = 0;
  auto emit = [&](const SignSample& s, const char* split) {
    std::ostringstream name;
    name << "images/" << std::setw(6) << std::setfill('0') << idx++ << ".png";
    write_png((fs::path(root) / name.str()).string(), s.image);
    out << name.str() << ',' << s.label << ',' << s.class_name << ',' << s.view_group << ','
        << split << ",,,,\n";
  };
  for (const SignSample& s : d.train) emit(s, "train");
  for (const SignSample& s : d.test) emit(s, "test");
}

}  // namespace safesign::sign_data
