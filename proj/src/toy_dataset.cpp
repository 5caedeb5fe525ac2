#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "safesign/harness.hpp"
#include "safesign/image.hpp"
#include "safesign/rng.hpp"

namespace safesign::harness {

namespace {

using Vec2 = std::array<double, 2>;
using Color = std::array<double, 3>;

enum class Shape { Circle, Octagon, TriangleUp, TriangleDown, Square, Diamond };
enum class Glyph { None, HBar, VBar, Dot, TwoDots, Cross, ArrowUp, DiamondDot, XMark };

struct ClassDef {
  const char* name;
  Shape shape;
  Color fill, border, glyph_color;
  Glyph glyph;
};

constexpr Color kWhite{0.94, 0.94, 0.94};
constexpr Color kBlack{0.06, 0.06, 0.06};
constexpr Color kRed{0.80, 0.06, 0.10};
constexpr Color kYellow{0.95, 0.82, 0.10};
constexpr Color kBlue{0.10, 0.28, 0.80};
constexpr Color kGreen{0.07, 0.62, 0.22};
constexpr Color kOrange{0.95, 0.52, 0.08};

// Classes come in same-shape same-palette pairs that differ only in the
// center glyph, the way real sign families do; recognition has to read the
// local pattern, not just the outline color.
const ClassDef kClasses[10] = {
    {"stop_bar", Shape::Octagon, kRed, kWhite, kWhite, Glyph::HBar},
    {"stop_cross", Shape::Octagon, kRed, kWhite, kWhite, Glyph::Cross},
    {"warn_bar", Shape::TriangleUp, kYellow, kBlack, kBlack, Glyph::VBar},
    {"warn_dot", Shape::TriangleUp, kYellow, kBlack, kBlack, Glyph::Dot},
    {"blue_arrow", Shape::Circle, kBlue, kWhite, kWhite, Glyph::ArrowUp},
    {"blue_bar", Shape::Circle, kBlue, kWhite, kWhite, Glyph::HBar},
    {"limit_dots", Shape::Circle, kWhite, kRed, kBlack, Glyph::TwoDots},
    {"limit_x", Shape::Circle, kWhite, kRed, kBlack, Glyph::XMark},
    {"field_cross", Shape::Diamond, kOrange, kBlack, kBlack, Glyph::Cross},
    {"field_dot", Shape::Diamond, kOrange, kBlack, kBlack, Glyph::Dot},
};

bool in_triangle(double x, double y, const Vec2& a, const Vec2& b, const Vec2& c) {
  auto side = [](double px, double py, const Vec2& p, const Vec2& q) {
    return (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0]);
  };
  const double d1 = side(x, y, a, b);
  const double d2 = side(x, y, b, c);
  const double d3 = side(x, y, c, a);
  const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(has_neg && has_pos);
}

bool in_shape(Shape s, double x, double y) {
  switch (s) {
    case Shape::Circle: return x * x + y * y <= 1.0;
    case Shape::Octagon:
      return std::max(std::abs(x), std::abs(y)) <= 0.92 && std::abs(x) + std::abs(y) <= 1.27;
    case Shape::TriangleUp: return in_triangle(x, y, {0, -1.0}, {0.98, 0.8}, {-0.98, 0.8});
    case Shape::TriangleDown: return in_triangle(x, y, {0, 1.0}, {0.98, -0.8}, {-0.98, -0.8});
    case Shape::Square: return std::max(std::abs(x), std::abs(y)) <= 0.85;
    case Shape::Diamond: return std::abs(x) + std::abs(y) <= 1.08;
  }
  return false;
}

bool in_glyph(Glyph g, double x, double y) {
  switch (g) {
    case Glyph::None: return false;
    case Glyph::HBar: return std::abs(y) <= 0.17 && std::abs(x) <= 0.52;
    case Glyph::VBar: return std::abs(x) <= 0.15 && std::abs(y) <= 0.5;
    case Glyph::Dot: return x * x + y * y <= 0.10;
    case Glyph::TwoDots: {
      const double dl = (x + 0.3) * (x + 0.3) + y * y;
      const double dr = (x - 0.3) * (x - 0.3) + y * y;
      return dl <= 0.035 || dr <= 0.035;
    }
    case Glyph::Cross:
      return (std::abs(x) <= 0.14 && std::abs(y) <= 0.5) ||
             (std::abs(y) <= 0.14 && std::abs(x) <= 0.5);
    case Glyph::ArrowUp:
      return in_triangle(x, y, {0, -0.55}, {0.38, 0.05}, {-0.38, 0.05}) ||
             (std::abs(x) <= 0.11 && y >= 0.0 && y <= 0.55);
    case Glyph::DiamondDot: return std::abs(x) + std::abs(y) <= 0.42;
    case Glyph::XMark: {
      const double u = (x + y) * 0.7071067811865476;
      const double v = (x - y) * 0.7071067811865476;
      const bool inside = x * x + y * y <= 0.45;
      return inside && (std::abs(u) <= 0.12 || std::abs(v) <= 0.12);
    }
  }
  return false;
}

SignImage render_sign(int label, Rng& rng) {
  const ClassDef& def = kClasses[label];

  const double cx = 31.5 + rng.uniform(-3.0, 3.0);
  const double cy = 31.5 + rng.uniform(-3.0, 3.0);
  const double radius = 26.0 * rng.uniform(0.82, 1.05);
  const double theta = rng.uniform(-8.0, 8.0) * 3.14159265358979323846 / 180.0;
  const double ct = std::cos(-theta), st = std::sin(-theta);
  const double gray = rng.uniform(0.30, 0.70);
  Color bg{std::clamp(gray + rng.uniform(-0.08, 0.08), 0.0, 1.0),
           std::clamp(gray + rng.uniform(-0.08, 0.08), 0.0, 1.0),
           std::clamp(gray + rng.uniform(-0.08, 0.08), 0.0, 1.0)};
  const double grad = rng.uniform(-0.12, 0.12);
  const double brightness = rng.uniform(0.88, 1.12);

  SignImage img = make_sign_image();
  for (int y = 0; y < kSignSize; ++y) {
    for (int x = 0; x < kSignSize; ++x) {
      Color acc{0, 0, 0};
      // 2x2 supersampling for soft edges
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double fx = (x + 0.25 + 0.5 * sx - cx) / radius;
          const double fy = (y + 0.25 + 0.5 * sy - cy) / radius;
          const double px = ct * fx - st * fy;
          const double py = st * fx + ct * fy;
          Color c = bg;
          const double g = 1.0 + grad * (static_cast<double>(y) / kSignSize - 0.5);
          for (int k = 0; k < 3; ++k) c[static_cast<size_t>(k)] *= g;
          if (in_shape(def.shape, px, py)) {
            c = def.border;
            if (in_shape(def.shape, px / 0.78, py / 0.78)) c = def.fill;
            if (in_glyph(def.glyph, px, py)) c = def.glyph_color;
          }
          for (int k = 0; k < 3; ++k) acc[static_cast<size_t>(k)] += c[static_cast<size_t>(k)];
        }
      }
      for (int k = 0; k < 3; ++k) {
        double v = acc[static_cast<size_t>(k)] / 4.0 * brightness + 0.015 * rng.normal();
        img(k, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  quantize_u8(img);
  return img;
}

}  // namespace

sign_data::Dataset make_toy_dataset(int classes, int per_class, uint64_t seed,
                                    double train_fraction) {
  if (classes < 2) throw std::invalid_argument("make_toy_dataset: needs at least 2 classes");
  if (classes > 10) throw std::invalid_argument("make_toy_dataset: the renderer defines 10 classes");
  if (per_class < 1) throw std::invalid_argument("make_toy_dataset: per_class must be >= 1");

  sign_data::Dataset d;
  for (int c = 0; c < classes; ++c) d.class_names.emplace_back(kClasses[c].name);

  int n_train = static_cast<int>(std::lround(train_fraction * per_class));
  n_train = std::clamp(n_train, 1, std::max(1, per_class - 1));
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Rng rng(mix_seed(seed, static_cast<uint64_t>(c) * 1000003ull + static_cast<uint64_t>(i)));
      sign_data::SignSample s;
      s.image = render_sign(c, rng);
      s.label = c;
      s.class_name = d.class_names[static_cast<size_t>(c)];
      s.id = "toy_" + std::to_string(c) + "_" + std::to_string(i);
      s.view_group = s.id;
      if (per_class == 1 || i < n_train) d.train.push_back(std::move(s));
      else d.test.push_back(std::move(s));
    }
  }
  sign_data::validate_dataset(d);
  return d;
}

}  // namespace safesign::harness
