#include "safesign/light_attacks.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace safesign::light_attacks {

const char* kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::IS: return "IS";
    case AttackKind::LL: return "LL";
    case AttackKind::NLS: return "NLS";
    case AttackKind::PG: return "PG";
  }
  throw std::invalid_argument("unknown attack kind");
}

AttackKind kind_from_name(const std::string& name) {
  if (name == "IS") return AttackKind::IS;
  if (name == "LL") return AttackKind::LL;
  if (name == "NLS") return AttackKind::NLS;
  if (name == "PG") return AttackKind::PG;
  throw std::invalid_argument("unknown attack kind: " + name);
}

namespace {

double polygon_area(const std::vector<std::array<double, 2>>& v) {
  double a = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    const auto& p = v[i];
    const auto& q = v[(i + 1) % v.size()];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return std::abs(a) / 2.0;
}

bool point_in_polygon(const std::vector<std::array<double, 2>>& v, double x, double y) {
  bool inside = false;
  for (size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const bool crosses = (v[i][1] > y) != (v[j][1] > y);
    if (crosses) {
      const double t = (y - v[i][1]) / (v[j][1] - v[i][1]);
      if (x < v[i][0] + t * (v[j][0] - v[i][0])) inside = !inside;
    }
  }
  return inside;
}

double dist_to_segment(double px, double py, const LineGeometry& l) {
  const double dx = l.x1 - l.x0, dy = l.y1 - l.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - l.x0) * dx + (py - l.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = l.x0 + t * dx, qy = l.y0 + t * dy;
  return std::hypot(px - qx, py - qy);
}

void validate(const AttackSpec& spec) {
  auto in_frame = [](double x, double y) {
    return x >= 0 && x < kSignSize && y >= 0 && y < kSignSize;
  };
  switch (spec.kind) {
    case AttackKind::IS: {
      const auto& g = std::get<SpotGeometry>(spec.geometry);
      if (g.radius <= 0) throw std::invalid_argument("IS: zero radius");
      if (!in_frame(g.cx, g.cy)) throw std::invalid_argument("IS: center outside frame");
      if (spec.intensity <= 0 || spec.intensity > 1)
        throw std::invalid_argument("IS: intensity must be in (0,1]");
      break;
    }
    case AttackKind::LL: {
      const auto& g = std::get<LineGeometry>(spec.geometry);
      if (g.width <= 0) throw std::invalid_argument("LL: zero width");
      if (g.x0 == g.x1 && g.y0 == g.y1) throw std::invalid_argument("LL: zero-length line");
      if (!in_frame(g.x0, g.y0) || !in_frame(g.x1, g.y1))
        throw std::invalid_argument("LL: endpoints outside frame");
      if (spec.intensity <= 0 || spec.intensity > 1)
        throw std::invalid_argument("LL: intensity must be in (0,1]");
      break;
    }
    case AttackKind::NLS: {
      const auto& g = std::get<PolygonGeometry>(spec.geometry);
      if (g.vertices.size() < 3 || polygon_area(g.vertices) <= 0)
        throw std::invalid_argument("NLS: degenerate polygon");
      for (const auto& v : g.vertices)
        if (!in_frame(v[0], v[1])) throw std::invalid_argument("NLS: vertex outside frame");
      if (spec.intensity <= 0 || spec.intensity >= 1)
        throw std::invalid_argument("NLS: darkening factor must be in (0,1)");
      break;
    }
    case AttackKind::PG: {
      const auto& g = std::get<RectGeometry>(spec.geometry);
      if (g.w <= 0 || g.h <= 0) throw std::invalid_argument("PG: zero-area rect");
      if (g.x < 0 || g.y < 0 || g.x + g.w > kSignSize || g.y + g.h > kSignSize)
        throw std::invalid_argument("PG: rect outside frame");
      if (spec.intensity <= 0 || spec.intensity > 1)
        throw std::invalid_argument("PG: intensity must be in (0,1]");
      break;
    }
  }
}

// Low-frequency color noise: a coarse grid of seeded anchors, bilinearly
// interpolated across the placement rect.
Tensor graffiti_tile(const RectGeometry& g) {
  constexpr int kAnchors = 5;
  Rng rng(mix_seed(g.texture_seed, 0x9aff171));
  double anchors[3][kAnchors][kAnchors];
  for (int i = 0; i < kAnchors; ++i)
    for (int j = 0; j < kAnchors; ++j) {
      // saturated hues: one strong channel, the rest dimmer
      const int hot = rng.uniform_int(3);
      for (int c = 0; c < 3; ++c)
        anchors[c][i][j] = c == hot ? rng.uniform(0.7, 1.0) : rng.uniform(0.0, 0.5);
    }
  Tensor tile({kSignChannels, g.h, g.w});
  for (int i = 0; i < g.h; ++i) {
    const double fy = g.h > 1 ? static_cast<double>(i) / (g.h - 1) * (kAnchors - 1) : 0.0;
    const int y0 = std::min(static_cast<int>(fy), kAnchors - 2);
    const double wy = fy - y0;
    for (int j = 0; j < g.w; ++j) {
      const double fx = g.w > 1 ? static_cast<double>(j) / (g.w - 1) * (kAnchors - 1) : 0.0;
      const int x0 = std::min(static_cast<int>(fx), kAnchors - 2);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        tile(c, i, j) = (1 - wy) * ((1 - wx) * anchors[c][y0][x0] + wx * anchors[c][y0][x0 + 1]) +
                        wy * ((1 - wx) * anchors[c][y0 + 1][x0] + wx * anchors[c][y0 + 1][x0 + 1]);
      }
    }
  }
  return tile;
}

// Blend weight toward the patch color at a pixel; 0 means untouched.
// IS and LL taper linearly over the final pixel inside their boundary.
double blend_weight(const AttackSpec& spec, int y, int x) {
  switch (spec.kind) {
    case AttackKind::IS: {
      const auto& g = std::get<SpotGeometry>(spec.geometry);
      const double d = std::hypot(x - g.cx, y - g.cy);
      if (d >= g.radius) return 0.0;
      return spec.intensity * std::min(1.0, g.radius - d);
    }
    case AttackKind::LL: {
      const auto& g = std::get<LineGeometry>(spec.geometry);
      const double half = g.width / 2.0;
      const double d = dist_to_segment(x, y, g);
      if (d >= half) return 0.0;
      return spec.intensity * std::min(1.0, half - d);
    }
    case AttackKind::NLS: {
      const auto& g = std::get<PolygonGeometry>(spec.geometry);
      return point_in_polygon(g.vertices, x, y) ? 1.0 : 0.0;
    }
    case AttackKind::PG: {
      const auto& g = std::get<RectGeometry>(spec.geometry);
      const bool inside = x >= g.x && x < g.x + g.w && y >= g.y && y < g.y + g.h;
      return inside ? spec.intensity : 0.0;
    }
  }
  return 0.0;
}

}  // namespace

SignImage apply_light_patch(const SignImage& x, const AttackSpec& spec) {
  require_canonical(x, "apply_light_patch");
  validate(spec);
  SignImage out = x;
  const Tensor* tile = nullptr;
  Tensor tile_storage;
  const RectGeometry* rect = nullptr;
  if (spec.kind == AttackKind::PG) {
    rect = &std::get<RectGeometry>(spec.geometry);
    tile_storage = graffiti_tile(*rect);
    tile = &tile_storage;
  }
  for (int y = 0; y < kSignSize; ++y) {
    for (int xx = 0; xx < kSignSize; ++xx) {
      const double w = blend_weight(spec, y, xx);
      if (w <= 0.0) continue;
      if (spec.kind == AttackKind::NLS) {
        for (int c = 0; c < kSignChannels; ++c) out(c, y, xx) = x(c, y, xx) * spec.intensity;
      } else if (spec.kind == AttackKind::PG) {
        for (int c = 0; c < kSignChannels; ++c) {
          const double t = (*tile)(c, y - rect->y, xx - rect->x);
          out(c, y, xx) = w >= 1.0 ? t : x(c, y, xx) + w * (t - x(c, y, xx));
        }
      } else {
        for (int c = 0; c < kSignChannels; ++c)
          // full opacity paints the color exactly
          out(c, y, xx) = w >= 1.0 ? spec.color[static_cast<size_t>(c)]
                                   : x(c, y, xx) + w * (spec.color[static_cast<size_t>(c)] - x(c, y, xx));
      }
    }
  }
  return out;
}

Tensor footprint(const AttackSpec& spec) {
  validate(spec);
  Tensor fp({kSignSize, kSignSize});
  for (int y = 0; y < kSignSize; ++y)
    for (int x = 0; x < kSignSize; ++x) fp(y, x) = blend_weight(spec, y, x) > 0.0 ? 1.0 : 0.0;
  return fp;
}

std::vector<AttackSpec> make_attack_suite(AttackKind kind, int count, uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_attack_suite: count must be >= 1");
  std::vector<AttackSpec> suite;
  suite.reserve(static_cast<size_t>(count));
  Rng rng(mix_seed(seed, static_cast<uint64_t>(kind) + 0xa77ac4));
  for (int i = 0; i < count; ++i) {
    AttackSpec s;
    s.kind = kind;
    s.seed = rng.next();
    switch (kind) {
      case AttackKind::IS: {
        SpotGeometry g;
        g.cx = rng.uniform(16, 48);
        g.cy = rng.uniform(16, 48);
        g.radius = rng.uniform(8, 14);
        s.geometry = g;
        // bright magenta-white bloom, the way sensors render strong IR
        s.color = {rng.uniform(0.85, 1.0), rng.uniform(0.25, 0.55), rng.uniform(0.7, 1.0)};
        s.intensity = rng.uniform(0.8, 1.0);
        break;
      }
      case AttackKind::LL: {
        LineGeometry g;
        // endpoints on opposite borders so the stripe crosses the sign
        if (rng.uniform() < 0.5) {
          g.x0 = 0; g.x1 = kSignSize - 1;
          g.y0 = rng.uniform(4, 60); g.y1 = rng.uniform(4, 60);
        } else {
          g.y0 = 0; g.y1 = kSignSize - 1;
          g.x0 = rng.uniform(4, 60); g.x1 = rng.uniform(4, 60);
        }
        g.width = rng.uniform(4, 8);
        s.geometry = g;
        const bool green = rng.uniform() < 0.5;
        s.color = green ? std::array<double, 3>{rng.uniform(0, 0.25), 1.0, rng.uniform(0, 0.35)}
                        : std::array<double, 3>{1.0, rng.uniform(0, 0.25), rng.uniform(0, 0.25)};
        s.intensity = rng.uniform(0.8, 1.0);
        break;
      }
      case AttackKind::NLS: {
        PolygonGeometry g;
        // a wide wedge anchored on one border, like a cast building shadow
        for (;;) {
          g.vertices.clear();
          const double x0 = rng.uniform(0, 63), x1 = rng.uniform(0, 63);
          const double y0 = rng.uniform(0, 63), y1 = rng.uniform(0, 63);
          if (rng.uniform() < 0.5) {
            g.vertices = {{x0, 0}, {x1, 0}, {rng.uniform(0, 63), 63}, {rng.uniform(0, 63), 63}};
          } else {
            g.vertices = {{0, y0}, {0, y1}, {63, rng.uniform(0, 63)}, {63, rng.uniform(0, 63)}};
          }
          if (polygon_area(g.vertices) >= 700.0) break;
        }
        s.geometry = g;
        s.color = {0, 0, 0};
        s.intensity = rng.uniform(0.25, 0.5);  // darkening factor
        break;
      }
      case AttackKind::PG: {
        RectGeometry g;
        g.w = 24 + rng.uniform_int(17);
        g.h = 24 + rng.uniform_int(17);
        g.x = rng.uniform_int(kSignSize - g.w + 1);
        g.y = rng.uniform_int(kSignSize - g.h + 1);
        g.texture_seed = rng.next();
        s.geometry = g;
        s.color = {1, 1, 1};
        s.intensity = rng.uniform(0.7, 0.95);
        break;
      }
    }
    suite.push_back(std::move(s));
  }
  return suite;
}

std::string suite_to_json(const std::vector<AttackSpec>& suite) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const AttackSpec& s : suite) {
    nlohmann::ordered_json j;
    j["kind"] = kind_name(s.kind);
    switch (s.kind) {
      case AttackKind::IS: {
        const auto& g = std::get<SpotGeometry>(s.geometry);
        j["geometry"] = {{"cx", g.cx}, {"cy", g.cy}, {"radius", g.radius}};
        break;
      }
      case AttackKind::LL: {
        const auto& g = std::get<LineGeometry>(s.geometry);
        j["geometry"] = {{"x0", g.x0}, {"y0", g.y0}, {"x1", g.x1}, {"y1", g.y1}, {"width", g.width}};
        break;
      }
      case AttackKind::NLS: {
        const auto& g = std::get<PolygonGeometry>(s.geometry);
        j["geometry"] = {{"vertices", g.vertices}};
        break;
      }
      case AttackKind::PG: {
        const auto& g = std::get<RectGeometry>(s.geometry);
        j["geometry"] = {{"x", g.x}, {"y", g.y}, {"w", g.w}, {"h", g.h}, {"texture_seed", g.texture_seed}};
        break;
      }
    }
    j["color"] = s.color;
    j["intensity"] = s.intensity;
    j["seed"] = s.seed;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::vector<AttackSpec> suite_from_json(const std::string& json_text) {
  nlohmann::json arr = nlohmann::json::parse(json_text);
  std::vector<AttackSpec> suite;
  for (const auto& j : arr) {
    AttackSpec s;
    s.kind = kind_from_name(j.at("kind").get<std::string>());
    const auto& g = j.at("geometry");
    switch (s.kind) {
      case AttackKind::IS:
        s.geometry = SpotGeometry{g.at("cx"), g.at("cy"), g.at("radius")};
        break;
      case AttackKind::LL:
        s.geometry = LineGeometry{g.at("x0"), g.at("y0"), g.at("x1"), g.at("y1"), g.at("width")};
        break;
      case AttackKind::NLS: {
        PolygonGeometry pg;
        pg.vertices = g.at("vertices").get<std::vector<std::array<double, 2>>>();
        s.geometry = pg;
        break;
      }
      case AttackKind::PG:
        s.geometry = RectGeometry{g.at("x"), g.at("y"), g.at("w"), g.at("h"), g.at("texture_seed")};
        break;
    }
    s.color = j.at("color").get<std::array<double, 3>>();
    s.intensity = j.at("intensity").get<double>();
    s.seed = j.at("seed").get<uint64_t>();
    suite.push_back(std::move(s));
  }
  return suite;
}

}  // namespace safesign::light_attacks
