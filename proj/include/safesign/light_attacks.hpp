#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "safesign/image.hpp"
#include "safesign/rng.hpp"

namespace safesign::light_attacks {

// The four held-out light-patch families: infrared spot, laser line, natural
// light shadow, projected graffiti. Parametric renderers, used only at
// evaluation time.
enum class AttackKind { IS, LL, NLS, PG };

const char* kind_name(AttackKind k);
AttackKind kind_from_name(const std::string& name);

struct SpotGeometry {
  double cx = 32, cy = 32, radius = 8;
};
struct LineGeometry {
  double x0 = 0, y0 = 0, x1 = 63, y1 = 63, width = 4;
};
struct PolygonGeometry {
  std::vector<std::array<double, 2>> vertices;  // (x,y)
};
struct RectGeometry {
  int x = 16, y = 16, w = 32, h = 32;
  uint64_t texture_seed = 0;
};

struct AttackSpec {
  AttackKind kind = AttackKind::IS;
  std::variant<SpotGeometry, LineGeometry, PolygonGeometry, RectGeometry> geometry;
  std::array<double, 3> color{1.0, 1.0, 1.0};
  // alpha blend in (0,1] for IS/LL/PG; the multiplicative darkening factor in
  // (0,1) for NLS.
  double intensity = 1.0;
  uint64_t seed = 0;
};

// Renders the patch onto a copy of x. Pixels outside the patch footprint are
// bit-identical to the input. IS/LL/PG blend toward the patch color (soft
// 1-pixel edges on IS/LL); NLS strictly darkens inside its polygon.
SignImage apply_light_patch(const SignImage& x, const AttackSpec& spec);

// {0,1} map of the pixels apply_light_patch may touch; shares the exact
// geometry predicates with the renderer.
Tensor footprint(const AttackSpec& spec);

std::vector<AttackSpec> make_attack_suite(AttackKind kind, int count, uint64_t seed);

std::string suite_to_json(const std::vector<AttackSpec>& suite);
std::vector<AttackSpec> suite_from_json(const std::string& json_text);

}  // namespace safesign::light_attacks
