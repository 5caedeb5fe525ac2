#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "safesign/image.hpp"
#include "safesign/tensor.hpp"

namespace safesign::sign_data {

struct SignSample {
  SignImage image;  // 3x64x64 in [0,1]
  int label = 0;
  std::string class_name;
  std::string view_group;
  std::string id;  // relative path or synthetic name; unique within a dataset
};

// 2x2 linear map plus translation, applied to pixel coordinates (x=col, y=row).
struct AffineParams {
  double a00 = 1, a01 = 0, a10 = 0, a11 = 1;
  double c0 = 0, c1 = 0;

  double det() const { return a00 * a11 - a01 * a10; }
};

AffineParams affine_identity();
AffineParams affine_translation(double dx, double dy);
// Rotate/shear about the image center (pixel-center convention, center 31.5).
AffineParams affine_rotation_deg(double degrees);
AffineParams affine_shear_x(double k);
AffineParams affine_scale(double sx, double sy);
AffineParams affine_compose(const AffineParams& outer, const AffineParams& inner);

struct PhotometricParams {
  double brightness = 1.0;  // > 0, multiplies all channels
  double saturation = 1.0;  // >= 0, 0 collapses to luma
  double contrast = 1.0;    // > 0, scales deviation from the image mean
};

struct Dataset {
  std::vector<SignSample> train;
  std::vector<SignSample> test;
  std::vector<std::string> class_names;

  int classes() const { return static_cast<int>(class_names.size()); }
};

enum class Interp { Bilinear, Nearest };

// Inverse-mapped affine warp: each output pixel samples the source at the
// inverse image of its coordinate; out-of-bounds sources read as 0.
SignImage affine_transform(const SignImage& image, const AffineParams& p,
                           Interp interp = Interp::Bilinear);

// brightness, then saturation (interpolation toward per-pixel luma), then
// contrast (interpolation toward the scalar image mean); one final clamp.
SignImage photometric_adjust(const SignImage& image, const PhotometricParams& p);

using AugmentOp = std::variant<AffineParams, PhotometricParams>;

SignImage apply_augment(const SignImage& image, const AugmentOp& op);

// identity, rotation +/-15 deg, shear 0.15, brightness x0.7/x1.3,
// saturation x0.6, contrast x1.4 - eight entries, identity included.
std::vector<AugmentOp> default_recipe();

// Train split becomes one derived image per (sample, recipe entry); with the
// default 8-entry recipe (identity included) that is 8x the original count.
// Test split is untouched. `seed` is kept for recipes with randomized entries;
// the stock recipe is fully deterministic.
Dataset augment_dataset(const Dataset& d, const std::vector<AugmentOp>& recipe, uint64_t seed);

// Directory with manifest.csv or manifest.json; images decoded, ROI-cropped,
// canonicalized to 3x64x64 in [0,1].
Dataset load_manifest(const std::string& root);

// Writes PNGs plus manifest.csv so any dataset round-trips through load_manifest.
void save_manifest_dataset(const Dataset& d, const std::string& root);

void validate_dataset(const Dataset& d);

}  // namespace safesign::sign_data
