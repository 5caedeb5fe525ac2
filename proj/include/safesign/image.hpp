#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "safesign/tensor.hpp"

namespace safesign {

// Canonical sign image: CHW, 3 channels, 64x64, values in [0,1].
inline constexpr int kSignSize = 64;
inline constexpr int kSignChannels = 3;

using SignImage = Tensor;  // shape (3,64,64)

inline SignImage make_sign_image() { return Tensor({kSignChannels, kSignSize, kSignSize}); }

inline bool is_canonical(const Tensor& t) {
  return t.rank() == 3 && t.dim(0) == kSignChannels && t.dim(1) == kSignSize && t.dim(2) == kSignSize;
}

inline void require_canonical(const Tensor& t, const char* who) {
  if (!is_canonical(t)) throw std::invalid_argument(std::string(who) + ": expects a 3x64x64 image");
}

struct Roi {
  int x = 0, y = 0, w = 0, h = 0;
};

// Snaps every value to the 8-bit grid (k/255). Procedurally rendered corpora are
// quantized at creation so a PNG round trip is lossless from the first write.
void quantize_u8(Tensor& image);

// Bilinear resize of a CHW tensor to (out_h, out_w); a same-size resize is an
// exact copy.
Tensor resize_bilinear(const Tensor& src, int out_h, int out_w);

// Crop (full image when roi is absent) + resize to 64x64 + clamp to [0,1].
SignImage crop_and_canonicalize(const Tensor& image, const std::optional<Roi>& roi);

// PNG I/O (8-bit RGB). Throws std::runtime_error naming the file on failure.
Tensor read_png(const std::string& path);
void write_png(const std::string& path, const Tensor& image);

// 1-bit PNG for binary masks; `mask` is a (64,64) tensor of {0,1}.
void write_mask_png(const std::string& path, const Tensor& mask);

}  // namespace safesign
