#include "safesign/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <stdexcept>

namespace safesign {

void quantize_u8(Tensor& image) {
  for (long i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    image[i] = std::round(v * 255.0) / 255.0;
  }
}

Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (H == out_h && W == out_w) return src;
  Tensor dst({C, out_h, out_w});
  const double sy = static_cast<double>(H) / out_h;
  const double sx = static_cast<double>(W) / out_w;
  for (int i = 0; i < out_h; ++i) {
    // pixel-center mapping
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - y0;
    for (int j = 0; j < out_w; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - x0;
      for (int c = 0; c < C; ++c) {
        const double v = (1 - wy) * ((1 - wx) * src(c, y0, x0) + wx * src(c, y0, x1)) +
                         wy * ((1 - wx) * src(c, y1, x0) + wx * src(c, y1, x1));
        dst(c, i, j) = v;
      }
    }
  }
  return dst;
}

SignImage crop_and_canonicalize(const Tensor& image, const std::optional<Roi>& roi) {
  if (image.rank() != 3 || image.dim(0) != kSignChannels)
    throw std::invalid_argument("crop_and_canonicalize: expects a 3-channel CHW image");
  const int H = image.dim(1), W = image.dim(2);
  Tensor region;
  if (roi.has_value()) {
    const Roi& r = *roi;
    if (r.w <= 0 || r.h <= 0 || r.x < 0 || r.y < 0 || r.x + r.w > W || r.y + r.h > H)
      throw std::invalid_argument("crop_and_canonicalize: roi outside image bounds");
    region = Tensor({kSignChannels, r.h, r.w});
    for (int c = 0; c < kSignChannels; ++c)
      for (int i = 0; i < r.h; ++i)
        for (int j = 0; j < r.w; ++j) region(c, i, j) = image(c, r.y + i, r.x + j);
  } else {
    region = image;
  }
  Tensor out = resize_bilinear(region, kSignSize, kSignSize);
  out.clamp01();
  return out;
}

Tensor read_png(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("failed to read image: " + path);
  Tensor out({kSignChannels, bgr.rows, bgr.cols});
  for (int i = 0; i < bgr.rows; ++i) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(i);
    for (int j = 0; j < bgr.cols; ++j) {
      out(0, i, j) = row[j][2] / 255.0;
      out(1, i, j) = row[j][1] / 255.0;
      out(2, i, j) = row[j][0] / 255.0;
    }
  }
  return out;
}

void write_png(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != kSignChannels)
    throw std::invalid_argument("write_png: expects a 3-channel CHW image");
  const int H = image.dim(1), W = image.dim(2);
  cv::Mat bgr(H, W, CV_8UC3);
  for (int i = 0; i < H; ++i) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(i);
    for (int j = 0; j < W; ++j) {
      auto to_u8 = [](double v) {
        return static_cast<unsigned char>(std::round(std::clamp(v, 0.0, 1.0) * 255.0));
      };
      row[j][2] = to_u8(image(0, i, j));
      row[j][1] = to_u8(image(1, i, j));
      row[j][0] = to_u8(image(2, i, j));
    }
  }
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("failed to write image: " + path);
}

void write_mask_png(const std::string& path, const Tensor& mask) {
  if (mask.rank() != 2) throw std::invalid_argument("write_mask_png: expects a 2-d mask");
  cv::Mat m(mask.dim(0), mask.dim(1), CV_8UC1);
  for (int i = 0; i < mask.dim(0); ++i)
    for (int j = 0; j < mask.dim(1); ++j)
      m.at<unsigned char>(i, j) = mask(i, j) > 0.5 ? 255 : 0;
  if (!cv::imwrite(path, m, {cv::IMWRITE_PNG_BILEVEL, 1}))
    throw std::runtime_error("failed to write mask: " + path);
}

}  // namespace safesign
