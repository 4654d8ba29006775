#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace splat {

// Single-channel double image, row-major.
struct GrayImage {
  int width = 0, height = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const {
    return data[static_cast<size_t>(y) * width + x];
  }
  bool inside(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  size_t size() const { return data.size(); }
};

// Interleaved RGB double image in [0,1].
struct ColorImage {
  int width = 0, height = 0;
  std::vector<double> data;  // 3 * width * height

  ColorImage() = default;
  ColorImage(int w, int h) : width(w), height(h), data(3ull * w * h, 0.0) {}

  Eigen::Vector3d pixel(int x, int y) const {
    const size_t i = 3 * (static_cast<size_t>(y) * width + x);
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set_pixel(int x, int y, const Eigen::Vector3d& c) {
    const size_t i = 3 * (static_cast<size_t>(y) * width + x);
    data[i] = c.x();
    data[i + 1] = c.y();
    data[i + 2] = c.z();
  }
  bool inside(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  size_t npixels() const { return static_cast<size_t>(width) * height; }
};

enum class MaskSource : uint8_t { Warp, Semantic, Fused };

// 1 = static/usable, 0 = dynamic/excluded.
struct MaskImage {
  int width = 0, height = 0;
  std::vector<uint8_t> data;
  MaskSource source = MaskSource::Fused;

  MaskImage() = default;
  MaskImage(int w, int h, uint8_t fill = 1,
            MaskSource src = MaskSource::Fused)
      : width(w),
        height(h),
        data(static_cast<size_t>(w) * h, fill),
        source(src) {}

  uint8_t& at(int x, int y) {
    return data[static_cast<size_t>(y) * width + x];
  }
  uint8_t at(int x, int y) const {
    return data[static_cast<size_t>(y) * width + x];
  }
  bool inside(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  size_t count_static() const {
    size_t n = 0;
    for (uint8_t v : data) n += v;
    return n;
  }
};

// Bilinear sample; caller guarantees 0 <= x <= w-1, 0 <= y <= h-1.
double sample_bilinear(const GrayImage& img, double x, double y);
Eigen::Vector3d sample_bilinear(const ColorImage& img, double x, double y);

// Luma (mean of channels) image, used by direct odometry.
GrayImage to_gray(const ColorImage& img);

// Sobel gradient magnitude of the luma image, normalized to [0,1].
GrayImage color_gradient_magnitude(const ColorImage& img);

// Central-difference gradients of a gray image (border uses one-sided).
void image_gradients(const GrayImage& img, GrayImage& gx, GrayImage& gy);

// One round of 3x3 dilation of the zero (dynamic) region.
void dilate_dynamic(MaskImage& mask);

// Half-resolution downsample (2x2 average); depth uses valid-aware average.
GrayImage downsample_half(const GrayImage& img);
GrayImage downsample_half_depth(const GrayImage& depth);
ColorImage downsample_half(const ColorImage& img);
MaskImage downsample_half(const MaskImage& mask);

}  // namespace splat
