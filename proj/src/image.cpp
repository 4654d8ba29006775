#include "splatslam/image.hpp"

#include <algorithm>
#include <cmath>

namespace splat {

double sample_bilinear(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = std::min(static_cast<int>(x), img.width - 2 >= 0 ? img.width - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), img.height - 2 >= 0 ? img.height - 2 : 0);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double ax = x - x0, ay = y - y0;
  return (1 - ax) * (1 - ay) * img.at(x0, y0) + ax * (1 - ay) * img.at(x1, y0) +
         (1 - ax) * ay * img.at(x0, y1) + ax * ay * img.at(x1, y1);
}

Eigen::Vector3d sample_bilinear(const ColorImage& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = std::min(static_cast<int>(x), img.width - 2 >= 0 ? img.width - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), img.height - 2 >= 0 ? img.height - 2 : 0);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double ax = x - x0, ay = y - y0;
  return (1 - ax) * (1 - ay) * img.pixel(x0, y0) +
         ax * (1 - ay) * img.pixel(x1, y0) +
         (1 - ax) * ay * img.pixel(x0, y1) + ax * ay * img.pixel(x1, y1);
}

GrayImage to_gray(const ColorImage& img) {
  GrayImage g(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      g.at(x, y) = img.pixel(x, y).mean();
  return g;
}

GrayImage color_gradient_magnitude(const ColorImage& img) {
  const GrayImage g = to_gray(img);
  GrayImage mag(img.width, img.height);
  double max_mag = 1e-12;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      auto v = [&](int xx, int yy) {
        xx = std::clamp(xx, 0, img.width - 1);
        yy = std::clamp(yy, 0, img.height - 1);
        return g.at(xx, yy);
      };
      const double sx = (v(x + 1, y - 1) + 2 * v(x + 1, y) + v(x + 1, y + 1)) -
                        (v(x - 1, y - 1) + 2 * v(x - 1, y) + v(x - 1, y + 1));
      const double sy = (v(x - 1, y + 1) + 2 * v(x, y + 1) + v(x + 1, y + 1)) -
                        (v(x - 1, y - 1) + 2 * v(x, y - 1) + v(x + 1, y - 1));
      const double m = std::hypot(sx, sy);
      mag.at(x, y) = m;
      max_mag = std::max(max_mag, m);
    }
  }
  for (double& m : mag.data) m /= max_mag;
  return mag;
}

void image_gradients(const GrayImage& img, GrayImage& gx, GrayImage& gy) {
  gx = GrayImage(img.width, img.height);
  gy = GrayImage(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, img.width - 1);
      const int ym = std::max(y - 1, 0), yp = std::min(y + 1, img.height - 1);
      gx.at(x, y) = (img.at(xp, y) - img.at(xm, y)) / (xp - xm);
      gy.at(x, y) = (img.at(x, yp) - img.at(x, ym)) / (yp - ym);
    }
  }
}

void dilate_dynamic(MaskImage& mask) {
  MaskImage out = mask;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) != 0) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (mask.inside(x + dx, y + dy)) out.at(x + dx, y + dy) = 0;
    }
  }
  mask = std::move(out);
}

GrayImage downsample_half(const GrayImage& img) {
  GrayImage out(img.width / 2, img.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(x, y) = 0.25 * (img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) +
                             img.at(2 * x, 2 * y + 1) +
                             img.at(2 * x + 1, 2 * y + 1));
  return out;
}

GrayImage downsample_half_depth(const GrayImage& depth) {
  GrayImage out(depth.width / 2, depth.height / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double sum = 0;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double d = depth.at(2 * x + dx, 2 * y + dy);
          if (d > 0) {
            sum += d;
            ++n;
          }
        }
      out.at(x, y) = n > 0 ? sum / n : 0.0;
    }
  }
  return out;
}

ColorImage downsample_half(const ColorImage& img) {
  ColorImage out(img.width / 2, img.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.set_pixel(x, y,
                    0.25 * (img.pixel(2 * x, 2 * y) + img.pixel(2 * x + 1, 2 * y) +
                            img.pixel(2 * x, 2 * y + 1) +
                            img.pixel(2 * x + 1, 2 * y + 1)));
  return out;
}

MaskImage downsample_half(const MaskImage& mask) {
  MaskImage out(mask.width / 2, mask.height / 2, 1, mask.source);
  // Conservative: a cell is static only if all four parents are static.
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(x, y) = mask.at(2 * x, 2 * y) & mask.at(2 * x + 1, 2 * y) &
                     mask.at(2 * x, 2 * y + 1) & mask.at(2 * x + 1, 2 * y + 1);
  return out;
}

}  // namespace splat
