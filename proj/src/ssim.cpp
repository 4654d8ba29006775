#include "splatslam/ssim.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace splat {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWin> gaussian_kernel() {
  std::array<double, kWin> k{};
  double sum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kHalf;
    k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable 11x11 convolution; borders use zero padding, which is only ever
// read outside the valid evaluation region.
void conv(const std::vector<double>& in, int W, int H,
          std::vector<double>& out, std::vector<double>& tmp) {
  static const std::array<double, kWin> k = gaussian_kernel();
  tmp.assign(in.size(), 0.0);
  out.assign(in.size(), 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double s = 0;
      for (int i = -kHalf; i <= kHalf; ++i) {
        const int xi = x + i;
        if (xi >= 0 && xi < W) s += k[i + kHalf] * in[y * W + xi];
      }
      tmp[y * W + x] = s;
    }
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double s = 0;
      for (int i = -kHalf; i <= kHalf; ++i) {
        const int yi = y + i;
        if (yi >= 0 && yi < H) s += k[i + kHalf] * tmp[yi * W + x];
      }
      out[y * W + x] = s;
    }
  }
}

}  // namespace

double ssim(const ColorImage& x, const ColorImage& y, ColorImage* grad_x) {
  if (x.width != y.width || x.height != y.height)
    throw std::invalid_argument("ssim: image dimensions differ");
  if (x.width < kWin || x.height < kWin)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  const int W = x.width, H = x.height;
  const size_t n = static_cast<size_t>(W) * H;
  const size_t n_valid =
      static_cast<size_t>(W - 2 * kHalf) * (H - 2 * kHalf);
  if (grad_x) *grad_x = ColorImage(W, H);

  std::vector<double> px(n), py(n), pxx(n), pyy(n), pxy(n);
  std::vector<double> mx, my, mxx, myy, mxy, tmp;
  std::vector<double> f1, f2, f3, c1f, c2f, c3f;

  double total = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (size_t i = 0; i < n; ++i) {
      px[i] = x.data[3 * i + ch];
      py[i] = y.data[3 * i + ch];
      pxx[i] = px[i] * px[i];
      pyy[i] = py[i] * py[i];
      pxy[i] = px[i] * py[i];
    }
    conv(px, W, H, mx, tmp);
    conv(py, W, H, my, tmp);
    conv(pxx, W, H, mxx, tmp);
    conv(pyy, W, H, myy, tmp);
    conv(pxy, W, H, mxy, tmp);

    if (grad_x) {
      f1.assign(n, 0.0);
      f2.assign(n, 0.0);
      f3.assign(n, 0.0);
    }
    for (int yy = kHalf; yy < H - kHalf; ++yy) {
      for (int xx = kHalf; xx < W - kHalf; ++xx) {
        const size_t i = static_cast<size_t>(yy) * W + xx;
        const double ux = mx[i], uy = my[i];
        const double sx = mxx[i] - ux * ux, sy = myy[i] - uy * uy;
        const double sxy = mxy[i] - ux * uy;
        const double A1 = 2 * ux * uy + kC1, A2 = 2 * sxy + kC2;
        const double B1 = ux * ux + uy * uy + kC1, B2 = sx + sy + kC2;
        const double S = (A1 * A2) / (B1 * B2);
        total += S;
        if (grad_x) {
          const double dS_dux =
              2 * uy * A2 / (B1 * B2) - 2 * ux * A1 * A2 / (B1 * B1 * B2);
          const double dS_dsx = -A1 * A2 / (B1 * B2 * B2);
          const double dS_dsxy = 2 * A1 / (B1 * B2);
          f1[i] = dS_dux - 2 * ux * dS_dsx - uy * dS_dsxy;
          f2[i] = dS_dsx;
          f3[i] = dS_dsxy;
        }
      }
    }
    if (grad_x) {
      conv(f1, W, H, c1f, tmp);
      conv(f2, W, H, c2f, tmp);
      conv(f3, W, H, c3f, tmp);
      const double norm = 1.0 / (3.0 * static_cast<double>(n_valid));
      for (size_t i = 0; i < n; ++i)
        grad_x->data[3 * i + ch] =
            norm * (c1f[i] + 2 * px[i] * c2f[i] + py[i] * c3f[i]);
    }
  }
  return total / (3.0 * static_cast<double>(n_valid));
}

}  // namespace splat
