#include "splatslam/motion_mask.hpp"

#include <cmath>
#include <stdexcept>

namespace splat {

std::optional<WarpedPixel> warp_pixel(const Vec2& p, double d,
                                      const Pose& T_ji, const Intrinsics& K) {
  const auto pt_i = backproject(p, d, K);
  if (!pt_i) return std::nullopt;
  const Vec3 pt_j = T_ji * (*pt_i);
  const auto px_j = project(pt_j, K);
  if (!px_j) return std::nullopt;
  if (px_j->x() < 0 || px_j->x() > K.width - 1 || px_j->y() < 0 ||
      px_j->y() > K.height - 1)
    return std::nullopt;
  return WarpedPixel{*px_j, pt_j.z()};
}

MaskImage warp_mask_pair(const GrayImage& D_i, const GrayImage& D_j,
                         const Pose& T_ji, const Intrinsics& K,
                         const WarpConfig& cfg) {
  if (D_i.width != D_j.width || D_i.height != D_j.height)
    throw std::invalid_argument("warp_mask_pair: depth dimensions differ");

  // Residual per target pixel of frame j; NaN = no warp received. Nearest
  // neighbour target lookup: bilinear depth is wrong across object edges.
  GrayImage residual(D_j.width, D_j.height,
                     std::numeric_limits<double>::quiet_NaN());
  double sum_abs = 0;
  size_t n_valid = 0;
  for (int y = 0; y < D_i.height; ++y) {
    for (int x = 0; x < D_i.width; ++x) {
      const double d = D_i.at(x, y);
      if (d <= 0) continue;
      const auto w = warp_pixel(Vec2(x, y), d, T_ji, K);
      if (!w) continue;
      const int tx = static_cast<int>(std::lround(w->pixel.x()));
      const int ty = static_cast<int>(std::lround(w->pixel.y()));
      if (!D_j.inside(tx, ty)) continue;
      if (D_j.at(tx, ty) <= 0) continue;
      // Best-agreeing observation in the 3x3 target neighbourhood: depth is
      // discontinuous at object edges, and sub-pixel rounding there would
      // otherwise fabricate motion from a static occlusion boundary.
      double r = std::numeric_limits<double>::infinity();
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (!D_j.inside(tx + dx, ty + dy)) continue;
          const double obs = D_j.at(tx + dx, ty + dy);
          if (obs <= 0) continue;
          const double rn = obs - w->depth;
          if (std::abs(rn) < std::abs(r)) r = rn;
        }
      }
      // Keep the residual of largest magnitude when several sources land
      // on the same target pixel.
      double& slot = residual.at(tx, ty);
      if (std::isnan(slot) || std::abs(r) > std::abs(slot)) slot = r;
      sum_abs += std::abs(r);
      ++n_valid;
    }
  }

  const double mean_abs = n_valid > 0 ? sum_abs / n_valid : 0.0;
  const bool significant =
      cfg.foreground_positive_rule && mean_abs > 2.0 * cfg.e_th;

  MaskImage mask(D_j.width, D_j.height, 1, MaskSource::Warp);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const double r = residual.at(x, y);
      if (std::isnan(r)) continue;
      const bool dynamic =
          significant ? (r < -cfg.e_th) : (std::abs(r) > cfg.e_th);
      if (dynamic) mask.at(x, y) = 0;
    }
  }
  return mask;
}

MaskImage fuse_masks(const std::vector<MaskImage>& pairwise,
                     const MaskImage* semantic, const WarpConfig& cfg) {
  if (pairwise.empty())
    throw std::invalid_argument("fuse_masks: no pairwise masks");
  const int W = pairwise.front().width, H = pairwise.front().height;
  for (const MaskImage& m : pairwise)
    if (m.width != W || m.height != H)
      throw std::invalid_argument("fuse_masks: mask dimensions differ");
  if (semantic && (semantic->width != W || semantic->height != H))
    throw std::invalid_argument("fuse_masks: semantic dimensions differ");

  MaskImage fused(W, H, 1, MaskSource::Fused);
  for (size_t i = 0; i < fused.data.size(); ++i) {
    bool warp_dynamic = true;  // dynamic in every pairwise mask
    for (const MaskImage& m : pairwise) warp_dynamic &= m.data[i] == 0;
    const bool sem_dynamic = semantic && semantic->data[i] == 0;
    if (warp_dynamic || sem_dynamic) fused.data[i] = 0;
  }
  if (cfg.dilate_final) dilate_dynamic(fused);
  return fused;
}

}  // namespace splat
