#pragma once

#include <optional>
#include <vector>

#include "splatslam/geometry.hpp"
#include "splatslam/image.hpp"

namespace splat {

struct WarpConfig {
  double e_th = 0.6;       // depth residual threshold, meters
  int window = 4;          // frames fused per final mask
  // Under significant motion (pair mean |r| > 2*e_th) only foreground
  // residuals (observed closer than predicted) mark pixels dynamic.
  bool foreground_positive_rule = true;
  // One round of 3x3 dilation of the final dynamic set.
  bool dilate_final = true;
};

struct WarpedPixel {
  Vec2 pixel;    // target pixel in frame j
  double depth;  // z of the transformed point (predicted depth at target)
};

// Back-project p with depth d in frame i, transform by T_ji, re-project.
// nullopt when the transformed point falls behind the near plane or outside
// the image bounds.
std::optional<WarpedPixel> warp_pixel(const Vec2& p, double d,
                                      const Pose& T_ji, const Intrinsics& K);

// Pairwise warp-consistency mask for frame j against source frame i.
// A pixel of j receiving a warp is marked dynamic when its residual
// r = D_j(target) - predicted depth violates consistency; pixels receiving
// no warp (or with invalid depth at either end) stay static here and are
// decided by fusion.
MaskImage warp_mask_pair(const GrayImage& D_i, const GrayImage& D_j,
                         const Pose& T_ji, const Intrinsics& K,
                         const WarpConfig& cfg);

// Final mask: dynamic = (intersection of pairwise dynamic sets) union the
// semantic dynamic set, then optional dilation. semantic may be null.
MaskImage fuse_masks(const std::vector<MaskImage>& pairwise,
                     const MaskImage* semantic, const WarpConfig& cfg);

}  // namespace splat
