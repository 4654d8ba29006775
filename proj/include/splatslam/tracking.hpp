#pragma once

#include <string>
#include <vector>

#include "splatslam/frame.hpp"
#include "splatslam/gaussian_map.hpp"
#include "splatslam/renderer.hpp"

namespace splat {

struct TrackConfig {
  double tau_track = 0.95;       // accumulated-opacity reliability gate
  int iterations = 20;           // fine refinement steps
  int pyramid_levels = 3;        // coarse direct odometry
  int coarse_iterations = 10;    // Gauss-Newton steps per pyramid level
  double lambda_rgb = 0.9;
  double lambda_depth = 0.1;
  double huber_intensity = 0.07;
  double huber_depth = 0.05;     // meters
  double min_usable_fraction = 0.05;
  double lr_rotation = 2e-3;
  double lr_translation = 2e-3;
  RenderConfig render;
};

struct CoarseResult {
  Pose pose;               // T_wc of the current frame
  bool converged = false;
  double final_residual = 0;  // mean weighted residual at the finest level
  size_t usable_pixels = 0;
};

// Masked direct RGB-D odometry: Gauss-Newton over an image pyramid on
// Huber-weighted photometric + point-to-plane depth residuals, dynamic
// pixels (mask 0) excluded. Throws std::runtime_error when fewer than
// min_usable_fraction of prev's pixels are static with valid depth.
CoarseResult coarse_odometry(const Frame& prev, const Pose& prev_pose,
                             const Frame& cur, const MaskImage& mask_prev,
                             const TrackConfig& cfg);

struct BAView {
  Frame frame;
  Pose pose;  // T_wc
  MaskImage mask;
};

struct BAConfig {
  int iterations = 10;
  int stride = 2;           // source-pixel sampling
  int patch_half = 2;       // 5x5 photometric patches
  int search_radius = 3;    // px, correspondence refinement
  double sigma_intensity = 0.1;  // confidence falloff exp(-dI^2/sigma^2)
  double huber_px = 1.0;
  // Minimum principal curvature of the patch SSD surface; matches below it
  // have an unconstrained along-valley component (aperture) and are dropped.
  double min_curvature = 2e-3;
};

struct BAResult {
  std::vector<Pose> poses;
  double initial_energy = 0;
  double final_energy = 0;
  bool updated = false;
  std::string diagnostic;
};

// Windowed dense bundle adjustment on geometric correspondences: source
// pixels are depth-warped into every other view, refined by local patch
// matching, weighted by photometric agreement, and zeroed under the target
// motion mask. The first pose is held fixed (gauge); accepted
// Levenberg-Marquardt steps never increase the energy.
BAResult windowed_ba(const std::vector<BAView>& views, const BAConfig& cfg);

// 1 where accumulated opacity exceeds tau_track.
MaskImage reliability_mask(const RenderOutput& render, double tau_track);

struct FineTrackResult {
  Pose pose;
  double initial_loss = 0;
  double final_loss = 0;
  int iterations_run = 0;
  bool skipped = false;     // too few pixels passed both gates
  size_t gated_pixels = 0;
};

// Splatting-based pose refinement: first-order updates on the pose tangent
// via the analytic renderer backward, restricted to pixels passing both the
// motion mask and the opacity reliability gate. Returns the lowest-loss pose
// seen; when fewer than 1% of pixels pass both gates the initial pose is
// returned unchanged with `skipped` set.
FineTrackResult fine_track(const GaussianMap& map, const Frame& frame,
                           const Pose& init_pose, const MaskImage& motion_mask,
                           const TrackConfig& cfg);

}  // namespace splat
