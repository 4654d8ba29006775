#pragma once

#include <vector>

#include "splatslam/frame.hpp"
#include "splatslam/gaussian_map.hpp"
#include "splatslam/trajectory.hpp"

namespace splat {

struct SyntheticConfig {
  int n_frames = 20;
  unsigned seed = 1;
  double depth_noise_sigma = 0.0;  // meters
  double rgb_noise_sigma = 0.0;

  int room_gaussians = 900;
  double room_size = 3.0;  // box side length, camera near the center

  bool moving_sphere = true;
  double sphere_radius = 0.2;
  Vec3 sphere_start = Vec3(-0.35, 0.0, 1.3);
  Vec3 sphere_step = Vec3(0.05, 0.0, 0.0);  // world displacement per frame

  // Scales the parametric camera path; 0 repeats poses (rejected).
  double cam_motion = 1.0;

  // Generate frames by analytic ray casting against the box (and sphere)
  // instead of splat-rendering the gaussian map. Ray-cast frames satisfy
  // photometric constancy exactly, which direct-odometry oracles need;
  // splat-rendered frames are exactly consistent with static_map, which
  // splatting-refinement oracles need.
  bool raycast_frames = false;

  Intrinsics intrinsics;

  SyntheticConfig() {
    intrinsics.fx = 300.0;
    intrinsics.fy = 300.0;
    intrinsics.cx = 159.5;
    intrinsics.cy = 119.5;
    intrinsics.width = 320;
    intrinsics.height = 240;
    intrinsics.depth_scale = 5000.0;
  }
};

struct SyntheticScene {
  GaussianMap static_map;  // ground-truth static geometry
  std::vector<TrajectoryEntry> trajectory;
  std::vector<Frame> frames;
  // 1 = static, 0 = inside the moving object's analytic footprint.
  std::vector<MaskImage> dynamic_footprints;
  std::vector<Vec3> sphere_centers;
  double sphere_radius = 0;
};

// Textured static box room plus one moving sphere, rendered along a smooth
// trajectory. Deterministic for a fixed seed. Throws std::invalid_argument
// on a degenerate (repeated-pose) trajectory.
SyntheticScene generate_synthetic(const SyntheticConfig& cfg);

// Pixels whose ray hits the sphere in front of the static surface
// (static_depth may be null: pure projected footprint). 0 = inside.
MaskImage sphere_footprint_mask(const Vec3& center_w, double radius,
                                const Pose& T_wc, const Intrinsics& K,
                                const GrayImage* static_depth);

}  // namespace splat
