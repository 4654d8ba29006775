#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "splatslam/gaussian_map.hpp"
#include "splatslam/geometry.hpp"
#include "splatslam/image.hpp"

namespace splat {

using Mat2 = Eigen::Matrix2d;

// One Gaussian projected onto the image plane.
struct SplatProjection {
  Vec2 mean2d = Vec2::Zero();       // pixels
  Mat2 cov2d = Mat2::Identity();    // pixels^2, after low-pass dilation
  double depth_cam = 0;             // z of center in camera frame
  Vec3 color = Vec3::Zero();        // RGB in [0,1]
  double opacity = 0;
  size_t source = 0;                // index into GaussianMap

  // Cached intermediates for the backward pass.
  Vec3 mu_cam = Vec3::Zero();
  Mat2 cov2d_inv = Mat2::Identity();
  Mat23 proj_jac = Mat23::Zero();  // exact, drives the mean2d chain
  // Jacobian used for the 2D covariance, built from the view direction
  // clamped to 1.3x the frustum: the affine approximation degenerates for
  // centers far outside the field of view (footprints otherwise blow up to
  // cover the image for gaussians grazing the near plane).
  Mat23 cov_jac = Mat23::Zero();
  double tx_c = 0, ty_c = 0;        // clamped mu_cam.x/z, mu_cam.y/z
  bool clamp_x = false, clamp_y = false;
  Vec3 view_dir = Vec3::UnitZ();    // unit, camera center -> gaussian (world)
  double view_dist = 1.0;
  double radius_px = 0;             // 3-sigma footprint radius
};

struct BlendRecord {
  uint32_t proj;  // index into RenderOutput::projections
  double f;       // clamped opacity-weighted Gaussian value at the pixel
};

struct RenderConfig {
  int tile_size = 16;
  bool normalized_depth = false;  // D-hat / O-hat instead of the raw blend
  bool keep_records = true;       // retain per-pixel blend state for backward
  int num_threads = 1;
};

struct RenderOutput {
  ColorImage color;
  GrayImage depth;
  GrayImage opacity;

  // Per-pixel blend state (empty when keep_records was false).
  std::vector<BlendRecord> records;
  std::vector<uint32_t> pixel_offset;  // size npixels+1
  std::vector<SplatProjection> projections;

  Pose pose;  // camera-to-world at which this was rendered
  Intrinsics intrinsics;
  uint64_t map_generation = 0;
  bool normalized_depth = false;

  bool has_records() const { return !pixel_offset.empty(); }
};

// Projects one Gaussian; nullopt = culled (behind near plane or 3-sigma
// footprint misses the image).
std::optional<SplatProjection> project_gaussian(const Gaussian& g,
                                               const Pose& pose_cw,
                                               const Intrinsics& K,
                                               int sh_degree);

RenderOutput render(const GaussianMap& map, const Pose& pose_wc,
                    const Intrinsics& K, const RenderConfig& cfg = {});

// Per-Gaussian parameter gradients; rotation gradient is the so(3) tangent of
// a right-multiplied increment q <- q * exp(phi).
struct MapGradients {
  std::vector<Vec3> center;
  std::vector<Vec3> rotation;
  std::vector<Vec3> log_scale;
  std::vector<double> opacity_logit;
  std::vector<Eigen::Matrix3Xd> sh;

  void resize(size_t n, int sh_count);
  bool all_finite() const;
};

// Analytic adjoint of the forward blend. grad_color / grad_depth are dL/dC-hat
// and dL/dD-hat. Throws std::logic_error when blend records are missing.
MapGradients render_backward_map(const RenderOutput& out,
                                 const ColorImage& grad_color,
                                 const GrayImage& grad_depth,
                                 const GaussianMap& map);

// Gradient w.r.t. the right-multiplicative pose increment P <- P * exp(delta).
Tangent6 render_backward_pose(const RenderOutput& out,
                              const ColorImage& grad_color,
                              const GrayImage& grad_depth,
                              const GaussianMap& map);

}  // namespace splat
