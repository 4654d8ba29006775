#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <string>
#include <vector>

#include "splatslam/frame.hpp"
#include "splatslam/geometry.hpp"

namespace splat {

struct RenderOutput;  // splat_renderer

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }

// One anisotropic 3D Gaussian primitive.
struct Gaussian {
  Vec3 center = Vec3::Zero();                          // world frame, meters
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 log_scale = Vec3::Zero();                       // s = exp(log_scale)
  double opacity_logit = 0.0;                          // alpha = sigmoid(.)
  Eigen::Matrix3Xd sh_coeffs;                          // 3 x B
  uint32_t obs_count = 0;     // distinct keyframes that observed it
  uint32_t birth_keyframe = 0;

  double opacity() const { return sigmoid(opacity_logit); }
  Vec3 scale() const { return log_scale.array().exp(); }
  Mat3 covariance() const {
    const Vec3 s2 = (2.0 * log_scale).array().exp();
    const Mat3 R = rotation.toRotationMatrix();
    return R * s2.asDiagonal() * R.transpose();
  }
};

struct GaussianMap {
  std::vector<Gaussian> gaussians;
  int sh_degree = 0;
  uint64_t generation = 0;

  size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }
  void bump() { ++generation; }
  bool all_finite() const;

  // Axis-aligned extent diagonal of the centers (0 for <2 points).
  double scene_extent() const;

  // Increment obs_count of every Gaussian whose center projects into the view.
  void update_observations(const Pose& pose_wc, const Intrinsics& K);
};

struct DensityConfig {
  double base_radius = 0.04;              // meters
  double color_gradient_scale = 7.0;
  double opacity_add_threshold = 0.6;     // o_th
  double depth_residual_add_threshold = 0.10;  // meters
  int min_obs_for_keep = 3;
  double tau_alpha = 0.005;
  double tau_s1 = 0.4;     // meters
  double tau_s2 = 36.0;    // max/min scale ratio
  int uniform_stride = 4;  // px, new-viewpoint uniform sampling
  double initial_opacity = 0.1;
  int sh_degree = 0;
};

// Insertion radius from normalized color-gradient magnitude; monotone
// non-increasing, clamped to [base/8, base].
double dynamic_insertion_radius(double color_grad_mag, const DensityConfig& cfg);

// Builds the map from the first frame (pose = identity in practice); samples
// static pixels by the dynamic-radius scheme at half radius.
// Throws std::runtime_error with fewer than 4 valid static pixels.
GaussianMap initialize_map(const Frame& frame, const Pose& pose,
                           const MaskImage& motion_mask,
                           const DensityConfig& cfg);

// Two-stage point addition: uniform grid sampling when the frame is a new
// viewpoint, then under-fitted pixels (low accumulated opacity or large depth
// residual). Returns the number of Gaussians added.
size_t adaptive_add(GaussianMap& map, const Frame& frame, const Pose& pose,
                    const MaskImage& motion_mask, const RenderOutput& render,
                    const DensityConfig& cfg, bool new_viewpoint,
                    uint32_t keyframe_index);

// Two-stage pruning: in-view threshold criteria, then low-observation points
// whose birth keyframe left the sliding window. Returns removed count.
size_t prune(GaussianMap& map, const Pose& current_pose, const Intrinsics& K,
             uint32_t window_oldest_keyframe, const DensityConfig& cfg);

// Fraction of valid prev-frame pixels that reproject inside the current view.
double view_overlap(const GrayImage& prev_depth, const Pose& prev_pose,
                    const Pose& cur_pose, const Intrinsics& K);

// Binary map checkpoint (magic "DGSM").
void save_checkpoint(const GaussianMap& map, const std::string& path);
GaussianMap load_checkpoint(const std::string& path);

}  // namespace splat
