#pragma once

#include <string>
#include <vector>

#include "splatslam/frame.hpp"
#include "splatslam/gaussian_map.hpp"
#include "splatslam/renderer.hpp"

namespace splat {

struct MapLossConfig {
  double lambda_rgb = 0.9;
  double lambda_ssim = 0.2;
  double lambda_depth = 0.1;
  int iterations = 40;
  // Per-group learning rates; center is additionally scaled by scene extent.
  double lr_center = 1.6e-4;
  double lr_rotation = 1e-3;
  double lr_scale = 5e-3;
  double lr_opacity = 5e-2;
  double lr_color = 2.5e-3;
  RenderConfig render;
};

struct Keyframe {
  Frame frame;
  Pose pose;  // T_wc
  MaskImage mask;
  uint32_t index = 0;  // global keyframe index
};

struct MappingLosses {
  double rgb = 0, ssim = 0, depth = 0, total = 0;
  size_t n_masked = 0;       // M
  size_t n_masked_depth = 0; // N_d
};

// True when the mean pose+depth induced reprojection displacement of valid
// static pixels from prev to cur exceeds threshold_px. No valid pixels is
// answered true (conservative insertion).
bool keyframe_select(const Frame& prev, const Pose& prev_pose,
                     const MaskImage& prev_mask, const Pose& cur_pose,
                     double threshold_px = 8.0);

// Masked mapping losses for one rendered view. Dynamic pixels contribute
// zero to every term (the SSIM input has them replaced by target values).
// Optionally emits the gradients of the total loss w.r.t. the rendered
// color and depth images. Throws std::runtime_error when no pixel passes
// the mask.
MappingLosses mapping_losses(const RenderOutput& render, const Frame& frame,
                             const MaskImage& mask, const MapLossConfig& cfg,
                             ColorImage* grad_color = nullptr,
                             GrayImage* grad_depth = nullptr);

struct LossTraceEntry {
  uint32_t keyframe_index = 0;
  int iteration = 0;
  MappingLosses losses;
  size_t gaussian_count = 0;
};

// First-order map refinement over a keyframe window, round-robin across
// keyframes, poses fixed. NaN gradients abort the iteration and retry once
// with halved learning rates; a second NaN is fatal (std::runtime_error).
// When `density` is given, prune and adaptive_add run against the newest
// keyframe after the iteration budget.
std::vector<LossTraceEntry> optimize_map(GaussianMap& map,
                                         const std::vector<Keyframe>& window,
                                         const MapLossConfig& cfg,
                                         const DensityConfig* density = nullptr,
                                         uint32_t window_oldest = 0,
                                         bool new_viewpoint = false);

void append_loss_trace_csv(const std::string& path,
                           const std::vector<LossTraceEntry>& trace);

}  // namespace splat
