#pragma once

#include <string>
#include <vector>

#include "splatslam/frame.hpp"
#include "splatslam/trajectory.hpp"

namespace splat {

struct LoadConfig {
  int max_frames = -1;             // -1 = all
  double assoc_tolerance = 0.02;   // seconds
  // Used when the directory carries no calib.txt (TUM default camera).
  Intrinsics fallback_intrinsics;

  LoadConfig() {
    fallback_intrinsics.fx = 525.0;
    fallback_intrinsics.fy = 525.0;
    fallback_intrinsics.cx = 319.5;
    fallback_intrinsics.cy = 239.5;
    fallback_intrinsics.width = 640;
    fallback_intrinsics.height = 480;
    fallback_intrinsics.depth_scale = 5000.0;
  }
};

struct LoadDiagnostics {
  int unmatched_rgb = 0;   // rgb entries without a depth partner in tolerance
  int skipped_files = 0;   // unreadable or mismatched-dimension images
};

struct Sequence {
  std::vector<Frame> frames;
  std::vector<TrajectoryEntry> groundtruth;  // empty when absent
  LoadDiagnostics diag;
};

// TUM directory layout: rgb.txt, depth.txt, optional groundtruth.txt,
// optional calib.txt ("fx fy cx cy [depth_scale]"), optional masks/ with
// semantic PNGs named after the rgb files (nonzero pixel = dynamic).
// Throws std::runtime_error on missing index files or zero associated pairs.
Sequence load_tum_sequence(const std::string& dir, const LoadConfig& cfg = {});

// Inverse of the loader for synthetic data: writes rgb/, depth/ (16-bit
// PNG), rgb.txt, depth.txt, calib.txt, groundtruth.txt and optional masks.
void save_tum_sequence(const std::string& dir, const std::vector<Frame>& frames,
                       const std::vector<TrajectoryEntry>& groundtruth);

}  // namespace splat
