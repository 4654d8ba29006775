#pragma once

#include <optional>
#include <string>
#include <vector>

#include "splatslam/dataset.hpp"
#include "splatslam/eval.hpp"
#include "splatslam/gaussian_map.hpp"
#include "splatslam/mapping.hpp"
#include "splatslam/motion_mask.hpp"
#include "splatslam/tracking.hpp"

namespace splat {

struct PipelineConfig {
  WarpConfig warp;
  TrackConfig track;
  BAConfig ba;
  MapLossConfig map_loss;
  DensityConfig density;

  std::string dataset_dir;
  std::string out_dir;         // empty = no artifacts written
  unsigned seed = 0;
  double res_scale = 0.25;     // power of 1/2: each halving is a 2x2 average
  int stride = 1;
  int max_frames = -1;
  bool sequential = true;      // false = threaded tracking/mapping split
  bool use_motion_masks = true;
  double keyframe_threshold_px = 8.0;
  int render_every = 20;       // periodic render PNGs; 0 disables
  int final_ba_max_keyframes = 50;
};

// key=value assignment into the config; unknown keys and out-of-range
// values throw std::invalid_argument.
void apply_config_entry(PipelineConfig& cfg, const std::string& key,
                        const std::string& value);

// Plain-text config file: one key=value per line, '#' comments and blank
// lines skipped. Range checks run after all assignments.
PipelineConfig load_pipeline_config(const std::string& path);
void validate_pipeline_config(const PipelineConfig& cfg);

struct SlamResult {
  std::vector<TrajectoryEntry> trajectory;
  GaussianMap map;
  std::optional<AteReport> ate_report;  // present when GT exists
  size_t n_keyframes = 0;
  size_t n_frames = 0;
};

// Full SLAM loop over an in-memory sequence: coarse odometry per frame,
// keyframe insertion with warp+semantic mask fusion, windowed BA, splatting
// pose refinement, map optimization with densification, and one final
// all-keyframe BA pass. Artifacts (trajectory, loss CSV, mask/render PNGs,
// checkpoint, ATE report) are written when cfg.out_dir is non-empty.
SlamResult run_slam(const Sequence& seq, const PipelineConfig& cfg);

// Loads cfg.dataset_dir and runs run_slam.
SlamResult run_slam(const PipelineConfig& cfg);

// Frame downsampled by 2^halvings with intrinsics rescaled to match.
Frame downscale_frame(const Frame& f, int halvings);
int res_scale_halvings(double res_scale);  // throws on non-power-of-1/2

// Warp-consistency masks for frame `cur` against the given source views,
// fused with cur's semantic mask when present.
MaskImage motion_mask_for(const Frame& cur, const Pose& cur_pose,
                          const std::vector<const Keyframe*>& sources,
                          const WarpConfig& cfg);

// The preview rendering convention shared by the in-loop periodic renders
// and the `render` subcommand (checkpoint round trips reproduce it).
RenderOutput render_preview(const GaussianMap& map, const Pose& pose,
                            const Intrinsics& K);

void write_color_png(const std::string& path, const ColorImage& img);
void write_mask_png(const std::string& path, const MaskImage& mask);

}  // namespace splat
