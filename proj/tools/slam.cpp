#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "splatslam/pipeline.hpp"

namespace fs = std::filesystem;
using namespace splat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDataset = 3;
constexpr int kExitRuntime = 4;

struct CommonOpts {
  std::string config_path;
  std::string dataset_dir;
  std::string out_dir;
  int seed = -1;
  int stride = 0;
  int max_frames = 0;
  double res_scale = 0;
  bool sequential = false;
};

PipelineConfig build_config(const CommonOpts& o) {
  PipelineConfig cfg;
  if (!o.config_path.empty()) cfg = load_pipeline_config(o.config_path);
  if (!o.dataset_dir.empty()) cfg.dataset_dir = o.dataset_dir;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.seed >= 0) cfg.seed = static_cast<unsigned>(o.seed);
  if (o.stride > 0) cfg.stride = o.stride;
  if (o.max_frames > 0) cfg.max_frames = o.max_frames;
  if (o.res_scale > 0) cfg.res_scale = o.res_scale;
  if (o.sequential) cfg.sequential = true;
  validate_pipeline_config(cfg);
  return cfg;
}

void add_common(CLI::App* app, CommonOpts& o) {
  app->add_option("--config", o.config_path, "key=value config file");
  app->add_option("--dataset", o.dataset_dir, "TUM-format sequence directory");
  app->add_option("--out", o.out_dir, "output directory");
  app->add_option("--seed", o.seed, "RNG seed");
  app->add_option("--stride", o.stride, "process every Nth frame");
  app->add_option("--max-frames", o.max_frames, "frame cap after striding");
  app->add_option("--res-scale", o.res_scale,
                  "resolution scale, power of 1/2 (default 0.25)");
  app->add_flag("--sequential", o.sequential,
                "strictly sequential tracking/mapping (deterministic)");
}

int cmd_run(const CommonOpts& o) {
  const PipelineConfig cfg = build_config(o);
  if (cfg.dataset_dir.empty())
    throw std::invalid_argument("run: --dataset (or dataset_dir) is required");
  Sequence seq;
  try {
    LoadConfig lc;
    lc.max_frames = cfg.max_frames > 0 ? cfg.max_frames * cfg.stride : -1;
    seq = load_tum_sequence(cfg.dataset_dir, lc);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kExitDataset;
  }
  const SlamResult r = run_slam(seq, cfg);
  std::printf("tracked %zu frames, %zu keyframes, %zu gaussians\n",
              r.n_frames, r.n_keyframes, r.map.size());
  if (r.ate_report) std::printf("%s", format_report(*r.ate_report).c_str());
  return kExitOk;
}

int cmd_masks(const CommonOpts& o, const std::string& traj_path) {
  const PipelineConfig cfg = build_config(o);
  if (cfg.dataset_dir.empty() || cfg.out_dir.empty())
    throw std::invalid_argument("masks: --dataset and --out are required");
  Sequence seq;
  try {
    LoadConfig lc;
    lc.max_frames = cfg.max_frames > 0 ? cfg.max_frames * cfg.stride : -1;
    seq = load_tum_sequence(cfg.dataset_dir, lc);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kExitDataset;
  }
  std::vector<TrajectoryEntry> poses =
      traj_path.empty() ? seq.groundtruth : read_trajectory(traj_path);
  if (poses.empty())
    throw std::invalid_argument(
        "masks: no ground truth in the dataset and no --trajectory given");

  const int halvings = res_scale_halvings(cfg.res_scale);
  fs::create_directories(cfg.out_dir);
  auto pose_at = [&](double t) {
    size_t best = 0;
    for (size_t i = 1; i < poses.size(); ++i)
      if (std::abs(poses[i].timestamp - t) <
          std::abs(poses[best].timestamp - t))
        best = i;
    return poses[best].pose;
  };

  std::vector<Keyframe> recent;
  size_t written = 0;
  for (size_t k = 0; k < seq.frames.size(); k += cfg.stride) {
    const Frame f = downscale_frame(seq.frames[k], halvings);
    const Pose pose = pose_at(f.timestamp);
    std::vector<const Keyframe*> sources;
    for (const Keyframe& kf : recent) sources.push_back(&kf);
    const MaskImage mask = motion_mask_for(f, pose, sources, cfg.warp);
    char name[96];
    std::snprintf(name, sizeof(name), "%s/%.6f.png", cfg.out_dir.c_str(),
                  f.timestamp);
    write_mask_png(name, mask);
    ++written;
    recent.push_back({f, pose, mask, static_cast<uint32_t>(k)});
    if (recent.size() >= static_cast<size_t>(cfg.warp.window))
      recent.erase(recent.begin());
  }
  std::printf("wrote %zu masks to %s\n", written, cfg.out_dir.c_str());
  return kExitOk;
}

int cmd_render(const CommonOpts& o, const std::string& checkpoint,
               const std::string& traj_path) {
  const PipelineConfig cfg = build_config(o);
  if (cfg.out_dir.empty())
    throw std::invalid_argument("render: --out is required");
  GaussianMap map;
  std::vector<TrajectoryEntry> traj;
  try {
    map = load_checkpoint(checkpoint);
    traj = read_trajectory(traj_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kExitDataset;
  }
  Intrinsics K = LoadConfig().fallback_intrinsics;
  if (!cfg.dataset_dir.empty()) {
    try {
      LoadConfig lc;
      lc.max_frames = 1;
      K = load_tum_sequence(cfg.dataset_dir, lc).frames.front().intrinsics;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "dataset error: %s\n", e.what());
      return kExitDataset;
    }
  }
  const int halvings = res_scale_halvings(cfg.res_scale);
  for (int h = 0; h < halvings; ++h) {
    K.fx *= 0.5;
    K.fy *= 0.5;
    K.cx = (K.cx - 0.5) * 0.5;
    K.cy = (K.cy - 0.5) * 0.5;
    K.width /= 2;
    K.height /= 2;
  }
  fs::create_directories(cfg.out_dir);
  for (size_t i = 0; i < traj.size(); ++i) {
    const RenderOutput ro = render_preview(map, traj[i].pose, K);
    char name[96];
    std::snprintf(name, sizeof(name), "%s/frame_%06zu.png",
                  cfg.out_dir.c_str(), i);
    write_color_png(name, ro.color);
  }
  std::printf("rendered %zu frames to %s\n", traj.size(),
              cfg.out_dir.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path,
             const std::string& out_dir) {
  std::vector<TrajectoryEntry> est, gt;
  try {
    est = read_trajectory(est_path);
    gt = read_trajectory(gt_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kExitDataset;
  }
  const AteReport rep = ate(est, gt);
  std::printf("%s", format_report(rep).c_str());
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir + "/ate.txt");
    f << format_report(rep);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic RGB-D SLAM with a 3D Gaussian splatting map"};
  app.require_subcommand(1);

  CommonOpts run_o, masks_o, render_o;
  std::string masks_traj, render_checkpoint, render_traj;
  std::string eval_est, eval_gt, eval_out;

  CLI::App* run = app.add_subcommand("run", "full SLAM over a sequence");
  add_common(run, run_o);

  CLI::App* masks = app.add_subcommand("masks", "standalone motion masks");
  add_common(masks, masks_o);
  masks->add_option("--trajectory", masks_traj,
                    "poses to use instead of ground truth");

  CLI::App* rnd = app.add_subcommand("render", "render a map checkpoint");
  add_common(rnd, render_o);
  rnd->add_option("--checkpoint", render_checkpoint, "map checkpoint")
      ->required();
  rnd->add_option("--trajectory", render_traj, "poses to render")->required();

  CLI::App* ev = app.add_subcommand("eval", "compare two trajectories");
  ev->add_option("--est", eval_est, "estimated trajectory")->required();
  ev->add_option("--gt", eval_gt, "ground-truth trajectory")->required();
  ev->add_option("--out", eval_out, "optional report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(run_o);
    if (masks->parsed()) return cmd_masks(masks_o, masks_traj);
    if (rnd->parsed()) return cmd_render(render_o, render_checkpoint,
                                         render_traj);
    if (ev->parsed()) return cmd_eval(eval_est, eval_gt, eval_out);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fatal: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
