#include "splatslam/pipeline.hpp"

#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <opencv2/imgcodecs.hpp>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace fs = std::filesystem;

namespace splat {

namespace {

double to_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size())
    throw std::invalid_argument("config: bad number for " + key + ": " + v);
  return x;
}

int to_int(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  const int i = static_cast<int>(std::lround(x));
  if (x != i)
    throw std::invalid_argument("config: integer expected for " + key);
  return i;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("config: boolean expected for " + key);
}

using Setter = std::function<void(PipelineConfig&, const std::string&,
                                  const std::string&)>;

#define DBL_KEY(field) \
  [](PipelineConfig& c, const std::string& k, const std::string& v) { \
    c.field = to_double(k, v); \
  }
#define INT_KEY(field) \
  [](PipelineConfig& c, const std::string& k, const std::string& v) { \
    c.field = to_int(k, v); \
  }
#define BOOL_KEY(field) \
  [](PipelineConfig& c, const std::string& k, const std::string& v) { \
    c.field = to_bool(k, v); \
  }
#define STR_KEY(field) \
  [](PipelineConfig& c, const std::string&, const std::string& v) { \
    c.field = v; \
  }

const std::map<std::string, Setter>& config_keys() {
  static const std::map<std::string, Setter> keys = {
      {"warp.e_th", DBL_KEY(warp.e_th)},
      {"warp.window", INT_KEY(warp.window)},
      {"warp.foreground_positive_rule", BOOL_KEY(warp.foreground_positive_rule)},
      {"warp.dilate_final", BOOL_KEY(warp.dilate_final)},
      {"track.tau_track", DBL_KEY(track.tau_track)},
      {"track.iterations", INT_KEY(track.iterations)},
      {"track.pyramid_levels", INT_KEY(track.pyramid_levels)},
      {"track.coarse_iterations", INT_KEY(track.coarse_iterations)},
      {"track.lambda_rgb", DBL_KEY(track.lambda_rgb)},
      {"track.lambda_depth", DBL_KEY(track.lambda_depth)},
      {"track.huber_intensity", DBL_KEY(track.huber_intensity)},
      {"track.huber_depth", DBL_KEY(track.huber_depth)},
      {"track.min_usable_fraction", DBL_KEY(track.min_usable_fraction)},
      {"ba.iterations", INT_KEY(ba.iterations)},
      {"ba.stride", INT_KEY(ba.stride)},
      {"ba.patch_half", INT_KEY(ba.patch_half)},
      {"ba.search_radius", INT_KEY(ba.search_radius)},
      {"ba.sigma_intensity", DBL_KEY(ba.sigma_intensity)},
      {"ba.huber_px", DBL_KEY(ba.huber_px)},
      {"ba.min_curvature", DBL_KEY(ba.min_curvature)},
      {"map.lambda_rgb", DBL_KEY(map_loss.lambda_rgb)},
      {"map.lambda_ssim", DBL_KEY(map_loss.lambda_ssim)},
      {"map.lambda_depth", DBL_KEY(map_loss.lambda_depth)},
      {"map.iterations", INT_KEY(map_loss.iterations)},
      {"map.lr_center", DBL_KEY(map_loss.lr_center)},
      {"map.lr_rotation", DBL_KEY(map_loss.lr_rotation)},
      {"map.lr_scale", DBL_KEY(map_loss.lr_scale)},
      {"map.lr_opacity", DBL_KEY(map_loss.lr_opacity)},
      {"map.lr_color", DBL_KEY(map_loss.lr_color)},
      {"density.base_radius", DBL_KEY(density.base_radius)},
      {"density.color_gradient_scale", DBL_KEY(density.color_gradient_scale)},
      {"density.opacity_add_threshold", DBL_KEY(density.opacity_add_threshold)},
      {"density.depth_residual_add_threshold",
       DBL_KEY(density.depth_residual_add_threshold)},
      {"density.min_obs_for_keep", INT_KEY(density.min_obs_for_keep)},
      {"density.tau_alpha", DBL_KEY(density.tau_alpha)},
      {"density.tau_s1", DBL_KEY(density.tau_s1)},
      {"density.tau_s2", DBL_KEY(density.tau_s2)},
      {"density.uniform_stride", INT_KEY(density.uniform_stride)},
      {"density.initial_opacity", DBL_KEY(density.initial_opacity)},
      {"density.sh_degree", INT_KEY(density.sh_degree)},
      {"dataset_dir", STR_KEY(dataset_dir)},
      {"out_dir", STR_KEY(out_dir)},
      {"seed",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.seed = static_cast<unsigned>(to_int(k, v));
       }},
      {"res_scale", DBL_KEY(res_scale)},
      {"stride", INT_KEY(stride)},
      {"max_frames", INT_KEY(max_frames)},
      {"sequential", BOOL_KEY(sequential)},
      {"use_motion_masks", BOOL_KEY(use_motion_masks)},
      {"keyframe_threshold_px", DBL_KEY(keyframe_threshold_px)},
      {"render_every", INT_KEY(render_every)},
      {"final_ba_max_keyframes", INT_KEY(final_ba_max_keyframes)},
      {"render_threads",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         const int n = to_int(k, v);
         c.track.render.num_threads = n;
         c.map_loss.render.num_threads = n;
       }},
  };
  return keys;
}

#undef DBL_KEY
#undef INT_KEY
#undef BOOL_KEY
#undef STR_KEY

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("config: " + what);
}

}  // namespace

void apply_config_entry(PipelineConfig& cfg, const std::string& key,
                        const std::string& value) {
  const auto& keys = config_keys();
  const auto it = keys.find(key);
  if (it == keys.end())
    throw std::invalid_argument("config: unknown key: " + key);
  it->second(cfg, key, value);
}

int res_scale_halvings(double res_scale) {
  double s = 1.0;
  for (int h = 0; h <= 4; ++h, s *= 0.5)
    if (std::abs(res_scale - s) < 1e-12) return h;
  throw std::invalid_argument(
      "config: res_scale must be a power of 1/2 in [1/16, 1]");
}

void validate_pipeline_config(const PipelineConfig& cfg) {
  require(cfg.warp.e_th > 0, "warp.e_th must be positive");
  require(cfg.warp.window >= 2, "warp.window must be >= 2");
  require(cfg.track.tau_track > 0 && cfg.track.tau_track < 1,
          "track.tau_track must be in (0,1)");
  require(cfg.track.iterations >= 0, "track.iterations must be >= 0");
  require(cfg.track.pyramid_levels >= 1, "track.pyramid_levels must be >= 1");
  require(cfg.ba.iterations >= 1, "ba.iterations must be >= 1");
  require(cfg.ba.patch_half >= 1, "ba.patch_half must be >= 1");
  require(cfg.ba.search_radius >= 1, "ba.search_radius must be >= 1");
  require(cfg.map_loss.lambda_rgb >= 0 && cfg.map_loss.lambda_ssim >= 0 &&
              cfg.map_loss.lambda_depth >= 0,
          "map loss weights must be non-negative");
  require(cfg.map_loss.iterations >= 0, "map.iterations must be >= 0");
  require(cfg.density.tau_alpha > 0 && cfg.density.tau_alpha < 1,
          "density.tau_alpha must be in (0,1)");
  require(cfg.density.tau_s1 > 0, "density.tau_s1 must be positive");
  require(cfg.density.tau_s2 > 1, "density.tau_s2 must be > 1");
  require(cfg.density.initial_opacity > 0 && cfg.density.initial_opacity < 1,
          "density.initial_opacity must be in (0,1)");
  require(cfg.stride >= 1, "stride must be >= 1");
  require(cfg.keyframe_threshold_px > 0,
          "keyframe_threshold_px must be positive");
  require(cfg.final_ba_max_keyframes >= 2,
          "final_ba_max_keyframes must be >= 2");
  res_scale_halvings(cfg.res_scale);
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  PipelineConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key=value: " + line);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  validate_pipeline_config(cfg);
  return cfg;
}

Frame downscale_frame(const Frame& f, int halvings) {
  Frame out = f;
  for (int h = 0; h < halvings; ++h) {
    out.rgb = downsample_half(out.rgb);
    out.depth = downsample_half_depth(out.depth);
    if (out.semantic_mask) out.semantic_mask = downsample_half(*out.semantic_mask);
    Intrinsics& K = out.intrinsics;
    // A downsampled pixel center (x', y') averages originals around
    // (2x' + 0.5, 2y' + 0.5): fx halves, cx maps through the same shift.
    K.fx *= 0.5;
    K.fy *= 0.5;
    K.cx = (K.cx - 0.5) * 0.5;
    K.cy = (K.cy - 0.5) * 0.5;
    K.width = out.rgb.width;
    K.height = out.rgb.height;
  }
  return out;
}

MaskImage motion_mask_for(const Frame& cur, const Pose& cur_pose,
                          const std::vector<const Keyframe*>& sources,
                          const WarpConfig& cfg) {
  const MaskImage* sem =
      cur.semantic_mask ? &*cur.semantic_mask : nullptr;
  std::vector<MaskImage> pairwise;
  pairwise.reserve(sources.size());
  for (const Keyframe* kf : sources) {
    const Pose T_ji = cur_pose.inverse() * kf->pose;
    pairwise.push_back(warp_mask_pair(kf->frame.depth, cur.depth, T_ji,
                                      cur.intrinsics, cfg));
  }
  if (pairwise.empty()) {
    if (sem) return *sem;
    return MaskImage(cur.rgb.width, cur.rgb.height, 1);
  }
  return fuse_masks(pairwise, sem, cfg);
}

RenderOutput render_preview(const GaussianMap& map, const Pose& pose,
                            const Intrinsics& K) {
  RenderConfig rc;
  rc.keep_records = false;
  rc.normalized_depth = true;
  rc.num_threads = 4;
  return render(map, pose, K, rc);
}

void write_color_png(const std::string& path, const ColorImage& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      const Vec3 c = img.pixel(x, y);
      for (int ch = 0; ch < 3; ++ch)
        row[x][2 - ch] = static_cast<uint8_t>(
            std::lround(std::clamp(c[ch], 0.0, 1.0) * 255.0));
    }
  }
  if (!cv::imwrite(path, m, {cv::IMWRITE_PNG_COMPRESSION, 3}))
    throw std::runtime_error("cannot write " + path);
}

void write_mask_png(const std::string& path, const MaskImage& mask) {
  cv::Mat m(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      m.at<uint8_t>(y, x) = mask.at(x, y) == 0 ? 255 : 0;
  if (!cv::imwrite(path, m, {cv::IMWRITE_PNG_COMPRESSION, 3}))
    throw std::runtime_error("cannot write " + path);
}

namespace {

// Mapping backend: optimize_map jobs applied to the shared map, either
// inline (sequential mode) or on a worker thread consuming a snapshot queue.
class MappingBackend {
 public:
  MappingBackend(GaussianMap& map, const PipelineConfig& cfg,
                 std::vector<LossTraceEntry>& trace)
      : map_(map), cfg_(cfg), trace_(trace) {
    if (!cfg_.sequential)
      worker_ = std::thread([this] { run(); });
  }

  ~MappingBackend() { shutdown(); }

  void submit(std::vector<Keyframe> window, uint32_t window_oldest,
              bool new_viewpoint) {
    if (cfg_.sequential) {
      process(window, window_oldest, new_viewpoint);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(queue_mtx_);
      jobs_.push_back({std::move(window), window_oldest, new_viewpoint});
    }
    cv_.notify_one();
  }

  GaussianMap snapshot() {
    std::lock_guard<std::mutex> lk(map_mtx_);
    return map_;
  }

  // Waits for queued jobs, joins the worker, rethrows any backend error.
  void finish() {
    shutdown();
    if (error_) std::rethrow_exception(error_);
  }

 private:
  struct Job {
    std::vector<Keyframe> window;
    uint32_t window_oldest;
    bool new_viewpoint;
  };

  void shutdown() {
    if (worker_.joinable()) {
      {
        std::lock_guard<std::mutex> lk(queue_mtx_);
        done_ = true;
      }
      cv_.notify_one();
      worker_.join();
    }
  }

  void run() {
    for (;;) {
      Job job;
      {
        std::unique_lock<std::mutex> lk(queue_mtx_);
        cv_.wait(lk, [this] { return done_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      try {
        process(job.window, job.window_oldest, job.new_viewpoint);
      } catch (...) {
        error_ = std::current_exception();
        std::lock_guard<std::mutex> lk(queue_mtx_);
        done_ = true;
        jobs_.clear();
        return;
      }
    }
  }

  void process(const std::vector<Keyframe>& window, uint32_t window_oldest,
               bool new_viewpoint) {
    std::lock_guard<std::mutex> lk(map_mtx_);
    const Keyframe& newest = window.back();
    map_.update_observations(newest.pose, newest.frame.intrinsics);
    auto t = optimize_map(map_, window, cfg_.map_loss, &cfg_.density,
                          window_oldest, new_viewpoint);
    trace_.insert(trace_.end(), t.begin(), t.end());
  }

  GaussianMap& map_;
  const PipelineConfig& cfg_;
  std::vector<LossTraceEntry>& trace_;
  std::mutex map_mtx_, queue_mtx_;
  std::condition_variable cv_;
  std::deque<Job> jobs_;
  bool done_ = false;
  std::thread worker_;
  std::exception_ptr error_;
};

}  // namespace

SlamResult run_slam(const Sequence& seq, const PipelineConfig& cfg) {
  validate_pipeline_config(cfg);
  if (seq.frames.empty()) throw std::runtime_error("run_slam: empty sequence");

  const int halvings = res_scale_halvings(cfg.res_scale);
  std::vector<Frame> frames;
  for (size_t k = 0; k < seq.frames.size(); k += cfg.stride) {
    if (cfg.max_frames > 0 &&
        frames.size() >= static_cast<size_t>(cfg.max_frames))
      break;
    frames.push_back(downscale_frame(seq.frames[k], halvings));
    if (!cfg.use_motion_masks) frames.back().semantic_mask.reset();
  }
  const size_t n = frames.size();
  const Intrinsics K = frames.front().intrinsics;

  const bool dump = !cfg.out_dir.empty();
  if (dump) {
    fs::create_directories(cfg.out_dir + "/masks");
    fs::create_directories(cfg.out_dir + "/renders");
    fs::remove(cfg.out_dir + "/loss_trace.csv");
  }

  // Frame 0 bootstraps the map and the keyframe set at the identity pose.
  GaussianMap map;
  std::vector<LossTraceEntry> trace;
  std::vector<Keyframe> keyframes;
  std::vector<size_t> kf_frame_index;   // processed-frame index per keyframe
  std::vector<size_t> frame_ref_kf(n, 0);  // latest keyframe when tracked
  std::vector<Pose> poses(n);

  const WarpConfig& warp = cfg.warp;
  const size_t window_size = static_cast<size_t>(cfg.warp.window);

  auto mask_for = [&](size_t k, const Pose& pose) {
    if (!cfg.use_motion_masks)
      return MaskImage(K.width, K.height, 1);
    std::vector<const Keyframe*> sources;
    const size_t take = std::min(window_size - 1, keyframes.size());
    for (size_t i = keyframes.size() - take; i < keyframes.size(); ++i)
      sources.push_back(&keyframes[i]);
    return motion_mask_for(frames[k], pose, sources, warp);
  };

  poses[0] = Pose::Identity();
  MaskImage mask0 = mask_for(0, poses[0]);
  map = initialize_map(frames[0], poses[0], mask0, cfg.density);
  keyframes.push_back({frames[0], poses[0], mask0, 0});
  kf_frame_index.push_back(0);

  MappingBackend backend(map, cfg, trace);
  backend.submit({keyframes.back()}, 0, true);

  MaskImage prev_mask = mask0;
  if (dump) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s/masks/%.6f.png",
                  cfg.out_dir.c_str(), frames[0].timestamp);
    write_mask_png(name, mask0);
  }

  for (size_t k = 1; k < n; ++k) {
    Pose pose = poses[k - 1];
    try {
      pose = coarse_odometry(frames[k - 1], poses[k - 1], frames[k],
                             prev_mask, cfg.track)
                 .pose;
    } catch (const std::runtime_error& e) {
      std::fprintf(stderr, "frame %zu: coarse odometry failed (%s); "
                           "keeping previous pose\n", k, e.what());
    }

    const Keyframe& last_kf = keyframes.back();
    const bool insert =
        keyframe_select(last_kf.frame, last_kf.pose, last_kf.mask, pose,
                        cfg.keyframe_threshold_px);

    MaskImage mask = mask_for(k, pose);

    if (insert) {
      // Window BA over the recent keyframes plus the incoming frame.
      std::vector<BAView> views;
      const size_t take = std::min(window_size - 1, keyframes.size());
      for (size_t i = keyframes.size() - take; i < keyframes.size(); ++i)
        views.push_back({keyframes[i].frame, keyframes[i].pose,
                         keyframes[i].mask});
      views.push_back({frames[k], pose, mask});
      try {
        const BAResult ba = windowed_ba(views, cfg.ba);
        for (size_t i = 0; i < take; ++i) {
          const size_t ki = keyframes.size() - take + i;
          keyframes[ki].pose = ba.poses[i];
          poses[kf_frame_index[ki]] = ba.poses[i];
        }
        pose = ba.poses.back();
      } catch (const std::exception& e) {
        std::fprintf(stderr, "frame %zu: windowed BA failed (%s)\n", k,
                     e.what());
      }
    }

    const GaussianMap snap = backend.snapshot();
    const FineTrackResult ft =
        fine_track(snap, frames[k], pose, mask, cfg.track);
    pose = ft.pose;
    poses[k] = pose;
    frame_ref_kf[k] = keyframes.size() - 1;

    if (insert) {
      const bool new_viewpoint =
          view_overlap(last_kf.frame.depth, last_kf.pose, pose, K) < 0.90;
      keyframes.push_back({frames[k], pose, mask,
                           static_cast<uint32_t>(keyframes.size())});
      kf_frame_index.push_back(k);
      frame_ref_kf[k] = keyframes.size() - 1;
      const size_t wtake = std::min(window_size, keyframes.size());
      std::vector<Keyframe> window(keyframes.end() - wtake, keyframes.end());
      const uint32_t oldest = window.front().index;
      backend.submit(std::move(window), oldest, new_viewpoint);
      if (dump) {
        char name[96];
        std::snprintf(name, sizeof(name), "%s/masks/%.6f.png",
                      cfg.out_dir.c_str(), frames[k].timestamp);
        write_mask_png(name, mask);
      }
    }
    prev_mask = mask;

    if (dump && cfg.render_every > 0 && k % cfg.render_every == 0) {
      const RenderOutput ro = render_preview(backend.snapshot(), pose, K);
      char name[96];
      std::snprintf(name, sizeof(name), "%s/renders/frame_%06zu.png",
                    cfg.out_dir.c_str(), k);
      write_color_png(name, ro.color);
    }
  }

  backend.finish();

  // One full-graph BA pass over the keyframes, corrections propagated to the
  // in-between frames via their reference keyframe.
  const size_t ba_take = std::min(
      keyframes.size(), static_cast<size_t>(cfg.final_ba_max_keyframes));
  if (ba_take >= 2) {
    const size_t first = keyframes.size() - ba_take;
    std::vector<BAView> views;
    for (size_t i = first; i < keyframes.size(); ++i)
      views.push_back({keyframes[i].frame, keyframes[i].pose,
                       keyframes[i].mask});
    try {
      const BAResult ba = windowed_ba(views, cfg.ba);
      std::vector<Pose> delta(keyframes.size(), Pose::Identity());
      for (size_t i = first; i < keyframes.size(); ++i) {
        delta[i] = ba.poses[i - first] * keyframes[i].pose.inverse();
        keyframes[i].pose = ba.poses[i - first];
      }
      for (size_t k = 0; k < n; ++k) poses[k] = delta[frame_ref_kf[k]] * poses[k];
    } catch (const std::exception& e) {
      std::fprintf(stderr, "final BA failed (%s)\n", e.what());
    }
  }

  SlamResult result;
  result.map = std::move(map);
  result.n_keyframes = keyframes.size();
  result.n_frames = n;
  for (size_t k = 0; k < n; ++k)
    result.trajectory.push_back({frames[k].timestamp, poses[k]});
  if (!seq.groundtruth.empty()) {
    try {
      result.ate_report = ate(result.trajectory, seq.groundtruth);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "ATE evaluation failed (%s)\n", e.what());
    }
  }

  if (dump) {
    write_trajectory(cfg.out_dir + "/trajectory.txt", result.trajectory);
    append_loss_trace_csv(cfg.out_dir + "/loss_trace.csv", trace);
    save_checkpoint(result.map, cfg.out_dir + "/map.bin");
    if (result.ate_report) {
      std::ofstream rep(cfg.out_dir + "/ate.txt");
      rep << format_report(*result.ate_report);
    }
  }
  return result;
}

SlamResult run_slam(const PipelineConfig& cfg) {
  LoadConfig lc;
  lc.max_frames = cfg.max_frames > 0 ? cfg.max_frames * cfg.stride : -1;
  return run_slam(load_tum_sequence(cfg.dataset_dir, lc), cfg);
}

}  // namespace splat
