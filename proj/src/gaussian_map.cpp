#include "splatslam/gaussian_map.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "splatslam/kdtree.hpp"
#include "splatslam/renderer.hpp"
#include "splatslam/sh.hpp"

namespace splat {

namespace {

// Spatial hash for dart-throw rejection; cell size must be >= max radius so
// a +-1 cell ring covers every query.
class PointHash {
 public:
  explicit PointHash(double cell) : cell_(cell) {}

  bool has_neighbor(const Vec3& p, double r) const {
    const double r2 = r * r;
    const auto c = cell_of(p);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto it = cells_.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == cells_.end()) continue;
          for (const Vec3& q : it->second)
            if ((q - p).squaredNorm() < r2) return true;
        }
    return false;
  }

  void insert(const Vec3& p) {
    const auto c = cell_of(p);
    cells_[key(c[0], c[1], c[2])].push_back(p);
  }

 private:
  std::array<int64_t, 3> cell_of(const Vec3& p) const {
    return {static_cast<int64_t>(std::floor(p.x() / cell_)),
            static_cast<int64_t>(std::floor(p.y() / cell_)),
            static_cast<int64_t>(std::floor(p.z() / cell_))};
  }
  static uint64_t key(int64_t x, int64_t y, int64_t z) {
    return (static_cast<uint64_t>(x) * 73856093u) ^
           (static_cast<uint64_t>(y) * 19349669u) ^
           (static_cast<uint64_t>(z) * 83492791u);
  }
  double cell_;
  std::unordered_map<uint64_t, std::vector<Vec3>> cells_;
};

Gaussian make_gaussian(const Vec3& center, const Vec3& color, double scale,
                       double opacity, int sh_degree, uint32_t birth_kf) {
  Gaussian g;
  g.center = center;
  g.log_scale = Vec3::Constant(std::log(std::max(scale, 1e-4)));
  g.opacity_logit = logit(opacity);
  g.sh_coeffs = Eigen::Matrix3Xd::Zero(3, sh_basis_count(sh_degree));
  g.sh_coeffs.col(0) = (color - Vec3::Constant(0.5)) / kShC0;
  g.obs_count = 1;
  g.birth_keyframe = birth_kf;
  return g;
}

// Mean distance to the (up to) 3 nearest neighbors of each point, computed
// against `all`; queries at `points[i]` skip the identical entry.
std::vector<double> knn_mean_distances(const std::vector<Vec3>& points,
                                       const KdTree3& tree) {
  std::vector<double> out(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    const size_t k = std::min<size_t>(4, tree.size());
    const auto nn = tree.knearest(points[i], k);
    double sum = 0;
    int n = 0;
    for (const auto& [idx, d2] : nn) {
      if (d2 < 1e-18) continue;  // the point itself
      sum += std::sqrt(d2);
      if (++n == 3) break;
    }
    out[i] = n > 0 ? sum / n : 1e-3;
  }
  return out;
}

bool visible(const Gaussian& g, const Pose& pose_cw, const Intrinsics& K) {
  const Vec3 pc = pose_cw * g.center;
  const auto px = project(pc, K);
  return px && px->x() >= 0 && px->x() <= K.width - 1 && px->y() >= 0 &&
         px->y() <= K.height - 1;
}

}  // namespace

bool GaussianMap::all_finite() const {
  for (const auto& g : gaussians) {
    if (!g.center.allFinite() || !g.log_scale.allFinite() ||
        !std::isfinite(g.opacity_logit) || !g.sh_coeffs.allFinite() ||
        !g.rotation.coeffs().allFinite())
      return false;
  }
  return true;
}

double GaussianMap::scene_extent() const {
  if (gaussians.size() < 2) return 0.0;
  Vec3 lo = gaussians.front().center, hi = lo;
  for (const auto& g : gaussians) {
    lo = lo.cwiseMin(g.center);
    hi = hi.cwiseMax(g.center);
  }
  return (hi - lo).norm();
}

void GaussianMap::update_observations(const Pose& pose_wc,
                                      const Intrinsics& K) {
  const Pose pose_cw = pose_wc.inverse();
  for (auto& g : gaussians)
    if (visible(g, pose_cw, K)) ++g.obs_count;
}

double dynamic_insertion_radius(double color_grad_mag,
                                const DensityConfig& cfg) {
  const double r =
      cfg.base_radius / (1.0 + cfg.color_gradient_scale * color_grad_mag);
  return std::clamp(r, cfg.base_radius / 8.0, cfg.base_radius);
}

GaussianMap initialize_map(const Frame& frame, const Pose& pose,
                           const MaskImage& motion_mask,
                           const DensityConfig& cfg) {
  const GrayImage grad = color_gradient_magnitude(frame.rgb);

  std::vector<Vec3> centers;
  std::vector<Vec3> colors;
  PointHash hash(cfg.base_radius);
  size_t valid_static = 0;
  for (int y = 0; y < frame.depth.height; ++y) {
    for (int x = 0; x < frame.depth.width; ++x) {
      const double d = frame.depth.at(x, y);
      if (motion_mask.at(x, y) == 0 || d <= 0) continue;
      ++valid_static;
      const double r = 0.5 * dynamic_insertion_radius(grad.at(x, y), cfg);
      const Vec3 pw = pose * *backproject(Vec2(x, y), d, frame.intrinsics);
      if (hash.has_neighbor(pw, r)) continue;
      hash.insert(pw);
      centers.push_back(pw);
      colors.push_back(frame.rgb.pixel(x, y));
    }
  }
  if (valid_static < 4)
    throw std::runtime_error("initialize_map: fewer than 4 valid static pixels");

  const KdTree3 tree(centers);
  const auto mean_dist = knn_mean_distances(centers, tree);

  GaussianMap map;
  map.sh_degree = cfg.sh_degree;
  map.gaussians.reserve(centers.size());
  for (size_t i = 0; i < centers.size(); ++i)
    map.gaussians.push_back(make_gaussian(centers[i], colors[i], mean_dist[i],
                                          cfg.initial_opacity, cfg.sh_degree,
                                          0));
  map.bump();
  return map;
}

size_t adaptive_add(GaussianMap& map, const Frame& frame, const Pose& pose,
                    const MaskImage& motion_mask, const RenderOutput& render,
                    const DensityConfig& cfg, bool new_viewpoint,
                    uint32_t keyframe_index) {
  const GrayImage grad = color_gradient_magnitude(frame.rgb);

  std::vector<Vec3> existing;
  existing.reserve(map.size());
  for (const auto& g : map.gaussians) existing.push_back(g.center);
  const KdTree3 tree(existing);

  std::vector<Vec3> centers;
  std::vector<Vec3> colors;
  PointHash hash(cfg.base_radius);

  auto world_point = [&](int x, int y) {
    return pose * *backproject(Vec2(x, y), frame.depth.at(x, y),
                               frame.intrinsics);
  };

  // Stage a: uniform coverage of a newly observed viewpoint.
  if (new_viewpoint) {
    const int s = std::max(cfg.uniform_stride, 1);
    for (int cy = 0; cy < frame.depth.height; cy += s) {
      for (int cx = 0; cx < frame.depth.width; cx += s) {
        bool placed = false;
        for (int y = cy; y < std::min(cy + s, frame.depth.height) && !placed;
             ++y) {
          for (int x = cx; x < std::min(cx + s, frame.depth.width) && !placed;
               ++x) {
            if (motion_mask.at(x, y) == 0 || frame.depth.at(x, y) <= 0) continue;
            const Vec3 pw = world_point(x, y);
            hash.insert(pw);
            centers.push_back(pw);
            colors.push_back(frame.rgb.pixel(x, y));
            placed = true;
          }
        }
      }
    }
  }

  // Stage b: under-fitted pixels by accumulated opacity / depth residual.
  for (int y = 0; y < frame.depth.height; ++y) {
    for (int x = 0; x < frame.depth.width; ++x) {
      const double d = frame.depth.at(x, y);
      if (motion_mask.at(x, y) == 0 || d <= 0) continue;
      const bool low_opacity =
          render.opacity.at(x, y) < cfg.opacity_add_threshold;
      const bool depth_off = std::abs(render.depth.at(x, y) - d) >
                             cfg.depth_residual_add_threshold;
      if (!low_opacity && !depth_off) continue;
      const double r = dynamic_insertion_radius(grad.at(x, y), cfg);
      const Vec3 pw = world_point(x, y);
      if (hash.has_neighbor(pw, r)) continue;
      if (!existing.empty() && tree.nearest(pw).second < r * r) continue;
      hash.insert(pw);
      centers.push_back(pw);
      colors.push_back(frame.rgb.pixel(x, y));
    }
  }

  if (centers.empty()) return 0;

  // Density-based scale against the combined point set.
  std::vector<Vec3> all = existing;
  all.insert(all.end(), centers.begin(), centers.end());
  const KdTree3 all_tree(std::move(all));
  const auto mean_dist = knn_mean_distances(centers, all_tree);

  for (size_t i = 0; i < centers.size(); ++i)
    map.gaussians.push_back(make_gaussian(centers[i], colors[i], mean_dist[i],
                                          cfg.initial_opacity, map.sh_degree,
                                          keyframe_index));
  map.bump();
  return centers.size();
}

size_t prune(GaussianMap& map, const Pose& current_pose, const Intrinsics& K,
             uint32_t window_oldest_keyframe, const DensityConfig& cfg) {
  const Pose pose_cw = current_pose.inverse();
  const size_t before = map.size();
  std::erase_if(map.gaussians, [&](const Gaussian& g) {
    // Stage 1: threshold criteria, gated on visibility.
    if (visible(g, pose_cw, K)) {
      const Vec3 s = g.scale();
      const double smax = s.maxCoeff(), smin = s.minCoeff();
      if (g.opacity() < cfg.tau_alpha || smax > cfg.tau_s1 ||
          smax / smin > cfg.tau_s2)
        return true;
    }
    // Stage 2: insufficient observations after leaving the window.
    if (g.birth_keyframe < window_oldest_keyframe &&
        g.obs_count < static_cast<uint32_t>(cfg.min_obs_for_keep))
      return true;
    return false;
  });
  const size_t removed = before - map.size();
  if (removed > 0) map.bump();
  return removed;
}

double view_overlap(const GrayImage& prev_depth, const Pose& prev_pose,
                    const Pose& cur_pose, const Intrinsics& K) {
  const Pose rel = cur_pose.inverse() * prev_pose;  // prev cam -> cur cam
  size_t valid = 0, in_view = 0;
  for (int y = 0; y < prev_depth.height; ++y) {
    for (int x = 0; x < prev_depth.width; ++x) {
      const double d = prev_depth.at(x, y);
      if (d <= 0) continue;
      ++valid;
      const Vec3 pc = rel * *backproject(Vec2(x, y), d, K);
      const auto px = project(pc, K);
      if (px && px->x() >= 0 && px->x() <= K.width - 1 && px->y() >= 0 &&
          px->y() <= K.height - 1)
        ++in_view;
    }
  }
  return valid > 0 ? static_cast<double>(in_view) / valid : 0.0;
}

namespace {
constexpr char kMagic[4] = {'D', 'G', 'S', 'M'};
constexpr uint32_t kVersion = 1;

void put_f32(std::ostream& os, double v) {
  const float f = static_cast<float>(v);
  os.write(reinterpret_cast<const char*>(&f), sizeof(f));
}
double get_f32(std::istream& is) {
  float f = 0;
  is.read(reinterpret_cast<char*>(&f), sizeof(f));
  return f;
}
}  // namespace

void save_checkpoint(const GaussianMap& map, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kMagic, 4);
  const uint32_t version = kVersion;
  os.write(reinterpret_cast<const char*>(&version), 4);
  const uint64_t count = map.size();
  os.write(reinterpret_cast<const char*>(&count), 8);
  const uint32_t degree = static_cast<uint32_t>(map.sh_degree);
  os.write(reinterpret_cast<const char*>(&degree), 4);
  for (const auto& g : map.gaussians) {
    for (int i = 0; i < 3; ++i) put_f32(os, g.center[i]);
    put_f32(os, g.rotation.w());
    put_f32(os, g.rotation.x());
    put_f32(os, g.rotation.y());
    put_f32(os, g.rotation.z());
    for (int i = 0; i < 3; ++i) put_f32(os, g.log_scale[i]);
    put_f32(os, g.opacity_logit);
    for (int b = 0; b < g.sh_coeffs.cols(); ++b)
      for (int ch = 0; ch < 3; ++ch) put_f32(os, g.sh_coeffs(ch, b));
    put_f32(os, g.obs_count);
    put_f32(os, g.birth_keyframe);
  }
}

GaussianMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint32_t version = 0, degree = 0;
  uint64_t count = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&count), 8);
  is.read(reinterpret_cast<char*>(&degree), 4);
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version");
  GaussianMap map;
  map.sh_degree = static_cast<int>(degree);
  const int B = sh_basis_count(map.sh_degree);
  map.gaussians.resize(count);
  for (auto& g : map.gaussians) {
    for (int i = 0; i < 3; ++i) g.center[i] = get_f32(is);
    const double w = get_f32(is), x = get_f32(is), y = get_f32(is),
                 z = get_f32(is);
    g.rotation = Eigen::Quaterniond(w, x, y, z).normalized();
    for (int i = 0; i < 3; ++i) g.log_scale[i] = get_f32(is);
    g.opacity_logit = get_f32(is);
    g.sh_coeffs.resize(3, B);
    for (int b = 0; b < B; ++b)
      for (int ch = 0; ch < 3; ++ch) g.sh_coeffs(ch, b) = get_f32(is);
    g.obs_count = static_cast<uint32_t>(get_f32(is));
    g.birth_keyframe = static_cast<uint32_t>(get_f32(is));
  }
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  map.bump();
  return map;
}

}  // namespace splat
