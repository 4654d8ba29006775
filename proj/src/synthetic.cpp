#include "splatslam/synthetic.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "splatslam/renderer.hpp"
#include "splatslam/sh.hpp"

namespace splat {

namespace {

// Smooth world-position texture so direct odometry has gradients to bite on.
Vec3 wall_color(const Vec3& p) {
  return Vec3(0.5 + 0.30 * std::sin(3.1 * p.x() + 1.7 * p.y() + 2.3 * p.z()),
              0.5 + 0.28 * std::sin(2.3 * p.y() + 1.3 * p.z() + 0.8),
              0.5 + 0.26 * std::sin(1.9 * p.z() + 2.9 * p.x() + 2.1));
}

Gaussian surface_gaussian(const Vec3& pos, double scale, double opacity,
                          const Vec3& color) {
  Gaussian g;
  g.center = pos;
  g.log_scale = Vec3::Constant(std::log(scale));
  g.opacity_logit = logit(opacity);
  g.sh_coeffs = Eigen::Matrix3Xd::Zero(3, 1);
  g.sh_coeffs.col(0) =
      (color.cwiseMax(0.05).cwiseMin(0.95) - Vec3::Constant(0.5)) / kShC0;
  return g;
}

std::vector<Gaussian> make_sphere(const Vec3& center, double radius) {
  const int m = 200;
  const double spacing = radius * std::sqrt(4.0 * M_PI / m);
  std::vector<Gaussian> out;
  out.reserve(m);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < m; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / m;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    const Vec3 dir(r * std::cos(phi), r * std::sin(phi), z);
    const Vec3 col(0.75 + 0.15 * std::sin(7.0 * phi), 0.25, 0.2);
    out.push_back(
        surface_gaussian(center + radius * dir, 0.55 * spacing, 0.95, col));
  }
  return out;
}

Pose camera_pose(int k, double motion) {
  const double a = 0.08 * k * motion;
  Tangent6 d;
  d << 0.03 * std::sin(1.3 * a), 0.05 * std::sin(a), 0.02 * std::sin(0.7 * a),
      0.25 * std::sin(a), 0.12 * std::sin(2.0 * a + 0.7),
      0.18 * (1.0 - std::cos(a));
  return exp_se3(d);
}

// z-depth of the exit intersection of a ray from inside the box; the ray is
// o + t * dir with dir.z normalized out so t is the camera z-depth directly.
double box_exit_depth(const Vec3& o, const Vec3& dir, double half) {
  double t_exit = 1e300;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) continue;
    const double t1 = (-half - o[a]) / dir[a];
    const double t2 = (half - o[a]) / dir[a];
    t_exit = std::min(t_exit, std::max(t1, t2));
  }
  return t_exit;
}

// Analytic RGB-D frame: exact depths and a color that is a pure function of
// the world hit point (perfect photometric constancy between viewpoints).
void raycast_frame(const Pose& T_wc, const Intrinsics& K, double half,
                   bool sphere, const Vec3& sphere_c, double sphere_r,
                   ColorImage& rgb, GrayImage& depth) {
  rgb = ColorImage(K.width, K.height);
  depth = GrayImage(K.width, K.height);
  const Mat3 R = T_wc.rotation();
  const Vec3 o = T_wc.t;
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const Vec3 u((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      const Vec3 dir = R * u;  // dir per unit camera z-depth
      double t = box_exit_depth(o, dir, half);
      bool hit_sphere = false;
      if (sphere) {
        const Vec3 co = o - sphere_c;
        const double a = dir.squaredNorm(), b = 2.0 * co.dot(dir);
        const double c = co.squaredNorm() - sphere_r * sphere_r;
        const double disc = b * b - 4 * a * c;
        if (disc >= 0) {
          const double ts = (-b - std::sqrt(disc)) / (2 * a);
          if (ts > kNearPlane && ts < t) {
            t = ts;
            hit_sphere = true;
          }
        }
      }
      const Vec3 p = o + t * dir;
      Vec3 col;
      if (hit_sphere) {
        const Vec3 n = (p - sphere_c) / sphere_r;
        col = Vec3(0.75 + 0.15 * std::sin(6.0 * n.x() + 4.0 * n.y()),
                   0.25 + 0.1 * std::sin(5.0 * n.z()), 0.2);
      } else {
        col = wall_color(p);
      }
      rgb.set_pixel(x, y, col.cwiseMax(0.05).cwiseMin(0.95));
      depth.at(x, y) = t;
    }
  }
}

}  // namespace

MaskImage sphere_footprint_mask(const Vec3& center_w, double radius,
                                const Pose& T_wc, const Intrinsics& K,
                                const GrayImage* static_depth) {
  MaskImage fp(K.width, K.height, 1, MaskSource::Fused);
  const Pose T_cw = T_wc.inverse();
  const Vec3 c = T_cw * center_w;
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const Vec3 u((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      const double a = u.squaredNorm(), b = -2.0 * u.dot(c);
      const double cc = c.squaredNorm() - radius * radius;
      const double disc = b * b - 4 * a * cc;
      if (disc < 0) continue;
      const double t = (-b - std::sqrt(disc)) / (2 * a);
      if (t <= kNearPlane) continue;
      if (static_depth) {
        const double sd = static_depth->at(x, y);
        if (sd > 0 && t > sd) continue;  // behind the static surface
      }
      fp.at(x, y) = 0;
    }
  }
  return fp;
}

SyntheticScene generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_frames < 1)
    throw std::invalid_argument("generate_synthetic: n_frames < 1");
  if (cfg.room_gaussians < 500)
    throw std::invalid_argument("generate_synthetic: need >= 500 gaussians");

  std::mt19937 rng(cfg.seed);
  const double half = cfg.room_size / 2.0;
  std::uniform_real_distribution<double> uface(0.0, 1.0);
  std::uniform_real_distribution<double> upos(-half, half);
  std::normal_distribution<double> cjit(0.0, 0.04);
  // Off-plane jitter: coplanar gaussians have exactly tied camera depths, so
  // the blend order (and thus the rendered image) would reshuffle under an
  // infinitesimal pose change instead of varying smoothly.
  std::normal_distribution<double> njit(0.0, 0.02);

  SyntheticScene scene;
  scene.static_map.sh_degree = 0;
  const double spacing =
      cfg.room_size / std::sqrt(cfg.room_gaussians / 6.0);
  for (int i = 0; i < cfg.room_gaussians; ++i) {
    const int face = static_cast<int>(uface(rng) * 6.0) % 6;
    const double u = upos(rng), v = upos(rng);
    const double h = half + njit(rng);
    Vec3 p;
    switch (face) {
      case 0: p = Vec3(u, v, h); break;
      case 1: p = Vec3(u, v, -h); break;
      case 2: p = Vec3(h, u, v); break;
      case 3: p = Vec3(-h, u, v); break;
      case 4: p = Vec3(u, h, v); break;
      default: p = Vec3(u, -h, v); break;
    }
    const Vec3 col =
        wall_color(p) + Vec3(cjit(rng), cjit(rng), cjit(rng));
    scene.static_map.gaussians.push_back(
        surface_gaussian(p, 0.5 * spacing, 0.92, col));
  }

  scene.sphere_radius = cfg.sphere_radius;
  for (int k = 0; k < cfg.n_frames; ++k) {
    scene.trajectory.push_back(
        {k / 30.0, camera_pose(k, cfg.cam_motion)});
    scene.sphere_centers.push_back(cfg.sphere_start +
                                   static_cast<double>(k) * cfg.sphere_step);
  }
  for (size_t k = 1; k < scene.trajectory.size(); ++k) {
    const Pose& a = scene.trajectory[k - 1].pose;
    const Pose& b = scene.trajectory[k].pose;
    if ((a.t - b.t).norm() < 1e-12 && a.q.angularDistance(b.q) < 1e-12)
      throw std::invalid_argument(
          "generate_synthetic: degenerate trajectory (repeated poses)");
  }

  RenderConfig rc;
  rc.normalized_depth = true;
  rc.keep_records = false;
  rc.num_threads = 4;
  std::normal_distribution<double> dnoise(0.0, cfg.depth_noise_sigma);
  std::normal_distribution<double> cnoise(0.0, cfg.rgb_noise_sigma);

  for (int k = 0; k < cfg.n_frames; ++k) {
    const Pose& pose = scene.trajectory[k].pose;
    Frame f;
    f.timestamp = scene.trajectory[k].timestamp;
    f.intrinsics = cfg.intrinsics;
    if (cfg.raycast_frames) {
      raycast_frame(pose, cfg.intrinsics, half, cfg.moving_sphere,
                    scene.sphere_centers[k], cfg.sphere_radius, f.rgb,
                    f.depth);
    } else {
      GaussianMap frame_map = scene.static_map;
      if (cfg.moving_sphere)
        for (Gaussian& g : make_sphere(scene.sphere_centers[k],
                                       cfg.sphere_radius))
          frame_map.gaussians.push_back(std::move(g));
      const RenderOutput out = render(frame_map, pose, cfg.intrinsics, rc);
      f.rgb = out.color;
      f.depth = GrayImage(cfg.intrinsics.width, cfg.intrinsics.height);
      for (size_t i = 0; i < f.depth.size(); ++i)
        f.depth.data[i] =
            out.opacity.data[i] > 0.5 ? out.depth.data[i] : 0.0;  // hole
    }
    if (cfg.depth_noise_sigma > 0)
      for (double& v : f.depth.data)
        if (v > 0) v = std::max(0.0, v + dnoise(rng));
    if (cfg.rgb_noise_sigma > 0)
      for (double& v : f.rgb.data)
        v = std::clamp(v + cnoise(rng), 0.0, 1.0);

    GrayImage static_depth;
    if (cfg.moving_sphere) {
      if (cfg.raycast_frames) {
        ColorImage unused;
        raycast_frame(pose, cfg.intrinsics, half, false, Vec3::Zero(), 0.0,
                      unused, static_depth);
      } else {
        const RenderOutput so =
            render(scene.static_map, pose, cfg.intrinsics, rc);
        static_depth = GrayImage(cfg.intrinsics.width, cfg.intrinsics.height);
        for (size_t i = 0; i < static_depth.size(); ++i)
          static_depth.data[i] =
              so.opacity.data[i] > 0.5 ? so.depth.data[i] : 0.0;
      }
      scene.dynamic_footprints.push_back(
          sphere_footprint_mask(scene.sphere_centers[k], cfg.sphere_radius,
                                pose, cfg.intrinsics, &static_depth));
    } else {
      scene.dynamic_footprints.emplace_back(cfg.intrinsics.width,
                                            cfg.intrinsics.height, 1);
    }
    scene.frames.push_back(std::move(f));
  }
  return scene;
}

}  // namespace splat
