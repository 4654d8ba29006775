#include "splatslam/mapping.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "splatslam/ssim.hpp"

namespace splat {

bool keyframe_select(const Frame& prev, const Pose& prev_pose,
                     const MaskImage& prev_mask, const Pose& cur_pose,
                     double threshold_px) {
  const Pose T_cp = cur_pose.inverse() * prev_pose;
  const Intrinsics& K = prev.intrinsics;
  double sum = 0;
  size_t n = 0;
  for (int y = 0; y < prev.depth.height; y += 2) {
    for (int x = 0; x < prev.depth.width; x += 2) {
      const double d = prev.depth.at(x, y);
      if (d <= 0 || prev_mask.at(x, y) == 0) continue;
      const auto pt = backproject(Vec2(x, y), d, K);
      if (!pt) continue;
      const auto px = project(T_cp * (*pt), K);
      if (!px) continue;  // behind the camera: skip rather than guess
      sum += (*px - Vec2(x, y)).norm();
      ++n;
    }
  }
  if (n == 0) return true;  // nothing usable: insert conservatively
  return sum / static_cast<double>(n) > threshold_px;
}

MappingLosses mapping_losses(const RenderOutput& render, const Frame& frame,
                             const MaskImage& mask, const MapLossConfig& cfg,
                             ColorImage* grad_color, GrayImage* grad_depth) {
  const int W = frame.rgb.width, H = frame.rgb.height;
  if (render.color.width != W || render.color.height != H ||
      mask.width != W || mask.height != H)
    throw std::invalid_argument("mapping_losses: dimension mismatch");

  MappingLosses out;
  for (uint8_t v : mask.data) out.n_masked += v;
  if (out.n_masked == 0)
    throw std::runtime_error("mapping_losses: no static pixels in view");

  if (grad_color) *grad_color = ColorImage(W, H);
  if (grad_depth) *grad_depth = GrayImage(W, H);

  // Dynamic pixels replaced by the target: zero dissimilarity, zero grad.
  ColorImage masked_render = render.color;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (mask.at(x, y) == 0) masked_render.set_pixel(x, y, frame.rgb.pixel(x, y));

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (mask.at(x, y) == 1 && frame.depth.at(x, y) > 0) ++out.n_masked_depth;

  const double Minv = 1.0 / static_cast<double>(out.n_masked);
  const double Ndinv =
      out.n_masked_depth > 0 ? 1.0 / static_cast<double>(out.n_masked_depth)
                             : 0.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (mask.at(x, y) == 0) continue;
      const Vec3 dc = render.color.pixel(x, y) - frame.rgb.pixel(x, y);
      out.rgb += dc.squaredNorm() / 3.0 * Minv;
      if (grad_color)
        grad_color->set_pixel(x, y, cfg.lambda_rgb * 2.0 / 3.0 * Minv * dc);
      const double d = frame.depth.at(x, y);
      if (d > 0) {
        const double dd = render.depth.at(x, y) - d;
        out.depth += dd * dd * Ndinv;
        if (grad_depth)
          grad_depth->at(x, y) = cfg.lambda_depth * 2.0 * Ndinv * dd;
      }
    }
  }

  ColorImage ssim_grad;
  const double s = ssim(masked_render, frame.rgb,
                        grad_color ? &ssim_grad : nullptr);
  out.ssim = 1.0 - s;
  if (grad_color) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        if (mask.at(x, y) == 0) continue;
        const Vec3 g = grad_color->pixel(x, y) -
                       cfg.lambda_ssim * ssim_grad.pixel(x, y);
        grad_color->set_pixel(x, y, g);
      }
    }
  }

  out.total = cfg.lambda_rgb * out.rgb + cfg.lambda_ssim * out.ssim +
              cfg.lambda_depth * out.depth;
  return out;
}

namespace {

struct AdamState {
  std::vector<Vec3> m_center, v_center, m_rot, v_rot, m_scale, v_scale;
  std::vector<double> m_op, v_op;
  std::vector<Eigen::Matrix3Xd> m_sh, v_sh;
  int t = 0;

  void init(const GaussianMap& map) {
    const size_t n = map.size();
    const int B = map.empty() ? 1 : static_cast<int>(
                                        map.gaussians[0].sh_coeffs.cols());
    m_center.assign(n, Vec3::Zero());
    v_center.assign(n, Vec3::Zero());
    m_rot.assign(n, Vec3::Zero());
    v_rot.assign(n, Vec3::Zero());
    m_scale.assign(n, Vec3::Zero());
    v_scale.assign(n, Vec3::Zero());
    m_op.assign(n, 0.0);
    v_op.assign(n, 0.0);
    m_sh.assign(n, Eigen::Matrix3Xd::Zero(3, B));
    v_sh.assign(n, Eigen::Matrix3Xd::Zero(3, B));
    t = 0;
  }
};

constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

double adam_step(double g, double& m, double& v, double bc1, double bc2) {
  m = kBeta1 * m + (1 - kBeta1) * g;
  v = kBeta2 * v + (1 - kBeta2) * g * g;
  return (m / bc1) / (std::sqrt(v / bc2) + kEps);
}

}  // namespace

std::vector<LossTraceEntry> optimize_map(GaussianMap& map,
                                         const std::vector<Keyframe>& window,
                                         const MapLossConfig& cfg,
                                         const DensityConfig* density,
                                         uint32_t window_oldest,
                                         bool new_viewpoint) {
  if (window.empty())
    throw std::invalid_argument("optimize_map: empty keyframe window");

  RenderConfig rc = cfg.render;
  rc.keep_records = true;
  // Sensor depth measures the surface: compare against the opacity-normalized
  // blend, not the raw one, which is biased by (1 - O) toward zero.
  rc.normalized_depth = true;

  AdamState adam;
  adam.init(map);
  const double extent = std::max(map.scene_extent(), 1.0);
  double lr_mult = 1.0;

  std::vector<LossTraceEntry> trace;
  for (int it = 0; it < cfg.iterations; ++it) {
    const Keyframe& kf = window[it % window.size()];
    bool applied = false;
    for (int attempt = 0; attempt < 2 && !applied; ++attempt) {
      const RenderOutput out = render(map, kf.pose, kf.frame.intrinsics, rc);
      ColorImage gc;
      GrayImage gd;
      const MappingLosses losses =
          mapping_losses(out, kf.frame, kf.mask, cfg, &gc, &gd);
      const MapGradients mg = render_backward_map(out, gc, gd, map);
      if (!std::isfinite(losses.total) || !mg.all_finite()) {
        lr_mult *= 0.5;  // halve and retry this iteration once
        if (attempt == 1)
          throw std::runtime_error(
              "optimize_map: non-finite gradients after learning-rate backoff");
        continue;
      }
      // Adam normalizes away gradient magnitude, so pure roundoff noise at
      // an exact fixed point would still produce finite steps; dead-band it.
      double gmax = 0;
      for (size_t i = 0; i < map.size(); ++i) {
        gmax = std::max({gmax, mg.center[i].lpNorm<Eigen::Infinity>(),
                         mg.rotation[i].lpNorm<Eigen::Infinity>(),
                         mg.log_scale[i].lpNorm<Eigen::Infinity>(),
                         std::abs(mg.opacity_logit[i]),
                         mg.sh[i].lpNorm<Eigen::Infinity>()});
      }
      if (gmax < 1e-10) {
        trace.push_back({kf.index, it, losses, map.size()});
        applied = true;
        continue;
      }
      ++adam.t;
      const double bc1 = 1.0 - std::pow(kBeta1, adam.t);
      const double bc2 = 1.0 - std::pow(kBeta2, adam.t);
      for (size_t i = 0; i < map.size(); ++i) {
        Gaussian& g = map.gaussians[i];
        Vec3 rot_step;
        for (int k = 0; k < 3; ++k) {
          g.center[k] -= lr_mult * cfg.lr_center * extent *
                         adam_step(mg.center[i][k], adam.m_center[i][k],
                                   adam.v_center[i][k], bc1, bc2);
          rot_step[k] = lr_mult * cfg.lr_rotation *
                        adam_step(mg.rotation[i][k], adam.m_rot[i][k],
                                  adam.v_rot[i][k], bc1, bc2);
          g.log_scale[k] -= lr_mult * cfg.lr_scale *
                            adam_step(mg.log_scale[i][k], adam.m_scale[i][k],
                                      adam.v_scale[i][k], bc1, bc2);
        }
        if (rot_step.norm() > 0) {
          g.rotation = g.rotation * Eigen::Quaterniond(exp_so3(-rot_step));
          g.rotation.normalize();
        }
        g.opacity_logit -= lr_mult * cfg.lr_opacity *
                           adam_step(mg.opacity_logit[i], adam.m_op[i],
                                     adam.v_op[i], bc1, bc2);
        for (int r = 0; r < 3; ++r)
          for (int b = 0; b < g.sh_coeffs.cols(); ++b)
            g.sh_coeffs(r, b) -= lr_mult * cfg.lr_color *
                                 adam_step(mg.sh[i](r, b), adam.m_sh[i](r, b),
                                           adam.v_sh[i](r, b), bc1, bc2);
      }
      map.bump();
      trace.push_back({kf.index, it, losses, map.size()});
      applied = true;
    }
  }

  if (density) {
    const Keyframe& newest = window.back();
    prune(map, newest.pose, newest.frame.intrinsics, window_oldest, *density);
    RenderConfig drc = cfg.render;
    drc.keep_records = false;
    const RenderOutput out =
        render(map, newest.pose, newest.frame.intrinsics, drc);
    adaptive_add(map, newest.frame, newest.pose, newest.mask, out, *density,
                 new_viewpoint, newest.index);
  }
  return trace;
}

void append_loss_trace_csv(const std::string& path,
                           const std::vector<LossTraceEntry>& trace) {
  const bool fresh = !std::ifstream(path).good();
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open loss trace: " + path);
  if (fresh)
    out << "keyframe_index,iteration,l_rgb,l_ssim,l_depth,l_mapping,"
           "gaussian_count\n";
  char buf[192];
  for (const LossTraceEntry& e : trace) {
    std::snprintf(buf, sizeof(buf), "%u,%d,%.8g,%.8g,%.8g,%.8g,%zu\n",
                  e.keyframe_index, e.iteration, e.losses.rgb, e.losses.ssim,
                  e.losses.depth, e.losses.total, e.gaussian_count);
    out << buf;
  }
}

}  // namespace splat
