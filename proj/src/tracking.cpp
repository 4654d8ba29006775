#include "splatslam/tracking.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace splat {

namespace {

struct PyramidLevel {
  GrayImage intensity, depth, gx, gy;
  MaskImage mask;
  Intrinsics K;
};

std::vector<PyramidLevel> build_pyramid(const Frame& f, const MaskImage& mask,
                                        int levels) {
  std::vector<PyramidLevel> pyr(levels);
  pyr[0].intensity = to_gray(f.rgb);
  pyr[0].depth = f.depth;
  pyr[0].mask = mask;
  pyr[0].K = f.intrinsics;
  for (int l = 1; l < levels; ++l) {
    pyr[l].intensity = downsample_half(pyr[l - 1].intensity);
    pyr[l].depth = downsample_half_depth(pyr[l - 1].depth);
    pyr[l].mask = downsample_half(pyr[l - 1].mask);
    pyr[l].K = pyr[l - 1].K.scaled(0.5);
  }
  for (auto& lv : pyr) image_gradients(lv.intensity, lv.gx, lv.gy);
  return pyr;
}

// Surface normal in the camera frame from central depth differences.
// Returns false near borders or invalid depth.
bool surface_normal(const GrayImage& depth, const Intrinsics& K, int x, int y,
                    Vec3& n) {
  if (x < 1 || y < 1 || x >= depth.width - 1 || y >= depth.height - 1)
    return false;
  const double dl = depth.at(x - 1, y), dr = depth.at(x + 1, y);
  const double du = depth.at(x, y - 1), dd = depth.at(x, y + 1);
  if (dl <= 0 || dr <= 0 || du <= 0 || dd <= 0) return false;
  const Vec3 px = *backproject(Vec2(x + 1, y), dr, K) -
                  *backproject(Vec2(x - 1, y), dl, K);
  const Vec3 py = *backproject(Vec2(x, y + 1), dd, K) -
                  *backproject(Vec2(x, y - 1), du, K);
  n = px.cross(py);
  const double len = n.norm();
  if (len < 1e-12) return false;
  n /= len;
  return true;
}

double huber_weight(double r, double width) {
  const double a = std::abs(r);
  return a <= width ? 1.0 : width / a;
}

// One Gauss-Newton solve of the direct residuals at a single level.
// T_cp maps prev-camera points into the cur camera.
void solve_level(const PyramidLevel& prev, const PyramidLevel& cur, Pose& T_cp,
                 const TrackConfig& cfg, double* final_residual) {
  for (int it = 0; it < cfg.coarse_iterations; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Tangent6 b = Tangent6::Zero();
    double energy = 0;
    size_t n_res = 0;

    for (int y = 0; y < prev.depth.height; ++y) {
      for (int x = 0; x < prev.depth.width; ++x) {
        const double d = prev.depth.at(x, y);
        if (d <= 0 || prev.mask.at(x, y) == 0) continue;
        const Vec3 pc = T_cp * *backproject(Vec2(x, y), d, prev.K);
        const auto px = project(pc, cur.K);
        if (!px || px->x() < 1 || px->x() > cur.K.width - 2 || px->y() < 1 ||
            px->y() > cur.K.height - 2)
          continue;
        const auto Jpi = *projection_jacobian(pc, cur.K);
        // Left-multiplicative increment: p' ~= p + omega x p + v.
        Eigen::Matrix<double, 3, 6> Jp;
        Jp.leftCols<3>() = -skew(pc);
        Jp.rightCols<3>() = Mat3::Identity();

        // Photometric term.
        {
          const double r = sample_bilinear(cur.intensity, px->x(), px->y()) -
                           prev.intensity.at(x, y);
          const Vec2 gI(sample_bilinear(cur.gx, px->x(), px->y()),
                        sample_bilinear(cur.gy, px->x(), px->y()));
          const Eigen::Matrix<double, 1, 6> J = gI.transpose() * Jpi * Jp;
          const double w =
              cfg.lambda_rgb * huber_weight(r, cfg.huber_intensity);
          H += w * J.transpose() * J;
          b += w * r * J.transpose();
          energy += w * r * r;
          ++n_res;
        }

        // Point-to-plane depth term with projective association.
        const int cxp = static_cast<int>(std::lround(px->x()));
        const int cyp = static_cast<int>(std::lround(px->y()));
        const double dq = cur.depth.at(cxp, cyp);
        Vec3 n;
        if (dq > 0 && surface_normal(cur.depth, cur.K, cxp, cyp, n)) {
          const Vec3 q = *backproject(Vec2(cxp, cyp), dq, cur.K);
          const double r = n.dot(pc - q);
          const Eigen::Matrix<double, 1, 6> J = n.transpose() * Jp;
          const double w =
              cfg.lambda_depth * huber_weight(r, cfg.huber_depth);
          H += w * J.transpose() * J;
          b += w * r * J.transpose();
          energy += w * r * r;
          ++n_res;
        }
      }
    }
    if (final_residual)
      *final_residual = n_res > 0 ? energy / static_cast<double>(n_res) : 0.0;
    if (n_res < 12) return;

    H.diagonal().array() += 1e-9;  // guard rank deficiency from flat patches
    const Tangent6 delta = H.ldlt().solve(-b);
    if (!delta.allFinite()) return;
    T_cp = exp_se3(delta) * T_cp;
    if (delta.norm() < 1e-10) return;
  }
}

}  // namespace

CoarseResult coarse_odometry(const Frame& prev, const Pose& prev_pose,
                             const Frame& cur, const MaskImage& mask_prev,
                             const TrackConfig& cfg) {
  size_t usable = 0;
  for (int y = 0; y < prev.depth.height; ++y)
    for (int x = 0; x < prev.depth.width; ++x)
      if (prev.depth.at(x, y) > 0 && mask_prev.at(x, y) == 1) ++usable;
  const size_t total = prev.depth.size();
  if (usable < cfg.min_usable_fraction * static_cast<double>(total))
    throw std::runtime_error(
        "coarse_odometry: fewer than " +
        std::to_string(static_cast<int>(cfg.min_usable_fraction * 100)) +
        "% usable static pixels");

  const auto prev_pyr = build_pyramid(prev, mask_prev, cfg.pyramid_levels);
  const auto cur_pyr =
      build_pyramid(cur, MaskImage(cur.rgb.width, cur.rgb.height, 1),
                    cfg.pyramid_levels);

  Pose T_cp = Pose::Identity();  // prev cam -> cur cam
  double residual = 0;
  for (int l = cfg.pyramid_levels - 1; l >= 0; --l)
    solve_level(prev_pyr[l], cur_pyr[l], T_cp, cfg, &residual);

  CoarseResult out;
  out.pose = prev_pose * T_cp.inverse();
  out.converged = true;
  out.final_residual = residual;
  out.usable_pixels = usable;
  return out;
}

namespace {

struct Correspondence {
  int i, j;        // source and target view indices
  Vec3 x_cam_i;    // source-camera 3D point (fixed)
  Vec2 target;     // refined correspondence p* in j, pixels
  double w;        // photometric confidence, 0 under the target mask
};

double ba_energy(const std::vector<Correspondence>& corr,
                 const std::vector<Pose>& poses, const Intrinsics& K,
                 const BAConfig& cfg) {
  double e = 0;
  for (const auto& c : corr) {
    if (c.w <= 0) continue;
    const Vec3 pj = poses[c.j].inverse() * (poses[c.i] * c.x_cam_i);
    const auto px = project(pj, K);
    if (!px) continue;
    const double r = (c.target - *px).norm();
    // Huber composite loss.
    e += c.w * (r <= cfg.huber_px ? r * r
                                  : cfg.huber_px * (2.0 * r - cfg.huber_px));
  }
  return e;
}

}  // namespace

BAResult windowed_ba(const std::vector<BAView>& views, const BAConfig& cfg) {
  if (views.size() < 2)
    throw std::invalid_argument("windowed_ba: need at least 2 views");
  const Intrinsics& K = views[0].frame.intrinsics;
  const int n = static_cast<int>(views.size());

  const int margin = cfg.patch_half + cfg.search_radius + 1;
  std::vector<Correspondence> corr;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const Pose T_ji = views[j].pose.inverse() * views[i].pose;
      for (int y = cfg.patch_half; y < K.height - cfg.patch_half;
           y += cfg.stride) {
        for (int x = cfg.patch_half; x < K.width - cfg.patch_half;
             x += cfg.stride) {
          const double d = views[i].frame.depth.at(x, y);
          if (d <= 0 || views[i].mask.at(x, y) == 0) continue;
          const Vec3 xc = *backproject(Vec2(x, y), d, K);
          const auto px = project(T_ji * xc, K);
          if (!px || px->x() < margin || px->x() > K.width - 1 - margin ||
              px->y() < margin || px->y() > K.height - 1 - margin)
            continue;
          // Photometric refinement of the depth-warp prediction with a
          // depth-aware warped color patch: each patch pixel is warped
          // through its own depth, so on slanted surfaces the SSD minimum
          // sits at the true center match instead of the mean patch
          // disparity. Color (not intensity) matching keeps the SSD surface
          // 2-D conditioned where a single channel is locally 1-D.
          std::vector<Vec2> wpos;
          std::vector<Vec3> sval;
          wpos.reserve((2 * cfg.patch_half + 1) * (2 * cfg.patch_half + 1));
          sval.reserve(wpos.capacity());
          bool patch_ok = true;
          for (int dy = -cfg.patch_half; dy <= cfg.patch_half && patch_ok;
               ++dy)
            for (int dx = -cfg.patch_half; dx <= cfg.patch_half; ++dx) {
              const double dp = views[i].frame.depth.at(x + dx, y + dy);
              if (dp <= 0) {
                patch_ok = false;
                break;
              }
              const auto q =
                  project(T_ji * *backproject(Vec2(x + dx, y + dy), dp, K),
                          K);
              if (!q || q->x() < cfg.search_radius + 1 ||
                  q->x() > K.width - 2 - cfg.search_radius ||
                  q->y() < cfg.search_radius + 1 ||
                  q->y() > K.height - 2 - cfg.search_radius) {
                patch_ok = false;
                break;
              }
              wpos.push_back(*q);
              sval.push_back(views[i].frame.rgb.pixel(x + dx, y + dy));
            }
          if (!patch_ok) continue;
          const ColorImage& rgb_j = views[j].frame.rgb;
          const auto ssd_at = [&](double ox, double oy) {
            double s = 0;
            for (size_t t = 0; t < wpos.size(); ++t)
              s += (sample_bilinear(rgb_j, wpos[t].x() + ox,
                                    wpos[t].y() + oy) -
                    sval[t])
                       .squaredNorm();
            return s;
          };
          int best_dx = 0, best_dy = 0;
          double best = 1e300;
          for (int dy = -cfg.search_radius; dy <= cfg.search_radius; ++dy)
            for (int dx = -cfg.search_radius; dx <= cfg.search_radius; ++dx) {
              const double s = ssd_at(dx, dy);
              if (s < best) {
                best = s;
                best_dx = dx;
                best_dy = dy;
              }
            }
          // Drop matches pinned to the search boundary.
          if (std::abs(best_dx) == cfg.search_radius ||
              std::abs(best_dy) == cfg.search_radius)
            continue;
          const double l = ssd_at(best_dx - 1, best_dy);
          const double r = ssd_at(best_dx + 1, best_dy);
          const double u = ssd_at(best_dx, best_dy - 1);
          const double dn = ssd_at(best_dx, best_dy + 1);
          const double hxx = l - 2 * best + r;
          const double hyy = u - 2 * best + dn;
          const double hxy = 0.25 * (ssd_at(best_dx + 1, best_dy + 1) +
                                     ssd_at(best_dx - 1, best_dy - 1) -
                                     ssd_at(best_dx + 1, best_dy - 1) -
                                     ssd_at(best_dx - 1, best_dy + 1));
          // Aperture gate: both principal curvatures of the SSD surface must
          // be positive, else the along-valley component is unconstrained.
          const double tr = hxx + hyy;
          const double det = hxx * hyy - hxy * hxy;
          const double min_eig =
              0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4 * det)));
          if (min_eig < cfg.min_curvature) continue;
          // Subpixel 2-D Newton step on the sampled SSD quadric; the cross
          // term matters because the valleys run diagonally.
          const Vec2 g(0.5 * (r - l), 0.5 * (dn - u));
          Eigen::Matrix2d Hs;
          Hs << hxx, hxy, hxy, hyy;
          const Vec2 sub = (-Hs.inverse() * g)
                               .cwiseMax(Vec2::Constant(-0.75))
                               .cwiseMin(Vec2::Constant(0.75));
          const Vec2 target = *px + Vec2(best_dx, best_dy) + sub;
          const double di =
              (views[i].frame.rgb.pixel(x, y) -
               sample_bilinear(rgb_j, target.x(), target.y()))
                  .norm();
          double w = std::exp(-di * di /
                              (cfg.sigma_intensity * cfg.sigma_intensity));
          const int mx = static_cast<int>(std::lround(target.x()));
          const int my = static_cast<int>(std::lround(target.y()));
          if (views[j].mask.at(mx, my) == 0) w = 0.0;
          if (w > 0) corr.push_back({i, j, xc, target, w});
        }
      }
    }
  }

  BAResult out;
  out.poses.resize(views.size());
  for (int i = 0; i < n; ++i) out.poses[i] = views[i].pose;
  out.initial_energy = ba_energy(corr, out.poses, K, cfg);
  out.final_energy = out.initial_energy;
  if (corr.empty()) {
    out.diagnostic = "no usable correspondences";
    return out;
  }

  const int dof = 6 * (n - 1);  // first pose gauge-fixed
  double lm = 1e-6;
  double energy = out.initial_energy;
  for (int it = 0; it < cfg.iterations; ++it) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dof, dof);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dof);
    for (const auto& c : corr) {
      if (c.w <= 0) continue;
      const Vec3 xw = out.poses[c.i] * c.x_cam_i;
      const Pose T_jw = out.poses[c.j].inverse();
      const Vec3 pj = T_jw * xw;
      const auto px = project(pj, K);
      if (!px) continue;
      const auto Jpi = *projection_jacobian(pj, K);
      const Vec2 r = c.target - *px;
      const double rn = r.norm();
      const double w = c.w * (rn <= cfg.huber_px ? 1.0 : cfg.huber_px / rn);

      const Mat3 R_jw = T_jw.rotation();
      Eigen::Matrix<double, 3, 6> Jw;  // d xw / d delta (left-mult)
      Jw.leftCols<3>() = -skew(xw);
      Jw.rightCols<3>() = Mat3::Identity();
      // dr/ddelta_i = -Jpi R_jw Jw; dr/ddelta_j = +Jpi R_jw Jw.
      const Eigen::Matrix<double, 2, 6> Ji = -Jpi * R_jw * Jw;

      auto add_block = [&](int view, const Eigen::Matrix<double, 2, 6>& J) {
        if (view == 0) return;
        const int o = 6 * (view - 1);
        H.block<6, 6>(o, o) += w * J.transpose() * J;
        b.segment<6>(o) += w * J.transpose() * r;
      };
      add_block(c.i, Ji);
      add_block(c.j, -Ji);
      if (c.i != 0 && c.j != 0) {
        const int oi = 6 * (c.i - 1), oj = 6 * (c.j - 1);
        const Eigen::Matrix<double, 6, 6> X =
            w * Ji.transpose() * (-Ji);
        H.block<6, 6>(oi, oj) += X;
        H.block<6, 6>(oj, oi) += X.transpose();
      }
    }

    bool accepted = false;
    for (int attempt = 0; attempt < 6 && !accepted; ++attempt) {
      Eigen::MatrixXd Hd = H;
      Hd.diagonal() *= 1.0 + lm;
      Hd.diagonal().array() += 1e-12;
      const Eigen::VectorXd delta = Hd.ldlt().solve(-b);
      if (!delta.allFinite()) {
        out.diagnostic = "singular normal equations";
        return out;
      }
      std::vector<Pose> trial = out.poses;
      for (int v = 1; v < n; ++v)
        trial[v] = exp_se3(delta.segment<6>(6 * (v - 1))) * trial[v];
      const double e = ba_energy(corr, trial, K, cfg);
      if (e <= energy) {
        out.poses = std::move(trial);
        energy = e;
        lm = std::max(lm * 0.5, 1e-9);
        accepted = true;
        out.updated = true;
      } else {
        lm *= 10.0;
      }
    }
    if (!accepted) break;
  }
  out.final_energy = energy;
  return out;
}

MaskImage reliability_mask(const RenderOutput& render, double tau_track) {
  MaskImage m(render.opacity.width, render.opacity.height, 0,
              MaskSource::Fused);
  for (size_t i = 0; i < render.opacity.data.size(); ++i)
    m.data[i] = render.opacity.data[i] > tau_track ? 1 : 0;
  return m;
}

namespace {

// Masked tracking loss and its gradient images (Eq. 10 shape: rgb + depth).
double fine_loss(const RenderOutput& render, const Frame& frame,
                 const MaskImage& gate, const TrackConfig& cfg,
                 size_t n_gated, ColorImage* gc, GrayImage* gd) {
  const int W = frame.rgb.width, H = frame.rgb.height;
  size_t n_depth = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (gate.at(x, y) == 1 && frame.depth.at(x, y) > 0) ++n_depth;
  const double Minv = n_gated > 0 ? 1.0 / static_cast<double>(n_gated) : 0.0;
  const double Ninv = n_depth > 0 ? 1.0 / static_cast<double>(n_depth) : 0.0;
  if (gc) *gc = ColorImage(W, H);
  if (gd) *gd = GrayImage(W, H);
  double l_rgb = 0, l_depth = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (gate.at(x, y) == 0) continue;
      const Vec3 dc = render.color.pixel(x, y) - frame.rgb.pixel(x, y);
      l_rgb += dc.squaredNorm() / 3.0 * Minv;
      if (gc)
        gc->set_pixel(x, y, cfg.lambda_rgb * 2.0 / 3.0 * Minv * dc);
      const double d = frame.depth.at(x, y);
      if (d > 0) {
        const double dd = render.depth.at(x, y) - d;
        l_depth += dd * dd * Ninv;
        if (gd) gd->at(x, y) = cfg.lambda_depth * 2.0 * Ninv * dd;
      }
    }
  }
  return cfg.lambda_rgb * l_rgb + cfg.lambda_depth * l_depth;
}

}  // namespace

FineTrackResult fine_track(const GaussianMap& map, const Frame& frame,
                           const Pose& init_pose, const MaskImage& motion_mask,
                           const TrackConfig& cfg) {
  // Normalized blended depth: sensor depth measures the surface, not the
  // opacity-weighted raw blend, so the residual must compare like with like.
  RenderConfig rc = cfg.render;
  rc.keep_records = true;
  rc.normalized_depth = true;

  FineTrackResult out;
  out.pose = init_pose;

  Pose pose = init_pose;
  double loss = 0;
  // Gate frozen from the initial render: re-gating each iteration lets a
  // drifting pose carry its own gate along and hides the loss increase.
  MaskImage gate;
  size_t n_gated = 0;
  double t0 = 1.0;  // step scale along the normalized gradient direction

  for (int it = 0; it <= cfg.iterations; ++it) {
    const RenderOutput render_out = render(map, pose, frame.intrinsics, rc);
    if (it == 0) {
      gate = reliability_mask(render_out, cfg.tau_track);
      n_gated = 0;
      for (size_t i = 0; i < gate.data.size(); ++i) {
        gate.data[i] = gate.data[i] & motion_mask.data[i];
        n_gated += gate.data[i];
      }
      out.gated_pixels = n_gated;
      if (n_gated < 0.01 * static_cast<double>(gate.data.size())) {
        out.skipped = true;
        return out;
      }
    }
    ColorImage gc;
    GrayImage gd;
    loss = fine_loss(render_out, frame, gate, cfg, n_gated, &gc, &gd);
    if (it == 0) out.initial_loss = loss;
    out.pose = pose;
    if (it == cfg.iterations) break;

    const Tangent6 g = render_backward_pose(render_out, gc, gd, map);
    if (!g.allFinite() || g.norm() < 1e-14) break;
    const Tangent6 dir = -g / g.norm();

    // Backtracking line search; steps are only taken when the loss drops,
    // so the returned pose is never worse than the initial one.
    double t = t0;
    bool accepted = false;
    for (int bt = 0; bt < 24 && !accepted; ++bt, t *= 0.5) {
      const Pose trial = pose * exp_se3((t * dir).eval());
      const RenderOutput tro = render(map, trial, frame.intrinsics, rc);
      const double tl =
          fine_loss(tro, frame, gate, cfg, n_gated, nullptr, nullptr);
      if (tl < loss) {
        pose = trial;
        loss = tl;
        t0 = 2.0 * t;
        accepted = true;
      }
    }
    out.iterations_run = it + 1;
    if (!accepted) break;  // local minimum at line-search resolution
    out.pose = pose;
  }
  out.final_loss = loss;
  return out;
}

}  // namespace splat
