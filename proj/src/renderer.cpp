#include "splatslam/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "splatslam/sh.hpp"

namespace splat {

namespace {

constexpr double kCov2dDilation = 0.3;   // px^2 low-pass
constexpr double kAlphaClamp = 0.999;
constexpr double kMinContribution = 1.0 / 255.0;
constexpr double kMinTransmittance = 1e-4;

}  // namespace

std::optional<SplatProjection> project_gaussian(const Gaussian& g,
                                               const Pose& pose_cw,
                                               const Intrinsics& K,
                                               int sh_degree) {
  const Vec3 mu_cam = pose_cw * g.center;
  const auto mean2d = project(mu_cam, K);
  if (!mean2d) return std::nullopt;

  SplatProjection p;
  p.mu_cam = mu_cam;
  p.mean2d = *mean2d;
  p.depth_cam = mu_cam.z();
  p.proj_jac = *projection_jacobian(mu_cam, K);

  const double lim_x = 1.3 * 0.5 * K.width / K.fx;
  const double lim_y = 1.3 * 0.5 * K.height / K.fy;
  const double tx = mu_cam.x() / mu_cam.z(), ty = mu_cam.y() / mu_cam.z();
  p.tx_c = std::clamp(tx, -lim_x, lim_x);
  p.ty_c = std::clamp(ty, -lim_y, lim_y);
  p.clamp_x = p.tx_c != tx;
  p.clamp_y = p.ty_c != ty;
  p.cov_jac = *projection_jacobian(
      Vec3(p.tx_c * mu_cam.z(), p.ty_c * mu_cam.z(), mu_cam.z()), K);

  const Mat3 W = pose_cw.rotation();
  const Mat23 T2 = p.cov_jac * W;
  p.cov2d = T2 * g.covariance() * T2.transpose();
  p.cov2d += kCov2dDilation * Mat2::Identity();

  const double det = p.cov2d.determinant();
  if (det <= 0) return std::nullopt;
  p.cov2d_inv = p.cov2d.inverse();

  p.opacity = g.opacity();
  if (p.opacity * 255.0 <= 1.0) return std::nullopt;

  // Footprint out to the f = 1/255 contour (at least 3 sigma), so the tile
  // cutoff coincides with the per-pixel skip threshold and stays continuous.
  const double mid = 0.5 * p.cov2d.trace();
  const double disc = std::sqrt(std::max(mid * mid - det, 0.0));
  const double sigma_max = std::sqrt(mid + disc);
  const double contour = std::sqrt(2.0 * std::log(255.0 * p.opacity));
  p.radius_px = std::max(3.0, contour) * sigma_max + 1.0;
  if (p.mean2d.x() + p.radius_px < 0 || p.mean2d.x() - p.radius_px > K.width - 1 ||
      p.mean2d.y() + p.radius_px < 0 || p.mean2d.y() - p.radius_px > K.height - 1)
    return std::nullopt;

  // View direction for SH, from the camera center in world frame.
  const Pose pose_wc = pose_cw.inverse();
  const Vec3 diff = g.center - pose_wc.t;
  p.view_dist = std::max(diff.norm(), 1e-12);
  p.view_dir = diff / p.view_dist;
  p.color = eval_sh_color(sh_degree, g.sh_coeffs, p.view_dir);
  return p;
}

RenderOutput render(const GaussianMap& map, const Pose& pose_wc,
                    const Intrinsics& K, const RenderConfig& cfg) {
  RenderOutput out;
  out.color = ColorImage(K.width, K.height);
  out.depth = GrayImage(K.width, K.height);
  out.opacity = GrayImage(K.width, K.height);
  out.pose = pose_wc;
  out.intrinsics = K;
  out.map_generation = map.generation;
  out.normalized_depth = cfg.normalized_depth;

  const Pose pose_cw = pose_wc.inverse();
  out.projections.reserve(map.size());
  for (size_t i = 0; i < map.size(); ++i) {
    auto p = project_gaussian(map.gaussians[i], pose_cw, K, map.sh_degree);
    if (p) {
      p->source = i;
      out.projections.push_back(*p);
    }
  }

  // Global front-to-back order; ties broken by source index for determinism.
  std::vector<uint32_t> order(out.projections.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    const auto& pa = out.projections[a];
    const auto& pb = out.projections[b];
    return pa.depth_cam != pb.depth_cam ? pa.depth_cam < pb.depth_cam
                                        : pa.source < pb.source;
  });

  const int tile = std::max(cfg.tile_size, 1);
  const int tiles_x = (K.width + tile - 1) / tile;
  const int tiles_y = (K.height + tile - 1) / tile;
  std::vector<std::vector<uint32_t>> bins(static_cast<size_t>(tiles_x) * tiles_y);
  for (uint32_t idx : order) {
    const auto& p = out.projections[idx];
    const int x0 = std::max(0, static_cast<int>((p.mean2d.x() - p.radius_px) / tile));
    const int x1 = std::min(tiles_x - 1,
                            static_cast<int>((p.mean2d.x() + p.radius_px) / tile));
    const int y0 = std::max(0, static_cast<int>((p.mean2d.y() - p.radius_px) / tile));
    const int y1 = std::min(tiles_y - 1,
                            static_cast<int>((p.mean2d.y() + p.radius_px) / tile));
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx)
        bins[static_cast<size_t>(ty) * tiles_x + tx].push_back(idx);
  }

  const size_t npix = out.color.npixels();
  std::vector<std::vector<BlendRecord>> pixel_records;
  if (cfg.keep_records) pixel_records.resize(npix);

  auto render_tile = [&](int tx, int ty) {
    const auto& bin = bins[static_cast<size_t>(ty) * tiles_x + tx];
    const int px1 = std::min((tx + 1) * tile, K.width);
    const int py1 = std::min((ty + 1) * tile, K.height);
    for (int py = ty * tile; py < py1; ++py) {
      for (int px = tx * tile; px < px1; ++px) {
        double T = 1.0;
        Vec3 c = Vec3::Zero();
        double d = 0.0, O = 0.0;
        const size_t pix = static_cast<size_t>(py) * K.width + px;
        for (uint32_t idx : bin) {
          const auto& p = out.projections[idx];
          const Vec2 diff(px - p.mean2d.x(), py - p.mean2d.y());
          const double e = -0.5 * diff.dot(p.cov2d_inv * diff);
          if (e < -12.0) continue;
          double f = p.opacity * std::exp(e);
          if (f < kMinContribution) continue;
          f = std::min(f, kAlphaClamp);
          const double w = f * T;
          c += w * p.color;
          d += w * p.depth_cam;
          O += w;
          if (cfg.keep_records) pixel_records[pix].push_back({idx, f});
          T *= 1.0 - f;
          if (T < kMinTransmittance) break;
        }
        out.color.set_pixel(px, py, c);
        out.depth.data[pix] = cfg.normalized_depth && O > 1e-8 ? d / O : d;
        out.opacity.data[pix] = O;
      }
    }
  };

  const int ntiles = tiles_x * tiles_y;
  const int nthreads = std::max(cfg.num_threads, 1);
  if (nthreads == 1) {
    for (int t = 0; t < ntiles; ++t) render_tile(t % tiles_x, t / tiles_x);
  } else {
    std::vector<std::thread> workers;
    std::atomic<int> next{0};
    for (int w = 0; w < nthreads; ++w)
      workers.emplace_back([&] {
        int t;
        while ((t = next.fetch_add(1)) < ntiles)
          render_tile(t % tiles_x, t / tiles_x);
      });
    for (auto& w : workers) w.join();
  }

  if (cfg.keep_records) {
    out.pixel_offset.resize(npix + 1, 0);
    size_t total = 0;
    for (size_t i = 0; i < npix; ++i) {
      out.pixel_offset[i] = static_cast<uint32_t>(total);
      total += pixel_records[i].size();
    }
    out.pixel_offset[npix] = static_cast<uint32_t>(total);
    out.records.reserve(total);
    for (auto& pr : pixel_records)
      out.records.insert(out.records.end(), pr.begin(), pr.end());
  }
  return out;
}

void MapGradients::resize(size_t n, int sh_count) {
  center.assign(n, Vec3::Zero());
  rotation.assign(n, Vec3::Zero());
  log_scale.assign(n, Vec3::Zero());
  opacity_logit.assign(n, 0.0);
  sh.assign(n, Eigen::Matrix3Xd::Zero(3, sh_count));
}

bool MapGradients::all_finite() const {
  for (size_t i = 0; i < center.size(); ++i) {
    if (!center[i].allFinite() || !rotation[i].allFinite() ||
        !log_scale[i].allFinite() || !std::isfinite(opacity_logit[i]) ||
        !sh[i].allFinite())
      return false;
  }
  return true;
}

namespace {

// Per-projection upstream gradients accumulated over pixels.
struct ProjGrad {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Zero();
  double depth = 0;
  Vec3 color = Vec3::Zero();
  double alpha = 0;
};

std::vector<ProjGrad> accumulate_pixel_grads(const RenderOutput& out,
                                             const ColorImage& grad_color,
                                             const GrayImage& grad_depth) {
  if (!out.has_records())
    throw std::logic_error("render backward: blend records were not retained");

  const int W = out.color.width, H = out.color.height;
  std::vector<ProjGrad> pg(out.projections.size());
  std::vector<double> trans, wG;
  for (int py = 0; py < H; ++py) {
    for (int px = 0; px < W; ++px) {
      const size_t pix = static_cast<size_t>(py) * W + px;
      const uint32_t beg = out.pixel_offset[pix], end = out.pixel_offset[pix + 1];
      if (beg == end) continue;
      const Vec3 gC = grad_color.pixel(px, py);
      double gD = grad_depth.at(px, py);
      if (gC.isZero(0.0) && gD == 0.0) continue;
      // Normalized depth D = A/O with A, O both linear in the blend
      // weights: dL/dA = gD/O and each weight also moves O by 1, adding
      // -gD*D/O to the per-record scalar.
      double gO_add = 0.0;
      const double O = out.opacity.at(px, py);
      if (out.normalized_depth && O > 1e-8) {
        gO_add = -gD * out.depth.at(px, py) / O;
        gD /= O;
      }

      const uint32_t n = end - beg;
      trans.assign(n, 1.0);
      double T = 1.0;
      for (uint32_t k = 0; k < n; ++k) {
        trans[k] = T;
        T *= 1.0 - out.records[beg + k].f;
      }
      // Reverse sweep: dL/df_i = T_i * G_i - sum_{k>i} w_k G_k / (1 - f_i).
      double S = 0.0;
      for (int k = static_cast<int>(n) - 1; k >= 0; --k) {
        const BlendRecord& rec = out.records[beg + k];
        const SplatProjection& p = out.projections[rec.proj];
        const double G = p.color.dot(gC) + p.depth_cam * gD + gO_add;
        const double w = rec.f * trans[k];
        double dLdf = trans[k] * G - S / (1.0 - rec.f);
        S += w * G;

        ProjGrad& g = pg[rec.proj];
        g.color += w * gC;
        g.depth += w * gD;
        if (rec.f >= kAlphaClamp) continue;  // clamped: no gradient through f
        const double fdLdf = rec.f * dLdf;
        g.alpha += (rec.f / p.opacity) * dLdf;
        const Vec2 diff(px - p.mean2d.x(), py - p.mean2d.y());
        const Vec2 Ad = p.cov2d_inv * diff;
        g.mean2d += fdLdf * Ad;
        g.cov2d += 0.5 * fdLdf * (Ad * Ad.transpose());
      }
    }
  }
  return pg;
}

// Gradient of mu_cam through the covariance Jacobian J(tx_c, ty_c, z).
// A clamped direction component is constant, so its J entry only varies
// with z: J(0,2) = -fx * tx_c / z.
Vec3 jacobian_position_grad(const Mat23& gJ, const SplatProjection& p,
                            double fx, double fy) {
  const double z = p.mu_cam.z(), z2 = z * z;
  Vec3 g = Vec3::Zero();
  if (!p.clamp_x) g.x() = gJ(0, 2) * (-fx / z2);
  if (!p.clamp_y) g.y() = gJ(1, 2) * (-fy / z2);
  g.z() = gJ(0, 0) * (-fx / z2) + gJ(1, 1) * (-fy / z2) +
          gJ(0, 2) * (fx * p.tx_c / z2) * (p.clamp_x ? 1.0 : 2.0) +
          gJ(1, 2) * (fy * p.ty_c / z2) * (p.clamp_y ? 1.0 : 2.0);
  return g;
}

}  // namespace

MapGradients render_backward_map(const RenderOutput& out,
                                 const ColorImage& grad_color,
                                 const GrayImage& grad_depth,
                                 const GaussianMap& map) {
  const auto pg = accumulate_pixel_grads(out, grad_color, grad_depth);
  const int sh_count = sh_basis_count(map.sh_degree);
  MapGradients mg;
  mg.resize(map.size(), sh_count);

  const Pose pose_cw = out.pose.inverse();
  const Mat3 W = pose_cw.rotation();
  Eigen::VectorXd basis;
  Eigen::Matrix3Xd dbasis;

  for (size_t pi = 0; pi < out.projections.size(); ++pi) {
    const ProjGrad& g = pg[pi];
    const SplatProjection& p = out.projections[pi];
    const Gaussian& gs = map.gaussians[p.source];

    // Opacity.
    const double a = p.opacity;
    mg.opacity_logit[p.source] += g.alpha * a * (1.0 - a);

    // Color -> SH coefficients (clamp gates each channel).
    sh_basis(map.sh_degree, p.view_dir, basis);
    Vec3 gc = g.color;
    for (int ch = 0; ch < 3; ++ch)
      if (p.color[ch] <= 0.0 || p.color[ch] >= 1.0) gc[ch] = 0.0;
    for (int b = 0; b < sh_count; ++b)
      mg.sh[p.source].col(b) += basis[b] * gc;

    Vec3 gmu_cam = Vec3::Zero();
    gmu_cam.z() += g.depth;
    gmu_cam += p.proj_jac.transpose() * g.mean2d;

    // 2D covariance chain.
    const Mat23 T2 = p.cov_jac * W;
    const Mat3 cov_w = gs.covariance();
    const Mat23 gT2 = 2.0 * g.cov2d * T2 * cov_w;
    const Mat3 gcov_w = T2.transpose() * g.cov2d * T2;
    const Mat23 gJ = gT2 * W.transpose();
    gmu_cam += jacobian_position_grad(gJ, p, out.intrinsics.fx,
                                      out.intrinsics.fy);

    mg.center[p.source] += W.transpose() * gmu_cam;

    // SH view direction contribution.
    if (map.sh_degree > 0) {
      sh_basis_grad(map.sh_degree, p.view_dir, dbasis);
      Vec3 gdir = Vec3::Zero();
      for (int b = 0; b < sh_count; ++b)
        gdir += dbasis.col(b) * gs.sh_coeffs.col(b).dot(gc);
      const Mat3 P = (Mat3::Identity() - p.view_dir * p.view_dir.transpose()) /
                     p.view_dist;
      mg.center[p.source] += P * gdir;
    }

    // Sigma_w = M M^T with M = R * diag(s).
    const Mat3 R = gs.rotation.toRotationMatrix();
    const Vec3 s = gs.scale();
    const Mat3 M = R * s.asDiagonal();
    const Mat3 gM = 2.0 * gcov_w * M;
    const Mat3 B = R.transpose() * gM;
    for (int k = 0; k < 3; ++k)
      mg.log_scale[p.source][k] += B(k, k) * s[k];
    const Mat3 D = B * s.asDiagonal();
    mg.rotation[p.source] += Vec3(D(2, 1) - D(1, 2), D(0, 2) - D(2, 0),
                                  D(1, 0) - D(0, 1));
  }
  return mg;
}

Tangent6 render_backward_pose(const RenderOutput& out,
                              const ColorImage& grad_color,
                              const GrayImage& grad_depth,
                              const GaussianMap& map) {
  const auto pg = accumulate_pixel_grads(out, grad_color, grad_depth);
  const int sh_count = sh_basis_count(map.sh_degree);

  const Pose pose_cw = out.pose.inverse();
  const Mat3 W = pose_cw.rotation();
  const Mat3 R_wc = out.pose.rotation();
  Tangent6 grad = Tangent6::Zero();
  Eigen::Matrix3Xd dbasis;

  Mat3 gW_total = Mat3::Zero();
  Vec3 gcam_center = Vec3::Zero();

  for (size_t pi = 0; pi < out.projections.size(); ++pi) {
    const ProjGrad& g = pg[pi];
    const SplatProjection& p = out.projections[pi];
    const Gaussian& gs = map.gaussians[p.source];

    Vec3 gmu_cam = Vec3::Zero();
    gmu_cam.z() += g.depth;
    gmu_cam += p.proj_jac.transpose() * g.mean2d;

    const Mat23 T2 = p.cov_jac * W;
    const Mat3 cov_w = gs.covariance();
    const Mat23 gT2 = 2.0 * g.cov2d * T2 * cov_w;
    const Mat23 gJ = gT2 * W.transpose();
    gmu_cam += jacobian_position_grad(gJ, p, out.intrinsics.fx,
                                      out.intrinsics.fy);
    gW_total += p.cov_jac.transpose() * gT2;

    // mu_cam(delta) ~= mu_cam - omega x mu_cam - v.
    grad.head<3>() += gmu_cam.cross(p.mu_cam);
    grad.tail<3>() -= gmu_cam;

    if (map.sh_degree > 0) {
      Vec3 gc = g.color;
      for (int ch = 0; ch < 3; ++ch)
        if (p.color[ch] <= 0.0 || p.color[ch] >= 1.0) gc[ch] = 0.0;
      sh_basis_grad(map.sh_degree, p.view_dir, dbasis);
      Vec3 gdir = Vec3::Zero();
      for (int b = 0; b < sh_count; ++b)
        gdir += dbasis.col(b) * gs.sh_coeffs.col(b).dot(gc);
      const Mat3 P = (Mat3::Identity() - p.view_dir * p.view_dir.transpose()) /
                     p.view_dist;
      gcam_center -= P * gdir;  // dir = (mu_w - c_w)/r
    }
  }

  // W(delta) ~= (I - skew(omega)) * W.
  const Mat3 E = gW_total * W.transpose();
  grad.head<3>() += Vec3(E(1, 2) - E(2, 1), E(2, 0) - E(0, 2),
                         E(0, 1) - E(1, 0));
  // Camera center moves as c_w + R_wc * v to first order.
  grad.tail<3>() += R_wc.transpose() * gcam_center;
  return grad;
}

}  // namespace splat
