#include "splatslam/eval.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "splatslam/kdtree.hpp"

namespace splat {

namespace {

// Timestamp-associated translation pairs (est, gt).
std::vector<std::pair<Vec3, Vec3>> associate(
    const std::vector<TrajectoryEntry>& est,
    const std::vector<TrajectoryEntry>& gt, double tolerance) {
  std::vector<std::pair<Vec3, Vec3>> pairs;
  for (const TrajectoryEntry& e : est) {
    double best_dt = std::numeric_limits<double>::infinity();
    const TrajectoryEntry* best = nullptr;
    for (const TrajectoryEntry& g : gt) {
      const double dt = std::abs(g.timestamp - e.timestamp);
      if (dt < best_dt) {
        best_dt = dt;
        best = &g;
      }
    }
    if (best && best_dt <= tolerance)
      pairs.emplace_back(e.pose.t, best->pose.t);
  }
  return pairs;
}

std::vector<Vec3> subsample(const std::vector<Vec3>& pts, size_t n,
                            std::mt19937& rng) {
  if (pts.size() <= n) return pts;
  std::vector<Vec3> out;
  out.reserve(n);
  std::sample(pts.begin(), pts.end(), std::back_inserter(out), n, rng);
  return out;
}

}  // namespace

Pose horn_align(const std::vector<TrajectoryEntry>& est,
                const std::vector<TrajectoryEntry>& gt, double tolerance) {
  const auto pairs = associate(est, gt, tolerance);
  if (pairs.size() < 3)
    throw std::runtime_error(
        "horn_align: fewer than 3 associated pose pairs");

  Vec3 mean_e = Vec3::Zero(), mean_g = Vec3::Zero();
  for (const auto& [e, g] : pairs) {
    mean_e += e;
    mean_g += g;
  }
  mean_e /= static_cast<double>(pairs.size());
  mean_g /= static_cast<double>(pairs.size());

  Mat3 H = Mat3::Zero();
  for (const auto& [e, g] : pairs)
    H += (e - mean_e) * (g - mean_g).transpose();
  const Eigen::JacobiSVD<Mat3> svd(H,
                                   Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixV() * svd.matrixU().transpose();
  if (R.determinant() < 0) {
    Mat3 V = svd.matrixV();
    V.col(2) *= -1;
    R = V * svd.matrixU().transpose();
  }
  Pose align;
  align.q = Eigen::Quaterniond(R);
  align.q.normalize();
  align.t = mean_g - align.q * mean_e;
  return align;
}

AteReport ate(const std::vector<TrajectoryEntry>& est,
              const std::vector<TrajectoryEntry>& gt, double tolerance) {
  AteReport rep;
  rep.alignment = horn_align(est, gt, tolerance);
  const auto pairs = associate(est, gt, tolerance);
  double sum = 0, sum2 = 0;
  for (const auto& [e, g] : pairs) {
    const double err = (rep.alignment * e - g).norm();
    rep.errors.push_back(err);
    sum += err;
    sum2 += err * err;
  }
  const double n = static_cast<double>(rep.errors.size());
  rep.rmse = std::sqrt(sum2 / n);
  rep.stddev = std::sqrt(std::max(0.0, sum2 / n - (sum / n) * (sum / n)));
  return rep;
}

ReconReport recon_metrics(const std::vector<Vec3>& recon,
                          const std::vector<Vec3>& gt, double threshold,
                          size_t n_samples, unsigned seed) {
  if (recon.empty() || gt.empty())
    throw std::invalid_argument("recon_metrics: empty point set");
  std::mt19937 rng(seed);
  const std::vector<Vec3> rs = subsample(recon, n_samples, rng);
  const std::vector<Vec3> gs = subsample(gt, n_samples, rng);

  const KdTree3 gt_tree(gs), recon_tree(rs);
  ReconReport rep;
  rep.n_recon = rs.size();
  rep.n_gt = gs.size();
  double acc = 0;
  for (const Vec3& p : rs) acc += std::sqrt(gt_tree.nearest(p).second);
  rep.accuracy_cm = acc / rs.size() * 100.0;
  double comp = 0;
  size_t within = 0;
  for (const Vec3& p : gs) {
    const double d = std::sqrt(recon_tree.nearest(p).second);
    comp += d;
    within += d <= threshold;
  }
  rep.completion_cm = comp / gs.size() * 100.0;
  rep.completion_ratio_pct = 100.0 * within / gs.size();
  return rep;
}

std::vector<Vec3> map_points(const GaussianMap& map, double cutoff) {
  std::vector<Vec3> pts;
  for (const Gaussian& g : map.gaussians)
    if (g.opacity() > cutoff) pts.push_back(g.center);
  return pts;
}

std::string format_report(const AteReport& a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "ate_rmse_m %.6f\nate_std_m %.6f\nframes %zu\n",
                a.rmse, a.stddev, a.errors.size());
  return buf;
}

std::string format_report(const ReconReport& r) {
  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "accuracy_cm %.4f\ncompletion_cm %.4f\n"
                "completion_ratio_pct %.2f\nn_recon %zu\nn_gt %zu\n",
                r.accuracy_cm, r.completion_cm, r.completion_ratio_pct,
                r.n_recon, r.n_gt);
  return buf;
}

}  // namespace splat
