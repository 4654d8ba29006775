#include <random>

#include "doctest.h"
#include "splatslam/eval.hpp"

using namespace splat;

namespace {

std::vector<TrajectoryEntry> random_trajectory(int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<TrajectoryEntry> traj;
  for (int i = 0; i < n; ++i) {
    Tangent6 d;
    for (int k = 0; k < 6; ++k) d[k] = u(rng);
    traj.push_back({i * 0.1, exp_se3(d)});
  }
  return traj;
}

std::vector<TrajectoryEntry> transformed(const std::vector<TrajectoryEntry>& t,
                                         const Pose& T) {
  std::vector<TrajectoryEntry> out = t;
  for (auto& e : out) e.pose = T * e.pose;
  return out;
}

}  // namespace

TEST_CASE("aligning a trajectory with itself gives the identity") {
  const auto gt = random_trajectory(30, 89);
  const Pose a = horn_align(gt, gt);
  CHECK(a.q.angularDistance(Eigen::Quaterniond::Identity()) < 1e-9);
  CHECK(a.t.norm() < 1e-9);
}

TEST_CASE("horn_align recovers a constructed rigid transform") {
  const auto gt = random_trajectory(50, 97);
  Tangent6 d;
  d << 0.4, -0.3, 0.2, 1.0, -2.0, 0.5;
  const Pose T = exp_se3(d);
  // est = T * gt, so the alignment must be T^{-1}.
  const auto est = transformed(gt, T);
  const Pose a = horn_align(est, gt);
  const Pose Tinv = T.inverse();
  CHECK(a.q.angularDistance(Tinv.q) < 1e-9);
  CHECK((a.t - Tinv.t).norm() < 1e-9);
}

TEST_CASE("collinear trajectory aligns with near-zero residual") {
  std::vector<TrajectoryEntry> gt, est;
  for (int i = 0; i < 20; ++i) {
    Pose p;
    p.t = Vec3(0.05 * i, 0, 0);
    gt.push_back({i * 0.1, p});
    Pose q;
    q.t = Vec3(0, 0.05 * i, 0);  // same line, different orientation
    est.push_back({i * 0.1, q});
  }
  // Rotation about the line is gauge-free; only the residual is pinned.
  const AteReport rep = ate(est, gt);
  CHECK(rep.rmse < 1e-9);
}

TEST_CASE("ate of the ground truth against itself is zero") {
  const auto gt = random_trajectory(40, 101);
  const AteReport rep = ate(gt, gt);
  CHECK(rep.rmse < 1e-12);
  CHECK(rep.stddev < 1e-12);
  CHECK(rep.errors.size() == 40);
}

TEST_CASE("ate is invariant to a rigid transform of the estimate") {
  const auto gt = random_trajectory(40, 103);
  auto est = random_trajectory(40, 104);
  Tangent6 d;
  d << -0.2, 0.1, 0.3, 0.5, 0.4, -0.7;
  const auto est2 = transformed(est, exp_se3(d));
  const AteReport a = ate(est, gt), b = ate(est2, gt);
  CHECK(a.rmse == doctest::Approx(b.rmse).epsilon(1e-9));
  CHECK(a.stddev == doctest::Approx(b.stddev).epsilon(1e-9));
}

TEST_CASE("uniform out-of-plane offset is partly absorbed by alignment") {
  std::vector<TrajectoryEntry> gt;
  for (int i = 0; i < 30; ++i) {
    Pose p;
    p.t = Vec3(std::cos(0.3 * i), std::sin(0.3 * i), 0.0);  // planar circle
    gt.push_back({i * 0.1, p});
  }
  auto est = gt;
  for (auto& e : est) e.pose.t.z() += 0.01;
  const AteReport rep = ate(est, gt);
  CHECK(rep.rmse < 0.01);
}

TEST_CASE("alternating plus/minus z-noise gives rmse equal to the amplitude") {
  const auto base = random_trajectory(40, 107);
  auto est = base;
  for (size_t i = 0; i < est.size(); ++i)
    est[i].pose.t.z() += (i % 2 == 0 ? 0.01 : -0.01);
  const AteReport rep = ate(est, base);
  // Alignment can absorb a little; the bulk of the alternating error stays.
  CHECK(rep.rmse == doctest::Approx(0.01).epsilon(0.05));
  CHECK(rep.stddev < 0.005);
}

TEST_CASE("fewer than three pairs is an error") {
  const auto gt = random_trajectory(2, 109);
  CHECK_THROWS_AS(horn_align(gt, gt), std::runtime_error);
  auto far = random_trajectory(30, 110);
  for (auto& e : far) e.timestamp += 100.0;  // nothing associates
  CHECK_THROWS_AS(ate(far, random_trajectory(30, 111)), std::runtime_error);
}

TEST_CASE("identical point sets give perfect reconstruction metrics") {
  std::mt19937 rng(113);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<Vec3> pts(500);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  const ReconReport r = recon_metrics(pts, pts);
  CHECK(r.accuracy_cm == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.completion_cm == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.completion_ratio_pct == 100.0);
}

TEST_CASE("unit grids offset by 3 cm") {
  std::vector<Vec3> a, b;
  for (int x = 0; x < 5; ++x)
    for (int y = 0; y < 5; ++y)
      for (int z = 0; z < 5; ++z) {
        a.emplace_back(x, y, z);
        b.emplace_back(x + 0.03, y, z);
      }
  const ReconReport r = recon_metrics(a, b);
  CHECK(r.accuracy_cm == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(r.completion_cm == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(r.completion_ratio_pct == 100.0);
}

TEST_CASE("swapping the sets exchanges accuracy and completion") {
  std::mt19937 rng(127);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> a(300), b(400);
  for (auto& p : a) p = Vec3(u(rng), u(rng), u(rng));
  for (auto& p : b) p = Vec3(u(rng), u(rng), u(rng));
  const ReconReport r1 = recon_metrics(a, b), r2 = recon_metrics(b, a);
  CHECK(r1.accuracy_cm == doctest::Approx(r2.completion_cm).epsilon(1e-12));
  CHECK(r1.completion_cm == doctest::Approx(r2.accuracy_cm).epsilon(1e-12));
}

TEST_CASE("metrics match a brute-force nearest-neighbor oracle") {
  std::mt19937 rng(131);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> a(800), b(900);
  for (auto& p : a) p = Vec3(u(rng), u(rng), u(rng));
  for (auto& p : b) p = Vec3(u(rng), u(rng), u(rng));
  const ReconReport r = recon_metrics(a, b, 0.05);

  auto mean_nn = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to,
                    double thr, double* ratio) {
    double sum = 0;
    size_t within = 0;
    for (const Vec3& p : from) {
      double best = 1e300;
      for (const Vec3& q : to) best = std::min(best, (p - q).norm());
      sum += best;
      within += best <= thr;
    }
    if (ratio) *ratio = 100.0 * within / from.size();
    return sum / from.size() * 100.0;
  };
  double ratio = 0;
  CHECK(r.accuracy_cm ==
        doctest::Approx(mean_nn(a, b, 0.05, nullptr)).epsilon(1e-9));
  CHECK(r.completion_cm ==
        doctest::Approx(mean_nn(b, a, 0.05, &ratio)).epsilon(1e-9));
  CHECK(r.completion_ratio_pct == doctest::Approx(ratio).epsilon(1e-9));
}

TEST_CASE("empty point sets are rejected") {
  std::vector<Vec3> a = {Vec3::Zero()};
  CHECK_THROWS_AS(recon_metrics({}, a), std::invalid_argument);
  CHECK_THROWS_AS(recon_metrics(a, {}), std::invalid_argument);
}

TEST_CASE("map_points keeps only opaque gaussian centers") {
  GaussianMap map;
  Gaussian g;
  g.sh_coeffs = Eigen::Matrix3Xd::Zero(3, 1);
  g.center = Vec3(1, 2, 3);
  g.opacity_logit = logit(0.7);
  map.gaussians.push_back(g);
  g.center = Vec3(4, 5, 6);
  g.opacity_logit = logit(0.3);
  map.gaussians.push_back(g);
  const auto pts = map_points(map);
  REQUIRE(pts.size() == 1);
  CHECK((pts[0] - Vec3(1, 2, 3)).norm() == 0.0);
}

TEST_CASE("subsampling caps the evaluated set sizes deterministically") {
  std::mt19937 rng(137);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> a(3000), b(100);
  for (auto& p : a) p = Vec3(u(rng), u(rng), u(rng));
  for (auto& p : b) p = Vec3(u(rng), u(rng), u(rng));
  const ReconReport r1 = recon_metrics(a, b, 0.05, 1000, 7);
  const ReconReport r2 = recon_metrics(a, b, 0.05, 1000, 7);
  CHECK(r1.n_recon == 1000);
  CHECK(r1.n_gt == 100);
  CHECK(r1.accuracy_cm == r2.accuracy_cm);
}
