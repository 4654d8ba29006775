#include "splatslam/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace splat {

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0, -v.z(),  v.y(),
       v.z(),      0, -v.x(),
      -v.y(),  v.x(),      0;
  // clang-format on
  return s;
}

Mat3 exp_so3(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-8) {
    return Mat3::Identity() + skew(omega);
  }
  const Vec3 axis = omega / theta;
  const Mat3 K = skew(axis);
  return Mat3::Identity() + std::sin(theta) * K +
         (1.0 - std::cos(theta)) * K * K;
}

Vec3 log_so3(const Mat3& R) {
  const double cos_theta =
      std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  if (theta < 1e-8) {
    return Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)) * 0.5;
  }
  if (theta >= M_PI - 1e-6) {
    throw std::domain_error("log_so3: rotation angle at or beyond pi");
  }
  return theta / (2.0 * std::sin(theta)) *
         Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
}

namespace {

// Left Jacobian of SO(3): V in exp_se3 translation = V * v.
Mat3 left_jacobian(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 K = skew(omega);
  if (theta < 1e-8) {
    return Mat3::Identity() + 0.5 * K;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() + (1.0 - std::cos(theta)) / t2 * K +
         (theta - std::sin(theta)) / (t2 * theta) * K * K;
}

Mat3 left_jacobian_inv(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 K = skew(omega);
  if (theta < 1e-8) {
    return Mat3::Identity() - 0.5 * K + K * K / 12.0;
  }
  const double half = 0.5 * theta;
  const double cot = 1.0 / std::tan(half);
  return Mat3::Identity() - 0.5 * K +
         (1.0 - half * cot) / (theta * theta) * K * K;
}

}  // namespace

Pose exp_se3(const Tangent6& delta) {
  const Vec3 omega = delta.head<3>();
  const Vec3 v = delta.tail<3>();
  Pose p;
  p.q = Eigen::Quaterniond(exp_so3(omega));
  p.q.normalize();
  p.t = left_jacobian(omega) * v;
  return p;
}

Tangent6 log_se3(const Pose& p) {
  const Vec3 omega = log_so3(p.rotation());
  Tangent6 d;
  d.head<3>() = omega;
  d.tail<3>() = left_jacobian_inv(omega) * p.t;
  return d;
}

std::optional<Vec2> project(const Vec3& point_cam, const Intrinsics& K) {
  const double z = point_cam.z();
  if (z <= kNearPlane) return std::nullopt;
  return Vec2(K.fx * point_cam.x() / z + K.cx, K.fy * point_cam.y() / z + K.cy);
}

std::optional<Vec3> backproject(const Vec2& pixel, double depth,
                                const Intrinsics& K) {
  if (depth <= 0) return std::nullopt;
  return Vec3((pixel.x() - K.cx) / K.fx * depth,
              (pixel.y() - K.cy) / K.fy * depth, depth);
}

std::optional<Mat23> projection_jacobian(const Vec3& point_cam,
                                         const Intrinsics& K) {
  const double z = point_cam.z();
  if (z <= kNearPlane) return std::nullopt;
  Mat23 J;
  const double z2 = z * z;
  // clang-format off
  J << K.fx / z,        0, -K.fx * point_cam.x() / z2,
              0, K.fy / z, -K.fy * point_cam.y() / z2;
  // clang-format on
  return J;
}

}  // namespace splat
