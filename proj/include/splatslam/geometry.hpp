#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>

namespace splat {

// Depth closer than this is treated as behind the near plane and culled.
inline constexpr double kNearPlane = 0.01;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

// Lie-algebra increment, rotational part first: [omega, v].
using Tangent6 = Eigen::Matrix<double, 6, 1>;

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  double depth_scale = 5000.0;  // raw units per meter (TUM convention)

  bool valid() const {
    return fx > 0 && fy > 0 && cx > 0 && cx < width && cy > 0 && cy < height;
  }
  Intrinsics scaled(double s) const {
    Intrinsics k = *this;
    k.fx *= s;
    k.fy *= s;
    k.cx *= s;
    k.cy *= s;
    k.width = static_cast<int>(std::lround(width * s));
    k.height = static_cast<int>(std::lround(height * s));
    return k;
  }
};

// Rigid transform stored as unit quaternion + translation.
// Interpreted as camera-to-world T_wc unless noted otherwise.
struct Pose {
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Vec3 t = Vec3::Zero();

  static Pose Identity() { return {}; }

  Mat3 rotation() const { return q.toRotationMatrix(); }

  Pose inverse() const {
    Pose p;
    p.q = q.conjugate();
    p.t = -(p.q * t);
    return p;
  }

  Pose operator*(const Pose& o) const {
    Pose p;
    p.q = q * o.q;
    p.q.normalize();
    p.t = q * o.t + t;
    return p;
  }

  Vec3 operator*(const Vec3& x) const { return q * x + t; }

  void normalize() { q.normalize(); }
};

Mat3 skew(const Vec3& v);

Mat3 exp_so3(const Vec3& omega);
Vec3 log_so3(const Mat3& R);

// SE(3) exponential; small-angle branch below 1e-8 rad.
Pose exp_se3(const Tangent6& delta);

// Inverse of exp_se3. Throws std::domain_error for rotation angle >= pi - 1e-6.
Tangent6 log_se3(const Pose& p);

// Pinhole projection. Returns nullopt when z <= near plane (cull).
std::optional<Vec2> project(const Vec3& point_cam, const Intrinsics& K);

// Returns nullopt when depth <= 0.
std::optional<Vec3> backproject(const Vec2& pixel, double depth,
                                const Intrinsics& K);

// d(project)/d(point_cam); nullopt when z <= near plane.
std::optional<Mat23> projection_jacobian(const Vec3& point_cam,
                                         const Intrinsics& K);

}  // namespace splat
