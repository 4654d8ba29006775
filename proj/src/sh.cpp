#include "splatslam/sh.hpp"

#include <algorithm>
#include <stdexcept>

namespace splat {

namespace {
constexpr double C1 = 0.4886025119029199;
constexpr double C2[5] = {1.0925484305920792, -1.0925484305920792,
                          0.31539156525252005, -1.0925484305920792,
                          0.5462742152960396};
constexpr double C3[7] = {-0.5900435899266435, 2.890611442640554,
                          -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277,
                          -0.5900435899266435};
}  // namespace

void sh_basis(int degree, const Eigen::Vector3d& dir, Eigen::VectorXd& basis) {
  if (degree < 0 || degree > 3)
    throw std::invalid_argument("sh_basis: degree must be in [0,3]");
  basis.resize((degree + 1) * (degree + 1));
  basis[0] = kShC0;
  if (degree < 1) return;
  const double x = dir.x(), y = dir.y(), z = dir.z();
  basis[1] = -C1 * y;
  basis[2] = C1 * z;
  basis[3] = -C1 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  const double xy = x * y, yz = y * z, xz = x * z;
  basis[4] = C2[0] * xy;
  basis[5] = C2[1] * yz;
  basis[6] = C2[2] * (2.0 * zz - xx - yy);
  basis[7] = C2[3] * xz;
  basis[8] = C2[4] * (xx - yy);
  if (degree < 3) return;
  basis[9] = C3[0] * y * (3.0 * xx - yy);
  basis[10] = C3[1] * xy * z;
  basis[11] = C3[2] * y * (4.0 * zz - xx - yy);
  basis[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  basis[13] = C3[4] * x * (4.0 * zz - xx - yy);
  basis[14] = C3[5] * z * (xx - yy);
  basis[15] = C3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_grad(int degree, const Eigen::Vector3d& dir,
                   Eigen::Matrix3Xd& dbasis) {
  const int n = (degree + 1) * (degree + 1);
  dbasis.setZero(3, n);
  if (degree < 1) return;
  const double x = dir.x(), y = dir.y(), z = dir.z();
  dbasis.col(1) = Eigen::Vector3d(0, -C1, 0);
  dbasis.col(2) = Eigen::Vector3d(0, 0, C1);
  dbasis.col(3) = Eigen::Vector3d(-C1, 0, 0);
  if (degree < 2) return;
  dbasis.col(4) = C2[0] * Eigen::Vector3d(y, x, 0);
  dbasis.col(5) = C2[1] * Eigen::Vector3d(0, z, y);
  dbasis.col(6) = C2[2] * Eigen::Vector3d(-2 * x, -2 * y, 4 * z);
  dbasis.col(7) = C2[3] * Eigen::Vector3d(z, 0, x);
  dbasis.col(8) = C2[4] * Eigen::Vector3d(2 * x, -2 * y, 0);
  if (degree < 3) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  dbasis.col(9) = C3[0] * Eigen::Vector3d(6 * x * y, 3 * xx - 3 * yy, 0);
  dbasis.col(10) = C3[1] * Eigen::Vector3d(y * z, x * z, x * y);
  dbasis.col(11) =
      C3[2] * Eigen::Vector3d(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
  dbasis.col(12) =
      C3[3] * Eigen::Vector3d(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
  dbasis.col(13) =
      C3[4] * Eigen::Vector3d(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
  dbasis.col(14) = C3[5] * Eigen::Vector3d(2 * x * z, -2 * y * z, xx - yy);
  dbasis.col(15) = C3[6] * Eigen::Vector3d(3 * xx - 3 * yy, -6 * x * y, 0);
}

Eigen::Vector3d eval_sh_color(int degree, const Eigen::Matrix3Xd& coeffs,
                              const Eigen::Vector3d& dir) {
  Eigen::VectorXd basis;
  sh_basis(degree, dir, basis);
  Eigen::Vector3d c = Eigen::Vector3d::Constant(0.5);
  const int n = std::min<int>(basis.size(), coeffs.cols());
  for (int b = 0; b < n; ++b) c += basis[b] * coeffs.col(b);
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace splat
