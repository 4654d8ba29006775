#pragma once

#include <Eigen/Core>

namespace splat {

// Real spherical harmonics basis up to degree 3 (16 coefficients), with
// derivatives w.r.t. the (unit) direction for the backward pass.

inline constexpr double kShC0 = 0.28209479177387814;

// basis[b] for b < (degree+1)^2; dir must be unit length for degree > 0.
void sh_basis(int degree, const Eigen::Vector3d& dir,
              Eigen::VectorXd& basis);

// d(basis[b])/d(dir), one 3-vector per basis function.
void sh_basis_grad(int degree, const Eigen::Vector3d& dir,
                   Eigen::Matrix3Xd& dbasis);

// Color = clamp(0.5 + sum_b basis[b] * coeffs.col(b), 0, 1), per channel.
Eigen::Vector3d eval_sh_color(int degree, const Eigen::Matrix3Xd& coeffs,
                              const Eigen::Vector3d& dir);

}  // namespace splat
