#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace teskf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Skew-symmetric matrix of v, so that skew(v) * w == v.cross(w).
Mat3 skew(const Vec3 &v);

// Inverse of skew: extracts the vector from an antisymmetric matrix.
Vec3 vee(const Mat3 &m);

// Rodrigues exponential map, rotation vector -> rotation matrix.
// Second-order Taylor branch below angle 1e-7.
Mat3 exp_so3(const Vec3 &theta);

// Logarithm map, rotation matrix -> rotation vector with angle in [0, pi].
// Trace is clamped before acos; the angle ~ pi branch recovers the axis
// from the symmetric part (the antisymmetric part vanishes there).
Vec3 log_so3(const Mat3 &R);

// Right Jacobian of SO(3): Exp(theta + d) ~ Exp(theta) * Exp(Jr(theta) d).
Mat3 right_jacobian(const Vec3 &theta);

// Left Jacobian, Jl(theta) = Jr(-theta).
Mat3 left_jacobian(const Vec3 &theta);

// Inverse of the left Jacobian (used by error-dynamics oracles).
Mat3 left_jacobian_inv(const Vec3 &theta);

// Nearest rotation matrix in the Frobenius sense (polar factor). Uses a
// Newton-Schulz iteration when already close to orthogonal, SVD otherwise.
Mat3 nearest_rotation(const Mat3 &m);

}  // namespace teskf
