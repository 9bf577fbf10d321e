#include "teskf/lie.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace teskf {

namespace {
constexpr double kSmallAngle = 1e-7;
}

Mat3 skew(const Vec3 &v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3 &m) {
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5;
}

Mat3 exp_so3(const Vec3 &theta) {
  const double angle = theta.norm();
  const Mat3 W = skew(theta);
  if (angle < kSmallAngle) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double s = std::sin(angle) / angle;
  const double c = (1.0 - std::cos(angle)) / (angle * angle);
  return Mat3::Identity() + s * W + c * W * W;
}

Vec3 log_so3(const Mat3 &R) {
  double cos_angle = 0.5 * (R.trace() - 1.0);
  cos_angle = std::min(1.0, std::max(-1.0, cos_angle));
  const Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const double wn = w.norm();  // 2 sin(angle)
  // atan2 keeps the angle well conditioned where acos saturates
  const double angle = std::atan2(0.5 * wn, cos_angle);

  if (angle < kSmallAngle) {
    return 0.5 * w;
  }
  if (angle > M_PI - 1e-6) {
    // (R - R^T) vanishes; recover the axis from R ~ 2uu^T - I using the
    // largest diagonal entry, then fix the sign against w.
    const Mat3 S = 0.5 * (R + R.transpose());
    int i = 0;
    S.diagonal().maxCoeff(&i);
    Vec3 axis = S.col(i);
    axis(i) = (axis(i) - cos_angle);
    axis /= (1.0 - cos_angle);
    axis.normalize();
    if (axis.dot(w) < 0.0) axis = -axis;
    return angle * axis;
  }
  return (angle / wn) * w;
}

Mat3 right_jacobian(const Vec3 &theta) {
  const double angle = theta.norm();
  const Mat3 W = skew(theta);
  if (angle < kSmallAngle) {
    return Mat3::Identity() - 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double a2 = angle * angle;
  return Mat3::Identity() - ((1.0 - std::cos(angle)) / a2) * W +
         ((angle - std::sin(angle)) / (a2 * angle)) * W * W;
}

Mat3 left_jacobian(const Vec3 &theta) { return right_jacobian(-theta); }

Mat3 left_jacobian_inv(const Vec3 &theta) {
  const double angle = theta.norm();
  const Mat3 W = skew(theta);
  if (angle < kSmallAngle) {
    return Mat3::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double cot_term = 1.0 / (angle * angle) -
                          (1.0 + std::cos(angle)) / (2.0 * angle * std::sin(angle));
  return Mat3::Identity() - 0.5 * W + cot_term * W * W;
}

Mat3 nearest_rotation(const Mat3 &m) {
  const double drift = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (drift < 1e-4) {
    Mat3 r = m;
    for (int i = 0; i < 3; ++i) {
      r = 0.5 * r * (3.0 * Mat3::Identity() - r.transpose() * r);
    }
    return r;
  }
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant();
  return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace teskf
