#include "teskf/transform.hpp"

#include <stdexcept>

namespace teskf {

ErrorTransform::ErrorTransform(const VinsState &x) : p_(x.imu.p), v_(x.imu.v) {
  landmarks_.reserve(x.landmarks.size());
  for (const auto &[id, pos] : x.landmarks) landmarks_.push_back(pos);
}

ErrorTransform build_transform(const VinsState &x) { return ErrorTransform(x); }

namespace {

// Adds s * [gen]x * theta to the given output segment for each generator row.
void apply_generators(const Vec3 &p, const Vec3 &v, const std::vector<Vec3> &ls,
                      double s, const Eigen::Ref<const Vec3> &theta, VecX &y) {
  y.segment<3>(kPosIdx) += s * p.cross(theta);
  y.segment<3>(kVelIdx) += s * v.cross(theta);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    y.segment<3>(kImuDim + 3 * static_cast<int>(i)) += s * ls[i].cross(theta);
  }
}

}  // namespace

VecX ErrorTransform::apply(const VecX &x) const {
  if (x.size() != dim()) throw std::invalid_argument("ErrorTransform::apply: dimension mismatch");
  VecX y = x;
  apply_generators(p_, v_, landmarks_, 1.0, x.segment<3>(kThetaIdx), y);
  return y;
}

VecX ErrorTransform::apply_inv(const VecX &x) const {
  if (x.size() != dim()) throw std::invalid_argument("ErrorTransform::apply_inv: dimension mismatch");
  VecX y = x;
  apply_generators(p_, v_, landmarks_, -1.0, x.segment<3>(kThetaIdx), y);
  return y;
}

MatX ErrorTransform::apply_inv_to_cols(const MatX &H) const {
  if (H.cols() != dim()) {
    throw std::invalid_argument("ErrorTransform::apply_inv_to_cols: dimension mismatch");
  }
  // (H T^-1)[:,theta] = H[:,theta] - sum_r H[:,r] [gen_r]x; other columns unchanged.
  MatX out = H;
  out.middleCols<3>(kThetaIdx) -= H.middleCols<3>(kPosIdx) * skew(p_);
  out.middleCols<3>(kThetaIdx) -= H.middleCols<3>(kVelIdx) * skew(v_);
  for (std::size_t i = 0; i < landmarks_.size(); ++i) {
    out.middleCols<3>(kThetaIdx) -=
        H.middleCols<3>(kImuDim + 3 * static_cast<int>(i)) * skew(landmarks_[i]);
  }
  return out;
}

MatX ErrorTransform::sandwich(const MatX &P, Direction dir) const {
  const int n = dim();
  if (P.rows() != n || P.cols() != n) {
    throw std::invalid_argument("ErrorTransform::sandwich: dimension mismatch");
  }
  const double scale = P.cwiseAbs().maxCoeff();
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, scale)) {
    throw std::invalid_argument("ErrorTransform::sandwich: input not symmetric");
  }
  const double s = dir == Direction::kForward ? 1.0 : -1.0;

  // T P T^T = P + S P + (S P)^T + S P S^T where S has the skew generators
  // in the theta column only. Row blocks of S P are K_r * P[theta,:], and
  // (S P S^T)[r,c] = K_r P_tt K_c^T.
  const int n_rows = 2 + static_cast<int>(landmarks_.size());
  std::vector<int> offs(n_rows);
  std::vector<Mat3> K(n_rows);
  offs[0] = kPosIdx;
  K[0] = s * skew(p_);
  offs[1] = kVelIdx;
  K[1] = s * skew(v_);
  for (std::size_t i = 0; i < landmarks_.size(); ++i) {
    offs[2 + i] = kImuDim + 3 * static_cast<int>(i);
    K[2 + i] = s * skew(landmarks_[i]);
  }

  MatX out = P;
  const MatX theta_rows = P.middleRows<3>(kThetaIdx);  // 3 x n
  const Mat3 Ptt = P.block<3, 3>(kThetaIdx, kThetaIdx);
  for (int r = 0; r < n_rows; ++r) {
    const MatX b = K[r] * theta_rows;  // 3 x n
    out.middleRows<3>(offs[r]) += b;
    out.middleCols<3>(offs[r]) += b.transpose();
    for (int c = 0; c < n_rows; ++c) {
      out.block<3, 3>(offs[r], offs[c]) += K[r] * Ptt * K[c].transpose();
    }
  }
  out = 0.5 * (out + out.transpose()).eval();
  return out;
}

MatX ErrorTransform::dense(Direction dir) const {
  const double s = dir == Direction::kForward ? 1.0 : -1.0;
  MatX t = MatX::Identity(dim(), dim());
  t.block<3, 3>(kPosIdx, kThetaIdx) = s * skew(p_);
  t.block<3, 3>(kVelIdx, kThetaIdx) = s * skew(v_);
  for (std::size_t i = 0; i < landmarks_.size(); ++i) {
    t.block<3, 3>(kImuDim + 3 * static_cast<int>(i), kThetaIdx) = s * skew(landmarks_[i]);
  }
  return t;
}

TransformedJacobians transformed_jacobians(const VinsState &x, const ImuSample &u,
                                           const Vec3 &gravity) {
  const int n = x.dim();
  const int m = x.num_landmarks();
  const Mat3 &R = x.imu.R;

  TransformedJacobians out;
  out.F = MatX::Zero(n, n);
  out.F.block<3, 3>(kThetaIdx, kBgIdx) = -R;
  out.F.block<3, 3>(kPosIdx, kVelIdx) = Mat3::Identity();
  out.F.block<3, 3>(kPosIdx, kBgIdx) = -skew(x.imu.p) * R;
  out.F.block<3, 3>(kVelIdx, kThetaIdx) = skew(gravity);
  out.F.block<3, 3>(kVelIdx, kBgIdx) = -skew(x.imu.v) * R;
  out.F.block<3, 3>(kVelIdx, kBaIdx) = -R;

  out.G = MatX::Zero(n, 12);
  out.G.block<3, 3>(kThetaIdx, 0) = -R;
  out.G.block<3, 3>(kPosIdx, 0) = -skew(x.imu.p) * R;
  out.G.block<3, 3>(kVelIdx, 0) = -skew(x.imu.v) * R;
  out.G.block<3, 3>(kVelIdx, 3) = -R;
  out.G.block<3, 3>(kBgIdx, 6) = Mat3::Identity();
  out.G.block<3, 3>(kBaIdx, 9) = Mat3::Identity();

  out.He = MatX::Zero(3 * m, n);
  for (int i = 0; i < m; ++i) {
    out.F.block<3, 3>(kImuDim + 3 * i, kBgIdx) = -skew(x.landmarks[i].second) * R;
    out.G.block<3, 3>(kImuDim + 3 * i, 0) = -skew(x.landmarks[i].second) * R;
    out.He.block<3, 3>(3 * i, kPosIdx) = -Mat3::Identity();
    out.He.block<3, 3>(3 * i, kImuDim + 3 * i) = Mat3::Identity();
  }
  (void)u;
  return out;
}

MatX transformed_he(const VinsState &x, LandmarkId id) {
  const int col = x.landmark_index(id);
  if (col < 0) throw std::invalid_argument("transformed_he: unknown landmark");
  MatX he = MatX::Zero(3, x.dim());
  he.block<3, 3>(0, kPosIdx) = -Mat3::Identity();
  he.block<3, 3>(0, col) = Mat3::Identity();
  return he;
}

}  // namespace teskf
