#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "teskf/lie.hpp"

namespace teskf {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Mat15 = Eigen::Matrix<double, 15, 15>;
using Mat15x12 = Eigen::Matrix<double, 15, 12>;
using LandmarkId = std::int64_t;

// Error-vector layout: [theta(0) p(3) v(6) bg(9) ba(12) l_0(15) l_1(18) ...]
inline constexpr int kThetaIdx = 0;
inline constexpr int kPosIdx = 3;
inline constexpr int kVelIdx = 6;
inline constexpr int kBgIdx = 9;
inline constexpr int kBaIdx = 12;
inline constexpr int kImuDim = 15;

struct ImuState {
  Mat3 R = Mat3::Identity();  // body to global
  Vec3 p = Vec3::Zero();      // m
  Vec3 v = Vec3::Zero();      // m/s
  Vec3 bg = Vec3::Zero();     // rad/s
  Vec3 ba = Vec3::Zero();     // m/s^2
};

// Nominal estimate: IMU state plus an ordered landmark map. Landmark order
// is stable (insertion order) and matches the covariance column layout.
struct VinsState {
  ImuState imu;
  std::vector<std::pair<LandmarkId, Vec3>> landmarks;

  int num_landmarks() const { return static_cast<int>(landmarks.size()); }
  int dim() const { return kImuDim + 3 * num_landmarks(); }

  // Column offset of a landmark's error block, or -1 if absent.
  int landmark_index(LandmarkId id) const {
    for (int i = 0; i < num_landmarks(); ++i) {
      if (landmarks[i].first == id) return kImuDim + 3 * i;
    }
    return -1;
  }
  const Vec3 *landmark(LandmarkId id) const {
    for (const auto &[lid, pos] : landmarks) {
      if (lid == id) return &pos;
    }
    return nullptr;
  }
};

// x_new = x (+) dx: Exp(dtheta) * R on orientation, additive elsewhere.
VinsState boxplus(const VinsState &x, const VecX &dx);

// x (-) xhat: Log(R * Rhat^T) on orientation, subtraction elsewhere.
// Landmark sets must match (same ids, same order).
VecX boxminus(const VinsState &x, const VinsState &xhat);

struct ImuSample {
  double t = 0.0;     // s
  Vec3 omega_m = Vec3::Zero();  // rad/s
  Vec3 accel_m = Vec3::Zero();  // m/s^2
};

struct CameraModel {
  double fx = 460.0, fy = 460.0;  // px
  double cx = 320.0, cy = 240.0;  // px
  Mat3 R_CI = Mat3::Identity();   // IMU frame -> camera frame
  Vec3 p_CI = Vec3::Zero();       // m

  double width() const { return 2.0 * cx; }
  double height() const { return 2.0 * cy; }
};

struct NoiseParams {
  double sigma_g = 1.70e-4;   // gyro white, rad/s/sqrt(Hz)
  double sigma_a = 2.00e-3;   // accel white, m/s^2/sqrt(Hz)
  double sigma_gw = 2.00e-5;  // gyro walk, rad/s^2/sqrt(Hz)
  double sigma_aw = 3.00e-3;  // accel walk, m/s^3/sqrt(Hz)
  double sigma_pix = 2.0;     // px
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);

  // Continuous-time E(nn^T) for n = [n_g, n_a, n_gw, n_aw].
  Eigen::Matrix<double, 12, 12> Qc() const {
    Eigen::Matrix<double, 12, 12> q = Eigen::Matrix<double, 12, 12>::Zero();
    q.block<3, 3>(0, 0) = sigma_g * sigma_g * Mat3::Identity();
    q.block<3, 3>(3, 3) = sigma_a * sigma_a * Mat3::Identity();
    q.block<3, 3>(6, 6) = sigma_gw * sigma_gw * Mat3::Identity();
    q.block<3, 3>(9, 9) = sigma_aw * sigma_aw * Mat3::Identity();
    return q;
  }
};

struct PixelObservation {
  LandmarkId id = 0;
  Vec2 uv = Vec2::Zero();
};

struct CameraFrame {
  double t = 0.0;
  std::vector<PixelObservation> observations;
  double sigma_pix = 2.0;
};

}  // namespace teskf
