#include "teskf/vins_model.hpp"

#include <cmath>

namespace teskf {

VinsState boxplus(const VinsState &x, const VecX &dx) {
  if (dx.size() != x.dim()) throw std::invalid_argument("boxplus: dimension mismatch");
  VinsState out = x;
  out.imu.R = exp_so3(dx.segment<3>(kThetaIdx)) * x.imu.R;
  out.imu.p += dx.segment<3>(kPosIdx);
  out.imu.v += dx.segment<3>(kVelIdx);
  out.imu.bg += dx.segment<3>(kBgIdx);
  out.imu.ba += dx.segment<3>(kBaIdx);
  for (int i = 0; i < x.num_landmarks(); ++i) {
    out.landmarks[i].second += dx.segment<3>(kImuDim + 3 * i);
  }
  return out;
}

VecX boxminus(const VinsState &x, const VinsState &xhat) {
  if (x.num_landmarks() != xhat.num_landmarks()) {
    throw std::invalid_argument("boxminus: landmark count mismatch");
  }
  VecX e(x.dim());
  e.segment<3>(kThetaIdx) = log_so3(x.imu.R * xhat.imu.R.transpose());
  e.segment<3>(kPosIdx) = x.imu.p - xhat.imu.p;
  e.segment<3>(kVelIdx) = x.imu.v - xhat.imu.v;
  e.segment<3>(kBgIdx) = x.imu.bg - xhat.imu.bg;
  e.segment<3>(kBaIdx) = x.imu.ba - xhat.imu.ba;
  for (int i = 0; i < x.num_landmarks(); ++i) {
    if (x.landmarks[i].first != xhat.landmarks[i].first) {
      throw std::invalid_argument("boxminus: landmark id mismatch");
    }
    e.segment<3>(kImuDim + 3 * i) = x.landmarks[i].second - xhat.landmarks[i].second;
  }
  return e;
}

ImuInput interpolate_input(const ImuSample &s0, const ImuSample &s1, double t) {
  const double span = s1.t - s0.t;
  const double a = span > 0.0 ? (t - s0.t) / span : 0.0;
  return {(1.0 - a) * s0.omega_m + a * s1.omega_m,
          (1.0 - a) * s0.accel_m + a * s1.accel_m};
}

ImuStateDot nominal_derivative(const ImuState &x, const ImuInput &u, const Vec3 &gravity) {
  ImuStateDot d;
  d.R_dot = x.R * skew(u.omega_m - x.bg);
  d.p_dot = x.v;
  d.v_dot = x.R * (u.accel_m - x.ba) + gravity;
  return d;
}

namespace {

struct Rk4Stage {
  Mat3 R;
  Vec3 p;
  Vec3 v;
};

void check_interval(const ImuSample &s0, const ImuSample &s1) {
  const double dt = s1.t - s0.t;
  if (!(dt > 0.0)) throw std::invalid_argument("propagate: non-increasing timestamps");
  if (dt > 0.1) throw std::invalid_argument("propagate: IMU step larger than 0.1 s");
}

}  // namespace

ImuState propagate_imu_nominal(const ImuState &x, const ImuSample &s0,
                               const ImuSample &s1, const Vec3 &gravity) {
  check_interval(s0, s1);
  const double dt = s1.t - s0.t;

  auto deriv = [&](const Rk4Stage &s, double t) {
    ImuState tmp = x;
    tmp.R = s.R;
    tmp.p = s.p;
    tmp.v = s.v;
    return nominal_derivative(tmp, interpolate_input(s0, s1, t), gravity);
  };

  const Rk4Stage y0{x.R, x.p, x.v};
  const ImuStateDot k1 = deriv(y0, s0.t);
  const Rk4Stage y1{x.R + 0.5 * dt * k1.R_dot, x.p + 0.5 * dt * k1.p_dot,
                    x.v + 0.5 * dt * k1.v_dot};
  const ImuStateDot k2 = deriv(y1, s0.t + 0.5 * dt);
  const Rk4Stage y2{x.R + 0.5 * dt * k2.R_dot, x.p + 0.5 * dt * k2.p_dot,
                    x.v + 0.5 * dt * k2.v_dot};
  const ImuStateDot k3 = deriv(y2, s0.t + 0.5 * dt);
  const Rk4Stage y3{x.R + dt * k3.R_dot, x.p + dt * k3.p_dot, x.v + dt * k3.v_dot};
  const ImuStateDot k4 = deriv(y3, s1.t);

  ImuState out = x;
  out.R = nearest_rotation(x.R + (dt / 6.0) * (k1.R_dot + 2.0 * k2.R_dot +
                                               2.0 * k3.R_dot + k4.R_dot));
  out.p = x.p + (dt / 6.0) * (k1.p_dot + 2.0 * k2.p_dot + 2.0 * k3.p_dot + k4.p_dot);
  out.v = x.v + (dt / 6.0) * (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot);
  return out;
}

VinsState propagate_nominal(const VinsState &x, const ImuSample &s0,
                            const ImuSample &s1, const Vec3 &gravity) {
  VinsState out = x;
  out.imu = propagate_imu_nominal(x.imu, s0, s1, gravity);
  return out;
}

void imu_error_jacobians(const ImuState &x, const Vec3 &omega_m, const Vec3 &accel_m,
                         Mat15 &F, Mat15x12 &G) {
  (void)omega_m;
  F.setZero();
  G.setZero();
  F.block<3, 3>(kThetaIdx, kBgIdx) = -x.R;
  F.block<3, 3>(kPosIdx, kVelIdx) = Mat3::Identity();
  F.block<3, 3>(kVelIdx, kThetaIdx) = -skew(x.R * (accel_m - x.ba));
  F.block<3, 3>(kVelIdx, kBaIdx) = -x.R;
  G.block<3, 3>(kThetaIdx, 0) = -x.R;
  G.block<3, 3>(kVelIdx, 3) = -x.R;
  G.block<3, 3>(kBgIdx, 6) = Mat3::Identity();
  G.block<3, 3>(kBaIdx, 9) = Mat3::Identity();
}

ErrorJacobians continuous_error_jacobians(const VinsState &x, const ImuSample &u) {
  const int n = x.dim();
  Mat15 Fi;
  Mat15x12 Gi;
  imu_error_jacobians(x.imu, u.omega_m, u.accel_m, Fi, Gi);
  ErrorJacobians j;
  j.F = MatX::Zero(n, n);
  j.G = MatX::Zero(n, 12);
  j.F.topLeftCorner<kImuDim, kImuDim>() = Fi;
  j.G.topRows<kImuDim>() = Gi;
  return j;
}

std::optional<Vec2> project_point(const Vec3 &p_in_imu, const CameraModel &cam) {
  const Vec3 pc = cam.R_CI * p_in_imu + cam.p_CI;
  if (pc.z() <= 1e-3) return std::nullopt;
  return Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
}

std::optional<Vec2> measure(const VinsState &x, const CameraModel &cam, LandmarkId id) {
  const Vec3 *l = x.landmark(id);
  if (l == nullptr) return std::nullopt;
  const Vec3 p_in_imu = x.imu.R.transpose() * (*l - x.imu.p);
  return project_point(p_in_imu, cam);
}

std::optional<MeasurementJacobian> measurement_jacobian(const VinsState &x,
                                                        const CameraModel &cam,
                                                        LandmarkId id) {
  const Vec3 *l = x.landmark(id);
  if (l == nullptr) return std::nullopt;
  const Vec3 p_in_imu = x.imu.R.transpose() * (*l - x.imu.p);
  const Vec3 pc = cam.R_CI * p_in_imu + cam.p_CI;
  if (pc.z() <= 1e-3) return std::nullopt;

  Eigen::Matrix<double, 2, 3> dpi;  // d(u,v)/d(pc)
  const double inv_z = 1.0 / pc.z();
  dpi << cam.fx * inv_z, 0.0, -cam.fx * pc.x() * inv_z * inv_z,
      0.0, cam.fy * inv_z, -cam.fy * pc.y() * inv_z * inv_z;

  MeasurementJacobian out;
  out.Pi = dpi * cam.R_CI * x.imu.R.transpose();
  out.He = MatX::Zero(3, x.dim());
  out.He.block<3, 3>(0, kThetaIdx) = skew(*l - x.imu.p);
  out.He.block<3, 3>(0, kPosIdx) = -Mat3::Identity();
  out.He.block<3, 3>(0, x.landmark_index(id)) = Mat3::Identity();
  out.H = out.Pi * out.He;
  return out;
}

}  // namespace teskf
