#pragma once

#include <optional>
#include <stdexcept>

#include "teskf/types.hpp"

namespace teskf {

// Linear interpolation of raw IMU readings inside a sample interval.
struct ImuInput {
  Vec3 omega_m;
  Vec3 accel_m;
};
ImuInput interpolate_input(const ImuSample &s0, const ImuSample &s1, double t);

// Time derivative of the nominal IMU state with process noise set to zero:
// R' = R [w_m - bg]x, p' = v, v' = R (a_m - ba) + g.
struct ImuStateDot {
  Mat3 R_dot;
  Vec3 p_dot;
  Vec3 v_dot;
};
ImuStateDot nominal_derivative(const ImuState &x, const ImuInput &u, const Vec3 &gravity);

// RK4 step of the nominal IMU state over [s0.t, s1.t] with linearly
// interpolated inputs; the returned orientation is re-orthonormalized.
// Biases and landmarks are constant. Throws on non-increasing timestamps
// or a step larger than 0.1 s.
ImuState propagate_imu_nominal(const ImuState &x, const ImuSample &s0,
                               const ImuSample &s1, const Vec3 &gravity);

VinsState propagate_nominal(const VinsState &x, const ImuSample &s0,
                            const ImuSample &s1, const Vec3 &gravity);

// Continuous-time error-state Jacobians in the bias-augmented layout.
// F is (15+3m)^2, G is (15+3m)x12 over noise [n_g, n_a, n_gw, n_aw];
// landmark rows and columns are zero.
struct ErrorJacobians {
  MatX F;
  MatX G;
};
ErrorJacobians continuous_error_jacobians(const VinsState &x, const ImuSample &u);

// 15x15 / 15x12 IMU blocks of the same Jacobians (hot-path form).
void imu_error_jacobians(const ImuState &x, const Vec3 &omega_m, const Vec3 &accel_m,
                         Mat15 &F, Mat15x12 &G);

// Pinhole projection of a landmark through the IMU->camera extrinsics.
// Returns nullopt when the point is at or behind the camera (depth <= 1e-3).
std::optional<Vec2> measure(const VinsState &x, const CameraModel &cam, LandmarkId id);
std::optional<Vec2> project_point(const Vec3 &p_in_imu, const CameraModel &cam);

// Measurement Jacobians: Pi = dh/d(Ip_L) * Rhat^T (2x3),
// H_e = [ [l-p]x  -I  0  0  0 ... I(at id) ... ]  (3 x (15+3m)),
// H = Pi * H_e. Returns nullopt when the landmark is behind the camera.
struct MeasurementJacobian {
  Eigen::Matrix<double, 2, 3> Pi;
  MatX He;
  MatX H;
};
std::optional<MeasurementJacobian> measurement_jacobian(const VinsState &x,
                                                        const CameraModel &cam,
                                                        LandmarkId id);

}  // namespace teskf
