#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "teskf/types.hpp"

namespace teskf {

enum class TrajectoryShape { kCircle, kFigureEight, kSinusoid3d };
enum class YawMode { kFixed, kTangent };

struct TrajectorySpec {
  TrajectoryShape shape = TrajectoryShape::kCircle;
  double radius = 4.0;        // circle radius / figure-eight x amplitude, m
  double period = 12.0;       // s per pattern repetition
  double duration = 60.0;     // s
  YawMode yaw_mode = YawMode::kTangent;
  double altitude = 1.5;      // mean z, m
  double altitude_amp = 0.0;  // sinusoidal z amplitude, m (0 = level)
  double pitch_amp = 0.0;     // sinusoidal pitch, rad (sinusoid-3d)
};

struct TruthSample {
  Mat3 R;        // body to global
  Vec3 p;
  Vec3 v;
  Vec3 a_world;  // p_ddot
  Vec3 omega_body;
};

// Closed-form trajectory kinematics. Throws if t is outside [0, duration].
TruthSample truth_at(const TrajectorySpec &spec, double t);

struct SimWorld {
  TrajectorySpec trajectory;
  std::map<LandmarkId, Vec3> landmarks;
  NoiseParams noise;
  CameraModel cam;
  double imu_hz = 400.0;
  double cam_hz = 10.0;
  std::uint64_t seed = 42;
  int max_points_per_frame = 100;
  double min_depth = 0.1;   // m
  double max_depth = 40.0;  // m
};

struct ImuData {
  std::vector<ImuSample> samples;
  std::vector<Vec3> bias_gyro;   // true bias per sample
  std::vector<Vec3> bias_accel;
};

// IMU synthesis: inverts the motion model at the truth and adds white noise
// (std sigma/sqrt(dt)) plus random-walk biases (per-step std sigma*sqrt(dt)).
// Deterministic given (world config, seed).
ImuData gen_imu(const SimWorld &world);

// Pixel measurements at camera ticks (aligned to IMU ticks): all landmarks
// projected at the truth pose, filtered by image bounds and depth range,
// capped nearest-first, then perturbed by iid Gaussian pixel noise.
std::vector<CameraFrame> gen_frames(const SimWorld &world);

// Uniform landmark placement on a cylinder shell around the trajectory.
std::map<LandmarkId, Vec3> scatter_landmarks(double shell_radius, double z_min,
                                             double z_max, int n, std::uint64_t seed);

// Default circle world used by the CLI and tests.
SimWorld default_world(std::uint64_t seed);

}  // namespace teskf
