#include "teskf/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "teskf/rng.hpp"
#include "teskf/vins_model.hpp"

namespace teskf {

namespace {

Mat3 rot_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0.0, std::sin(a), std::cos(a), 0.0, 0.0, 0.0, 1.0;
  return r;
}

Mat3 rot_y(double a) {
  Mat3 r;
  r << std::cos(a), 0.0, std::sin(a), 0.0, 1.0, 0.0, -std::sin(a), 0.0, std::cos(a);
  return r;
}

struct PlanarKinematics {
  Vec3 p, v, a;
};

PlanarKinematics xy_path(const TrajectorySpec &spec, double t) {
  const double w = 2.0 * M_PI / spec.period;
  PlanarKinematics k;
  switch (spec.shape) {
    case TrajectoryShape::kFigureEight: {
      // Gerono lemniscate: x = r sin(wt), y = r/2 sin(2wt)
      const double r = spec.radius;
      k.p = Vec3(r * std::sin(w * t), 0.5 * r * std::sin(2.0 * w * t), 0.0);
      k.v = Vec3(r * w * std::cos(w * t), r * w * std::cos(2.0 * w * t), 0.0);
      k.a = Vec3(-r * w * w * std::sin(w * t), -2.0 * r * w * w * std::sin(2.0 * w * t), 0.0);
      break;
    }
    case TrajectoryShape::kCircle:
    case TrajectoryShape::kSinusoid3d: {
      const double r = spec.radius;
      k.p = Vec3(r * std::cos(w * t), r * std::sin(w * t), 0.0);
      k.v = Vec3(-r * w * std::sin(w * t), r * w * std::cos(w * t), 0.0);
      k.a = Vec3(-r * w * w * std::cos(w * t), -r * w * w * std::sin(w * t), 0.0);
      break;
    }
  }
  return k;
}

}  // namespace

TruthSample truth_at(const TrajectorySpec &spec, double t) {
  if (t < 0.0 || t > spec.duration + 1e-9) {
    throw std::out_of_range("truth_at: t outside [0, duration]");
  }
  const double w = 2.0 * M_PI / spec.period;
  PlanarKinematics k = xy_path(spec, t);

  // Altitude: z = altitude + altitude_amp * sin(2wt)
  const double wz = 2.0 * w;
  k.p.z() = spec.altitude + spec.altitude_amp * std::sin(wz * t);
  k.v.z() = spec.altitude_amp * wz * std::cos(wz * t);
  k.a.z() = -spec.altitude_amp * wz * wz * std::sin(wz * t);

  TruthSample out;
  out.p = k.p;
  out.v = k.v;
  out.a_world = k.a;

  double yaw = 0.0, yaw_rate = 0.0;
  if (spec.yaw_mode == YawMode::kTangent) {
    yaw = std::atan2(k.v.y(), k.v.x());
    const double speed2 = k.v.x() * k.v.x() + k.v.y() * k.v.y();
    yaw_rate = (k.v.x() * k.a.y() - k.v.y() * k.a.x()) / speed2;
  }
  const double pitch = spec.pitch_amp * std::sin(wz * t);
  const double pitch_rate = spec.pitch_amp * wz * std::cos(wz * t);

  const Mat3 Ry = rot_y(pitch);
  out.R = rot_z(yaw) * Ry;
  // R = Rz(yaw) Ry(pitch): R^T Rdot = yaw_rate [Ry^T e_z]x + pitch_rate [e_y]x
  out.omega_body = yaw_rate * (Ry.transpose() * Vec3::UnitZ()) + pitch_rate * Vec3::UnitY();
  return out;
}

ImuData gen_imu(const SimWorld &world) {
  const double dt = 1.0 / world.imu_hz;
  const int n = static_cast<int>(std::llround(world.trajectory.duration * world.imu_hz));

  Rng master(world.seed);
  Rng gyro_white = master.stream("gyro_white");
  Rng accel_white = master.stream("accel_white");
  Rng gyro_walk = master.stream("gyro_walk");
  Rng accel_walk = master.stream("accel_walk");

  const double sg = world.noise.sigma_g / std::sqrt(dt);
  const double sa = world.noise.sigma_a / std::sqrt(dt);
  const double sgw = world.noise.sigma_gw * std::sqrt(dt);
  const double saw = world.noise.sigma_aw * std::sqrt(dt);

  auto gauss3 = [](Rng &r) { return Vec3(r.next_gaussian(), r.next_gaussian(), r.next_gaussian()); };

  ImuData out;
  out.samples.resize(n + 1);
  out.bias_gyro.resize(n + 1);
  out.bias_accel.resize(n + 1);
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();
  for (int i = 0; i <= n; ++i) {
    const double t = i * dt;
    const TruthSample truth = truth_at(world.trajectory, std::min(t, world.trajectory.duration));
    out.bias_gyro[i] = bg;
    out.bias_accel[i] = ba;
    ImuSample &s = out.samples[i];
    s.t = t;
    s.omega_m = truth.omega_body + bg + sg * gauss3(gyro_white);
    s.accel_m = truth.R.transpose() * (truth.a_world - world.noise.gravity) + ba +
                sa * gauss3(accel_white);
    bg += sgw * gauss3(gyro_walk);
    ba += saw * gauss3(accel_walk);
  }
  return out;
}

std::vector<CameraFrame> gen_frames(const SimWorld &world) {
  const double imu_dt = 1.0 / world.imu_hz;
  const int stride = static_cast<int>(std::llround(world.imu_hz / world.cam_hz));
  if (stride < 1) throw std::invalid_argument("gen_frames: IMU rate below camera rate");
  const int n_imu = static_cast<int>(std::llround(world.trajectory.duration * world.imu_hz));

  Rng pixel = Rng(world.seed).stream("pixel");

  std::vector<CameraFrame> frames;
  for (int i = 0; i <= n_imu; i += stride) {
    const double t = i * imu_dt;
    const TruthSample truth = truth_at(world.trajectory, std::min(t, world.trajectory.duration));

    struct Candidate {
      LandmarkId id;
      Vec2 uv;
      double depth;
    };
    std::vector<Candidate> visible;
    for (const auto &[id, pos] : world.landmarks) {
      const Vec3 p_in_imu = truth.R.transpose() * (pos - truth.p);
      const Vec3 pc = world.cam.R_CI * p_in_imu + world.cam.p_CI;
      if (pc.z() < world.min_depth || pc.z() > world.max_depth) continue;
      const auto uv = project_point(p_in_imu, world.cam);
      if (!uv) continue;
      if ((*uv).x() < 0.0 || (*uv).x() > world.cam.width() || (*uv).y() < 0.0 ||
          (*uv).y() > world.cam.height()) {
        continue;
      }
      visible.push_back({id, *uv, pc.z()});
    }
    std::sort(visible.begin(), visible.end(), [](const Candidate &a, const Candidate &b) {
      return a.depth != b.depth ? a.depth < b.depth : a.id < b.id;
    });
    if (static_cast<int>(visible.size()) > world.max_points_per_frame) {
      visible.resize(world.max_points_per_frame);
    }

    CameraFrame frame;
    frame.t = t;
    frame.sigma_pix = world.noise.sigma_pix;
    frame.observations.reserve(visible.size());
    for (const auto &c : visible) {
      PixelObservation obs;
      obs.id = c.id;
      obs.uv = c.uv + world.noise.sigma_pix * Vec2(pixel.next_gaussian(), pixel.next_gaussian());
      frame.observations.push_back(obs);
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::map<LandmarkId, Vec3> scatter_landmarks(double shell_radius, double z_min,
                                             double z_max, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("scatter_landmarks: n must be >= 1");
  Rng rng = Rng(seed).stream("landmarks");
  std::map<LandmarkId, Vec3> out;
  for (int i = 0; i < n; ++i) {
    const double angle = 2.0 * M_PI * rng.next_uniform();
    const double z = z_min + (z_max - z_min) * rng.next_uniform();
    out[i] = Vec3(shell_radius * std::cos(angle), shell_radius * std::sin(angle), z);
  }
  return out;
}

SimWorld default_world(std::uint64_t seed) {
  SimWorld w;
  w.seed = seed;
  w.trajectory.shape = TrajectoryShape::kCircle;
  w.trajectory.radius = 4.0;
  w.trajectory.period = 12.0;
  w.trajectory.duration = 60.0;
  w.trajectory.yaw_mode = YawMode::kTangent;
  w.trajectory.altitude = 1.5;
  w.landmarks = scatter_landmarks(8.0, -1.0, 4.0, 300, seed);
  // forward-looking camera: optical axis along body x
  w.cam.R_CI << 0.0, -1.0, 0.0,
                0.0, 0.0, -1.0,
                1.0, 0.0, 0.0;
  return w;
}

}  // namespace teskf
