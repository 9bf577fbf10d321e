#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teskf/filter.hpp"
#include "teskf/simulator.hpp"

namespace teskf {

// Experiment configuration. Defaults follow the Monte-Carlo simulation
// table: accel white 2.00e-03, gyro white 1.70e-04, accel walk 3.00e-03,
// gyro walk 2.00e-05, pixel noise 2, IMU 400 Hz, camera 10 Hz, at most 100
// points per frame.
struct RunConfig {
  // trajectory / world
  std::string trajectory = "circle";  // circle | figure-eight | sinusoid-3d
  double radius_m = 4.0;
  double period_s = 12.0;
  double duration_s = 60.0;
  std::string yaw_mode = "tangent";  // tangent | fixed
  double altitude_m = 1.5;
  double altitude_amp_m = 0.0;
  double pitch_amp_rad = 0.0;
  int n_landmarks = 300;
  double landmark_shell_radius_m = 8.0;
  double landmark_z_min_m = -1.0;
  double landmark_z_max_m = 4.0;

  // sensors
  double sigma_g = 1.70e-4;
  double sigma_a = 2.00e-3;
  double sigma_gw = 2.00e-5;
  double sigma_aw = 3.00e-3;
  double sigma_pix = 2.0;
  double imu_hz = 400.0;
  double cam_hz = 10.0;
  int max_pts_per_frame = 100;
  double fx = 460.0, fy = 460.0, cx = 320.0, cy = 240.0;

  // filters
  std::vector<std::string> filters = {"eskf", "fej-eskf", "t-eskf"};
  std::string teskf_correction = "prior";  // prior | posterior
  double gate_chi2 = 5.991;
  int max_landmarks = 30;
  double landmark_prior_sigma_m = 5.0;
  double min_baseline_m = 0.2;
  int min_observations = 3;

  // initial estimate perturbation / prior
  double init_att_sigma_rad = 5e-3;
  double init_pos_sigma_m = 0.05;
  double init_vel_sigma = 0.05;
  double init_bg_sigma = 3e-3;
  double init_ba_sigma = 3e-2;

  // experiment
  int n_runs = 50;
  std::uint64_t seed = 42;
  int jobs = 1;

  SimWorld make_world(std::uint64_t world_seed) const;
  FilterOptions make_filter_options(FilterKind kind) const;
  std::vector<FilterKind> filter_kinds() const;
  MatX initial_covariance() const;

  std::string to_json() const;  // effective config, all fields explicit
};

// Parses a JSON config document; missing fields take the defaults above.
// Unknown keys, malformed JSON and out-of-range values raise
// ConfigError with the offending key in the message.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
RunConfig parse_config_text(const std::string &text);
RunConfig parse_config_file(const std::string &path);

}  // namespace teskf
