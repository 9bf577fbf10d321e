#include "teskf/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace teskf {

using nlohmann::json;

SimWorld RunConfig::make_world(std::uint64_t world_seed) const {
  SimWorld w;
  w.seed = world_seed;
  if (trajectory == "circle") {
    w.trajectory.shape = TrajectoryShape::kCircle;
  } else if (trajectory == "figure-eight") {
    w.trajectory.shape = TrajectoryShape::kFigureEight;
  } else {
    w.trajectory.shape = TrajectoryShape::kSinusoid3d;
  }
  w.trajectory.radius = radius_m;
  w.trajectory.period = period_s;
  w.trajectory.duration = duration_s;
  w.trajectory.yaw_mode = yaw_mode == "fixed" ? YawMode::kFixed : YawMode::kTangent;
  w.trajectory.altitude = altitude_m;
  w.trajectory.altitude_amp = altitude_amp_m;
  w.trajectory.pitch_amp = pitch_amp_rad;
  if (w.trajectory.shape == TrajectoryShape::kSinusoid3d) {
    if (w.trajectory.altitude_amp == 0.0) w.trajectory.altitude_amp = 0.5;
    if (w.trajectory.pitch_amp == 0.0) w.trajectory.pitch_amp = 0.1;
  }
  w.landmarks = scatter_landmarks(landmark_shell_radius_m, landmark_z_min_m,
                                  landmark_z_max_m, n_landmarks, world_seed);
  w.noise.sigma_g = sigma_g;
  w.noise.sigma_a = sigma_a;
  w.noise.sigma_gw = sigma_gw;
  w.noise.sigma_aw = sigma_aw;
  w.noise.sigma_pix = sigma_pix;
  w.cam.fx = fx;
  w.cam.fy = fy;
  w.cam.cx = cx;
  w.cam.cy = cy;
  w.cam.R_CI << 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0;  // forward-looking
  w.imu_hz = imu_hz;
  w.cam_hz = cam_hz;
  w.max_points_per_frame = max_pts_per_frame;
  return w;
}

FilterOptions RunConfig::make_filter_options(FilterKind kind) const {
  FilterOptions o;
  o.kind = kind;
  o.variant = teskf_correction == "posterior" ? CorrectionVariant::kPosteriorTransform
                                              : CorrectionVariant::kPriorTransform;
  o.gate_chi2 = gate_chi2;
  o.max_landmarks = max_landmarks;
  o.landmark_prior_sigma = landmark_prior_sigma_m;
  o.min_baseline = min_baseline_m;
  o.min_observations = min_observations;
  o.cam.fx = fx;
  o.cam.fy = fy;
  o.cam.cx = cx;
  o.cam.cy = cy;
  o.cam.R_CI << 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0;
  o.noise.sigma_g = sigma_g;
  o.noise.sigma_a = sigma_a;
  o.noise.sigma_gw = sigma_gw;
  o.noise.sigma_aw = sigma_aw;
  o.noise.sigma_pix = sigma_pix;
  return o;
}

std::vector<FilterKind> RunConfig::filter_kinds() const {
  std::vector<FilterKind> kinds;
  for (const auto &f : filters) {
    if (f == "eskf") kinds.push_back(FilterKind::kEskf);
    else if (f == "fej-eskf" || f == "fej") kinds.push_back(FilterKind::kFejEskf);
    else if (f == "t-eskf" || f == "teskf") kinds.push_back(FilterKind::kTEskf);
    else throw ConfigError("unknown filter kind: " + f);
  }
  return kinds;
}

MatX RunConfig::initial_covariance() const {
  MatX P0 = MatX::Zero(kImuDim, kImuDim);
  P0.block<3, 3>(kThetaIdx, kThetaIdx) =
      init_att_sigma_rad * init_att_sigma_rad * Mat3::Identity();
  P0.block<3, 3>(kPosIdx, kPosIdx) = init_pos_sigma_m * init_pos_sigma_m * Mat3::Identity();
  P0.block<3, 3>(kVelIdx, kVelIdx) = init_vel_sigma * init_vel_sigma * Mat3::Identity();
  P0.block<3, 3>(kBgIdx, kBgIdx) = init_bg_sigma * init_bg_sigma * Mat3::Identity();
  P0.block<3, 3>(kBaIdx, kBaIdx) = init_ba_sigma * init_ba_sigma * Mat3::Identity();
  return P0;
}

namespace {

json to_json_object(const RunConfig &c) {
  json j;
  j["trajectory"] = c.trajectory;
  j["radius_m"] = c.radius_m;
  j["period_s"] = c.period_s;
  j["duration_s"] = c.duration_s;
  j["yaw_mode"] = c.yaw_mode;
  j["altitude_m"] = c.altitude_m;
  j["altitude_amp_m"] = c.altitude_amp_m;
  j["pitch_amp_rad"] = c.pitch_amp_rad;
  j["n_landmarks"] = c.n_landmarks;
  j["landmark_shell_radius_m"] = c.landmark_shell_radius_m;
  j["landmark_z_min_m"] = c.landmark_z_min_m;
  j["landmark_z_max_m"] = c.landmark_z_max_m;
  j["sigma_g"] = c.sigma_g;
  j["sigma_a"] = c.sigma_a;
  j["sigma_gw"] = c.sigma_gw;
  j["sigma_aw"] = c.sigma_aw;
  j["sigma_pix"] = c.sigma_pix;
  j["imu_hz"] = c.imu_hz;
  j["cam_hz"] = c.cam_hz;
  j["max_pts_per_frame"] = c.max_pts_per_frame;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["filters"] = c.filters;
  j["teskf_correction"] = c.teskf_correction;
  j["gate_chi2"] = c.gate_chi2;
  j["max_landmarks"] = c.max_landmarks;
  j["landmark_prior_sigma_m"] = c.landmark_prior_sigma_m;
  j["min_baseline_m"] = c.min_baseline_m;
  j["min_observations"] = c.min_observations;
  j["init_att_sigma_rad"] = c.init_att_sigma_rad;
  j["init_pos_sigma_m"] = c.init_pos_sigma_m;
  j["init_vel_sigma"] = c.init_vel_sigma;
  j["init_bg_sigma"] = c.init_bg_sigma;
  j["init_ba_sigma"] = c.init_ba_sigma;
  j["n_runs"] = c.n_runs;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  return j;
}

void require(bool ok, const std::string &key, const std::string &what) {
  if (!ok) throw ConfigError("config key '" + key + "': " + what);
}

}  // namespace

std::string RunConfig::to_json() const { return to_json_object(*this).dump(2); }

RunConfig parse_config_text(const std::string &text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error &e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");

  RunConfig c;
  const json defaults = to_json_object(c);
  for (const auto &[key, value] : doc.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    (void)value;
  }

  auto get = [&doc](const char *key, auto &field) {
    if (doc.contains(key)) {
      try {
        field = doc.at(key).get<std::decay_t<decltype(field)>>();
      } catch (const json::exception &) {
        throw ConfigError(std::string("config key '") + key + "': wrong type");
      }
    }
  };

  get("trajectory", c.trajectory);
  get("radius_m", c.radius_m);
  get("period_s", c.period_s);
  get("duration_s", c.duration_s);
  get("yaw_mode", c.yaw_mode);
  get("altitude_m", c.altitude_m);
  get("altitude_amp_m", c.altitude_amp_m);
  get("pitch_amp_rad", c.pitch_amp_rad);
  get("n_landmarks", c.n_landmarks);
  get("landmark_shell_radius_m", c.landmark_shell_radius_m);
  get("landmark_z_min_m", c.landmark_z_min_m);
  get("landmark_z_max_m", c.landmark_z_max_m);
  get("sigma_g", c.sigma_g);
  get("sigma_a", c.sigma_a);
  get("sigma_gw", c.sigma_gw);
  get("sigma_aw", c.sigma_aw);
  get("sigma_pix", c.sigma_pix);
  get("imu_hz", c.imu_hz);
  get("cam_hz", c.cam_hz);
  get("max_pts_per_frame", c.max_pts_per_frame);
  get("fx", c.fx);
  get("fy", c.fy);
  get("cx", c.cx);
  get("cy", c.cy);
  get("filters", c.filters);
  get("teskf_correction", c.teskf_correction);
  get("gate_chi2", c.gate_chi2);
  get("max_landmarks", c.max_landmarks);
  get("landmark_prior_sigma_m", c.landmark_prior_sigma_m);
  get("min_baseline_m", c.min_baseline_m);
  get("min_observations", c.min_observations);
  get("init_att_sigma_rad", c.init_att_sigma_rad);
  get("init_pos_sigma_m", c.init_pos_sigma_m);
  get("init_vel_sigma", c.init_vel_sigma);
  get("init_bg_sigma", c.init_bg_sigma);
  get("init_ba_sigma", c.init_ba_sigma);
  get("n_runs", c.n_runs);
  get("seed", c.seed);
  get("jobs", c.jobs);

  require(c.trajectory == "circle" || c.trajectory == "figure-eight" ||
              c.trajectory == "sinusoid-3d",
          "trajectory", "must be circle, figure-eight or sinusoid-3d");
  require(c.yaw_mode == "tangent" || c.yaw_mode == "fixed", "yaw_mode",
          "must be tangent or fixed");
  require(c.teskf_correction == "prior" || c.teskf_correction == "posterior",
          "teskf_correction", "must be prior or posterior");
  require(c.radius_m > 0.0, "radius_m", "must be positive");
  require(c.period_s > 0.0, "period_s", "must be positive");
  require(c.duration_s > 0.0, "duration_s", "must be positive");
  require(c.imu_hz > 0.0, "imu_hz", "must be positive");
  require(c.cam_hz > 0.0, "cam_hz", "must be positive");
  require(c.imu_hz >= c.cam_hz, "imu_hz", "must be at least cam_hz");
  require(c.sigma_g >= 0.0, "sigma_g", "must be non-negative");
  require(c.sigma_a >= 0.0, "sigma_a", "must be non-negative");
  require(c.sigma_gw >= 0.0, "sigma_gw", "must be non-negative");
  require(c.sigma_aw >= 0.0, "sigma_aw", "must be non-negative");
  require(c.sigma_pix >= 0.0, "sigma_pix", "must be non-negative");
  require(c.fx > 0.0, "fx", "must be positive");
  require(c.fy > 0.0, "fy", "must be positive");
  require(c.n_landmarks >= 1, "n_landmarks", "must be at least 1");
  require(c.max_pts_per_frame >= 1, "max_pts_per_frame", "must be at least 1");
  require(c.max_landmarks >= 1, "max_landmarks", "must be at least 1");
  require(c.min_observations >= 2, "min_observations", "must be at least 2");
  require(c.n_runs >= 1, "n_runs", "must be at least 1");
  require(c.jobs >= 1, "jobs", "must be at least 1");
  require(!c.filters.empty(), "filters", "must name at least one filter");
  c.filter_kinds();  // validates names
  return c;
}

RunConfig parse_config_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace teskf
