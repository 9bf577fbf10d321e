#include "teskf/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>

#include "teskf/rng.hpp"
#include "teskf/simulator.hpp"
#include "teskf/vins_model.hpp"
#include "json.hpp"

namespace teskf {

std::uint64_t derive_run_seed(std::uint64_t master_seed, int run_idx) {
  return Rng::mix64(master_seed ^ Rng::mix64(static_cast<std::uint64_t>(run_idx) + 1));
}

double nees(const VecX &error, const MatX &cov_slice) {
  const int dim = static_cast<int>(error.size());
  if (cov_slice.rows() != dim || cov_slice.cols() != dim) {
    throw std::invalid_argument("nees: slice dimension mismatch");
  }
  Eigen::LDLT<MatX> ldlt(cov_slice);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    const double value = error.dot(ldlt.solve(error));
    if (std::isfinite(value)) return value / dim;
  }
  MatX reg = cov_slice;
  reg.diagonal().array() += 1e-12 * cov_slice.trace();
  ldlt.compute(reg);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  const double value = error.dot(ldlt.solve(error));
  return std::isfinite(value) ? value / dim : std::numeric_limits<double>::quiet_NaN();
}

std::vector<MetricsRecord> single_run(
    const RunConfig &cfg, int run_idx,
    std::map<std::string, std::vector<std::string>> *update_logs) {
  const std::uint64_t run_seed = derive_run_seed(cfg.seed, run_idx);
  const SimWorld world = cfg.make_world(run_seed);
  const ImuData imu = gen_imu(world);
  const std::vector<CameraFrame> frames = gen_frames(world);
  const int stride = static_cast<int>(std::llround(world.imu_hz / world.cam_hz));

  // Initial estimate: truth perturbed by a draw from the initial covariance.
  Rng init_rng = Rng(run_seed).stream("init");
  auto gauss3 = [&init_rng]() {
    return Vec3(init_rng.next_gaussian(), init_rng.next_gaussian(), init_rng.next_gaussian());
  };
  const TruthSample truth0 = truth_at(world.trajectory, 0.0);
  VinsState init;
  init.imu.R = exp_so3(cfg.init_att_sigma_rad * gauss3()) * truth0.R;
  init.imu.p = truth0.p + cfg.init_pos_sigma_m * gauss3();
  init.imu.v = truth0.v + cfg.init_vel_sigma * gauss3();
  init.imu.bg = cfg.init_bg_sigma * gauss3();  // true biases start at zero
  init.imu.ba = cfg.init_ba_sigma * gauss3();
  const MatX P0 = cfg.initial_covariance();

  std::vector<FilterInstance> filters;
  for (const FilterKind kind : cfg.filter_kinds()) {
    filters.emplace_back(cfg.make_filter_options(kind), init, P0, 0.0);
  }

  std::vector<MetricsRecord> records;
  records.reserve(frames.size() * filters.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    for (auto &filter : filters) {
      if (k > 0) {
        const auto first = imu.samples.begin() + (k - 1) * stride;
        filter.propagate(std::span<const ImuSample>(&*first, stride + 1));
      }
      const UpdateReport report = filter.update(frames[k]);
      if (update_logs != nullptr) {
        (*update_logs)[to_string(filter.options().kind)].push_back(
            report.to_jsonl(filter.state()));
      }

      const TruthSample truth = truth_at(world.trajectory, frames[k].t);
      const Vec3 theta_err = log_so3(truth.R * filter.state().imu.R.transpose());
      const Vec3 pos_err = truth.p - filter.state().imu.p;
      const MatX P = filter.covariance_original();

      MetricsRecord rec;
      rec.run = run_idx;
      rec.t = frames[k].t;
      rec.filter = to_string(filter.options().kind);
      rec.err_rot_deg = theta_err.norm() * 180.0 / M_PI;
      rec.err_yaw_deg = std::abs(theta_err.z()) * 180.0 / M_PI;
      rec.err_pos_m = pos_err.norm();
      rec.nees_rot = nees(theta_err, P.block<3, 3>(kThetaIdx, kThetaIdx));
      VecX yaw_err(1);
      yaw_err(0) = theta_err.z();
      rec.nees_yaw = nees(yaw_err, P.block<1, 1>(kThetaIdx + 2, kThetaIdx + 2));
      rec.nees_pos = nees(pos_err, P.block<3, 3>(kPosIdx, kPosIdx));
      VecX pose_err(6);
      pose_err << theta_err, pos_err;
      rec.nees_pose = nees(pose_err, P.topLeftCorner<6, 6>());
      records.push_back(std::move(rec));
    }
  }
  return records;
}

MonteCarloResult run_monte_carlo(const RunConfig &cfg, int n_runs, int jobs) {
  MonteCarloResult result;
  std::vector<std::vector<MetricsRecord>> per_run(n_runs);
  std::vector<std::string> errors(n_runs);

  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      const int idx = next.fetch_add(1);
      if (idx >= n_runs) return;
      try {
        per_run[idx] = single_run(cfg, idx);
      } catch (const std::exception &e) {
        errors[idx] = std::string("run ") + std::to_string(idx) + " failed: " + e.what();
      }
    }
  };

  const int n_threads = std::max(1, std::min(jobs, n_runs));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
  }

  for (int i = 0; i < n_runs; ++i) {
    result.records.insert(result.records.end(), per_run[i].begin(), per_run[i].end());
    if (!errors[i].empty()) result.run_errors.push_back(errors[i]);
  }
  return result;
}

std::vector<FilterSummary> summarize(std::span<const MetricsRecord> records) {
  struct TickAccum {
    double sq_rot = 0.0, sq_yaw = 0.0, sq_pos = 0.0;
    long n = 0;
  };
  struct FilterAccum {
    std::map<double, TickAccum> ticks;
    double nees_rot = 0.0, nees_yaw = 0.0, nees_pos = 0.0, nees_pose = 0.0;
    double nees_yaw_last = 0.0, nees_pose_last = 0.0;
    long n = 0, n_last = 0;
    double t_max = 0.0;
  };
  std::map<std::string, FilterAccum> acc;
  for (const auto &r : records) {
    auto &a = acc[r.filter];
    a.t_max = std::max(a.t_max, r.t);
  }
  for (const auto &r : records) {
    auto &a = acc[r.filter];
    auto &tick = a.ticks[r.t];
    tick.sq_rot += r.err_rot_deg * r.err_rot_deg;
    tick.sq_yaw += r.err_yaw_deg * r.err_yaw_deg;
    tick.sq_pos += r.err_pos_m * r.err_pos_m;
    ++tick.n;
    if (std::isfinite(r.nees_pose)) {
      a.nees_rot += r.nees_rot;
      a.nees_yaw += r.nees_yaw;
      a.nees_pos += r.nees_pos;
      a.nees_pose += r.nees_pose;
      ++a.n;
      if (r.t >= 0.5 * a.t_max) {
        a.nees_yaw_last += r.nees_yaw;
        a.nees_pose_last += r.nees_pose;
        ++a.n_last;
      }
    }
  }

  std::vector<FilterSummary> out;
  for (const auto &[name, a] : acc) {
    FilterSummary s;
    s.filter = name;
    double rot = 0.0, yaw = 0.0, pos = 0.0;
    for (const auto &[t, tick] : a.ticks) {
      rot += std::sqrt(tick.sq_rot / tick.n);
      yaw += std::sqrt(tick.sq_yaw / tick.n);
      pos += std::sqrt(tick.sq_pos / tick.n);
    }
    const double n_ticks = static_cast<double>(a.ticks.size());
    s.orientation_rmse_deg = rot / n_ticks;
    s.yaw_rmse_deg = yaw / n_ticks;
    s.position_rmse_m = pos / n_ticks;
    s.n_records = a.n;
    if (a.n > 0) {
      s.mean_nees_rot = a.nees_rot / a.n;
      s.mean_nees_yaw = a.nees_yaw / a.n;
      s.mean_nees_pos = a.nees_pos / a.n;
      s.mean_nees_pose = a.nees_pose / a.n;
    }
    if (a.n_last > 0) {
      s.mean_nees_yaw_last_half = a.nees_yaw_last / a.n_last;
      s.mean_nees_pose_last_half = a.nees_pose_last / a.n_last;
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

void write_or_throw(const std::string &path, const std::string &content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

void write_metrics_csv(const std::string &path, std::span<const MetricsRecord> records) {
  std::ostringstream ss;
  ss << "run,t,filter,err_rot_deg,err_yaw_deg,err_pos_m,nees_rot,nees_yaw,nees_pos,nees_pose\n";
  for (const auto &r : records) {
    ss << r.run << ',' << format_double(r.t) << ',' << r.filter << ','
       << format_double(r.err_rot_deg) << ',' << format_double(r.err_yaw_deg) << ','
       << format_double(r.err_pos_m) << ',' << format_double(r.nees_rot) << ','
       << format_double(r.nees_yaw) << ',' << format_double(r.nees_pos) << ','
       << format_double(r.nees_pose) << '\n';
  }
  write_or_throw(path, ss.str());
}

void write_summary_json(const std::string &path, std::span<const FilterSummary> summaries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto &s : summaries) {
    j.push_back({{"filter", s.filter},
                 {"n_records", s.n_records},
                 {"orientation_rmse_deg", s.orientation_rmse_deg},
                 {"yaw_rmse_deg", s.yaw_rmse_deg},
                 {"position_rmse_m", s.position_rmse_m},
                 {"mean_nees_rot", s.mean_nees_rot},
                 {"mean_nees_yaw", s.mean_nees_yaw},
                 {"mean_nees_pos", s.mean_nees_pos},
                 {"mean_nees_pose", s.mean_nees_pose},
                 {"mean_nees_yaw_last_half", s.mean_nees_yaw_last_half},
                 {"mean_nees_pose_last_half", s.mean_nees_pose_last_half}});
  }
  write_or_throw(path, j.dump(2) + "\n");
}

void write_nees_hist_csv(const std::string &path, std::span<const MetricsRecord> records) {
  constexpr int kBins = 60;
  constexpr double kMax = 6.0;
  std::map<std::string, std::vector<long>> hist;
  for (const auto &r : records) {
    auto &h = hist[r.filter];
    if (h.empty()) h.assign(kBins + 1, 0);
    if (!std::isfinite(r.nees_pose)) continue;
    const int bin = r.nees_pose >= kMax
                        ? kBins
                        : static_cast<int>(r.nees_pose / kMax * kBins);
    ++h[std::clamp(bin, 0, kBins)];
  }
  std::ostringstream ss;
  ss << "filter,bin_lo,bin_hi,count\n";
  for (const auto &[name, h] : hist) {
    for (int b = 0; b < kBins; ++b) {
      ss << name << ',' << format_double(b * kMax / kBins) << ','
         << format_double((b + 1) * kMax / kBins) << ',' << h[b] << '\n';
    }
    ss << name << ',' << format_double(kMax) << ",inf," << h[kBins] << '\n';
  }
  write_or_throw(path, ss.str());
}

std::uint64_t hash_records(std::span<const MetricsRecord> records) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void *data, std::size_t len) {
    const auto *bytes = static_cast<const unsigned char *>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto &r : records) {
    feed(&r.run, sizeof(r.run));
    feed(&r.t, sizeof(r.t));
    feed(r.filter.data(), r.filter.size());
    feed(&r.err_rot_deg, sizeof(double));
    feed(&r.err_yaw_deg, sizeof(double));
    feed(&r.err_pos_m, sizeof(double));
    feed(&r.nees_rot, sizeof(double));
    feed(&r.nees_yaw, sizeof(double));
    feed(&r.nees_pos, sizeof(double));
    feed(&r.nees_pose, sizeof(double));
  }
  return h;
}

}  // namespace teskf
