#include "teskf/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "teskf/config.hpp"
#include "teskf/harness.hpp"
#include "teskf/observability.hpp"
#include "teskf/propagation.hpp"
#include "teskf/rng.hpp"
#include "teskf/simulator.hpp"

namespace teskf {

namespace {

namespace fs = std::filesystem;

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig load_config(const GlobalArgs &g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : parse_config_file(g.config_path);
  if (g.seed_set) cfg.seed = g.seed;
  return cfg;
}

fs::path prepare_out(const GlobalArgs &g) {
  fs::path out(g.out_dir);
  fs::create_directories(out);
  return out;
}

void write_file(const fs::path &path, const std::string &content) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
}

void write_effective_config(const fs::path &out, const RunConfig &cfg) {
  write_file(out / "effective_config.json", cfg.to_json() + "\n");
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

int cmd_simulate(const GlobalArgs &g) {
  const RunConfig cfg = load_config(g);
  const fs::path out = prepare_out(g);
  write_effective_config(out, cfg);

  const SimWorld world = cfg.make_world(derive_run_seed(cfg.seed, 0));
  const ImuData imu = gen_imu(world);
  const std::vector<CameraFrame> frames = gen_frames(world);
  const int stride = static_cast<int>(std::llround(world.imu_hz / world.cam_hz));

  std::ostringstream imu_csv;
  imu_csv << "t,wx,wy,wz,ax,ay,az\n";
  for (const auto &s : imu.samples) {
    imu_csv << format_double(s.t) << ',' << format_double(s.omega_m.x()) << ','
            << format_double(s.omega_m.y()) << ',' << format_double(s.omega_m.z()) << ','
            << format_double(s.accel_m.x()) << ',' << format_double(s.accel_m.y()) << ','
            << format_double(s.accel_m.z()) << '\n';
  }
  write_file(out / "imu.csv", imu_csv.str());

  std::ostringstream frame_csv;
  frame_csv << "t,id,u,v\n";
  for (const auto &f : frames) {
    for (const auto &obs : f.observations) {
      frame_csv << format_double(f.t) << ',' << obs.id << ',' << format_double(obs.uv.x())
                << ',' << format_double(obs.uv.y()) << '\n';
    }
  }
  write_file(out / "frames.csv", frame_csv.str());

  nlohmann::json truth;
  truth["landmarks"] = nlohmann::json::object();
  for (const auto &[id, pos] : world.landmarks) {
    truth["landmarks"][std::to_string(id)] = {pos.x(), pos.y(), pos.z()};
  }
  truth["poses"] = nlohmann::json::array();
  for (const auto &f : frames) {
    const TruthSample t = truth_at(world.trajectory, f.t);
    const int idx = static_cast<int>(std::llround(f.t * world.imu_hz));
    const Vec3 bg = imu.bias_gyro[std::min<std::size_t>(idx, imu.bias_gyro.size() - 1)];
    const Vec3 ba = imu.bias_accel[std::min<std::size_t>(idx, imu.bias_accel.size() - 1)];
    nlohmann::json pose;
    pose["t"] = f.t;
    pose["R"] = std::vector<double>(t.R.data(), t.R.data() + 9);  // column-major
    pose["p"] = {t.p.x(), t.p.y(), t.p.z()};
    pose["v"] = {t.v.x(), t.v.y(), t.v.z()};
    pose["bg"] = {bg.x(), bg.y(), bg.z()};
    pose["ba"] = {ba.x(), ba.y(), ba.z()};
    truth["poses"].push_back(std::move(pose));
  }
  write_file(out / "truth.json", truth.dump(2) + "\n");
  (void)stride;
  std::cout << "simulate: wrote " << imu.samples.size() << " IMU samples, "
            << frames.size() << " frames to " << out.string() << "\n";
  return 0;
}

int cmd_run(const GlobalArgs &g) {
  const RunConfig cfg = load_config(g);
  const fs::path out = prepare_out(g);
  write_effective_config(out, cfg);

  std::map<std::string, std::vector<std::string>> logs;
  const std::vector<MetricsRecord> records = single_run(cfg, 0, &logs);
  write_metrics_csv((out / "metrics.csv").string(), records);
  const auto summaries = summarize(records);
  write_summary_json((out / "summary.json").string(), summaries);
  for (const auto &[filter, lines] : logs) {
    std::ostringstream ss;
    for (const auto &line : lines) ss << line << '\n';
    write_file(out / ("updates-" + filter + ".jsonl"), ss.str());
  }
  for (const auto &s : summaries) {
    std::cout << s.filter << ": rot RMSE " << s.orientation_rmse_deg << " deg, pos RMSE "
              << s.position_rmse_m << " m, pose NEES " << s.mean_nees_pose << "\n";
  }
  return 0;
}

int cmd_montecarlo(const GlobalArgs &g, int runs, int jobs) {
  RunConfig cfg = load_config(g);
  if (runs > 0) cfg.n_runs = runs;
  if (jobs > 0) cfg.jobs = jobs;
  const fs::path out = prepare_out(g);
  write_effective_config(out, cfg);

  const MonteCarloResult result = run_monte_carlo(cfg, cfg.n_runs, cfg.jobs);
  for (const auto &err : result.run_errors) std::cerr << err << "\n";
  write_metrics_csv((out / "metrics.csv").string(), result.records);
  const auto summaries = summarize(result.records);
  write_summary_json((out / "summary.json").string(), summaries);
  write_nees_hist_csv((out / "nees_hist.csv").string(), result.records);

  for (const auto &s : summaries) {
    std::cout << s.filter << ": rot RMSE " << s.orientation_rmse_deg << " deg, pos RMSE "
              << s.position_rmse_m << " m, yaw NEES " << s.mean_nees_yaw
              << ", pose NEES " << s.mean_nees_pose << " (last half "
              << s.mean_nees_pose_last_half << ")\n";
  }
  std::cout << "records hash: " << std::hex << hash_records(result.records) << std::dec
            << "\n";
  return result.run_errors.empty() ? 0 : 1;
}

int cmd_observability(const GlobalArgs &g, const std::string &mode_name) {
  ObservabilityMode mode;
  if (mode_name == "ideal") {
    mode = ObservabilityMode::kIdealSingleLinearization;
  } else if (mode_name == "eskf") {
    mode = ObservabilityMode::kEskfTwoPoint;
  } else if (mode_name == "teskf") {
    mode = ObservabilityMode::kTEskf;
  } else {
    std::cerr << "observability: mode must be ideal, eskf or teskf\n";
    return 1;
  }
  const RunConfig cfg = load_config(g);
  const fs::path out = prepare_out(g);

  ObservabilityExperimentConfig ocfg;
  ocfg.seed = cfg.seed;
  const ObservabilityAudit audit = run_observability_experiment(mode, ocfg);

  std::ostringstream csv;
  csv << "index,singular_value\n";
  for (int i = 0; i < audit.singular_values.size(); ++i) {
    csv << i << ',' << format_double(audit.singular_values(i)) << '\n';
  }
  write_file(out / ("observability-" + mode_name + ".csv"), csv.str());

  const int expected = expected_null_dimension(mode);
  std::cout << "mode " << mode_name << ": null dimension " << audit.null_dim
            << " (expected " << expected << "), sigma_max "
            << audit.singular_values(0) << "\n";
  return audit.null_dim == expected ? 0 : 2;
}

int cmd_bench(const GlobalArgs &g, const std::vector<int> &landmark_counts, int trials) {
  const RunConfig cfg = load_config(g);
  const fs::path out = prepare_out(g);

  std::ostringstream csv;
  csv << "m,method,mean_ns,p95_ns\n";
  for (const int m : landmark_counts) {
    Rng rng(cfg.seed + static_cast<std::uint64_t>(m));
    auto gauss3 = [&rng]() {
      return Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian());
    };
    VinsState x;
    x.imu.R = exp_so3(gauss3());
    x.imu.p = 2.0 * gauss3();
    x.imu.v = gauss3();
    x.imu.bg = 0.01 * gauss3();
    x.imu.ba = 0.05 * gauss3();
    for (int i = 0; i < m; ++i) x.landmarks.emplace_back(i, 5.0 * gauss3());

    // 0.1 s of synthetic IMU at 400 Hz
    std::vector<ImuSample> samples;
    for (int i = 0; i <= 40; ++i) {
      ImuSample s;
      s.t = i * 0.0025;
      s.omega_m = Vec3(0.3 * std::sin(3.0 * s.t), 0.2, 0.5);
      s.accel_m = Vec3(0.5, -0.3 * std::cos(2.0 * s.t), 9.6);
      samples.push_back(s);
    }

    const int n = x.dim();
    MatX P = MatX::Identity(n, n) * 1e-4;
    NoiseParams noise = cfg.make_world(cfg.seed).noise;

    auto time_ns = [](auto &&fn) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      const auto t1 = std::chrono::steady_clock::now();
      return std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    };

    std::vector<long long> naive_ns, efficient_ns;
    for (int trial = 0; trial < trials; ++trial) {
      naive_ns.push_back(time_ns([&] { naive_propagate(P, x, samples, noise); }));
      efficient_ns.push_back(time_ns([&] {
        const ErrorTransform t_prior = build_transform(x);
        ImuAccumulator acc;
        ImuState imu = x.imu;
        for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
          const ImuStepResult step = imu_step(imu, samples[i], samples[i + 1], noise);
          acc.add(step);
          imu = step.end_state;
        }
        VinsState end = x;
        end.imu = imu;
        efficient_propagate(P, acc.result(), t_prior, build_transform(end));
      }));
    }
    auto stats = [&csv, m](const char *method, std::vector<long long> &v) {
      std::sort(v.begin(), v.end());
      double mean = 0.0;
      for (const auto ns : v) mean += static_cast<double>(ns);
      mean /= static_cast<double>(v.size());
      const long long p95 = v[static_cast<std::size_t>(0.95 * (v.size() - 1))];
      csv << m << ',' << method << ',' << static_cast<long long>(mean) << ',' << p95 << '\n';
    };
    stats("naive", naive_ns);
    stats("efficient", efficient_ns);
  }
  write_file(out / "bench.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int cli_main(int argc, const char *const *argv) {
  CLI::App app{"T-ESKF visual-inertial estimation toolkit"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--out", g.out_dir, "output directory");
  auto *seed_opt = app.add_option("--seed", g.seed, "master seed override");

  auto *sim = app.add_subcommand("simulate", "export IMU/camera streams and truth");
  auto *run = app.add_subcommand("run", "single run, all filters, metrics out");
  auto *mc = app.add_subcommand("montecarlo", "Monte-Carlo consistency experiment");
  int mc_runs = 0, mc_jobs = 0;
  mc->add_option("--runs", mc_runs, "number of runs (overrides config)");
  mc->add_option("--jobs", mc_jobs, "worker threads (overrides config)");
  auto *obs = app.add_subcommand("observability", "null-space audit of a filter trace");
  std::string obs_mode = "teskf";
  obs->add_option("--mode", obs_mode, "ideal | eskf | teskf");
  auto *bench = app.add_subcommand("bench", "naive vs efficient propagation timings");
  std::vector<int> bench_m = {0, 5, 20, 50, 100};
  int bench_trials = 10;
  bench->add_option("--landmarks", bench_m, "landmark counts");
  bench->add_option("--trials", bench_trials, "trials per configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 64;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    if (sim->parsed()) return cmd_simulate(g);
    if (run->parsed()) return cmd_run(g);
    if (mc->parsed()) return cmd_montecarlo(g, mc_runs, mc_jobs);
    if (obs->parsed()) return cmd_observability(g, obs_mode);
    if (bench->parsed()) return cmd_bench(g, bench_m, bench_trials);
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 64;
}

}  // namespace teskf
