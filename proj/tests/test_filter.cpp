#include <random>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "teskf/config.hpp"
#include "teskf/filter.hpp"
#include "teskf/harness.hpp"
#include "teskf/rng.hpp"
#include "teskf/simulator.hpp"
#include "teskf/vins_model.hpp"
#include "test_support.hpp"

using namespace teskf;

namespace {

double min_eig(const MatX &m) {
  Eigen::SelfAdjointEigenSolver<MatX> es(m);
  return es.eigenvalues().minCoeff();
}

VinsState truth_state(const SimWorld &w, double t) {
  const TruthSample s = truth_at(w.trajectory, t);
  VinsState x;
  x.imu.R = s.R;
  x.imu.p = s.p;
  x.imu.v = s.v;
  return x;
}

struct Scenario {
  SimWorld world;
  ImuData imu;
  std::vector<CameraFrame> frames;
  int stride;
};

Scenario make_scenario(RunConfig cfg, std::uint64_t seed) {
  Scenario s;
  cfg.seed = seed;
  s.world = cfg.make_world(seed);
  s.imu = gen_imu(s.world);
  s.frames = gen_frames(s.world);
  s.stride = static_cast<int>(std::llround(s.world.imu_hz / s.world.cam_hz));
  return s;
}

std::span<const ImuSample> interval(const Scenario &s, int k) {
  return std::span<const ImuSample>(&s.imu.samples[(k - 1) * s.stride],
                                    s.stride + 1);
}

}  // namespace

TEST_CASE("propagation with zero noise and zero covariance is a fixpoint") {
  RunConfig cfg;
  cfg.duration_s = 1.0;
  cfg.sigma_g = cfg.sigma_a = cfg.sigma_gw = cfg.sigma_aw = 0.0;
  cfg.sigma_pix = 0.0;
  const Scenario s = make_scenario(cfg, 3);

  for (const FilterKind kind : {FilterKind::kEskf, FilterKind::kTEskf}) {
    FilterOptions opts = cfg.make_filter_options(kind);
    opts.auto_landmarks = false;
    FilterInstance f(opts, truth_state(s.world, 0.0), MatX::Zero(15, 15), 0.0);
    f.propagate(interval(s, 1));
    CHECK(f.covariance_raw().norm() == 0.0);
    const TruthSample truth = truth_at(s.world.trajectory, f.time());
    CHECK((f.state().imu.p - truth.p).norm() < 1e-9);
    CHECK(log_so3(truth.R * f.state().imu.R.transpose()).norm() < 1e-10);
  }
}

TEST_CASE("bias-walk-only noise grows the bias blocks first") {
  RunConfig cfg;
  cfg.duration_s = 1.0;
  cfg.sigma_g = cfg.sigma_a = 0.0;
  const Scenario s = make_scenario(cfg, 5);
  FilterOptions opts = cfg.make_filter_options(FilterKind::kEskf);
  opts.auto_landmarks = false;
  FilterInstance f(opts, truth_state(s.world, 0.0), MatX::Zero(15, 15), 0.0);
  f.propagate(interval(s, 1));
  const MatX &P = f.covariance_raw();
  const double dt = 0.1;
  CHECK(P.block<3, 3>(kBgIdx, kBgIdx).trace() >
        0.5 * 3 * cfg.sigma_gw * cfg.sigma_gw * dt);
  CHECK(P.block<3, 3>(kBaIdx, kBaIdx).trace() >
        0.5 * 3 * cfg.sigma_aw * cfg.sigma_aw * dt);
  // leakage into the integrated states is orders of magnitude smaller
  CHECK(P.block<3, 3>(kThetaIdx, kThetaIdx).trace() <
        1e-2 * P.block<3, 3>(kBgIdx, kBgIdx).trace());
  CHECK(P.block<3, 3>(kPosIdx, kPosIdx).trace() <
        1e-3 * P.block<3, 3>(kBaIdx, kBaIdx).trace());
}

TEST_CASE("covariance trace is non-decreasing under propagation") {
  RunConfig cfg;
  cfg.duration_s = 2.0;
  const Scenario s = make_scenario(cfg, 7);
  for (const FilterKind kind :
       {FilterKind::kEskf, FilterKind::kFejEskf, FilterKind::kTEskf}) {
    FilterOptions opts = cfg.make_filter_options(kind);
    opts.auto_landmarks = false;
    FilterInstance f(opts, truth_state(s.world, 0.0), cfg.initial_covariance(), 0.0);
    double prev = f.covariance_raw().trace();
    for (int k = 1; k < 20; ++k) {
      f.propagate(interval(s, k));
      const double cur = f.covariance_raw().trace();
      CHECK(cur >= prev - 1e-12);
      prev = cur;
    }
  }
}

TEST_CASE("single propagation step: T-ESKF covariance maps to ESKF covariance") {
  RunConfig cfg;
  cfg.duration_s = 1.0;
  const Scenario s = make_scenario(cfg, 11);

  std::mt19937_64 rng(13);
  VinsState init = truth_state(s.world, 0.0);
  for (int i = 0; i < 4; ++i) init.landmarks.emplace_back(i, test::random_vec3(rng, 5.0));
  MatX P0 = MatX::Identity(init.dim(), init.dim()) * 0.01;
  P0.topLeftCorner(15, 15) = cfg.initial_covariance();

  FilterOptions eskf_opts = cfg.make_filter_options(FilterKind::kEskf);
  eskf_opts.auto_landmarks = false;
  FilterOptions teskf_opts = cfg.make_filter_options(FilterKind::kTEskf);
  teskf_opts.auto_landmarks = false;

  FilterInstance eskf(eskf_opts, init, P0, 0.0);
  FilterInstance teskf(teskf_opts, init, P0, 0.0);
  eskf.propagate(interval(s, 1));
  teskf.propagate(interval(s, 1));

  REQUIRE((eskf.state().imu.p - teskf.state().imu.p).norm() == 0.0);
  const MatX mapped = build_transform(teskf.state())
                          .sandwich(teskf.covariance_raw(),
                                    ErrorTransform::Direction::kInverse);
  const MatX &P_eskf = eskf.covariance_raw();
  CHECK((mapped - P_eskf).norm() / P_eskf.norm() < 1e-9);
}

TEST_CASE("one-step propagate+update equivalence through the transformation") {
  RunConfig cfg;
  cfg.duration_s = 1.0;
  const Scenario s = make_scenario(cfg, 17);

  VinsState init = truth_state(s.world, 0.0);
  // seed with true landmarks so the first frame update has measurements
  FilterOptions eskf_opts = cfg.make_filter_options(FilterKind::kEskf);
  eskf_opts.auto_landmarks = false;
  FilterOptions teskf_opts = cfg.make_filter_options(FilterKind::kTEskf);
  teskf_opts.auto_landmarks = false;

  FilterInstance eskf(eskf_opts, init, cfg.initial_covariance(), 0.0);
  FilterInstance teskf(teskf_opts, init, cfg.initial_covariance(), 0.0);
  int seeded = 0;
  for (const auto &obs : s.frames[1].observations) {
    if (seeded++ == 8) break;
    eskf.seed_landmark(obs.id, s.world.landmarks.at(obs.id), 1.0);
    teskf.seed_landmark(obs.id, s.world.landmarks.at(obs.id), 1.0);
  }

  eskf.propagate(interval(s, 1));
  teskf.propagate(interval(s, 1));
  const VinsState prior = eskf.state();  // identical for both
  const ErrorTransform t_prior = build_transform(prior);

  const UpdateReport ra = eskf.update(s.frames[1]);
  const UpdateReport rb = teskf.update(s.frames[1]);
  REQUIRE(ra.n_meas == rb.n_meas);
  REQUIRE(ra.n_meas > 0);
  CHECK(ra.nis == doctest::Approx(rb.nis).epsilon(1e-9));

  // identical posteriors, covariances related by the prior transformation
  CHECK((eskf.state().imu.p - teskf.state().imu.p).norm() < 1e-12);
  CHECK(log_so3(eskf.state().imu.R * teskf.state().imu.R.transpose()).norm() < 1e-12);
  const MatX mapped = t_prior.sandwich(teskf.covariance_raw(),
                                       ErrorTransform::Direction::kInverse);
  CHECK((mapped - eskf.covariance_raw()).norm() / eskf.covariance_raw().norm() < 1e-8);
}

TEST_CASE("zero residual leaves the state fixed and shrinks the covariance") {
  RunConfig cfg;
  cfg.sigma_pix = 1.0;
  const SimWorld w = cfg.make_world(19);
  VinsState init = truth_state(w, 0.0);
  FilterOptions opts = cfg.make_filter_options(FilterKind::kTEskf);
  opts.auto_landmarks = false;
  FilterInstance f(opts, init, cfg.initial_covariance(), 0.0);
  f.seed_landmark(42, init.imu.p + init.imu.R * Vec3(0.5, -0.2, 4.0), 2.0);

  const auto predicted = measure(f.state(), opts.cam, 42);
  REQUIRE(predicted.has_value());
  CameraFrame frame;
  frame.t = 0.0;
  frame.sigma_pix = 1.0;
  frame.observations.push_back({42, *predicted});

  const VinsState before = f.state();
  const double trace_before = f.covariance_raw().trace();
  const UpdateReport report = f.update(frame);
  CHECK(report.n_meas == 1);
  CHECK(report.nis == 0.0);
  CHECK((f.state().imu.p - before.imu.p).norm() == 0.0);
  CHECK((f.state().imu.R - before.imu.R).norm() == 0.0);
  CHECK((*f.state().landmark(42) - *before.landmark(42)).norm() == 0.0);
  CHECK(f.covariance_raw().trace() < trace_before);
}

TEST_CASE("Kalman gain matches the scalar formula on a decoupled problem") {
  RunConfig cfg;
  FilterOptions opts = cfg.make_filter_options(FilterKind::kEskf);
  opts.auto_landmarks = false;
  opts.cam.fx = opts.cam.fy = 1.0;
  opts.cam.cx = opts.cam.cy = 0.0;
  opts.cam.R_CI = Mat3::Identity();
  opts.gate_chi2 = 1e12;

  const double depth = 2.0;
  const double sigma_l = 0.7;
  const double sigma_pix = 0.2;

  VinsState init;  // identity pose
  init.landmarks.emplace_back(0, Vec3(0, 0, depth));
  MatX P0 = MatX::Identity(18, 18) * 1e-12;
  P0.block<3, 3>(15, 15) = sigma_l * sigma_l * Mat3::Identity();
  FilterInstance f(opts, init, P0, 0.0);

  CameraFrame frame;
  frame.t = 0.0;
  frame.sigma_pix = sigma_pix;
  const Vec2 residual(0.05, -0.02);
  frame.observations.push_back({0, residual});  // predicted pixel is (0, 0)

  f.update(frame);
  // u = l_x / l_z: dH/dl_x = 1/z; scalar gain k = P h / (h^2 P + V)
  const double h = 1.0 / depth;
  const double k = sigma_l * sigma_l * h /
                   (h * h * sigma_l * sigma_l + sigma_pix * sigma_pix);
  const Vec3 moved = *f.state().landmark(0) - Vec3(0, 0, depth);
  CHECK(moved.x() == doctest::Approx(k * residual.x()).epsilon(1e-6));
  CHECK(moved.y() == doctest::Approx(k * residual.y()).epsilon(1e-6));
  CHECK(std::abs(moved.z()) < 1e-9);
}

TEST_CASE("prior and posterior correction variants agree to second order") {
  RunConfig cfg;
  cfg.duration_s = 1.0;
  const Scenario s = make_scenario(cfg, 23);

  auto run_variant = [&](CorrectionVariant variant, double pixel_scale) {
    FilterOptions opts = cfg.make_filter_options(FilterKind::kTEskf);
    opts.auto_landmarks = false;
    opts.variant = variant;
    VinsState init = truth_state(s.world, 0.0);
    FilterInstance f(opts, init, cfg.initial_covariance(), 0.0);
    int seeded = 0;
    for (const auto &obs : s.frames[1].observations) {
      if (seeded++ == 8) break;
      f.seed_landmark(obs.id, s.world.landmarks.at(obs.id), 1.0);
    }
    f.propagate(interval(s, 1));
    CameraFrame frame = s.frames[1];
    // scale residuals by perturbing pixels toward the prediction
    for (auto &obs : frame.observations) {
      const auto pred = measure(f.state(), opts.cam, obs.id);
      if (pred) obs.uv = *pred + pixel_scale * (obs.uv - *pred);
    }
    f.update(frame);
    return f.state();
  };

  double prev_diff = -1.0;
  for (const double scale : {1.0, 0.5, 0.25}) {
    const VinsState a = run_variant(CorrectionVariant::kPriorTransform, scale);
    const VinsState b = run_variant(CorrectionVariant::kPosteriorTransform, scale);
    double diff = (a.imu.p - b.imu.p).norm() + (a.imu.v - b.imu.v).norm() +
                  log_so3(a.imu.R * b.imu.R.transpose()).norm();
    CHECK((a.imu.bg - b.imu.bg).norm() < 1e-14);
    if (prev_diff >= 0.0) {
      // roughly quadratic contraction: halving the correction should cut
      // the variant difference by ~4; allow slack for higher-order terms
      CHECK(diff < 0.5 * prev_diff + 1e-12);
    }
    prev_diff = diff;
  }
}

TEST_CASE("landmark initialization from exact geometry recovers true points") {
  RunConfig cfg;
  cfg.duration_s = 2.0;
  cfg.sigma_g = cfg.sigma_a = cfg.sigma_gw = cfg.sigma_aw = 0.0;
  cfg.sigma_pix = 0.0;
  cfg.n_landmarks = 40;
  const Scenario s = make_scenario(cfg, 29);

  FilterOptions opts = cfg.make_filter_options(FilterKind::kTEskf);
  FilterInstance f(opts, truth_state(s.world, 0.0), MatX::Zero(15, 15), 0.0);
  f.update(s.frames[0]);
  for (int k = 1; k <= 4; ++k) {
    f.propagate(interval(s, k));
    f.update(s.frames[k]);
  }
  REQUIRE(f.state().num_landmarks() > 0);
  for (const auto &[id, pos] : f.state().landmarks) {
    CHECK((pos - s.world.landmarks.at(id)).norm() < 1e-6);
  }
  CHECK(min_eig(f.covariance_raw()) >= -1e-9 * f.covariance_raw().trace());
}

TEST_CASE("initialization is deferred below the baseline threshold") {
  RunConfig cfg;
  cfg.duration_s = 1.0;
  cfg.radius_m = 1e-9;  // hovering: no baseline accrues
  cfg.yaw_mode = "fixed";
  cfg.sigma_pix = 0.0;
  cfg.sigma_g = cfg.sigma_a = cfg.sigma_gw = cfg.sigma_aw = 0.0;
  cfg.landmark_z_min_m = 1.0;
  cfg.landmark_z_max_m = 2.0;
  const Scenario s = make_scenario(cfg, 31);

  FilterOptions opts = cfg.make_filter_options(FilterKind::kEskf);
  FilterInstance f(opts, truth_state(s.world, 0.0), MatX::Zero(15, 15), 0.0);
  f.update(s.frames[0]);
  for (int k = 1; k <= 5; ++k) {
    f.propagate(interval(s, k));
    const UpdateReport r = f.update(s.frames[k]);
    CHECK(r.n_initialized == 0);
  }
  CHECK(f.state().num_landmarks() == 0);
}

TEST_CASE("remove_landmark keeps the remaining marginal exactly") {
  std::mt19937_64 rng(37);
  RunConfig cfg;
  FilterOptions opts = cfg.make_filter_options(FilterKind::kEskf);
  opts.auto_landmarks = false;
  VinsState init = test::random_state(rng, 3);
  const int n = init.dim();
  MatX A = MatX::Random(n, n);
  MatX P0 = A * A.transpose() + 0.5 * MatX::Identity(n, n);
  P0 = 0.5 * (P0 + P0.transpose());
  FilterInstance f(opts, init, P0, 0.0);

  f.remove_landmark(init.landmarks[1].first);
  CHECK(f.state().num_landmarks() == 2);
  CHECK(f.covariance_raw().rows() == n - 3);
  // kept blocks are exact submatrices
  CHECK((f.covariance_raw().topLeftCorner(18, 18) - P0.topLeftCorner(18, 18)).norm() ==
        0.0);
  CHECK((f.covariance_raw().block<3, 3>(18, 18) - P0.block<3, 3>(21, 21)).norm() == 0.0);
  CHECK((f.covariance_raw().block(0, 18, 18, 3) - P0.block(0, 21, 18, 3)).norm() == 0.0);

  CHECK_THROWS_AS(f.remove_landmark(999), std::invalid_argument);

  // remove all, then a fresh seed restores consistent dimensions
  f.remove_landmark(f.state().landmarks[0].first);
  f.remove_landmark(f.state().landmarks[0].first);
  CHECK(f.covariance_raw().rows() == 15);
  CHECK(f.state().num_landmarks() == 0);
  f.seed_landmark(7, Vec3(1, 2, 3), 2.0);
  CHECK(f.covariance_raw().rows() == 18);
  CHECK(f.state().landmark_index(7) == 15);
}

TEST_CASE("update skips when the innovation covariance is singular") {
  RunConfig cfg;
  FilterOptions opts = cfg.make_filter_options(FilterKind::kEskf);
  opts.auto_landmarks = false;
  VinsState init;
  init.landmarks.emplace_back(0, Vec3(0.3, -0.1, 3.0));
  FilterInstance f(opts, init, MatX::Zero(18, 18), 0.0);

  CameraFrame frame;
  frame.t = 0.0;
  frame.sigma_pix = 0.0;  // V = 0 and P = 0: S is exactly singular
  const auto pred = measure(init, opts.cam, 0);
  REQUIRE(pred.has_value());
  frame.observations.push_back({0, *pred + Vec2(1.0, 0.0)});
  const UpdateReport r = f.update(frame);
  CHECK(r.skipped);
  CHECK(r.skip_reason == "innovation covariance not invertible");
  CHECK((f.state().imu.p - init.imu.p).norm() == 0.0);
}

TEST_CASE("all measurements gated leaves the filter untouched") {
  RunConfig cfg;
  FilterOptions opts = cfg.make_filter_options(FilterKind::kEskf);
  opts.auto_landmarks = false;
  VinsState init;
  init.landmarks.emplace_back(0, Vec3(0.3, -0.1, 3.0));
  MatX P0 = MatX::Identity(18, 18) * 1e-6;
  FilterInstance f(opts, init, P0, 0.0);

  CameraFrame frame;
  frame.t = 0.0;
  frame.sigma_pix = 1.0;
  const auto pred = measure(init, opts.cam, 0);
  frame.observations.push_back({0, *pred + Vec2(500.0, 0.0)});  // wild outlier
  const UpdateReport r = f.update(frame);
  CHECK(r.n_meas == 0);
  CHECK(r.n_gated == 1);
  CHECK((f.covariance_raw() - P0).norm() == 0.0);
}

TEST_CASE("FEJ equals ESKF when estimates never deviate from first estimates") {
  // zero noise and exact init: priors are first estimates at every step
  RunConfig cfg;
  cfg.duration_s = 1.5;
  cfg.sigma_g = cfg.sigma_a = cfg.sigma_gw = cfg.sigma_aw = 0.0;
  cfg.sigma_pix = 0.0;
  const Scenario s = make_scenario(cfg, 41);

  FilterOptions a_opts = cfg.make_filter_options(FilterKind::kEskf);
  FilterOptions b_opts = cfg.make_filter_options(FilterKind::kFejEskf);
  FilterInstance a(a_opts, truth_state(s.world, 0.0), cfg.initial_covariance(), 0.0);
  FilterInstance b(b_opts, truth_state(s.world, 0.0), cfg.initial_covariance(), 0.0);
  for (int k = 0; k < static_cast<int>(s.frames.size()); ++k) {
    if (k > 0) {
      a.propagate(interval(s, k));
      b.propagate(interval(s, k));
    }
    a.update(s.frames[k]);
    b.update(s.frames[k]);
  }
  CHECK((a.state().imu.p - b.state().imu.p).norm() < 1e-9);
  CHECK((a.covariance_raw() - b.covariance_raw()).norm() /
            a.covariance_raw().norm() <
        1e-8);
}

TEST_CASE("covariance stays PSD through a noisy run for all filter kinds") {
  RunConfig cfg;
  cfg.duration_s = 3.0;
  cfg.max_landmarks = 15;
  const Scenario s = make_scenario(cfg, 43);

  for (const FilterKind kind :
       {FilterKind::kEskf, FilterKind::kFejEskf, FilterKind::kTEskf}) {
    FilterOptions opts = cfg.make_filter_options(kind);
    VinsState init = truth_state(s.world, 0.0);
    init.imu.p += Vec3(0.02, -0.01, 0.03);
    FilterInstance f(opts, init, cfg.initial_covariance(), 0.0);
    for (int k = 0; k < static_cast<int>(s.frames.size()); ++k) {
      if (k > 0) f.propagate(interval(s, k));
      f.update(s.frames[k]);
      const MatX &P = f.covariance_raw();
      CHECK(min_eig(P) >= -1e-9 * P.trace());
      CHECK((P - P.transpose()).norm() < 1e-9 * std::max(1.0, P.norm()));
    }
  }
}

TEST_CASE("accepted-measurement NIS is chi-square consistent over many updates") {
  RunConfig cfg;
  cfg.duration_s = 100.0;
  cfg.imu_hz = 100.0;
  cfg.n_landmarks = 120;
  cfg.max_landmarks = 15;
  cfg.filters = {"t-eskf"};

  long total_updates = 0;
  double ratio_sum = 0.0;
  for (int run = 0; run < 10; ++run) {
    const Scenario s = make_scenario(cfg, 1000 + run);
    FilterOptions opts = cfg.make_filter_options(FilterKind::kTEskf);
    Rng rng(derive_run_seed(cfg.seed, run));
    Rng init_rng = rng.stream("init");
    auto gauss3 = [&init_rng]() {
      return Vec3(init_rng.next_gaussian(), init_rng.next_gaussian(),
                  init_rng.next_gaussian());
    };
    VinsState init = truth_state(s.world, 0.0);
    init.imu.R = exp_so3(cfg.init_att_sigma_rad * gauss3()) * init.imu.R;
    init.imu.p += cfg.init_pos_sigma_m * gauss3();
    init.imu.v += cfg.init_vel_sigma * gauss3();
    init.imu.bg = cfg.init_bg_sigma * gauss3();
    init.imu.ba = cfg.init_ba_sigma * gauss3();
    FilterInstance f(opts, init, cfg.initial_covariance(), 0.0);
    for (int k = 0; k < static_cast<int>(s.frames.size()); ++k) {
      if (k > 0) f.propagate(interval(s, k));
      const UpdateReport r = f.update(s.frames[k]);
      if (r.n_meas > 0) {
        ratio_sum += r.nis / r.nis_dof;
        ++total_updates;
      }
    }
  }
  REQUIRE(total_updates >= 10000);
  const double mean_ratio = ratio_sum / static_cast<double>(total_updates);
  CHECK(mean_ratio > 0.8);
  CHECK(mean_ratio < 1.2);
}
