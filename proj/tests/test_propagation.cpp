#include <random>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "doctest.h"
#include "teskf/propagation.hpp"
#include "test_support.hpp"

using namespace teskf;

namespace {

NoiseParams default_noise() { return NoiseParams{}; }

std::vector<ImuSample> smooth_samples(std::mt19937_64 &rng, double t0, double duration,
                                      double hz) {
  std::normal_distribution<double> d(0.0, 1.0);
  const Vec3 w0(d(rng), d(rng), d(rng)), w1(d(rng), d(rng), d(rng));
  const Vec3 a0(d(rng), d(rng), d(rng)), a1(d(rng), d(rng), d(rng));
  const int n = static_cast<int>(std::llround(duration * hz));
  std::vector<ImuSample> out;
  for (int i = 0; i <= n; ++i) {
    const double t = t0 + i / hz;
    ImuSample s;
    s.t = t;
    s.omega_m = 0.2 * w0 + 0.1 * w1 * std::sin(2.0 * t);
    s.accel_m = Vec3(0, 0, 9.81) + 0.4 * a0 + 0.3 * a1 * std::cos(1.5 * t);
    out.push_back(s);
  }
  return out;
}

MatX random_spd(std::mt19937_64 &rng, int n, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  MatX a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = d(rng);
  MatX p = a * a.transpose() + scale * scale * MatX::Identity(n, n);
  return 0.5 * (p + p.transpose());
}

double min_eigenvalue(const MatX &m) {
  Eigen::SelfAdjointEigenSolver<MatX> es(m);
  return es.eigenvalues().minCoeff();
}

}  // namespace

TEST_CASE("imu_step with zero noise densities yields zero Q") {
  std::mt19937_64 rng(3);
  const VinsState x = test::random_state(rng, 0);
  NoiseParams noise;
  noise.sigma_g = noise.sigma_a = noise.sigma_gw = noise.sigma_aw = 0.0;
  ImuSample s0 = test::random_sample(rng, 0.0);
  ImuSample s1 = test::random_sample(rng, 0.0025);
  const ImuStepResult step = imu_step(x.imu, s0, s1, noise);
  CHECK(step.q.norm() == 0.0);
}

TEST_CASE("imu_step first-order expansion at tiny dt") {
  std::mt19937_64 rng(5);
  const VinsState x = test::random_state(rng, 0);
  const NoiseParams noise = default_noise();
  ImuSample s0 = test::random_sample(rng, 0.0);
  ImuSample s1 = s0;
  s1.t = 1e-6;
  const ImuStepResult step = imu_step(x.imu, s0, s1, noise);
  Mat15 F;
  Mat15x12 G;
  imu_error_jacobians(x.imu, s0.omega_m, s0.accel_m, F, G);
  CHECK((step.phi - Mat15::Identity() - 1e-6 * F).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("imu_step against the frozen-input matrix exponential") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const VinsState x = test::random_state(rng, 0);
    const NoiseParams noise = default_noise();
    ImuSample s0;
    s0.t = 0.0;
    s0.omega_m = 0.05 * test::random_vec3(rng);
    s0.accel_m = Vec3(0, 0, 9.81) + 0.3 * test::random_vec3(rng);
    ImuSample s1 = s0;
    s1.t = 1e-3;
    const ImuStepResult step = imu_step(x.imu, s0, s1, noise);
    Mat15 F;
    Mat15x12 G;
    imu_error_jacobians(x.imu, s0.omega_m, s0.accel_m, F, G);
    const Mat15 expected = (F * 1e-3).exp();
    CHECK((step.phi - expected).norm() < 1e-6);
  }
}

TEST_CASE("accumulate basics") {
  std::mt19937_64 rng(11);
  const VinsState x = test::random_state(rng, 0);
  const NoiseParams noise = default_noise();
  const auto samples = smooth_samples(rng, 0.0, 0.01, 400.0);

  // empty -> identity / zero
  const ImuAccumulation empty = accumulate({});
  CHECK((empty.phi - Mat15::Identity()).norm() == 0.0);
  CHECK(empty.q.norm() == 0.0);

  // single step -> that step
  const ImuStepResult s = imu_step(x.imu, samples[0], samples[1], noise);
  const ImuAccumulation one = accumulate(std::span<const ImuStepResult>(&s, 1));
  CHECK((one.phi - s.phi).norm() == 0.0);
  CHECK((one.q - s.q).norm() == 0.0);

  // two chained steps agree with one RK4 over the doubled interval; inputs
  // linear in t so both paths integrate the same input function
  ImuSample l0 = samples[0], l1 = samples[0], l2 = samples[0];
  l1.t = l0.t + 0.0025;
  l2.t = l0.t + 0.005;
  const Vec3 dw = test::random_vec3(rng, 0.1), da = test::random_vec3(rng, 0.2);
  l1.omega_m += 0.5 * dw;
  l2.omega_m += dw;
  l1.accel_m += 0.5 * da;
  l2.accel_m += da;
  const ImuStepResult t1 = imu_step(x.imu, l0, l1, noise);
  const ImuStepResult t2 = imu_step(t1.end_state, l1, l2, noise);
  std::vector<ImuStepResult> steps = {t1, t2};
  const ImuAccumulation acc = accumulate(steps);
  const ImuStepResult wide = imu_step(x.imu, l0, l2, noise);
  CHECK((acc.phi - wide.phi).norm() < 1e-8);
  CHECK((acc.q - wide.q).norm() / wide.q.norm() < 1e-6);
}

TEST_CASE("accumulate flags a timestamp gap") {
  std::mt19937_64 rng(13);
  const VinsState x = test::random_state(rng, 0);
  const NoiseParams noise = default_noise();
  ImuSample a = test::random_sample(rng, 0.0);
  ImuSample b = a;
  b.t = 0.0025;
  ImuSample c = a;
  c.t = 0.01;  // gap: 3 samples missing
  ImuSample d = a;
  d.t = 0.0125;
  const ImuStepResult s1 = imu_step(x.imu, a, b, noise);
  const ImuStepResult s2 = imu_step(s1.end_state, c, d, noise);
  std::vector<ImuStepResult> steps = {s1, s2};
  CHECK(accumulate(steps).gap_warning);

  ImuSample e = a;
  e.t = 0.005;
  const ImuStepResult s3 = imu_step(s1.end_state, b, e, noise);
  std::vector<ImuStepResult> contiguous = {s1, s3};
  CHECK(!accumulate(contiguous).gap_warning);
}

TEST_CASE("efficient_propagate reduces to the IMU blocks at zero state") {
  std::mt19937_64 rng(17);
  VinsState x;  // zero state, no landmarks
  const NoiseParams noise = default_noise();
  const auto samples = smooth_samples(rng, 0.0, 0.05, 400.0);

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
  // zero start state; T_prior = I but T_post generally not -> use zero end too
  // by propagating covariance with both transforms built from zero states.
  const MatX P = random_spd(rng, 15, 0.1);
  const PropagationResult r = efficient_propagate(P, acc.result(), t_prior, t_prior);
  CHECK((r.phi - MatX(acc.result().phi)).norm() == 0.0);
  const MatX expected = MatX(acc.result().phi) * P * MatX(acc.result().phi).transpose() +
                        MatX(acc.result().q);
  CHECK((r.cov - expected).norm() / expected.norm() < 1e-12);
}

TEST_CASE("efficient_propagate matches naive_propagate") {
  std::mt19937_64 rng(19);
  for (const int m : {0, 5, 20}) {
    for (int trial = 0; trial < 3; ++trial) {
      const VinsState x = test::random_state(rng, m);
      const NoiseParams noise = default_noise();
      const auto samples = smooth_samples(rng, 0.0, 0.25, 400.0);
      const int n = x.dim();
      const MatX P = random_spd(rng, n, 0.1);

      const NaivePropagationResult naive = naive_propagate(P, x, samples, noise);

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
      const PropagationResult efficient =
          efficient_propagate(P, acc.result(), t_prior, build_transform(end));

      CHECK((efficient.phi - naive.phi).norm() / naive.phi.norm() < 1e-6);
      CHECK((efficient.cov - naive.cov).norm() / naive.cov.norm() < 1e-6);
    }
  }
}

TEST_CASE("transformed noise couples landmarks only through the generators") {
  std::mt19937_64 rng(23);
  VinsState x = test::random_state(rng, 3);
  for (auto &lm : x.landmarks) lm.second.setZero();
  const NoiseParams noise = default_noise();
  const auto samples = smooth_samples(rng, 0.0, 0.05, 400.0);
  ImuAccumulator acc;
  ImuState imu = x.imu;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const ImuStepResult step = imu_step(imu, samples[i], samples[i + 1], noise);
    acc.add(step);
    imu = step.end_state;
  }
  VinsState end = x;
  end.imu = imu;
  for (auto &lm : end.landmarks) lm.second.setZero();
  const MatX q_star = transformed_noise(acc.result().q, build_transform(end));
  CHECK(q_star.bottomRows(9).norm() == 0.0);
  CHECK(q_star.rightCols(9).norm() == 0.0);
  // PSD after symmetrization
  CHECK(min_eigenvalue(q_star) >= -1e-10 * q_star.trace());
}

TEST_CASE("naive_propagate with an empty interval is the identity") {
  std::mt19937_64 rng(29);
  const VinsState x = test::random_state(rng, 2);
  const MatX P = random_spd(rng, x.dim(), 0.1);
  ImuSample only = test::random_sample(rng, 0.0);
  const NaivePropagationResult r =
      naive_propagate(P, x, std::span<const ImuSample>(&only, 1), default_noise());
  CHECK((r.phi - MatX::Identity(x.dim(), x.dim())).norm() == 0.0);
  CHECK((r.cov - P).norm() == 0.0);
}

TEST_CASE("transformed transition identity over two-second segments") {
  // Phi* = T(x_t) blockdiag(Phi_I, I) T(x_0)^-1 equals the transformed
  // transition integrated in full dimension.
  std::mt19937_64 rng(31);
  const VinsState x = test::random_state(rng, 20);
  const NoiseParams noise = default_noise();
  const auto samples = smooth_samples(rng, 0.0, 2.0, 400.0);
  const MatX P = random_spd(rng, x.dim(), 0.1);

  const NaivePropagationResult naive = naive_propagate(P, x, samples, noise);
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
  const MatX phi_star =
      transformed_transition(acc.result().phi, t_prior, build_transform(end));
  CHECK((phi_star - naive.phi).norm() / naive.phi.norm() < 1e-6);
}

TEST_CASE("transition composition across subintervals") {
  std::mt19937_64 rng(37);
  const VinsState x = test::random_state(rng, 4);
  const NoiseParams noise = default_noise();
  const auto samples = smooth_samples(rng, 0.0, 0.2, 400.0);
  const std::size_t half = samples.size() / 2;

  auto run = [&](const VinsState &start, std::span<const ImuSample> span) {
    const ErrorTransform t_prior = build_transform(start);
    ImuAccumulator acc;
    ImuState imu = start.imu;
    for (std::size_t i = 0; i + 1 < span.size(); ++i) {
      const ImuStepResult step = imu_step(imu, span[i], span[i + 1], noise);
      acc.add(step);
      imu = step.end_state;
    }
    VinsState end = start;
    end.imu = imu;
    return std::make_pair(
        transformed_transition(acc.result().phi, t_prior, build_transform(end)), end);
  };

  const auto [phi_a, mid] =
      run(x, std::span<const ImuSample>(samples.data(), half + 1));
  const auto [phi_b, end] = run(
      mid, std::span<const ImuSample>(samples.data() + half, samples.size() - half));
  const auto [phi_full, end_full] = run(x, samples);
  CHECK((phi_b * phi_a - phi_full).norm() / phi_full.norm() < 1e-8);
}

TEST_CASE("accumulated Q stays PSD") {
  std::mt19937_64 rng(41);
  const VinsState x = test::random_state(rng, 0);
  const NoiseParams noise = default_noise();
  const auto samples = smooth_samples(rng, 0.0, 1.0, 400.0);
  ImuAccumulator acc;
  ImuState imu = x.imu;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const ImuStepResult step = imu_step(imu, samples[i], samples[i + 1], noise);
    acc.add(step);
    imu = step.end_state;
  }
  const Mat15 q = acc.result().q;
  CHECK(min_eigenvalue(q) >= -1e-12 * q.trace());
}
