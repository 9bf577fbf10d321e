#include "teskf/propagation.hpp"

#include <cmath>
#include <stdexcept>

namespace teskf {

namespace {

// F_I M computed through the sparse block rows of F_I. A is the v/theta
// block -[R(a_m - ba)]x.
Mat15 f_times(const Mat3 &R, const Mat3 &A, const Mat15 &M) {
  Mat15 out = Mat15::Zero();
  out.middleRows<3>(kThetaIdx) = -R * M.middleRows<3>(kBgIdx);
  out.middleRows<3>(kPosIdx) = M.middleRows<3>(kVelIdx);
  out.middleRows<3>(kVelIdx) =
      A * M.middleRows<3>(kThetaIdx) - R * M.middleRows<3>(kBaIdx);
  return out;
}

struct JointState {
  Mat3 R;
  Vec3 p;
  Vec3 v;
  Mat15 phi;
  Mat15 q;
};

struct JointDot {
  Mat3 R_dot;
  Vec3 p_dot;
  Vec3 v_dot;
  Mat15 phi_dot;
  Mat15 q_dot;
};

}  // namespace

ImuStepResult imu_step(const ImuState &x, const ImuSample &s0, const ImuSample &s1,
                       const NoiseParams &noise) {
  const double dt = s1.t - s0.t;
  if (!(dt > 0.0)) throw std::invalid_argument("imu_step: non-increasing timestamps");
  if (dt > 0.1) throw std::invalid_argument("imu_step: IMU step larger than 0.1 s");

  // G_I Qc G_I^T collapses to a constant diagonal because R R^T = I.
  Mat15 gqg = Mat15::Zero();
  gqg.block<3, 3>(kThetaIdx, kThetaIdx) = noise.sigma_g * noise.sigma_g * Mat3::Identity();
  gqg.block<3, 3>(kVelIdx, kVelIdx) = noise.sigma_a * noise.sigma_a * Mat3::Identity();
  gqg.block<3, 3>(kBgIdx, kBgIdx) = noise.sigma_gw * noise.sigma_gw * Mat3::Identity();
  gqg.block<3, 3>(kBaIdx, kBaIdx) = noise.sigma_aw * noise.sigma_aw * Mat3::Identity();

  auto deriv = [&](const JointState &y, double t) {
    JointDot d;
    ImuState tmp = x;
    tmp.R = y.R;
    tmp.p = y.p;
    tmp.v = y.v;
    const ImuInput u = interpolate_input(s0, s1, t);
    const ImuStateDot sd = nominal_derivative(tmp, u, noise.gravity);
    d.R_dot = sd.R_dot;
    d.p_dot = sd.p_dot;
    d.v_dot = sd.v_dot;
    const Mat3 A = -skew(y.R * (u.accel_m - x.ba));
    d.phi_dot = f_times(y.R, A, y.phi);
    const Mat15 fq = f_times(y.R, A, y.q);
    d.q_dot = fq + fq.transpose() + gqg;
    return d;
  };

  auto advance = [](const JointState &y, const JointDot &d, double h) {
    return JointState{y.R + h * d.R_dot, y.p + h * d.p_dot, y.v + h * d.v_dot,
                      y.phi + h * d.phi_dot, y.q + h * d.q_dot};
  };

  const JointState y0{x.R, x.p, x.v, Mat15::Identity(), Mat15::Zero()};
  const JointDot k1 = deriv(y0, s0.t);
  const JointDot k2 = deriv(advance(y0, k1, 0.5 * dt), s0.t + 0.5 * dt);
  const JointDot k3 = deriv(advance(y0, k2, 0.5 * dt), s0.t + 0.5 * dt);
  const JointDot k4 = deriv(advance(y0, k3, dt), s1.t);

  ImuStepResult out;
  out.t0 = s0.t;
  out.t1 = s1.t;
  out.start_state = x;
  out.end_state = x;
  out.end_state.R = nearest_rotation(
      x.R + (dt / 6.0) * (k1.R_dot + 2.0 * k2.R_dot + 2.0 * k3.R_dot + k4.R_dot));
  out.end_state.p =
      x.p + (dt / 6.0) * (k1.p_dot + 2.0 * k2.p_dot + 2.0 * k3.p_dot + k4.p_dot);
  out.end_state.v =
      x.v + (dt / 6.0) * (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot);
  out.phi = Mat15::Identity() +
            (dt / 6.0) * (k1.phi_dot + 2.0 * k2.phi_dot + 2.0 * k3.phi_dot + k4.phi_dot);
  Mat15 q = (dt / 6.0) * (k1.q_dot + 2.0 * k2.q_dot + 2.0 * k3.q_dot + k4.q_dot);
  out.q = 0.5 * (q + q.transpose());
  return out;
}

void ImuAccumulator::add(const ImuStepResult &step) {
  if (empty_) {
    nominal_dt_ = step.t1 - step.t0;
    acc_.t_start = step.t0;
    acc_.start_state = step.start_state;
    acc_.phi = step.phi;
    acc_.q = step.q;
    empty_ = false;
  } else {
    if (step.t0 - acc_.t_end > nominal_dt_ + 1e-12 ||
        step.t1 - step.t0 > 2.0 * nominal_dt_ + 1e-12) {
      acc_.gap_warning = true;
    }
    acc_.phi = (step.phi * acc_.phi).eval();
    acc_.q = (step.phi * acc_.q * step.phi.transpose() + step.q).eval();
    acc_.q = (0.5 * (acc_.q + acc_.q.transpose())).eval();
  }
  acc_.t_end = step.t1;
  acc_.end_state = step.end_state;
}

ImuAccumulation accumulate(std::span<const ImuStepResult> steps) {
  ImuAccumulator acc;
  for (const auto &s : steps) acc.add(s);
  return acc.result();
}

namespace {

// blockdiag(M15, I) X blockdiag(M15, I)^T restricted to what changes.
MatX blockdiag_sandwich(const Mat15 &m, const MatX &X) {
  MatX out = X;
  const int n = static_cast<int>(X.rows());
  out.topLeftCorner<kImuDim, kImuDim>() =
      m * X.topLeftCorner<kImuDim, kImuDim>() * m.transpose();
  if (n > kImuDim) {
    out.topRightCorner(kImuDim, n - kImuDim) = m * X.topRightCorner(kImuDim, n - kImuDim);
    out.bottomLeftCorner(n - kImuDim, kImuDim) =
        out.topRightCorner(kImuDim, n - kImuDim).transpose();
  }
  return out;
}

}  // namespace

MatX transformed_transition(const Mat15 &phi_imu, const ErrorTransform &t_prior,
                            const ErrorTransform &t_post) {
  const int n = t_prior.dim();
  if (t_post.dim() != n) {
    throw std::invalid_argument("transformed_transition: layout mismatch");
  }
  // D = blockdiag(Phi_I, I); then columns of D T_prior^-1, rows of T_post (.).
  MatX out = MatX::Identity(n, n);
  out.topLeftCorner<kImuDim, kImuDim>() = phi_imu;
  // right-multiply by T_prior^-1: col_theta -= col_r * K_r
  auto sub_col = [&out](int col_off, const Mat3 &K) {
    out.middleCols<3>(kThetaIdx) -= out.middleCols<3>(col_off) * K;
  };
  sub_col(kPosIdx, skew(t_prior.p_gen()));
  sub_col(kVelIdx, skew(t_prior.v_gen()));
  for (std::size_t i = 0; i < t_prior.landmark_gens().size(); ++i) {
    sub_col(kImuDim + 3 * static_cast<int>(i), skew(t_prior.landmark_gens()[i]));
  }
  // left-multiply by T_post: row_r += K_r * row_theta
  const auto theta_rows = out.middleRows<3>(kThetaIdx).eval();
  out.middleRows<3>(kPosIdx) += skew(t_post.p_gen()) * theta_rows;
  out.middleRows<3>(kVelIdx) += skew(t_post.v_gen()) * theta_rows;
  for (std::size_t i = 0; i < t_post.landmark_gens().size(); ++i) {
    out.middleRows<3>(kImuDim + 3 * static_cast<int>(i)) +=
        skew(t_post.landmark_gens()[i]) * theta_rows;
  }
  return out;
}

MatX transformed_noise(const Mat15 &q_imu, const ErrorTransform &t_post) {
  MatX q = MatX::Zero(t_post.dim(), t_post.dim());
  q.topLeftCorner<kImuDim, kImuDim>() = q_imu;
  return t_post.sandwich(q, ErrorTransform::Direction::kForward);
}

PropagationResult efficient_propagate(const MatX &P_star, const ImuAccumulation &acc,
                                      const ErrorTransform &t_prior,
                                      const ErrorTransform &t_post) {
  const int n = static_cast<int>(P_star.rows());
  if (n != t_prior.dim() || n != t_post.dim() || P_star.cols() != n) {
    throw std::invalid_argument("efficient_propagate: layout mismatch");
  }
  // Phi* P* Phi*^T + Q* = T_post (D (T_prior^-1 P* T_prior^-T) D^T
  //                               + blockdiag(Q_I, 0)) T_post^T
  MatX inner = t_prior.sandwich(P_star, ErrorTransform::Direction::kInverse);
  inner = blockdiag_sandwich(acc.phi, inner);
  inner.topLeftCorner<kImuDim, kImuDim>() += acc.q;
  PropagationResult out;
  out.cov = t_post.sandwich(inner, ErrorTransform::Direction::kForward);
  out.phi = transformed_transition(acc.phi, t_prior, t_post);
  return out;
}

namespace {

struct NaiveJoint {
  Mat3 R;
  Vec3 p;
  Vec3 v;
  MatX phi;
  MatX q;
};

struct NaiveDot {
  Mat3 R_dot;
  Vec3 p_dot;
  Vec3 v_dot;
  MatX phi_dot;
  MatX q_dot;
};

}  // namespace

NaivePropagationResult naive_propagate(const MatX &P_star, const VinsState &x,
                                       std::span<const ImuSample> samples,
                                       const NoiseParams &noise) {
  const int n = x.dim();
  if (P_star.rows() != n || P_star.cols() != n) {
    throw std::invalid_argument("naive_propagate: layout mismatch");
  }
  NaivePropagationResult out;
  out.phi = MatX::Identity(n, n);
  out.end_state = x;
  MatX q_acc = MatX::Zero(n, n);

  const double sg2 = noise.sigma_g * noise.sigma_g;
  const double sa2 = noise.sigma_a * noise.sigma_a;
  const double sgw2 = noise.sigma_gw * noise.sigma_gw;
  const double saw2 = noise.sigma_aw * noise.sigma_aw;

  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const ImuSample &s0 = samples[i];
    const ImuSample &s1 = samples[i + 1];
    const double dt = s1.t - s0.t;
    if (!(dt > 0.0)) throw std::invalid_argument("naive_propagate: non-increasing timestamps");

    VinsState cur = out.end_state;
    auto deriv = [&](const NaiveJoint &y, double t) {
      NaiveDot d;
      ImuState tmp = cur.imu;
      tmp.R = y.R;
      tmp.p = y.p;
      tmp.v = y.v;
      const ImuInput u = interpolate_input(s0, s1, t);
      const ImuStateDot sd = nominal_derivative(tmp, u, noise.gravity);
      d.R_dot = sd.R_dot;
      d.p_dot = sd.p_dot;
      d.v_dot = sd.v_dot;

      VinsState stage = cur;
      stage.imu.R = y.R;
      stage.imu.p = y.p;
      stage.imu.v = y.v;
      ImuSample su;
      su.t = t;
      su.omega_m = u.omega_m;
      su.accel_m = u.accel_m;
      const TransformedJacobians tj = transformed_jacobians(stage, su, noise.gravity);
      d.phi_dot = tj.F * y.phi;
      const MatX fq = tj.F * y.q;
      // G* Qc G*^T assembled from the four noise columns of G*.
      const auto g_gyro = tj.G.leftCols<3>();
      const auto g_accel = tj.G.middleCols<3>(3);
      MatX gqg = sg2 * (g_gyro * g_gyro.transpose());
      gqg += sa2 * (g_accel * g_accel.transpose());
      gqg.block<3, 3>(kBgIdx, kBgIdx) += sgw2 * Mat3::Identity();
      gqg.block<3, 3>(kBaIdx, kBaIdx) += saw2 * Mat3::Identity();
      d.q_dot = fq + fq.transpose() + gqg;
      return d;
    };

    auto advance = [](const NaiveJoint &y, const NaiveDot &d, double h) {
      NaiveJoint next = y;
      next.R = y.R + h * d.R_dot;
      next.p = y.p + h * d.p_dot;
      next.v = y.v + h * d.v_dot;
      next.phi = y.phi + h * d.phi_dot;
      next.q = y.q + h * d.q_dot;
      return next;
    };

    NaiveJoint y0{cur.imu.R, cur.imu.p, cur.imu.v, out.phi, q_acc};
    const NaiveDot k1 = deriv(y0, s0.t);
    const NaiveDot k2 = deriv(advance(y0, k1, 0.5 * dt), s0.t + 0.5 * dt);
    const NaiveDot k3 = deriv(advance(y0, k2, 0.5 * dt), s0.t + 0.5 * dt);
    const NaiveDot k4 = deriv(advance(y0, k3, dt), s1.t);

    out.end_state.imu.R = nearest_rotation(
        cur.imu.R + (dt / 6.0) * (k1.R_dot + 2.0 * k2.R_dot + 2.0 * k3.R_dot + k4.R_dot));
    out.end_state.imu.p =
        cur.imu.p + (dt / 6.0) * (k1.p_dot + 2.0 * k2.p_dot + 2.0 * k3.p_dot + k4.p_dot);
    out.end_state.imu.v =
        cur.imu.v + (dt / 6.0) * (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot);
    out.phi += (dt / 6.0) * (k1.phi_dot + 2.0 * k2.phi_dot + 2.0 * k3.phi_dot + k4.phi_dot);
    q_acc += (dt / 6.0) * (k1.q_dot + 2.0 * k2.q_dot + 2.0 * k3.q_dot + k4.q_dot);
    q_acc = 0.5 * (q_acc + q_acc.transpose()).eval();
  }

  out.cov = out.phi * P_star * out.phi.transpose() + q_acc;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

}  // namespace teskf
