#include "teskf/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "teskf/vins_model.hpp"
#include "json.hpp"

namespace teskf {

std::string to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::kEskf: return "eskf";
    case FilterKind::kFejEskf: return "fej-eskf";
    case FilterKind::kTEskf: return "t-eskf";
  }
  return "unknown";
}

std::string UpdateReport::to_jsonl(const VinsState &state) const {
  nlohmann::json j;
  j["t"] = t;
  j["n_meas"] = n_meas;
  j["n_gated"] = n_gated;
  j["n_initialized"] = n_initialized;
  j["nis"] = nis;
  j["nis_dof"] = nis_dof;
  j["residual_rms_px"] = residual_rms_px;
  j["skipped"] = skipped;
  if (skipped) j["skip_reason"] = skip_reason;
  j["state"] = {{"p", {state.imu.p.x(), state.imu.p.y(), state.imu.p.z()}},
                {"v", {state.imu.v.x(), state.imu.v.y(), state.imu.v.z()}},
                {"yaw", std::atan2(state.imu.R(1, 0), state.imu.R(0, 0))},
                {"n_landmarks", state.num_landmarks()}};
  return j.dump();
}

namespace {

void remove_rows_cols(MatX &m, int off) {
  const int n = static_cast<int>(m.rows());
  MatX out(n - 3, n - 3);
  out.topLeftCorner(off, off) = m.topLeftCorner(off, off);
  out.topRightCorner(off, n - off - 3) = m.topRightCorner(off, n - off - 3);
  out.bottomLeftCorner(n - off - 3, off) = m.bottomLeftCorner(n - off - 3, off);
  out.bottomRightCorner(n - off - 3, n - off - 3) =
      m.bottomRightCorner(n - off - 3, n - off - 3);
  m = std::move(out);
}

}  // namespace

FilterInstance::FilterInstance(const FilterOptions &opts, const VinsState &init_state,
                               const MatX &P0, double t0)
    : opts_(opts), state_(init_state), time_(t0) {
  if (P0.rows() != init_state.dim() || P0.cols() != init_state.dim()) {
    throw std::invalid_argument("FilterInstance: P0 dimension mismatch");
  }
  if (opts_.kind == FilterKind::kTEskf) {
    cov_ = build_transform(state_).sandwich(P0, ErrorTransform::Direction::kForward);
  } else {
    cov_ = P0;
  }
  fej_p_ = state_.imu.p;
  fej_v_ = state_.imu.v;
  for (const auto &[id, pos] : state_.landmarks) fej_landmarks_[id] = pos;
}

void FilterInstance::propagate(std::span<const ImuSample> samples) {
  if (samples.size() < 2) return;

  const ErrorTransform t_prior = build_transform(state_);
  const double dt_total = samples.back().t - samples.front().t;

  ImuAccumulator acc;
  ImuState imu = state_.imu;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const ImuStepResult step = imu_step(imu, samples[i], samples[i + 1], opts_.noise);
    acc.add(step);
    imu = step.end_state;
  }
  state_.imu = imu;
  time_ = samples.back().t;

  MatX phi_used;
  if (opts_.kind == FilterKind::kTEskf) {
    const ErrorTransform t_post = build_transform(state_);
    PropagationResult r = efficient_propagate(cov_, acc.result(), t_prior, t_post);
    cov_ = std::move(r.cov);
    phi_used = std::move(r.phi);
  } else {
    Mat15 phi = acc.result().phi;
    if (opts_.kind == FilterKind::kFejEskf) {
      // State-dependent blocks re-evaluated at first estimates: the stored
      // anchors at the interval start and the fresh prior at the end.
      const Vec3 &g = opts_.noise.gravity;
      phi.block<3, 3>(kPosIdx, kThetaIdx) =
          skew(fej_p_ - state_.imu.p + fej_v_ * dt_total + 0.5 * g * dt_total * dt_total);
      phi.block<3, 3>(kVelIdx, kThetaIdx) = skew(fej_v_ - state_.imu.v + g * dt_total);
    }
    const int n = state_.dim();
    MatX next = cov_;
    next.topLeftCorner<kImuDim, kImuDim>() =
        phi * cov_.topLeftCorner<kImuDim, kImuDim>() * phi.transpose() + acc.result().q;
    if (n > kImuDim) {
      next.topRightCorner(kImuDim, n - kImuDim) =
          phi * cov_.topRightCorner(kImuDim, n - kImuDim);
      next.bottomLeftCorner(n - kImuDim, kImuDim) =
          next.topRightCorner(kImuDim, n - kImuDim).transpose();
    }
    cov_ = 0.5 * (next + next.transpose());
    if (opts_.record_trace) {
      phi_used = MatX::Identity(n, n);
      phi_used.topLeftCorner<kImuDim, kImuDim>() = phi;
    }
  }
  fej_p_ = state_.imu.p;
  fej_v_ = state_.imu.v;

  if (opts_.record_trace) {
    trace_.push_back(TraceEntry{MatX(), std::move(phi_used)});
  }
}

MatX FilterInstance::covariance_original() const {
  if (opts_.kind != FilterKind::kTEskf) return cov_;
  return build_transform(state_).sandwich(cov_, ErrorTransform::Direction::kInverse);
}

MatX FilterInstance::measurement_rows(LandmarkId id, bool &behind) const {
  behind = false;
  auto mj = measurement_jacobian(state_, opts_.cam, id);
  if (!mj) {
    behind = true;
    return MatX();
  }
  if (opts_.kind == FilterKind::kEskf) return mj->H;
  if (opts_.kind == FilterKind::kFejEskf) {
    auto it = fej_landmarks_.find(id);
    const Vec3 &l_anchor = it != fej_landmarks_.end() ? it->second : *state_.landmark(id);
    MatX he = mj->He;
    he.block<3, 3>(0, kThetaIdx) = skew(l_anchor - fej_p_);
    return mj->Pi * he;
  }
  // T-ESKF: H* = Pi * H_e*, no state entries beyond Pi
  return mj->Pi * transformed_he(state_, id);
}

void FilterInstance::apply_correction(const VecX &delta) {
  if (opts_.kind != FilterKind::kTEskf) {
    state_ = boxplus(state_, delta);
    return;
  }
  if (opts_.variant == CorrectionVariant::kPriorTransform) {
    state_ = boxplus(state_, build_transform(state_).apply_inv(delta));
    return;
  }
  // Posterior-transform variant, analytic form: A = (I + [dth]x + dth dth^T)
  // / (1 + dth^T dth) applied to p, v and landmarks.
  const Vec3 dth = delta.segment<3>(kThetaIdx);
  const Mat3 A =
      (Mat3::Identity() + skew(dth) + dth * dth.transpose()) / (1.0 + dth.squaredNorm());
  state_.imu.R = exp_so3(dth) * state_.imu.R;
  state_.imu.p = A * (state_.imu.p + delta.segment<3>(kPosIdx));
  state_.imu.v = A * (state_.imu.v + delta.segment<3>(kVelIdx));
  state_.imu.bg += delta.segment<3>(kBgIdx);
  state_.imu.ba += delta.segment<3>(kBaIdx);
  for (int i = 0; i < state_.num_landmarks(); ++i) {
    state_.landmarks[i].second =
        A * (state_.landmarks[i].second + delta.segment<3>(kImuDim + 3 * i));
  }
}

UpdateReport FilterInstance::update(const CameraFrame &frame) {
  UpdateReport report;
  report.t = frame.t;
  const double sigma2 = frame.sigma_pix * frame.sigma_pix;
  const int n = state_.dim();
  if (opts_.record_trace && trace_.empty()) {
    // update before any propagate (first frame): interval transition is I
    trace_.push_back(TraceEntry{MatX::Zero(0, n), MatX::Identity(n, n)});
  }

  struct Accepted {
    MatX H;
    Vec2 residual;
  };
  std::vector<Accepted> accepted;
  for (const auto &obs : frame.observations) {
    if (state_.landmark_index(obs.id) < 0) continue;
    const auto predicted = measure(state_, opts_.cam, obs.id);
    if (!predicted) continue;  // behind camera: measurement skipped
    bool behind = false;
    MatX H = measurement_rows(obs.id, behind);
    if (behind) continue;
    const Vec2 r = obs.uv - *predicted;
    const Eigen::Matrix2d S =
        H * cov_ * H.transpose() + sigma2 * Eigen::Matrix2d::Identity();
    const double nis = r.dot(S.ldlt().solve(r));
    if (nis > opts_.gate_chi2) {
      ++report.n_gated;
      continue;
    }
    accepted.push_back({std::move(H), r});
  }

  if (!accepted.empty()) {
    const int rows = 2 * static_cast<int>(accepted.size());
    MatX H(rows, n);
    VecX y(rows);
    for (std::size_t i = 0; i < accepted.size(); ++i) {
      H.middleRows<2>(2 * static_cast<int>(i)) = accepted[i].H;
      y.segment<2>(2 * static_cast<int>(i)) = accepted[i].residual;
    }
    MatX S = H * cov_ * H.transpose();
    S.diagonal().array() += sigma2;
    Eigen::LLT<MatX> llt(S);
    if (llt.info() != Eigen::Success) {
      report.skipped = true;
      report.skip_reason = "innovation covariance not invertible";
    } else {
      const MatX PHt = cov_ * H.transpose();
      const MatX K = llt.solve(PHt.transpose()).transpose();
      const MatX I_KH = MatX::Identity(n, n) - K * H;
      cov_ = I_KH * cov_ * I_KH.transpose() + sigma2 * K * K.transpose();
      cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
      apply_correction(K * y);
      report.n_meas = static_cast<int>(accepted.size());
      report.nis = y.dot(llt.solve(y));
      report.nis_dof = rows;
      report.residual_rms_px = std::sqrt(y.squaredNorm() / rows);
    }
    if (opts_.record_trace) trace_.back().H = std::move(H);
  } else if (opts_.record_trace) {
    trace_.back().H = MatX::Zero(0, n);
  }

  if (opts_.auto_landmarks) handle_lifecycle(frame, report);
  return report;
}

void FilterInstance::handle_lifecycle(const CameraFrame &frame, UpdateReport &report) {
  for (const auto &obs : frame.observations) last_seen_[obs.id] = frame.t;

  // Drop landmarks that left the field of view (exact marginalization) so
  // their slots become available for newly visible ones.
  std::vector<LandmarkId> stale;
  for (const auto &[id, pos] : state_.landmarks) {
    const auto it = last_seen_.find(id);
    if (it == last_seen_.end() || frame.t - it->second > opts_.stale_seconds) {
      stale.push_back(id);
    }
  }
  for (const LandmarkId id : stale) remove_landmark(id);

  for (const auto &obs : frame.observations) {
    if (state_.landmark_index(obs.id) >= 0) continue;
    auto &pend = pending_[obs.id];
    while (!pend.empty() && frame.t - pend.front().t > opts_.stale_seconds) {
      pend.erase(pend.begin());
    }
    pend.push_back({frame.t, obs.uv, state_.imu.R, state_.imu.p});
    if (state_.num_landmarks() >= opts_.max_landmarks) continue;
    if (static_cast<int>(pend.size()) >= opts_.min_observations &&
        try_initialize(obs.id, pend, frame.sigma_pix)) {
      pending_.erase(obs.id);
      ++report.n_initialized;
    }
  }

  // Least-recently-observed eviction above the landmark cap.
  while (state_.num_landmarks() > opts_.max_landmarks) {
    LandmarkId victim = state_.landmarks.front().first;
    double oldest = std::numeric_limits<double>::max();
    for (const auto &[id, pos] : state_.landmarks) {
      const auto it = last_seen_.find(id);
      const double seen = it == last_seen_.end() ? -1.0 : it->second;
      if (seen < oldest) {
        oldest = seen;
        victim = id;
      }
    }
    remove_landmark(victim);
  }
}

bool FilterInstance::try_initialize(LandmarkId id, std::vector<PendingObservation> &obs,
                                    double sigma_pix) {
  // Baseline: maximum pairwise camera-center distance.
  const Vec3 cam_offset = -opts_.cam.R_CI.transpose() * opts_.cam.p_CI;
  double baseline = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Vec3 ci = obs[i].p + obs[i].R * cam_offset;
    for (std::size_t j = i + 1; j < obs.size(); ++j) {
      const Vec3 cj = obs[j].p + obs[j].R * cam_offset;
      baseline = std::max(baseline, (ci - cj).norm());
    }
  }
  if (baseline <= opts_.min_baseline) return false;

  // Linear (DLT) triangulation from the frozen pose estimates.
  const int rows = 2 * static_cast<int>(obs.size());
  MatX A(rows, 3);
  VecX b(rows);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Mat3 M = opts_.cam.R_CI * obs[i].R.transpose();
    const Vec3 off = opts_.cam.p_CI - M * obs[i].p;
    const double xn = (obs[i].uv.x() - opts_.cam.cx) / opts_.cam.fx;
    const double yn = (obs[i].uv.y() - opts_.cam.cy) / opts_.cam.fy;
    A.row(2 * i) = xn * M.row(2) - M.row(0);
    b(2 * i) = off.x() - xn * off.z();
    A.row(2 * i + 1) = yn * M.row(2) - M.row(1);
    b(2 * i + 1) = off.y() - yn * off.z();
  }
  Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double cond =
      svd.singularValues()(0) / std::max(svd.singularValues()(2), 1e-300);
  if (cond > opts_.max_triangulation_cond) return false;
  const Vec3 point = svd.solve(b);

  // Positive depth in every observing camera.
  for (const auto &o : obs) {
    const Vec3 pc = opts_.cam.R_CI * (o.R.transpose() * (point - o.p)) + opts_.cam.p_CI;
    if (pc.z() <= 0.0) return false;
  }

  append_landmark(id, point, opts_.landmark_prior_sigma);
  for (const auto &o : obs) replay_observation(id, o, sigma_pix);
  return true;
}

void FilterInstance::append_landmark(LandmarkId id, const Vec3 &position, double sigma0) {
  const int n = state_.dim();
  if (opts_.kind == FilterKind::kTEskf) {
    // Install the isotropic prior in the original space, then map the
    // augmented covariance forward with the enlarged transformation.
    MatX p_orig = covariance_original();
    MatX ext = MatX::Zero(n + 3, n + 3);
    ext.topLeftCorner(n, n) = p_orig;
    ext.bottomRightCorner<3, 3>() = sigma0 * sigma0 * Mat3::Identity();
    state_.landmarks.emplace_back(id, position);
    cov_ = build_transform(state_).sandwich(ext, ErrorTransform::Direction::kForward);
  } else {
    MatX ext = MatX::Zero(n + 3, n + 3);
    ext.topLeftCorner(n, n) = cov_;
    ext.bottomRightCorner<3, 3>() = sigma0 * sigma0 * Mat3::Identity();
    state_.landmarks.emplace_back(id, position);
    cov_ = std::move(ext);
  }
  fej_landmarks_[id] = position;
}

void FilterInstance::seed_landmark(LandmarkId id, const Vec3 &position, double sigma0) {
  if (state_.landmark_index(id) >= 0) {
    throw std::invalid_argument("seed_landmark: landmark already active");
  }
  append_landmark(id, position, sigma0);
}

void FilterInstance::replay_observation(LandmarkId id, const PendingObservation &obs,
                                        double sigma_pix) {
  // Measurement against the frozen pose estimate; only the landmark block
  // of the error-state is touched by the Jacobian.
  const int col = state_.landmark_index(id);
  const Vec3 &l = *state_.landmark(id);
  const Vec3 p_in_imu = obs.R.transpose() * (l - obs.p);
  const Vec3 pc = opts_.cam.R_CI * p_in_imu + opts_.cam.p_CI;
  if (pc.z() <= 1e-3) return;
  const auto predicted = project_point(p_in_imu, opts_.cam);
  if (!predicted) return;

  Eigen::Matrix<double, 2, 3> dpi;
  const double inv_z = 1.0 / pc.z();
  dpi << opts_.cam.fx * inv_z, 0.0, -opts_.cam.fx * pc.x() * inv_z * inv_z,
      0.0, opts_.cam.fy * inv_z, -opts_.cam.fy * pc.y() * inv_z * inv_z;

  const int n = state_.dim();
  MatX H = MatX::Zero(2, n);
  H.block<2, 3>(0, col) = dpi * opts_.cam.R_CI * obs.R.transpose();
  if (opts_.kind == FilterKind::kTEskf) {
    H = build_transform(state_).apply_inv_to_cols(H);
  }

  const Vec2 r = obs.uv - *predicted;
  const double sigma2 = sigma_pix * sigma_pix;
  const Eigen::Matrix2d S =
      H * cov_ * H.transpose() + sigma2 * Eigen::Matrix2d::Identity();
  const Eigen::LLT<Eigen::Matrix2d> llt(S);
  if (llt.info() != Eigen::Success) return;
  const MatX K = llt.solve((cov_ * H.transpose()).transpose()).transpose();
  const MatX I_KH = MatX::Identity(n, n) - K * H;
  cov_ = I_KH * cov_ * I_KH.transpose() + sigma2 * K * K.transpose();
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
  apply_correction(K * r);
}

void FilterInstance::remove_landmark(LandmarkId id) {
  const int off = state_.landmark_index(id);
  if (off < 0) throw std::invalid_argument("remove_landmark: unknown landmark id");
  remove_rows_cols(cov_, off);
  const int slot = (off - kImuDim) / 3;
  state_.landmarks.erase(state_.landmarks.begin() + slot);
  fej_landmarks_.erase(id);
  last_seen_.erase(id);
  pending_.erase(id);
}

}  // namespace teskf
