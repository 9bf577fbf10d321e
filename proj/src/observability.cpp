#include "teskf/observability.hpp"

#include <set>
#include <stdexcept>

#include <Eigen/SVD>

#include "teskf/rng.hpp"
#include "teskf/simulator.hpp"
#include "teskf/vins_model.hpp"

namespace teskf {

ObservabilityAudit build_observability(std::span<const TraceEntry> trace,
                                       ObservabilityMode mode, int state_dim,
                                       double tol_ratio) {
  if (trace.empty()) throw std::invalid_argument("build_observability: empty trace");

  int ticks_with_rows = 0;
  std::set<int> landmark_cols;
  long total_rows = 0;
  for (const auto &e : trace) {
    if (e.H.rows() > 0) ++ticks_with_rows;
    total_rows += e.H.rows();
    for (int c = kImuDim; c + 2 < e.H.cols(); c += 3) {
      if (e.H.rows() > 0 && e.H.middleCols<3>(c).cwiseAbs().sum() > 0.0) {
        landmark_cols.insert(c);
      }
    }
  }
  if (ticks_with_rows < 5) {
    throw std::invalid_argument("build_observability: fewer than 5 timesteps with measurements");
  }
  if (static_cast<int>(landmark_cols.size()) < 4) {
    throw std::invalid_argument("build_observability: fewer than 4 landmarks observed");
  }

  ObservabilityAudit audit;
  audit.mode = mode;
  audit.tol_ratio = tol_ratio;
  audit.M.resize(total_rows, state_dim);
  MatX phi_acc = MatX::Identity(state_dim, state_dim);
  long row = 0;
  for (const auto &e : trace) {
    if (e.phi_interval.size() > 0) phi_acc = e.phi_interval * phi_acc;
    if (e.H.rows() > 0) {
      audit.M.middleRows(row, e.H.rows()) = e.H * phi_acc;
      row += e.H.rows();
    }
  }

  Eigen::BDCSVD<MatX> svd(audit.M, Eigen::ComputeFullV);
  audit.singular_values = svd.singularValues();
  const double smax = audit.singular_values(0);
  int nullity = 0;
  for (int i = static_cast<int>(audit.singular_values.size()) - 1; i >= 0; --i) {
    if (audit.singular_values(i) < tol_ratio * smax) ++nullity;
    else break;
  }
  // columns of V beyond the singular-value count (rows < cols) are null too
  nullity += state_dim - static_cast<int>(audit.singular_values.size());
  audit.null_dim = nullity;
  audit.null_basis = svd.matrixV().rightCols(nullity);
  return audit;
}

MatX numeric_nullspace(const MatX &M, double tol_ratio) {
  Eigen::BDCSVD<MatX> svd(M, Eigen::ComputeFullV);
  const VecX sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  int nullity = static_cast<int>(M.cols()) - static_cast<int>(sv.size());
  for (int i = static_cast<int>(sv.size()) - 1; i >= 0; --i) {
    if (sv(i) < tol_ratio * smax) ++nullity;
    else break;
  }
  return svd.matrixV().rightCols(nullity);
}

MatX analytic_nullspace(const VinsState &x, NullspaceKind kind, const Vec3 &gravity) {
  const int n = x.dim();
  MatX basis = MatX::Zero(n, 4);
  basis.block<3, 3>(kPosIdx, 0) = Mat3::Identity();
  for (int i = 0; i < x.num_landmarks(); ++i) {
    basis.block<3, 3>(kImuDim + 3 * i, 0) = Mat3::Identity();
  }
  basis.block<3, 1>(kThetaIdx, 3) = gravity;
  if (kind == NullspaceKind::kOriginal) {
    basis.block<3, 1>(kPosIdx, 3) = -skew(x.imu.p) * gravity;
    basis.block<3, 1>(kVelIdx, 3) = -skew(x.imu.v) * gravity;
    for (int i = 0; i < x.num_landmarks(); ++i) {
      basis.block<3, 1>(kImuDim + 3 * i, 3) = -skew(x.landmarks[i].second) * gravity;
    }
  }
  return basis;
}

int expected_null_dimension(ObservabilityMode mode) {
  return mode == ObservabilityMode::kEskfTwoPoint ? 3 : 4;
}

namespace {

SimWorld audit_world(const ObservabilityExperimentConfig &cfg, bool noise_free) {
  SimWorld w = default_world(cfg.seed);
  w.trajectory.duration = (cfg.n_ticks + 1) / w.cam_hz + 0.5;
  w.trajectory.period = 8.0;  // brisker motion excites the bias directions
  w.landmarks = scatter_landmarks(8.0, 0.0, 3.0, cfg.n_landmarks, cfg.seed);
  if (noise_free) {
    w.noise.sigma_g = w.noise.sigma_a = 0.0;
    w.noise.sigma_gw = w.noise.sigma_aw = 0.0;
    w.noise.sigma_pix = 0.0;
  } else {
    w.noise.sigma_pix = cfg.sigma_pix;
  }
  return w;
}

VinsState truth_state(const SimWorld &world, double t) {
  const TruthSample truth = truth_at(world.trajectory, t);
  VinsState x;
  x.imu.R = truth.R;
  x.imu.p = truth.p;
  x.imu.v = truth.v;
  for (const auto &[id, pos] : world.landmarks) x.landmarks.emplace_back(id, pos);
  return x;
}

// Shared-linearization trace: Jacobians and transitions evaluated along the
// true trajectory fed with noise-free inputs.
std::vector<TraceEntry> ideal_trace(const ObservabilityExperimentConfig &cfg) {
  const SimWorld world = audit_world(cfg, true);
  const ImuData imu = gen_imu(world);
  const std::vector<CameraFrame> frames = gen_frames(world);
  const int stride = static_cast<int>(std::llround(world.imu_hz / world.cam_hz));

  std::vector<TraceEntry> trace;
  const int n_ticks = std::min<int>(cfg.n_ticks + 1, static_cast<int>(frames.size()));
  for (int k = 0; k < n_ticks; ++k) {
    TraceEntry entry;
    const VinsState xk = truth_state(world, frames[k].t);
    if (k == 0) {
      entry.phi_interval = MatX::Identity(xk.dim(), xk.dim());
    } else {
      ImuAccumulator acc;
      ImuState imu_state = truth_state(world, frames[k - 1].t).imu;
      for (int i = (k - 1) * stride; i < k * stride; ++i) {
        const ImuStepResult step =
            imu_step(imu_state, imu.samples[i], imu.samples[i + 1], world.noise);
        acc.add(step);
        imu_state = step.end_state;
      }
      entry.phi_interval = MatX::Identity(xk.dim(), xk.dim());
      entry.phi_interval.topLeftCorner<kImuDim, kImuDim>() = acc.result().phi;
    }
    std::vector<MatX> rows;
    for (const auto &obs : frames[k].observations) {
      auto mj = measurement_jacobian(xk, world.cam, obs.id);
      if (mj) rows.push_back(mj->H);
    }
    entry.H = MatX::Zero(2 * static_cast<long>(rows.size()), xk.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      entry.H.middleRows<2>(2 * static_cast<long>(i)) = rows[i];
    }
    trace.push_back(std::move(entry));
  }
  return trace;
}

std::vector<TraceEntry> filter_trace(const ObservabilityExperimentConfig &cfg,
                                     FilterKind kind) {
  const SimWorld world = audit_world(cfg, false);
  const ImuData imu = gen_imu(world);
  const std::vector<CameraFrame> frames = gen_frames(world);
  const int stride = static_cast<int>(std::llround(world.imu_hz / world.cam_hz));

  FilterOptions opts;
  opts.kind = kind;
  opts.cam = world.cam;
  opts.noise = world.noise;
  opts.auto_landmarks = false;  // fixed landmark set keeps M columns stable
  opts.record_trace = true;
  opts.max_landmarks = cfg.n_landmarks;

  // Initial estimate perturbed from truth so linearization points move.
  Rng rng = Rng(cfg.seed).stream("observability_init");
  auto gauss3 = [&rng]() { return Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()); };
  VinsState init = truth_state(world, 0.0);
  init.landmarks.clear();
  init.imu.R = exp_so3(0.01 * gauss3()) * init.imu.R;
  init.imu.p += 0.05 * gauss3();
  init.imu.v += 0.05 * gauss3();

  MatX P0 = MatX::Zero(kImuDim, kImuDim);
  P0.block<3, 3>(kThetaIdx, kThetaIdx) = 1e-4 * Mat3::Identity();
  P0.block<3, 3>(kPosIdx, kPosIdx) = 2.5e-3 * Mat3::Identity();
  P0.block<3, 3>(kVelIdx, kVelIdx) = 2.5e-3 * Mat3::Identity();
  P0.block<3, 3>(kBgIdx, kBgIdx) = 1e-4 * Mat3::Identity();
  P0.block<3, 3>(kBaIdx, kBaIdx) = 1e-2 * Mat3::Identity();

  FilterInstance filter(opts, init, P0, 0.0);
  for (const auto &[id, pos] : world.landmarks) {
    filter.seed_landmark(id, pos + 0.2 * gauss3(), 0.5);
  }

  const int n_ticks = std::min<int>(cfg.n_ticks + 1, static_cast<int>(frames.size()));
  for (int k = 0; k < n_ticks; ++k) {
    if (k > 0) {
      const auto first = imu.samples.begin() + (k - 1) * stride;
      filter.propagate(std::span<const ImuSample>(&*first, stride + 1));
    }
    filter.update(frames[k]);
  }
  return filter.trace();
}

}  // namespace

ObservabilityAudit run_observability_experiment(ObservabilityMode mode,
                                                const ObservabilityExperimentConfig &cfg) {
  std::vector<TraceEntry> trace;
  switch (mode) {
    case ObservabilityMode::kIdealSingleLinearization:
      trace = ideal_trace(cfg);
      break;
    case ObservabilityMode::kEskfTwoPoint:
      trace = filter_trace(cfg, FilterKind::kEskf);
      break;
    case ObservabilityMode::kTEskf:
      trace = filter_trace(cfg, FilterKind::kTEskf);
      break;
  }
  const int dim = kImuDim + 3 * cfg.n_landmarks;
  return build_observability(trace, mode, dim, cfg.tol_ratio);
}

}  // namespace teskf
