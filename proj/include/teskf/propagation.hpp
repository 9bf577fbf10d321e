#pragma once

#include <span>

#include "teskf/transform.hpp"
#include "teskf/types.hpp"
#include "teskf/vins_model.hpp"

namespace teskf {

// One IMU interval: 15x15 transition / accumulated-noise blocks plus the
// co-integrated nominal state at the interval end.
struct ImuStepResult {
  Mat15 phi;
  Mat15 q;
  ImuState start_state;
  ImuState end_state;
  double t0 = 0.0;
  double t1 = 0.0;
};

// Joint RK4 over [s0.t, s1.t] of the nominal state, Phi' = F_I Phi and the
// Lyapunov form Q' = F_I Q + Q F_I^T + G_I Qc G_I^T, with F_I evaluated
// along the co-integrated nominal state. Outputs are symmetrized.
ImuStepResult imu_step(const ImuState &x, const ImuSample &s0, const ImuSample &s1,
                       const NoiseParams &noise);

struct ImuAccumulation {
  Mat15 phi = Mat15::Identity();
  Mat15 q = Mat15::Zero();
  double t_start = 0.0;
  double t_end = 0.0;
  ImuState start_state;
  ImuState end_state;
  bool gap_warning = false;
};

// Chains contiguous steps: Phi <- Phi_step Phi, Q <- Phi_step Q Phi_step^T + Q_step.
// A step longer than 2x the first step's duration sets gap_warning.
ImuAccumulation accumulate(std::span<const ImuStepResult> steps);

// Incremental accumulator used by the filters (same recursion).
class ImuAccumulator {
 public:
  void add(const ImuStepResult &step);
  const ImuAccumulation &result() const { return acc_; }
  bool empty() const { return empty_; }

 private:
  ImuAccumulation acc_;
  double nominal_dt_ = 0.0;
  bool empty_ = true;
};

// Transformed transition Phi* = T_post blockdiag(Phi_I, I) T_prior^-1, dense.
MatX transformed_transition(const Mat15 &phi_imu, const ErrorTransform &t_prior,
                            const ErrorTransform &t_post);

// Transformed accumulated noise Q* = T_post blockdiag(Q_I, 0) T_post^T.
MatX transformed_noise(const Mat15 &q_imu, const ErrorTransform &t_post);

// Covariance propagation in the transformed space using the sparse
// sandwich products; landmark blocks are touched only through the
// theta-column coupling. Returns the propagated covariance and Phi*.
struct PropagationResult {
  MatX cov;
  MatX phi;
};
PropagationResult efficient_propagate(const MatX &P_star, const ImuAccumulation &acc,
                                      const ErrorTransform &t_prior,
                                      const ErrorTransform &t_post);

// Full-dimension RK4 of the transformed system (oracle and benchmark
// baseline): Phi*' = F* Phi*, Q*' = F* Q* + Q* F*^T + G* Qc G*^T, with the
// nominal state co-integrated. Returns the propagated covariance, Phi*,
// and the end state.
struct NaivePropagationResult {
  MatX cov;
  MatX phi;
  VinsState end_state;
};
NaivePropagationResult naive_propagate(const MatX &P_star, const VinsState &x,
                                       std::span<const ImuSample> samples,
                                       const NoiseParams &noise);

}  // namespace teskf
