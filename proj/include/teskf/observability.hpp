#pragma once

#include <cstdint>
#include <span>

#include "teskf/filter.hpp"
#include "teskf/types.hpp"

namespace teskf {

// Which Jacobian trace feeds the stacked observability matrix:
//  - ideal: F and H evaluated along one shared linearization (the truth);
//  - eskf-two-point: a real ESKF run, transitions at posteriors and
//    measurement Jacobians at priors (the mismatch that leaks yaw);
//  - teskf: a real T-ESKF run in the transformed space.
enum class ObservabilityMode { kIdealSingleLinearization, kEskfTwoPoint, kTEskf };

struct ObservabilityAudit {
  ObservabilityMode mode = ObservabilityMode::kIdealSingleLinearization;
  MatX M;                 // rows H_k Phi(t_k, t_0)
  VecX singular_values;   // non-increasing
  MatX null_basis;        // orthonormal columns
  double tol_ratio = 1e-8;
  int null_dim = 0;
};

// Stacks H_k Phi(t_k, t_0) from per-tick trace entries (each entry carries
// the interval transition since the previous tick). Requires >= 5 ticks and
// >= 4 landmark columns covered by measurements; throws otherwise.
ObservabilityAudit build_observability(std::span<const TraceEntry> trace,
                                       ObservabilityMode mode, int state_dim,
                                       double tol_ratio = 1e-8);

// Right singular vectors with sigma_i < tol_ratio * sigma_max.
MatX numeric_nullspace(const MatX &M, double tol_ratio);

enum class NullspaceKind { kOriginal, kTransformed, kTEskf };

// Analytic unobservable bases: three translation columns plus the rotation
// about gravity. The original-space basis depends on the state; the
// transformed/T-ESKF basis does not.
MatX analytic_nullspace(const VinsState &x, NullspaceKind kind, const Vec3 &gravity);

struct ObservabilityExperimentConfig {
  std::uint64_t seed = 1;
  int n_ticks = 20;       // camera ticks after the initial frame
  int n_landmarks = 12;
  double sigma_pix = 2.0;
  double tol_ratio = 1e-8;
};

// Runs the simulated circle-world experiment for the given mode and audits
// the resulting trace.
ObservabilityAudit run_observability_experiment(ObservabilityMode mode,
                                                const ObservabilityExperimentConfig &cfg);

int expected_null_dimension(ObservabilityMode mode);

}  // namespace teskf
