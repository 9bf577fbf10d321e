#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "teskf/propagation.hpp"
#include "teskf/transform.hpp"
#include "teskf/types.hpp"

namespace teskf {

enum class FilterKind { kEskf, kFejEskf, kTEskf };

// T-ESKF state correction: map delta* through T^-1 built at the prior
// estimate, or the analytic posterior form.
enum class CorrectionVariant { kPriorTransform, kPosteriorTransform };

std::string to_string(FilterKind kind);

struct FilterOptions {
  FilterKind kind = FilterKind::kTEskf;
  CorrectionVariant variant = CorrectionVariant::kPriorTransform;
  double gate_chi2 = 5.991;        // chi-square(2), 95%
  int max_landmarks = 30;          // least-recently-observed eviction above this
  double landmark_prior_sigma = 5.0;  // m, isotropic prior on new landmarks
  double min_baseline = 0.05;      // m, triangulation baseline requirement
  int min_observations = 2;
  double max_triangulation_cond = 1e8;
  double stale_seconds = 0.5;      // drop landmarks unobserved this long
  bool auto_landmarks = true;      // pending/triangulation/eviction lifecycle
  bool record_trace = false;       // keep (H_k, Phi_k) for observability audits
  CameraModel cam;
  NoiseParams noise;
};

struct UpdateReport {
  double t = 0.0;
  int n_meas = 0;    // landmark measurements fused
  int n_gated = 0;
  int n_initialized = 0;
  double nis = 0.0;  // stacked innovation NIS of the fused set
  int nis_dof = 0;
  double residual_rms_px = 0.0;
  bool skipped = false;
  std::string skip_reason;

  std::string to_jsonl(const VinsState &state) const;
};

// One camera tick of an audit trace: the measurement Jacobian actually used
// and the interval transition, both in the filter's own error space.
struct TraceEntry {
  MatX H;
  MatX phi_interval;
};

class FilterInstance {
 public:
  // P0 is the initial covariance over the original error-state; for T-ESKF
  // it is installed in the transformed space via the forward map.
  FilterInstance(const FilterOptions &opts, const VinsState &init_state,
                 const MatX &P0, double t0);

  // Advance over consecutive IMU samples covering [time(), samples.back().t].
  void propagate(std::span<const ImuSample> samples);

  UpdateReport update(const CameraFrame &frame);

  const VinsState &state() const { return state_; }
  double time() const { return time_; }
  const FilterOptions &options() const { return opts_; }

  // Covariance in the filter's own space (transformed for T-ESKF).
  const MatX &covariance_raw() const { return cov_; }
  // Covariance over the original error-state (inverse map for T-ESKF).
  MatX covariance_original() const;

  // Analysis hooks: install a landmark directly with an isotropic prior,
  // bypassing the pending/triangulation path.
  void seed_landmark(LandmarkId id, const Vec3 &position, double sigma0);
  void remove_landmark(LandmarkId id);

  const std::vector<TraceEntry> &trace() const { return trace_; }

 private:
  struct PendingObservation {
    double t;
    Vec2 uv;
    Mat3 R;  // pose estimate frozen at observation time
    Vec3 p;
  };

  void append_landmark(LandmarkId id, const Vec3 &position, double sigma0);
  bool try_initialize(LandmarkId id, std::vector<PendingObservation> &obs,
                      double sigma_pix);
  void replay_observation(LandmarkId id, const PendingObservation &obs, double sigma_pix);
  void apply_correction(const VecX &delta);
  MatX measurement_rows(LandmarkId id, bool &behind) const;
  void handle_lifecycle(const CameraFrame &frame, UpdateReport &report);

  FilterOptions opts_;
  VinsState state_;
  MatX cov_;
  double time_ = 0.0;

  // FEJ anchors: first estimates of p/v at the current interval start and
  // per-landmark first-estimate positions.
  Vec3 fej_p_ = Vec3::Zero();
  Vec3 fej_v_ = Vec3::Zero();
  std::map<LandmarkId, Vec3> fej_landmarks_;

  std::map<LandmarkId, std::vector<PendingObservation>> pending_;
  std::map<LandmarkId, double> last_seen_;
  std::vector<TraceEntry> trace_;
};

}  // namespace teskf
