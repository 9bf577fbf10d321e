#pragma once

#include "teskf/types.hpp"

namespace teskf {

// Linear time-varying error-state transformation T(xhat): unit lower
// block-triangular, with [p]x, [v]x and per-landmark [l_i]x in the
// orientation-error column and identity bias rows. Stored as the skew
// generators only; the dense matrix is never needed in the hot path.
class ErrorTransform {
 public:
  ErrorTransform() = default;
  explicit ErrorTransform(const VinsState &x);

  int dim() const { return kImuDim + 3 * static_cast<int>(landmarks_.size()); }

  // y = T x (forward) computed in O(m): only the theta block couples.
  VecX apply(const VecX &x) const;
  // y = T^-1 x: identical structure with negated skew generators.
  VecX apply_inv(const VecX &x) const;

  // H T^-1 for a row-block H (e.g. measurement Jacobians): only the theta
  // column of the result differs from H.
  MatX apply_inv_to_cols(const MatX &H) const;

  // T P T^T (forward) or T^-1 P T^-T (inverse) using the theta-column
  // sparsity; the result is symmetrized. P must be symmetric to 1e-9.
  enum class Direction { kForward, kInverse };
  MatX sandwich(const MatX &P, Direction dir) const;

  // Dense T or T^-1 (tests, benchmarks, diagnostics).
  MatX dense(Direction dir = Direction::kForward) const;

  const Vec3 &p_gen() const { return p_; }
  const Vec3 &v_gen() const { return v_; }
  const std::vector<Vec3> &landmark_gens() const { return landmarks_; }

 private:
  Vec3 p_ = Vec3::Zero();
  Vec3 v_ = Vec3::Zero();
  std::vector<Vec3> landmarks_;
};

ErrorTransform build_transform(const VinsState &x);

// Jacobians of the transformed error-state system, dense (15+3m) layout:
// F* carries [g]x in the v/theta block and the -[.]x R coupling into the
// gyro-bias column; G* = T G; H_e* = [0 -I 0 0 0 ... I ...] has no state
// entries at all.
struct TransformedJacobians {
  MatX F;
  MatX G;
  MatX He;  // stacked over all landmarks, 3m x (15+3m)
};
TransformedJacobians transformed_jacobians(const VinsState &x, const ImuSample &u,
                                           const Vec3 &gravity);

// H_e* row block for one landmark (no state entries).
MatX transformed_he(const VinsState &x, LandmarkId id);

}  // namespace teskf
