#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "teskf/config.hpp"
#include "teskf/filter.hpp"

namespace teskf {

struct MetricsRecord {
  int run = 0;
  double t = 0.0;
  std::string filter;
  double err_rot_deg = 0.0;   // full 3-DOF orientation error
  double err_yaw_deg = 0.0;   // z component of the global orientation error
  double err_pos_m = 0.0;
  double nees_rot = 0.0;   // 3 dof, normalized (consistent expectation 1)
  double nees_yaw = 0.0;   // 1 dof
  double nees_pos = 0.0;   // 3 dof
  double nees_pose = 0.0;  // 6 dof [theta, p]
};

// Normalized NEES e^T P^-1 e / dim. A singular slice is regularized with
// 1e-12 * trace * I; if it stays singular the result is NaN.
double nees(const VecX &error, const MatX &cov_slice);

// One Monte-Carlo run: derived seed, shared measurement streams across all
// configured filters, records at camera ticks. Optionally collects the
// per-frame update reports (JSONL lines) per filter.
std::vector<MetricsRecord> single_run(
    const RunConfig &cfg, int run_idx,
    std::map<std::string, std::vector<std::string>> *update_logs = nullptr);

struct MonteCarloResult {
  std::vector<MetricsRecord> records;
  std::vector<std::string> run_errors;  // diagnostics; failed runs don't stop the rest
};

MonteCarloResult run_monte_carlo(const RunConfig &cfg, int n_runs, int jobs);

struct FilterSummary {
  std::string filter;
  long n_records = 0;
  double orientation_rmse_deg = 0.0;  // time average of per-tick RMSE over runs
  double yaw_rmse_deg = 0.0;
  double position_rmse_m = 0.0;
  double mean_nees_rot = 0.0;
  double mean_nees_yaw = 0.0;
  double mean_nees_pos = 0.0;
  double mean_nees_pose = 0.0;
  // aggregates over the second half of the trajectory
  double mean_nees_yaw_last_half = 0.0;
  double mean_nees_pose_last_half = 0.0;
};

std::vector<FilterSummary> summarize(std::span<const MetricsRecord> records);

void write_metrics_csv(const std::string &path, std::span<const MetricsRecord> records);
void write_summary_json(const std::string &path, std::span<const FilterSummary> summaries);
void write_nees_hist_csv(const std::string &path, std::span<const MetricsRecord> records);

// FNV-1a over the record bytes; used by determinism checks.
std::uint64_t hash_records(std::span<const MetricsRecord> records);

std::uint64_t derive_run_seed(std::uint64_t master_seed, int run_idx);

}  // namespace teskf
