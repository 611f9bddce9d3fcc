#pragma once

#include "tvio/types.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

namespace tvio {

// det(Sigma)^(1/l) via log-determinant of a symmetric factorization.
// nullopt signals a numerically non-positive determinant (degenerate covariance).
std::optional<double> d_optimality(const Eigen::MatrixXd& pose_covariance);

struct AnovaResult {
  double f_statistic = 0.0;
  int df_between = 0;
  int df_within = 0;
  double p_value = 1.0;
  // Zero within-group variance with differing means: F undefined, p reported 0.
  bool degenerate = false;
};

AnovaResult one_way_anova(std::span<const std::vector<double>> groups);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

// P(F >= f) for the F-distribution with (d1, d2) degrees of freedom.
double f_distribution_sf(double f, int d1, int d2);

struct TrajectoryErrorResult {
  double final_position_error = 0.0;  // meters, after first-pose alignment
  double rmse = 0.0;                  // meters over all matched samples
  int matched_samples = 0;
};

// Nearest-neighbor timestamp association within `max_dt` seconds; the estimate
// is rigidly re-anchored so its first matched pose coincides with the truth.
TrajectoryErrorResult trajectory_error(std::span<const PoseRecord> estimate,
                                       std::span<const PoseRecord> truth,
                                       double max_dt = 0.005);

// Boxplot summary following the 1.5*IQR outlier convention.
struct BoxplotStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  std::vector<double> outliers;
};

BoxplotStats boxplot_stats(std::vector<double> samples);

}  // namespace tvio
