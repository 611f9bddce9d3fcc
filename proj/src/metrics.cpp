#include "tvio/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tvio {

std::optional<double> d_optimality(const Eigen::MatrixXd& pose_covariance) {
  if (pose_covariance.rows() != pose_covariance.cols() || pose_covariance.rows() < 1) {
    throw std::invalid_argument("d_optimality: matrix must be square and non-empty");
  }
  const Eigen::MatrixXd sym = 0.5 * (pose_covariance + pose_covariance.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev <= 0.0) return std::nullopt;
    log_det += std::log(ev);
  }
  return std::exp(log_det / double(pose_covariance.rows()));
}

namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;  // converged to machine precision in practice well before kMaxIter
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) {
    throw std::invalid_argument("regularized_incomplete_beta: a, b must be positive");
  }
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double f_distribution_sf(double f, int d1, int d2) {
  if (d1 < 1 || d2 < 1) throw std::invalid_argument("f_distribution_sf: dfs must be >= 1");
  if (f <= 0.0) return 1.0;
  const double x = double(d2) / (double(d2) + double(d1) * f);
  return regularized_incomplete_beta(0.5 * d2, 0.5 * d1, x);
}

AnovaResult one_way_anova(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw std::invalid_argument("one_way_anova: need at least 2 groups");
  size_t total_n = 0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw std::invalid_argument("one_way_anova: each group needs >= 2 samples");
    total_n += g.size();
  }
  const int k = int(groups.size());
  double grand_sum = 0.0;
  for (const auto& g : groups) {
    for (double v : g) grand_sum += v;
  }
  const double grand_mean = grand_sum / double(total_n);

  double ssb = 0.0, ssw = 0.0;
  for (const auto& g : groups) {
    double mean = 0.0;
    for (double v : g) mean += v;
    mean /= double(g.size());
    ssb += double(g.size()) * (mean - grand_mean) * (mean - grand_mean);
    for (double v : g) ssw += (v - mean) * (v - mean);
  }

  AnovaResult out;
  out.df_between = k - 1;
  out.df_within = int(total_n) - k;
  if (ssw <= 0.0) {
    if (ssb <= 0.0) {
      // All groups constant and equal.
      out.f_statistic = 0.0;
      out.p_value = 1.0;
    } else {
      out.f_statistic = std::numeric_limits<double>::infinity();
      out.p_value = 0.0;
      out.degenerate = true;
    }
    return out;
  }
  out.f_statistic = (ssb / out.df_between) / (ssw / out.df_within);
  out.p_value = f_distribution_sf(out.f_statistic, out.df_between, out.df_within);
  return out;
}

TrajectoryErrorResult trajectory_error(std::span<const PoseRecord> estimate,
                                       std::span<const PoseRecord> truth, double max_dt) {
  if (estimate.empty() || truth.empty()) {
    throw std::invalid_argument("trajectory_error: empty series");
  }
  // Truth is time-sorted; nearest neighbor by binary search.
  std::vector<std::pair<const PoseRecord*, const PoseRecord*>> matches;
  matches.reserve(estimate.size());
  for (const PoseRecord& e : estimate) {
    auto it = std::lower_bound(truth.begin(), truth.end(), e.timestamp,
                               [](const PoseRecord& p, double t) { return p.timestamp < t; });
    const PoseRecord* best = nullptr;
    double best_dt = max_dt;
    if (it != truth.end() && std::abs(it->timestamp - e.timestamp) <= best_dt) {
      best = &*it;
      best_dt = std::abs(it->timestamp - e.timestamp);
    }
    if (it != truth.begin()) {
      auto prev = std::prev(it);
      if (std::abs(prev->timestamp - e.timestamp) <= best_dt) best = &*prev;
    }
    if (best) matches.emplace_back(&e, best);
  }
  if (matches.empty()) {
    throw std::invalid_argument("trajectory_error: no overlapping timestamps within tolerance");
  }

  // Re-anchor the estimate so its first matched pose coincides with the truth.
  const PoseRecord& e0 = *matches.front().first;
  const PoseRecord& t0 = *matches.front().second;
  const Eigen::Matrix3d r_align = t0.q.toRotationMatrix() * e0.q.toRotationMatrix().transpose();
  const Eigen::Vector3d t_align = t0.r - r_align * e0.r;

  double sq_sum = 0.0;
  double final_err = 0.0;
  for (const auto& [e, t] : matches) {
    const Eigen::Vector3d aligned = r_align * e->r + t_align;
    const double err = (aligned - t->r).norm();
    sq_sum += err * err;
    final_err = err;
  }
  TrajectoryErrorResult out;
  out.final_position_error = final_err;
  out.rmse = std::sqrt(sq_sum / double(matches.size()));
  out.matched_samples = int(matches.size());
  return out;
}

BoxplotStats boxplot_stats(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("boxplot_stats: empty sample set");
  std::sort(samples.begin(), samples.end());
  auto quantile = [&](double q) {
    // Linear interpolation between order statistics (type 7).
    const double pos = q * double(samples.size() - 1);
    const size_t lo = size_t(pos);
    const size_t hi = std::min(lo + 1, samples.size() - 1);
    const double frac = pos - double(lo);
    return samples[lo] * (1.0 - frac) + samples[hi] * frac;
  };
  BoxplotStats st;
  st.median = quantile(0.5);
  st.q1 = quantile(0.25);
  st.q3 = quantile(0.75);
  const double iqr = st.q3 - st.q1;
  const double lo_fence = st.q1 - 1.5 * iqr;
  const double hi_fence = st.q3 + 1.5 * iqr;
  for (double v : samples) {
    if (v < lo_fence || v > hi_fence) st.outliers.push_back(v);
  }
  return st;
}

}  // namespace tvio
