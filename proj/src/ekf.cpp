#include "tvio/ekf.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace tvio {

namespace {
constexpr double kInactiveSlotVariance = 1e-4;
}

Ekf::Ekf(const EkfConfig& config, const Extrinsics& visual_extrinsics,
         const Extrinsics& thermal_extrinsics)
    : config_(config), extr_visual_(visual_extrinsics), extr_thermal_(thermal_extrinsics) {
  if (config_.max_landmarks < 1) throw std::invalid_argument("Ekf: max_landmarks must be >= 1");
  landmarks_.resize(size_t(config_.max_landmarks));
  cov_ = Eigen::MatrixXd::Zero(error_dim(), error_dim());
}

void Ekf::initialize(const Eigen::Vector3d& r0, const Eigen::Quaterniond& q0,
                     const Eigen::Vector3d& v0) {
  robot_.r = r0;
  robot_.q = q0.normalized();
  robot_.v = v0;
  robot_.b_f.setZero();
  robot_.b_omega.setZero();

  const InitialPriors& p = config_.priors;
  cov_.setZero();
  cov_.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity() * p.sigma_r * p.sigma_r;
  cov_.block<3, 3>(3, 3) =
      Eigen::Vector3d(p.sigma_rollpitch * p.sigma_rollpitch, p.sigma_rollpitch * p.sigma_rollpitch,
                      p.sigma_yaw * p.sigma_yaw)
          .asDiagonal();
  cov_.block<3, 3>(6, 6) = Eigen::Matrix3d::Identity() * p.sigma_v * p.sigma_v;
  cov_.block<3, 3>(9, 9) = Eigen::Matrix3d::Identity() * p.sigma_bf * p.sigma_bf;
  cov_.block<3, 3>(12, 12) = Eigen::Matrix3d::Identity() * p.sigma_bomega * p.sigma_bomega;
  for (int j = 0; j < config_.max_landmarks; ++j) {
    landmarks_[size_t(j)] = TrackedLandmark{};
    cov_.block<3, 3>(slot_offset(j), slot_offset(j)) =
        Eigen::Matrix3d::Identity() * kInactiveSlotVariance;
  }
  insertion_counter_ = 0;
  initialized_ = true;
}

void Ekf::initialize_from_imu(std::span<const ImuSample> stationary_window) {
  if (stationary_window.empty()) {
    throw std::invalid_argument("initialize_from_imu: empty window");
  }
  Eigen::Vector3d f_mean = Eigen::Vector3d::Zero();
  for (const ImuSample& s : stationary_window) f_mean += s.f_hat;
  f_mean /= double(stationary_window.size());
  if (f_mean.norm() < 1e-6) {
    throw std::invalid_argument("initialize_from_imu: zero mean specific force");
  }
  // Roll/pitch so the averaged specific force maps to +z in world; yaw = 0.
  const Eigen::Quaterniond q0 =
      Eigen::Quaterniond::FromTwoVectors(f_mean, Eigen::Vector3d::UnitZ());
  initialize(Eigen::Vector3d::Zero(), q0, Eigen::Vector3d::Zero());
}

const TrackedLandmark* Ekf::landmark(int slot) const {
  if (slot < 0 || slot >= config_.max_landmarks) return nullptr;
  const TrackedLandmark& lm = landmarks_[size_t(slot)];
  return lm.active ? &lm : nullptr;
}

std::vector<int> Ekf::active_slots() const {
  std::vector<int> out;
  for (int j = 0; j < config_.max_landmarks; ++j) {
    if (landmarks_[size_t(j)].active) out.push_back(j);
  }
  return out;
}

int Ekf::active_landmark_count() const { return int(active_slots().size()); }

int Ekf::free_slot_count() const { return config_.max_landmarks - active_landmark_count(); }

void Ekf::propagation_jacobians(const ImuSample& imu, double dt, Eigen::MatrixXd* F_out,
                                Eigen::MatrixXd* G_out) const {
  const int n = error_dim();
  const Eigen::Vector3d f = imu.f_hat - robot_.b_f;
  const Eigen::Vector3d omega = imu.omega_hat - robot_.b_omega;
  const Eigen::Vector3d theta_half = omega * (0.5 * dt);
  const Eigen::Vector3d theta_full = omega * dt;
  const Eigen::Matrix3d rk = robot_.q.toRotationMatrix();
  const Eigen::Matrix3d r_half = rotation_exp(theta_half);
  const Eigen::Matrix3d delta_r = rotation_exp(theta_full);
  const Eigen::Matrix3d jr_full = so3_right_jacobian(theta_full);
  const Eigen::Matrix3d jr_half = so3_right_jacobian(theta_half);

  const Eigen::Vector3d g(0.0, 0.0, -config_.gravity);
  const Eigen::Vector3d a = rk * (r_half * f) + g;
  const Eigen::Vector3d u = robot_.v * dt + 0.5 * dt * dt * a;

  const Eigen::Matrix3d a_theta = -rk * skew(r_half * f);
  const Eigen::Matrix3d a_bf = -rk * r_half;
  const Eigen::Matrix3d a_bw = (0.5 * dt) * rk * r_half * skew(f) * jr_half;

  Eigen::MatrixXd F = Eigen::MatrixXd::Identity(n, n);
  // position row
  F.block<3, 3>(0, 3) = 0.5 * dt * dt * a_theta;
  F.block<3, 3>(0, 6) = dt * Eigen::Matrix3d::Identity();
  F.block<3, 3>(0, 9) = 0.5 * dt * dt * a_bf;
  F.block<3, 3>(0, 12) = 0.5 * dt * dt * a_bw;
  // attitude row
  F.block<3, 3>(3, 3) = delta_r.transpose();
  F.block<3, 3>(3, 12) = -jr_full * dt;
  // velocity row
  F.block<3, 3>(6, 3) = dt * a_theta;
  F.block<3, 3>(6, 9) = dt * a_bf;
  F.block<3, 3>(6, 12) = dt * a_bw;
  // biases: identity

  // Landmarks: relative camera motion over the step.
  const Eigen::Matrix3d j_gyro = jr_full * dt;
  for (int slot = 0; slot < config_.max_landmarks; ++slot) {
    const TrackedLandmark& lm = landmarks_[size_t(slot)];
    if (!lm.active) continue;
    const Extrinsics& extr = extrinsics(lm.spectrum);
    const Eigen::Matrix3d r_cb = extr.rotation();
    const Eigen::Vector3d p_bc = extr.camera_in_body();

    const Eigen::Vector3d m = lm.bearing.unit();
    const Eigen::Vector3d p_c = m / lm.rho;
    const Eigen::Matrix3d r_rel = r_cb * delta_r.transpose() * r_cb.transpose();
    const Eigen::Vector3d w_vec = -rk.transpose() * u + (Eigen::Matrix3d::Identity() - delta_r) * p_bc;
    const Eigen::Vector3d p_new = r_rel * p_c + r_cb * (delta_r.transpose() * w_vec);

    // d(az', el', rho') / d(p')
    const double x = p_new.x(), y = p_new.y(), z = p_new.z();
    const double s2 = x * x + z * z;
    const double s = std::sqrt(s2);
    const double n2 = s2 + y * y;
    const double norm = std::sqrt(n2);
    Eigen::Matrix3d out_jac;
    out_jac << z / s2, 0.0, -x / s2,
        -x * y / (n2 * s), s / n2, -z * y / (n2 * s),
        -x / (norm * n2), -y / (norm * n2), -z / (norm * n2);

    // d(p_C) / d(az, el, rho)
    Eigen::Matrix3d p_lm;
    p_lm.block<3, 2>(0, 0) = lm.bearing.unit_jacobian() / lm.rho;
    p_lm.col(2) = -m / (lm.rho * lm.rho);

    const int o = slot_offset(slot);
    F.block<3, 3>(o, o) = out_jac * r_rel * p_lm;

    // coupling to the robot error states (position-independent)
    const Eigen::Matrix3d dp_dtheta =
        -r_cb * delta_r.transpose() *
        (skew(rk.transpose() * u) - 0.5 * dt * dt * skew(r_half * f));
    const Eigen::Matrix3d dp_dv = -dt * r_cb * delta_r.transpose() * rk.transpose();
    const Eigen::Matrix3d dp_dbf = 0.5 * dt * dt * r_cb * delta_r.transpose() * r_half;
    const Eigen::Matrix3d dp_dbw =
        -r_cb *
            (skew(delta_r.transpose() * (r_cb.transpose() * p_c)) +
             skew(delta_r.transpose() * w_vec) + skew(p_bc)) *
            j_gyro -
        (0.25 * dt * dt * dt) * r_cb * delta_r.transpose() * r_half * skew(f) * jr_half;

    F.block<3, 3>(o, 3) = out_jac * dp_dtheta;
    F.block<3, 3>(o, 6) = out_jac * dp_dv;
    F.block<3, 3>(o, 9) = out_jac * dp_dbf;
    F.block<3, 3>(o, 12) = out_jac * dp_dbw;
  }

  if (F_out) *F_out = F;
  if (G_out) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, 12);
    // White accel/gyro noise enters exactly like the respective bias error.
    G.block(0, 0, n, 3) = F.middleCols(9, 3);
    G.block(0, 3, n, 3) = F.middleCols(12, 3);
    G.block<3, 3>(9, 6) = Eigen::Matrix3d::Identity();
    G.block<3, 3>(12, 9) = Eigen::Matrix3d::Identity();
    *G_out = G;
  }
}

void Ekf::propagate(const ImuSample& imu, double dt) {
  if (!initialized_) throw std::logic_error("Ekf::propagate before initialize");
  if (!(dt > 0.0) || dt > 0.1) throw std::invalid_argument("Ekf::propagate: dt out of (0, 0.1]");
  if (!imu.f_hat.allFinite() || !imu.omega_hat.allFinite()) {
    throw std::invalid_argument("Ekf::propagate: non-finite IMU sample");
  }

  Eigen::MatrixXd F, G;
  propagation_jacobians(imu, dt, &F, &G);

  const Eigen::Vector3d f = imu.f_hat - robot_.b_f;
  const Eigen::Vector3d omega = imu.omega_hat - robot_.b_omega;
  const Eigen::Matrix3d rk = robot_.q.toRotationMatrix();
  const Eigen::Matrix3d r_half = rotation_exp(omega * (0.5 * dt));
  const Eigen::Matrix3d delta_r = rotation_exp(omega * dt);
  const Eigen::Vector3d g(0.0, 0.0, -config_.gravity);
  const Eigen::Vector3d a = rk * (r_half * f) + g;
  const Eigen::Vector3d u = robot_.v * dt + 0.5 * dt * dt * a;

  // Landmarks first: the relative camera motion uses the pre-update state.
  for (TrackedLandmark& lm : landmarks_) {
    if (!lm.active) continue;
    const Extrinsics& extr = extrinsics(lm.spectrum);
    const Eigen::Matrix3d r_cb = extr.rotation();
    const Eigen::Vector3d p_bc = extr.camera_in_body();
    const Eigen::Vector3d p_c = lm.bearing.unit() / lm.rho;
    const Eigen::Vector3d w_vec =
        -rk.transpose() * u + (Eigen::Matrix3d::Identity() - delta_r) * p_bc;
    const Eigen::Vector3d p_new =
        r_cb * (delta_r.transpose() * (r_cb.transpose() * p_c + w_vec));
    const double dist = p_new.norm();
    lm.bearing = Bearing::from_unit(p_new / dist);
    lm.rho = std::max(1.0 / dist, config_.min_rho);
  }

  robot_.r += u;
  robot_.v += a * dt;
  robot_.q = (robot_.q * quat_exp(omega * dt)).normalized();

  // Covariance: F P F^T + G Q G^T with the discrete-equivalent noise scaling.
  const ImuNoiseConfig& nc = config_.imu_noise;
  Eigen::Matrix<double, 12, 1> q_diag;
  q_diag << Eigen::Vector3d::Constant(nc.sigma_f * nc.sigma_f / dt),
      Eigen::Vector3d::Constant(nc.sigma_omega * nc.sigma_omega / dt),
      Eigen::Vector3d::Constant(nc.sigma_bf_rw * nc.sigma_bf_rw * dt),
      Eigen::Vector3d::Constant(nc.sigma_bomega_rw * nc.sigma_bomega_rw * dt);

  cov_ = F * cov_ * F.transpose() + G * q_diag.asDiagonal() * G.transpose();
  for (int slot = 0; slot < config_.max_landmarks; ++slot) {
    if (!landmarks_[size_t(slot)].active) continue;
    const int o = slot_offset(slot);
    const double sb = config_.sigma_lm_bearing_rw;
    const double sr = config_.sigma_lm_rho_rw;
    cov_(o, o) += sb * sb * dt;
    cov_(o + 1, o + 1) += sb * sb * dt;
    cov_(o + 2, o + 2) += sr * sr * dt;
  }
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
}

std::optional<PixelPrediction> Ekf::predict_pixel(int slot, const PinholeCamera& intrinsics) const {
  const TrackedLandmark* lm = landmark(slot);
  if (!lm) throw std::invalid_argument("predict_pixel: inactive slot");
  const Eigen::Vector3d m = lm->bearing.unit();
  const auto px = intrinsics.project(m);
  if (!px) return std::nullopt;  // behind camera
  PixelPrediction pred;
  pred.pixel = *px;
  const Eigen::Matrix<double, 2, 3> h = measurement_jacobian(slot, intrinsics);
  const int o = slot_offset(slot);
  pred.covariance = h * cov_.block<3, 3>(o, o) * h.transpose();
  return pred;
}

Eigen::Matrix<double, 2, 3> Ekf::measurement_jacobian(int slot,
                                                      const PinholeCamera& intrinsics) const {
  const TrackedLandmark* lm = landmark(slot);
  if (!lm) throw std::invalid_argument("measurement_jacobian: inactive slot");
  const Eigen::Vector3d m = lm->bearing.unit();
  Eigen::Matrix<double, 2, 3> h = Eigen::Matrix<double, 2, 3>::Zero();
  // The pixel is scale-invariant in the camera point, so d(pixel)/d(rho) = 0.
  h.block<2, 2>(0, 0) = intrinsics.project_jacobian(m) * lm->bearing.unit_jacobian();
  return h;
}

UpdateOutcome Ekf::update(const std::vector<PixelMatch>& matches, const PinholeCamera& visual_cam,
                          const PinholeCamera& thermal_cam) {
  UpdateOutcome outcome;
  if (matches.empty()) return outcome;
  const int n = error_dim();

  struct Accepted {
    int slot;
    Eigen::Vector2d innovation;
    Eigen::Matrix<double, 2, 3> h;
  };
  std::vector<Accepted> accepted;
  accepted.reserve(matches.size());
  const double r_var = config_.sigma_px * config_.sigma_px;

  for (const PixelMatch& match : matches) {
    const TrackedLandmark* lm = landmark(match.slot);
    if (!lm) throw std::invalid_argument("update: match references inactive slot");
    const PinholeCamera& cam = lm->spectrum == Spectrum::kVisual ? visual_cam : thermal_cam;
    const auto pred = predict_pixel(match.slot, cam);
    if (!pred) {
      outcome.gated_slots.push_back(match.slot);
      continue;
    }
    const Eigen::Vector2d nu = match.measured - pred->pixel;
    Eigen::Matrix2d s = pred->covariance + r_var * Eigen::Matrix2d::Identity();
    const double det = s.determinant();
    if (!(det > 0.0) || !s.allFinite()) {
      std::cerr << "tvio: update skipping slot " << match.slot
                << " (singular innovation covariance)\n";
      ++outcome.skipped_numerical;
      continue;
    }
    const double mahalanobis = nu.dot(s.inverse() * nu);
    if (mahalanobis > config_.chi2_gate) {
      outcome.gated_slots.push_back(match.slot);
      continue;
    }
    accepted.push_back({match.slot, nu, measurement_jacobian(match.slot, cam)});
  }
  if (accepted.empty()) return outcome;

  const int m2 = 2 * int(accepted.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m2, n);
  Eigen::VectorXd nu(m2);
  for (size_t i = 0; i < accepted.size(); ++i) {
    h.block<2, 3>(2 * Eigen::Index(i), slot_offset(accepted[i].slot)) = accepted[i].h;
    nu.segment<2>(2 * Eigen::Index(i)) = accepted[i].innovation;
  }

  const Eigen::MatrixXd ph_t = cov_ * h.transpose();
  Eigen::MatrixXd s = h * ph_t;
  s.diagonal().array() += r_var;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
  if (ldlt.info() != Eigen::Success) {
    std::cerr << "tvio: update skipped (innovation covariance not factorizable)\n";
    outcome.skipped_numerical += int(accepted.size());
    outcome.accepted_slots.clear();
    return outcome;
  }
  const Eigen::MatrixXd k = ldlt.solve(ph_t.transpose()).transpose();
  const Eigen::VectorXd delta = k * nu;

  // Joseph form.
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(n, n) - k * h;
  cov_ = ikh * cov_ * ikh.transpose() + r_var * k * k.transpose();
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();

  apply_error_state(delta);
  for (const Accepted& a : accepted) outcome.accepted_slots.push_back(a.slot);
  return outcome;
}

void Ekf::apply_error_state(const Eigen::VectorXd& delta) {
  if (delta.size() != error_dim()) throw std::invalid_argument("apply_error_state: bad size");
  robot_.r += delta.segment<3>(0);
  robot_.q = (robot_.q * quat_exp(delta.segment<3>(3))).normalized();
  robot_.v += delta.segment<3>(6);
  robot_.b_f += delta.segment<3>(9);
  robot_.b_omega += delta.segment<3>(12);
  for (int slot = 0; slot < config_.max_landmarks; ++slot) {
    TrackedLandmark& lm = landmarks_[size_t(slot)];
    if (!lm.active) continue;
    const int o = slot_offset(slot);
    lm.bearing.azimuth += delta(o);
    lm.bearing.elevation += delta(o + 1);
    lm.rho = std::max(lm.rho + delta(o + 2), config_.min_rho);
  }
}

Eigen::VectorXd Ekf::error_state_to(const Ekf& other) const {
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(error_dim());
  delta.segment<3>(0) = other.robot_.r - robot_.r;
  delta.segment<3>(3) = quat_log(robot_.q.conjugate() * other.robot_.q);
  delta.segment<3>(6) = other.robot_.v - robot_.v;
  delta.segment<3>(9) = other.robot_.b_f - robot_.b_f;
  delta.segment<3>(12) = other.robot_.b_omega - robot_.b_omega;
  for (int slot = 0; slot < config_.max_landmarks; ++slot) {
    if (!landmarks_[size_t(slot)].active) continue;
    const int o = slot_offset(slot);
    delta(o) = other.landmarks_[size_t(slot)].bearing.azimuth - landmarks_[size_t(slot)].bearing.azimuth;
    delta(o + 1) =
        other.landmarks_[size_t(slot)].bearing.elevation - landmarks_[size_t(slot)].bearing.elevation;
    delta(o + 2) = other.landmarks_[size_t(slot)].rho - landmarks_[size_t(slot)].rho;
  }
  return delta;
}

void Ekf::record_track(int slot) {
  TrackedLandmark& lm = landmarks_[size_t(slot)];
  lm.frames_tracked += 1;
  lm.consecutive_misses = 0;
}

void Ekf::record_miss(int slot) { landmarks_[size_t(slot)].consecutive_misses += 1; }

void Ekf::mark_out_of_view(int slot) { landmarks_[size_t(slot)].out_of_view = true; }

void Ekf::reset_slot_covariance(int slot, double sigma_b, double sigma_rho) {
  const int o = slot_offset(slot);
  cov_.middleRows<3>(o).setZero();
  cov_.middleCols<3>(o).setZero();
  cov_(o, o) = sigma_b * sigma_b;
  cov_(o + 1, o + 1) = sigma_b * sigma_b;
  cov_(o + 2, o + 2) = sigma_rho * sigma_rho;
}

void Ekf::insert_landmark(const Bearing& bearing, double rho, Spectrum spectrum,
                          PatchPyramid patch) {
  int slot = -1;
  for (int j = 0; j < config_.max_landmarks; ++j) {
    if (!landmarks_[size_t(j)].active) {
      slot = j;
      break;
    }
  }
  if (slot < 0) throw std::logic_error("insert_landmark: no free slot");
  TrackedLandmark& lm = landmarks_[size_t(slot)];
  lm.active = true;
  lm.bearing = bearing;
  lm.rho = std::max(rho, config_.min_rho);
  lm.spectrum = spectrum;
  lm.patch = std::move(patch);
  lm.frames_tracked = 0;
  lm.consecutive_misses = 0;
  lm.out_of_view = false;
  reset_slot_covariance(slot, config_.sigma_bearing_init, config_.sigma_rho_init);
  ++insertion_counter_;
}

void Ekf::drop_landmark(int slot) {
  TrackedLandmark& lm = landmarks_[size_t(slot)];
  lm = TrackedLandmark{};
  const int o = slot_offset(slot);
  cov_.middleRows<3>(o).setZero();
  cov_.middleCols<3>(o).setZero();
  cov_.block<3, 3>(o, o) = Eigen::Matrix3d::Identity() * kInactiveSlotVariance;
}

ManageReport Ekf::manage_landmarks(const std::vector<NewLandmark>& visual,
                                   const std::vector<NewLandmark>& thermal,
                                   const PinholeCamera& visual_cam,
                                   const PinholeCamera& thermal_cam) {
  ManageReport report;
  for (int slot = 0; slot < config_.max_landmarks; ++slot) {
    TrackedLandmark& lm = landmarks_[size_t(slot)];
    if (!lm.active) continue;
    if (lm.out_of_view) {
      drop_landmark(slot);
      ++report.dropped_out_of_view;
    } else if (lm.consecutive_misses >= config_.miss_limit) {
      drop_landmark(slot);
      ++report.dropped_missed;
    }
  }

  const int free_slots = free_slot_count();
  if (free_slots <= 0) return report;

  std::vector<FeatureCandidate> vis_c, the_c;
  vis_c.reserve(visual.size());
  the_c.reserve(thermal.size());
  for (const NewLandmark& c : visual) vis_c.push_back(c.candidate);
  for (const NewLandmark& c : thermal) the_c.push_back(c.candidate);
  const std::vector<FeatureCandidate> chosen = select_best(vis_c, the_c, free_slots);

  for (const FeatureCandidate& c : chosen) {
    const std::vector<NewLandmark>& pool = c.spectrum == Spectrum::kVisual ? visual : thermal;
    const NewLandmark* src = nullptr;
    for (const NewLandmark& cand : pool) {
      if (cand.candidate.pixel == c.pixel && cand.candidate.score == c.score) {
        src = &cand;
        break;
      }
    }
    if (!src) continue;
    const PinholeCamera& cam = c.spectrum == Spectrum::kVisual ? visual_cam : thermal_cam;
    const Bearing bearing = Bearing::from_unit(cam.back_project(c.pixel));
    ManageReport::Insertion ins;
    ins.spectrum = c.spectrum;
    ins.pixel = c.pixel;
    ins.region_index = c.region_index;
    int slot = -1;
    for (int j = 0; j < config_.max_landmarks; ++j) {
      if (!landmarks_[size_t(j)].active) {
        slot = j;
        break;
      }
    }
    ins.slot = slot;
    report.insertions.push_back(ins);
    insert_landmark(bearing, config_.rho_init, c.spectrum, src->patch);
  }
  return report;
}

HygieneReport Ekf::hygiene_report() const {
  HygieneReport rep;
  const double norm_inf = cov_.lpNorm<Eigen::Infinity>();
  rep.asymmetry_ratio =
      (cov_ - cov_.transpose()).lpNorm<Eigen::Infinity>() / std::max(norm_inf, 1e-300);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov_ + cov_.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double min_eig = es.eigenvalues().minCoeff();
  const double max_eig = es.eigenvalues().maxCoeff();
  rep.min_eigenvalue_ratio = min_eig / std::max(std::abs(max_eig), 1e-300);
  rep.quaternion_norm_error = std::abs(robot_.q.norm() - 1.0);
  return rep;
}

}  // namespace tvio
