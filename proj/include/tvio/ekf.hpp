#pragma once

#include "tvio/feature_tracker.hpp"
#include "tvio/geometry.hpp"
#include "tvio/types.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>
#include <span>
#include <vector>

namespace tvio {

struct RobotState {
  Eigen::Vector3d r = Eigen::Vector3d::Zero();          // position, world frame
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();  // body -> world
  Eigen::Vector3d v = Eigen::Vector3d::Zero();          // velocity, world frame
  Eigen::Vector3d b_f = Eigen::Vector3d::Zero();        // accelerometer bias
  Eigen::Vector3d b_omega = Eigen::Vector3d::Zero();    // gyroscope bias
};

// Landmark anchored in its owning camera's current frame: azimuth/elevation
// bearing plus inverse depth (distance d = 1/rho).
struct TrackedLandmark {
  bool active = false;
  Bearing bearing;
  double rho = 0.0;
  Spectrum spectrum = Spectrum::kVisual;
  PatchPyramid patch;
  int frames_tracked = 0;
  int consecutive_misses = 0;
  bool out_of_view = false;
};

struct InitialPriors {
  double sigma_r = 1e-4;
  double sigma_rollpitch = 0.02;
  double sigma_yaw = 1e-4;
  double sigma_v = 0.05;
  double sigma_bf = 0.05;
  double sigma_bomega = 0.005;
};

struct EkfConfig {
  int max_landmarks = 25;                 // J
  double sigma_px = 1.0;                  // pixel measurement noise
  double rho_init = 0.5;                  // 1/m
  double sigma_rho_init = 1.0;            // 1/m
  double sigma_bearing_init = 0.01;       // rad
  int miss_limit = 3;                     // M consecutive misses before drop
  double chi2_gate = 9.21034037197618;    // chi-square(2, 0.99)
  double gravity = 9.81;
  double min_rho = 1e-3;
  // Small landmark pseudo process noise keeps long-tracked features updatable.
  double sigma_lm_bearing_rw = 1e-3;      // rad/sqrt(s)
  double sigma_lm_rho_rw = 2e-3;          // (1/m)/sqrt(s)
  ImuNoiseConfig imu_noise;
  InitialPriors priors;
};

struct PixelPrediction {
  Eigen::Vector2d pixel;
  Eigen::Matrix2d covariance;  // first-order propagation of the landmark block
};

struct PixelMatch {
  int slot = -1;
  Eigen::Vector2d measured = Eigen::Vector2d::Zero();
};

struct UpdateOutcome {
  std::vector<int> accepted_slots;
  std::vector<int> gated_slots;
  int skipped_numerical = 0;
};

struct NewLandmark {
  FeatureCandidate candidate;
  PatchPyramid patch;
};

struct ManageReport {
  struct Insertion {
    int slot;
    Spectrum spectrum;
    Eigen::Vector2d pixel;
    int region_index;
  };
  std::vector<Insertion> insertions;
  int dropped_missed = 0;
  int dropped_out_of_view = 0;
};

struct HygieneReport {
  double asymmetry_ratio = 0.0;       // ||P - P^T||_inf / ||P||_inf
  double min_eigenvalue_ratio = 0.0;  // min eig / max eig (negative when indefinite)
  double quaternion_norm_error = 0.0;
};

// Error-state EKF over [dr, dtheta, dv, db_f, db_omega | (daz, del, drho) x J].
// Inactive slots keep small placeholder covariance blocks so the matrix size
// is fixed at 15 + 3J.
class Ekf {
 public:
  explicit Ekf(const EkfConfig& config, const Extrinsics& visual_extrinsics,
               const Extrinsics& thermal_extrinsics);

  // Attitude from averaged specific force (roll/pitch; yaw = 0), r = v = 0.
  void initialize_from_imu(std::span<const ImuSample> stationary_window);
  void initialize(const Eigen::Vector3d& r0, const Eigen::Quaterniond& q0,
                  const Eigen::Vector3d& v0);
  bool initialized() const { return initialized_; }

  // Strapdown propagation of robot and landmark states plus covariance.
  void propagate(const ImuSample& imu, double dt);

  // Analytic discrete error-state Jacobians for the propagation map; exposed
  // for the finite-difference validation suite.
  void propagation_jacobians(const ImuSample& imu, double dt, Eigen::MatrixXd* F,
                             Eigen::MatrixXd* G) const;

  // nullopt when the landmark is behind the camera.
  std::optional<PixelPrediction> predict_pixel(int slot, const PinholeCamera& intrinsics) const;

  // 2x3 Jacobian of the predicted pixel w.r.t. the slot's (daz, del, drho).
  Eigen::Matrix<double, 2, 3> measurement_jacobian(int slot, const PinholeCamera& intrinsics) const;

  // Stacked 2-D reprojection update with per-match chi-square gating and
  // Joseph-form covariance update.
  UpdateOutcome update(const std::vector<PixelMatch>& matches, const PinholeCamera& visual_cam,
                       const PinholeCamera& thermal_cam);

  void record_track(int slot);
  void record_miss(int slot);
  void mark_out_of_view(int slot);

  // Drops stale/out-of-view landmarks, then fills free slots from the merged
  // candidate pool (best available feature across spectra). New landmarks get
  // their bearing from the back-projected pixel in the owning camera.
  ManageReport manage_landmarks(const std::vector<NewLandmark>& visual,
                                const std::vector<NewLandmark>& thermal,
                                const PinholeCamera& visual_cam, const PinholeCamera& thermal_cam);

  void insert_landmark(const Bearing& bearing, double rho, Spectrum spectrum,
                       PatchPyramid patch);
  void drop_landmark(int slot);

  const RobotState& robot() const { return robot_; }
  RobotState& mutable_robot() { return robot_; }
  const TrackedLandmark* landmark(int slot) const;
  std::vector<int> active_slots() const;
  int free_slot_count() const;
  int active_landmark_count() const;
  uint64_t insertion_counter() const { return insertion_counter_; }

  const Eigen::MatrixXd& covariance() const { return cov_; }
  Eigen::MatrixXd& mutable_covariance() { return cov_; }
  Eigen::Matrix<double, 6, 6> pose_covariance() const { return cov_.topLeftCorner<6, 6>(); }

  HygieneReport hygiene_report() const;

  // Box-plus on the full nominal state (multiplicative on the quaternion);
  // also used by the finite-difference oracles.
  void apply_error_state(const Eigen::VectorXd& delta);
  // Box-minus: error vector taking this state to `other` (other = this [+] delta).
  Eigen::VectorXd error_state_to(const Ekf& other) const;

  int error_dim() const { return 15 + 3 * config_.max_landmarks; }
  const EkfConfig& config() const { return config_; }
  const Extrinsics& extrinsics(Spectrum s) const {
    return s == Spectrum::kVisual ? extr_visual_ : extr_thermal_;
  }

 private:
  static constexpr int kLmBase = 15;
  int slot_offset(int slot) const { return kLmBase + 3 * slot; }
  void reset_slot_covariance(int slot, double sigma_b, double sigma_rho);

  EkfConfig config_;
  Extrinsics extr_visual_;
  Extrinsics extr_thermal_;
  RobotState robot_;
  std::vector<TrackedLandmark> landmarks_;
  Eigen::MatrixXd cov_;
  uint64_t insertion_counter_ = 0;
  bool initialized_ = false;
};

}  // namespace tvio
