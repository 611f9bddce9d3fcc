#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tvio/ekf.hpp"
#include "tvio/rng.hpp"

#include <cmath>
#include <numeric>

using namespace tvio;

namespace {

// Forward camera: body x = optical axis, body y = -image x, body z = -image y.
Extrinsics forward_camera(const Eigen::Vector3d& position_in_body = Eigen::Vector3d::Zero()) {
  Eigen::Matrix3d r_cb;
  r_cb << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  Extrinsics e;
  e.q_cb = Eigen::Quaterniond(r_cb);
  e.t_cb = -(r_cb * position_in_body);
  return e;
}

EkfConfig small_config(int max_landmarks = 4) {
  EkfConfig c;
  c.max_landmarks = max_landmarks;
  return c;
}

Ekf make_default_ekf(int max_landmarks = 4) {
  return Ekf(small_config(max_landmarks), forward_camera({0.1, 0.03, 0.0}),
             forward_camera({0.1, -0.03, 0.0}));
}

ImuSample gravity_only(double t = 0.0) {
  ImuSample s;
  s.timestamp = t;
  s.f_hat = {0.0, 0.0, 9.81};
  s.omega_hat = Eigen::Vector3d::Zero();
  return s;
}

PatchPyramid dummy_patch() { return PatchPyramid{}; }

Ekf random_state_ekf(RngStream& rng, int n_landmarks) {
  Ekf ekf = make_default_ekf(4);
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  for (int i = 0; i < n_landmarks; ++i) {
    Bearing b;
    b.azimuth = rng.uniform(-0.5, 0.5);
    b.elevation = rng.uniform(-0.4, 0.4);
    ekf.insert_landmark(b, rng.uniform(0.1, 1.5),
                        i % 2 == 0 ? Spectrum::kVisual : Spectrum::kThermal, dummy_patch());
  }
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(ekf.error_dim());
  for (int i = 0; i < 3; ++i) delta(i) = rng.uniform(-2.0, 2.0);        // r
  for (int i = 3; i < 6; ++i) delta(i) = rng.uniform(-0.8, 0.8);        // attitude
  for (int i = 6; i < 9; ++i) delta(i) = rng.uniform(-1.5, 1.5);        // v
  for (int i = 9; i < 12; ++i) delta(i) = rng.uniform(-0.1, 0.1);       // b_f
  for (int i = 12; i < 15; ++i) delta(i) = rng.uniform(-0.02, 0.02);    // b_omega
  ekf.apply_error_state(delta);
  return ekf;
}

ImuSample random_imu(RngStream& rng) {
  ImuSample s;
  s.f_hat = Eigen::Vector3d(rng.uniform(-3, 3), rng.uniform(-3, 3), 9.81 + rng.uniform(-3, 3));
  s.omega_hat = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  return s;
}

}  // namespace

TEST_CASE("stationary equilibrium holds while covariance grows") {
  Ekf ekf = make_default_ekf();
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  const double trace0 = ekf.covariance().trace();
  for (int i = 0; i < 200; ++i) ekf.propagate(gravity_only(), 0.005);
  CHECK(ekf.robot().r.norm() < 1e-12);
  CHECK(ekf.robot().v.norm() < 1e-12);
  CHECK(std::abs(ekf.robot().q.norm() - 1.0) < 1e-12);
  CHECK(ekf.covariance().trace() > trace0);
}

TEST_CASE("constant yaw rate integrates to a quarter turn") {
  Ekf ekf = make_default_ekf();
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  const double rate = M_PI / 2.0;
  const double dt = 0.005;
  for (int i = 0; i < 200; ++i) {
    ImuSample s;
    // compensates gravity throughout: specific force stays (0,0,g) under pure yaw
    s.f_hat = {0.0, 0.0, 9.81};
    s.omega_hat = {0.0, 0.0, rate};
    ekf.propagate(s, dt);
  }
  const Eigen::Vector3d euler_axis = quat_log(ekf.robot().q);
  CHECK(std::abs(euler_axis.z() - M_PI / 2.0) < 1e-3);
  CHECK(std::abs(euler_axis.x()) < 1e-9);
  CHECK(ekf.robot().r.norm() < 1e-9);
}

TEST_CASE("pure translation advances position exactly and updates inverse depth") {
  Ekf ekf = make_default_ekf();
  const Eigen::Vector3d v0(0.8, 0.0, 0.0);
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), v0);

  // Landmark straight ahead on the visual camera's optical axis at 10 m.
  const double d0 = 10.0;
  ekf.insert_landmark(Bearing{0.0, 0.0}, 1.0 / d0, Spectrum::kVisual, dummy_patch());

  const double dt = 0.005;
  const int steps = 400;  // 2 seconds
  for (int i = 0; i < steps; ++i) ekf.propagate(gravity_only(), dt);

  const double travelled = v0.x() * dt * steps;
  CHECK((ekf.robot().r - Eigen::Vector3d(travelled, 0, 0)).norm() < 1e-9);
  CHECK((ekf.robot().v - v0).norm() < 1e-12);
  // camera moved `travelled` along the optical axis toward the landmark
  const double expected_rho = 1.0 / (d0 - travelled);
  CHECK(ekf.landmark(0)->rho == doctest::Approx(expected_rho).epsilon(1e-9));
  CHECK(std::abs(ekf.landmark(0)->bearing.azimuth) < 1e-12);
}

TEST_CASE("propagate validates inputs") {
  Ekf ekf = make_default_ekf();
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  CHECK_THROWS_AS(ekf.propagate(gravity_only(), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ekf.propagate(gravity_only(), 0.2), std::invalid_argument);
  ImuSample bad = gravity_only();
  bad.f_hat.x() = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ekf.propagate(bad, 0.005), std::invalid_argument);
}

TEST_CASE("propagation jacobian matches central finite differences") {
  RngStream rng(404);
  const double h = 1e-6;
  const double dt = 0.005;
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const Ekf base = random_state_ekf(rng, 3);
    const ImuSample imu = random_imu(rng);

    Eigen::MatrixXd f_analytic;
    base.propagation_jacobians(imu, dt, &f_analytic, nullptr);

    Ekf nominal = base;
    nominal.propagate(imu, dt);

    const int n = base.error_dim();
    Eigen::MatrixXd f_fd(n, n);
    for (int i = 0; i < n; ++i) {
      Ekf plus = base, minus = base;
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
      e(i) = h;
      plus.apply_error_state(e);
      e(i) = -h;
      minus.apply_error_state(e);
      plus.propagate(imu, dt);
      minus.propagate(imu, dt);
      f_fd.col(i) =
          (nominal.error_state_to(plus) - nominal.error_state_to(minus)) / (2.0 * h);
    }
    // Compare only live dimensions; inactive slots are placeholders, not state.
    std::vector<int> live(15);
    std::iota(live.begin(), live.end(), 0);
    for (int slot : base.active_slots()) {
      for (int k = 0; k < 3; ++k) live.push_back(15 + 3 * slot + k);
    }
    double scale = 0.0, max_diff = 0.0;
    for (int r : live) {
      for (int c : live) {
        scale = std::max(scale, std::abs(f_fd(r, c)));
        max_diff = std::max(max_diff, std::abs(f_analytic(r, c) - f_fd(r, c)));
      }
    }
    worst = std::max(worst, max_diff / scale);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("measurement jacobian matches finite differences of predict_pixel") {
  RngStream rng(505);
  PinholeCamera cam;
  const double h = 1e-7;
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const Ekf base = random_state_ekf(rng, 3);
    for (int slot : base.active_slots()) {
      const auto pred = base.predict_pixel(slot, cam);
      if (!pred) continue;
      const Eigen::Matrix<double, 2, 3> h_analytic = base.measurement_jacobian(slot, cam);
      Eigen::Matrix<double, 2, 3> h_fd;
      for (int k = 0; k < 3; ++k) {
        Ekf plus = base, minus = base;
        Eigen::VectorXd e = Eigen::VectorXd::Zero(base.error_dim());
        e(15 + 3 * slot + k) = h;
        plus.apply_error_state(e);
        e(15 + 3 * slot + k) = -h;
        minus.apply_error_state(e);
        const auto pp = plus.predict_pixel(slot, cam);
        const auto pm = minus.predict_pixel(slot, cam);
        REQUIRE(pp.has_value());
        REQUIRE(pm.has_value());
        h_fd.col(k) = (pp->pixel - pm->pixel) / (2.0 * h);
      }
      const double scale = std::max(h_fd.cwiseAbs().maxCoeff(), 1.0);
      worst = std::max(worst, (h_analytic - h_fd).cwiseAbs().maxCoeff() / scale);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("predict_pixel hits the principal point for the optical-axis ray") {
  Ekf ekf = make_default_ekf();
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  ekf.insert_landmark(Bearing{0.0, 0.0}, 0.2, Spectrum::kVisual, dummy_patch());
  PinholeCamera cam;
  const auto pred = ekf.predict_pixel(0, cam);
  REQUIRE(pred.has_value());
  CHECK(pred->pixel.x() == doctest::Approx(cam.cx));
  CHECK(pred->pixel.y() == doctest::Approx(cam.cy));
}

TEST_CASE("predict_pixel inverts the projection analytically") {
  Ekf ekf = make_default_ekf();
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  PinholeCamera cam;
  // a ray with tan(az) = 100 / fx lands at (cx + 100, cy)
  ekf.insert_landmark(Bearing{std::atan(100.0 / cam.fx), 0.0}, 0.2, Spectrum::kVisual,
                      dummy_patch());
  const auto pred = ekf.predict_pixel(0, cam);
  REQUIRE(pred.has_value());
  CHECK(pred->pixel.x() == doctest::Approx(cam.cx + 100.0).epsilon(1e-12));
  CHECK(pred->pixel.y() == doctest::Approx(cam.cy).epsilon(1e-12));
}

TEST_CASE("behind-camera landmark signals out-of-view") {
  Ekf ekf = make_default_ekf();
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  ekf.insert_landmark(Bearing{M_PI, 0.0}, 0.2, Spectrum::kVisual, dummy_patch());
  CHECK(!ekf.predict_pixel(0, PinholeCamera{}).has_value());
}

TEST_CASE("inflated landmark covariance inflates the predicted pixel covariance") {
  Ekf ekf = make_default_ekf();
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  ekf.insert_landmark(Bearing{0.1, -0.05}, 0.3, Spectrum::kVisual, dummy_patch());
  PinholeCamera cam;
  const double t0 = ekf.predict_pixel(0, cam)->covariance.trace();
  ekf.mutable_covariance().block<3, 3>(15, 15) *= 9.0;
  const double t1 = ekf.predict_pixel(0, cam)->covariance.trace();
  CHECK(t1 > t0 * 5.0);
}

TEST_CASE("zero innovation leaves the state unchanged and shrinks covariance") {
  Ekf ekf = make_default_ekf();
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  ekf.insert_landmark(Bearing{0.08, 0.02}, 0.25, Spectrum::kVisual, dummy_patch());
  PinholeCamera cam;
  const auto pred = ekf.predict_pixel(0, cam);
  REQUIRE(pred.has_value());

  const RobotState before = ekf.robot();
  const double rho_before = ekf.landmark(0)->rho;
  const double trace_before = ekf.covariance().trace();

  const UpdateOutcome out = ekf.update({PixelMatch{0, pred->pixel}}, cam, cam);
  CHECK(out.accepted_slots == std::vector<int>{0});
  CHECK((ekf.robot().r - before.r).norm() < 1e-12);
  CHECK((ekf.robot().v - before.v).norm() < 1e-12);
  CHECK(ekf.landmark(0)->rho == doctest::Approx(rho_before).epsilon(1e-12));
  CHECK(ekf.covariance().trace() <= trace_before + 1e-12);
}

TEST_CASE("chi-square gate rejects a wild innovation") {
  Ekf ekf = make_default_ekf();
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  ekf.insert_landmark(Bearing{0.0, 0.0}, 0.25, Spectrum::kVisual, dummy_patch());
  PinholeCamera cam;
  const auto pred = ekf.predict_pixel(0, cam);
  REQUIRE(pred.has_value());
  // predicted std is ~2.5 px (0.01 rad bearing); 50 px innovation must be gated
  const RobotState before = ekf.robot();
  const UpdateOutcome out =
      ekf.update({PixelMatch{0, pred->pixel + Eigen::Vector2d(50.0, 0.0)}}, cam, cam);
  CHECK(out.accepted_slots.empty());
  CHECK(out.gated_slots == std::vector<int>{0});
  CHECK((ekf.robot().r - before.r).norm() == 0.0);
}

TEST_CASE("lateral translation triangulates inverse depth to within 1 percent") {
  Ekf ekf = make_default_ekf();
  const Eigen::Vector3d v0(0.0, 0.5, 0.0);  // lateral w.r.t. the forward camera
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), v0);

  const Extrinsics extr = ekf.extrinsics(Spectrum::kVisual);
  const Eigen::Vector3d landmark_w(6.0, 0.4, 0.3);
  PinholeCamera cam;

  auto true_camera_point = [&](const Eigen::Vector3d& r_body) -> Eigen::Vector3d {
    const Eigen::Vector3d in_body = landmark_w - r_body;  // identity attitude
    return extr.q_cb * in_body + extr.t_cb;
  };

  // Insert with the true initial bearing but a wrong inverse depth.
  const Eigen::Vector3d p0 = true_camera_point(Eigen::Vector3d::Zero());
  ekf.insert_landmark(Bearing::from_unit(p0.normalized()), 0.5, Spectrum::kVisual, dummy_patch());
  REQUIRE(std::abs(1.0 / p0.norm() - 0.5) > 0.1);  // initialization really is wrong

  const double dt = 0.005;
  Eigen::Vector3d r_true = Eigen::Vector3d::Zero();
  for (int frame = 0; frame < 20; ++frame) {
    for (int i = 0; i < 10; ++i) {
      ekf.propagate(gravity_only(), dt);
      r_true += v0 * dt;
    }
    const auto px = cam.project(true_camera_point(r_true));
    REQUIRE(px.has_value());
    const UpdateOutcome out = ekf.update({PixelMatch{0, *px}}, cam, cam);
    REQUIRE(out.accepted_slots.size() == 1);
  }
  const double rho_true = 1.0 / true_camera_point(r_true).norm();
  CHECK(std::abs(ekf.landmark(0)->rho - rho_true) / rho_true < 0.01);
}

TEST_CASE("manage_landmarks drops by miss limit and refills via select_best") {
  Ekf ekf = make_default_ekf(2);
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  ekf.insert_landmark(Bearing{0.0, 0.0}, 0.3, Spectrum::kVisual, dummy_patch());
  ekf.insert_landmark(Bearing{0.1, 0.0}, 0.3, Spectrum::kThermal, dummy_patch());
  CHECK(ekf.insertion_counter() == 2);
  CHECK(ekf.free_slot_count() == 0);

  // healthy landmarks, no free slots: nothing happens
  ManageReport rep = ekf.manage_landmarks({}, {}, PinholeCamera{}, PinholeCamera{});
  CHECK(rep.insertions.empty());
  CHECK(rep.dropped_missed == 0);

  for (int i = 0; i < 3; ++i) ekf.record_miss(0);
  ekf.record_track(1);

  NewLandmark cand;
  cand.candidate.pixel = {150.0, 100.0};
  cand.candidate.score = 80.0;
  cand.candidate.spectrum = Spectrum::kVisual;
  rep = ekf.manage_landmarks({cand}, {}, PinholeCamera{}, PinholeCamera{});
  CHECK(rep.dropped_missed == 1);
  REQUIRE(rep.insertions.size() == 1);
  CHECK(rep.insertions[0].slot == 0);
  CHECK(ekf.insertion_counter() == 3);
  CHECK(ekf.landmark(0)->spectrum == Spectrum::kVisual);
  CHECK(ekf.landmark(0)->rho == doctest::Approx(0.5));  // rho_init
  CHECK(ekf.landmark(1)->frames_tracked == 1);
}

TEST_CASE("out-of-view landmarks are dropped") {
  Ekf ekf = make_default_ekf(2);
  ekf.initialize(Eigen::Vector3d::Zero(), Eigen::Quaterniond::Identity(), Eigen::Vector3d::Zero());
  ekf.insert_landmark(Bearing{0.0, 0.0}, 0.3, Spectrum::kVisual, dummy_patch());
  ekf.mark_out_of_view(0);
  const ManageReport rep = ekf.manage_landmarks({}, {}, PinholeCamera{}, PinholeCamera{});
  CHECK(rep.dropped_out_of_view == 1);
  CHECK(ekf.active_landmark_count() == 0);
}

TEST_CASE("covariance hygiene after a propagate/update burst") {
  RngStream rng(606);
  Ekf ekf = random_state_ekf(rng, 3);
  PinholeCamera cam;
  for (int i = 0; i < 50; ++i) {
    ekf.propagate(gravity_only(), 0.005);
    if (i % 10 == 0) {
      for (int slot : ekf.active_slots()) {
        const auto pred = ekf.predict_pixel(slot, cam);
        if (!pred) continue;
        ekf.update({PixelMatch{slot, pred->pixel + Eigen::Vector2d(0.4, -0.2)}}, cam, cam);
      }
    }
  }
  const HygieneReport rep = ekf.hygiene_report();
  CHECK(rep.asymmetry_ratio <= 1e-9);
  CHECK(rep.min_eigenvalue_ratio >= -1e-8);
  CHECK(rep.quaternion_norm_error <= 1e-9);
}

TEST_CASE("initialize_from_imu levels roll and pitch with zero yaw") {
  // Body tilted 10 degrees about y: specific force appears tilted in body frame.
  const Eigen::Quaterniond q_true(Eigen::AngleAxisd(0.1745, Eigen::Vector3d::UnitY()));
  std::vector<ImuSample> window;
  for (int i = 0; i < 100; ++i) {
    ImuSample s;
    s.timestamp = i * 0.005;
    s.f_hat = q_true.conjugate() * Eigen::Vector3d(0, 0, 9.81);
    s.omega_hat = Eigen::Vector3d::Zero();
    window.push_back(s);
  }
  Ekf ekf = make_default_ekf();
  ekf.initialize_from_imu(window);
  // gravity maps back to +z under the estimated attitude
  const Eigen::Vector3d up = ekf.robot().q * window[0].f_hat;
  CHECK((up.normalized() - Eigen::Vector3d::UnitZ()).norm() < 1e-9);
  const Eigen::Vector3d rot_vec = quat_log(ekf.robot().q);
  CHECK(std::abs(rot_vec.z()) < 1e-9);  // no yaw component
}
