#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <string>

namespace tvio {

enum class Spectrum { kVisual, kThermal };

inline const char* spectrum_name(Spectrum s) {
  return s == Spectrum::kVisual ? "visual" : "thermal";
}

// Timestamped pose + velocity sample, shared between the simulator ground
// truth, the estimator output and the trajectory-error metric.
struct PoseRecord {
  double timestamp = 0.0;
  Eigen::Vector3d r = Eigen::Vector3d::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();  // body -> world
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
};

struct ImuSample {
  double timestamp = 0.0;
  Eigen::Vector3d f_hat = Eigen::Vector3d::Zero();      // specific force, body frame
  Eigen::Vector3d omega_hat = Eigen::Vector3d::Zero();  // angular rate, body frame
};

struct ImuNoiseConfig {
  double sigma_f = 2.0e-3;        // accel white noise density, m/s^2/sqrt(Hz)
  double sigma_omega = 1.0e-4;    // gyro white noise density, rad/s/sqrt(Hz)
  double sigma_bf_rw = 1.0e-4;    // accel bias random walk, m/s^3/sqrt(Hz)
  double sigma_bomega_rw = 1.0e-6;  // gyro bias random walk, rad/s^2/sqrt(Hz)
};

}  // namespace tvio
