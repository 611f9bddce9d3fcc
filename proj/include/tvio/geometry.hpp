#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>

namespace tvio {

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

// Quaternion exponential of a rotation vector (Hamilton convention).
inline Eigen::Quaterniond quat_exp(const Eigen::Vector3d& theta) {
  const double angle = theta.norm();
  if (angle < 1e-12) {
    Eigen::Quaterniond q(1.0, 0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z());
    q.normalize();
    return q;
  }
  const double half = 0.5 * angle;
  const double s = std::sin(half) / angle;
  return Eigen::Quaterniond(std::cos(half), s * theta.x(), s * theta.y(), s * theta.z());
}

inline Eigen::Vector3d quat_log(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double sin_half = q.vec().norm();
  if (sin_half < 1e-12) return 2.0 * q.vec();
  const double half = std::atan2(sin_half, q.w());
  return (2.0 * half / sin_half) * q.vec();
}

inline Eigen::Matrix3d rotation_exp(const Eigen::Vector3d& theta) {
  return quat_exp(theta).toRotationMatrix();
}

// Right Jacobian of SO(3): exp(theta + dtheta) ~ exp(theta) exp(Jr(theta) dtheta).
inline Eigen::Matrix3d so3_right_jacobian(const Eigen::Vector3d& theta) {
  const double angle = theta.norm();
  const Eigen::Matrix3d W = skew(theta);
  if (angle < 1e-7) {
    return Eigen::Matrix3d::Identity() - 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double a2 = angle * angle;
  const double c1 = (1.0 - std::cos(angle)) / a2;
  const double c2 = (angle - std::sin(angle)) / (a2 * angle);
  return Eigen::Matrix3d::Identity() - c1 * W + c2 * W * W;
}

// Azimuth/elevation bearing in a camera frame (z optical axis, x right, y down):
// unit vector m = (cos(el) sin(az), sin(el), cos(el) cos(az)).
struct Bearing {
  double azimuth = 0.0;
  double elevation = 0.0;

  Eigen::Vector3d unit() const {
    const double ca = std::cos(azimuth), sa = std::sin(azimuth);
    const double ce = std::cos(elevation), se = std::sin(elevation);
    return {ce * sa, se, ce * ca};
  }

  // columns: d(unit)/d(azimuth), d(unit)/d(elevation)
  Eigen::Matrix<double, 3, 2> unit_jacobian() const {
    const double ca = std::cos(azimuth), sa = std::sin(azimuth);
    const double ce = std::cos(elevation), se = std::sin(elevation);
    Eigen::Matrix<double, 3, 2> j;
    j << ce * ca, -se * sa, 0.0, ce, -ce * sa, -se * ca;
    return j;
  }

  static Bearing from_unit(const Eigen::Vector3d& m) {
    Bearing b;
    b.azimuth = std::atan2(m.x(), m.z());
    b.elevation = std::asin(std::clamp(m.y() / m.norm(), -1.0, 1.0));
    return b;
  }
};

struct PinholeCamera {
  double fx = 250.0, fy = 250.0;
  double cx = 159.5, cy = 119.5;
  int width = 320, height = 240;

  // Projects a camera-frame point; nullopt when at or behind the camera.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& p) const {
    if (p.z() <= 1e-9) return std::nullopt;
    return Eigen::Vector2d(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
  }

  // d(pixel)/d(point) at camera-frame point p (p.z > 0).
  Eigen::Matrix<double, 2, 3> project_jacobian(const Eigen::Vector3d& p) const {
    const double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << fx * iz, 0.0, -fx * p.x() * iz * iz, 0.0, fy * iz, -fy * p.y() * iz * iz;
    return j;
  }

  // Unit ray through a pixel.
  Eigen::Vector3d back_project(const Eigen::Vector2d& px) const {
    Eigen::Vector3d m((px.x() - cx) / fx, (px.y() - cy) / fy, 1.0);
    return m.normalized();
  }

  bool in_bounds(const Eigen::Vector2d& px, double margin = 0.0) const {
    return px.x() >= margin && px.x() <= width - 1 - margin && px.y() >= margin &&
           px.y() <= height - 1 - margin;
  }
};

// Body-to-camera transform: x_C = q_cb * x_B + t_cb.
struct Extrinsics {
  Eigen::Quaterniond q_cb = Eigen::Quaterniond::Identity();
  Eigen::Vector3d t_cb = Eigen::Vector3d::Zero();

  Eigen::Matrix3d rotation() const { return q_cb.toRotationMatrix(); }
  // Camera position expressed in the body frame.
  Eigen::Vector3d camera_in_body() const { return -(q_cb.conjugate() * t_cb); }
};

}  // namespace tvio
