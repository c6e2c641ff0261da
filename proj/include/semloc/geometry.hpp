#pragma once

// Rigid-body algebra, pinhole projection and the analytic Jacobians shared by
// the initializer and the tracker.
//
// Conventions:
//   * Tangent vectors are 6-vectors ordered (translation, rotation).
//   * Perturbations act on the right: T_wb * Exp(d).
//   * Euler angles use Z-Y-X composition, R = Rz(yaw) * Ry(pitch) * Rx(roll).
//   * Camera frame is x right, y down, z forward. Vehicle frame is FLU.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "semloc/errors.hpp"

namespace semloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

inline constexpr double kPi = std::numbers::pi;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

inline Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1.0, 0.0, 0.0,
       0.0, c, -s,
       0.0, s, c;
  return m;
}

inline Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0.0, s,
       0.0, 1.0, 0.0,
       -s, 0.0, c;
  return m;
}

inline Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, -s, 0.0,
       s, c, 0.0,
       0.0, 0.0, 1.0;
  return m;
}

// Derivatives of the elementary rotations with respect to their angle.
inline Mat3 drot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 0.0, 0.0, 0.0,
       0.0, -s, -c,
       0.0, c, -s;
  return m;
}

inline Mat3 drot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << -s, 0.0, c,
       0.0, 0.0, 0.0,
       -c, 0.0, -s;
  return m;
}

inline Mat3 drot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << -s, -c, 0.0,
       c, -s, 0.0,
       0.0, 0.0, 0.0;
  return m;
}

inline Mat3 so3_exp(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-8) {
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * K + b * K * K;
}

inline Vec3 so3_log(const Mat3& R) {
  const double cos_theta = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < 1e-8) {
    return 0.5 * w;
  }
  if (kPi - theta < 1e-6) {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part instead.
    const Mat3 B = 0.5 * (R + Mat3::Identity());
    int k = 0;
    B.diagonal().maxCoeff(&k);
    Vec3 axis = B.col(k) / std::sqrt(std::max(B(k, k), 1e-300));
    axis.normalize();
    if (axis.dot(w) < 0.0) axis = -axis;
    return theta * axis;
  }
  return theta / (2.0 * std::sin(theta)) * w;
}

// Left Jacobian of SO(3); also the V matrix of the SE(3) exponential.
inline Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-6) {
    return Mat3::Identity() + 0.5 * K + K * K / 6.0;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() + (1.0 - std::cos(theta)) / t2 * K +
         (theta - std::sin(theta)) / (t2 * theta) * K * K;
}

inline Mat3 so3_left_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-6) {
    return Mat3::Identity() - 0.5 * K + K * K / 12.0;
  }
  const double half = 0.5 * theta;
  const double cot_term = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  return Mat3::Identity() - 0.5 * K + cot_term * K * K;
}

/// Rigid transform. `Pose{R, t}` maps a point x to R*x + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }

  Pose inverse() const {
    const Mat3 Rt = rotation.transpose();
    return {Rt, -(Rt * translation)};
  }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  Pose operator*(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation).normalized(); }

  static Pose from_quaternion(const Eigen::Quaterniond& q, const Vec3& t) {
    return {q.normalized().toRotationMatrix(), t};
  }

  double orthonormality_error() const {
    return (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  }
};

inline Pose se3_exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return {so3_exp(phi), so3_left_jacobian(phi) * rho};
}

inline Vec6 se3_log(const Pose& T) {
  const Vec3 phi = so3_log(T.rotation);
  Vec6 xi;
  xi.head<3>() = so3_left_jacobian_inverse(phi) * T.translation;
  xi.tail<3>() = phi;
  return xi;
}

/// Adjoint for (translation, rotation) ordering: Exp(Ad(T) d) = T Exp(d) T^-1.
inline Mat6 adjoint(const Pose& T) {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = T.rotation;
  ad.topRightCorner<3, 3>() = skew(T.translation) * T.rotation;
  ad.bottomRightCorner<3, 3>() = T.rotation;
  return ad;
}

/// Small adjoint ad(xi), the Lie bracket matrix of se(3).
inline Mat6 small_adjoint(const Vec6& xi) {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = skew(xi.tail<3>());
  ad.topRightCorner<3, 3>() = skew(xi.head<3>());
  ad.bottomRightCorner<3, 3>() = skew(xi.tail<3>());
  return ad;
}

inline constexpr double kGimbalMargin = 1e-6;

/// Pose parameterized by Z-Y-X Euler angles and translation.
struct EulerPose {
  double roll = 0.0;   // about x
  double pitch = 0.0;  // about y
  double yaw = 0.0;    // about z
  Vec3 translation = Vec3::Zero();

  Mat3 rotation() const { return rot_z(yaw) * rot_y(pitch) * rot_x(roll); }
  Pose to_pose() const { return {rotation(), translation}; }

  static EulerPose from_pose(const Pose& P) {
    const Mat3& R = P.rotation;
    EulerPose e;
    e.pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
    e.yaw = std::atan2(R(1, 0), R(0, 0));
    e.roll = std::atan2(R(2, 1), R(2, 2));
    e.translation = P.translation;
    return e;
  }

  void check_gimbal() const {
    if (std::abs(pitch) >= kPi / 2.0 - kGimbalMargin) {
      throw Error(ErrorKind::kGimbalLock, "pitch too close to +/-pi/2");
    }
  }
};

enum class EulerAxis { kX, kY, kZ };

/// Maps Euler-angle rates (roll, pitch, yaw) to the body-frame rotation
/// vector of a right perturbation: R(e + de) ~= R(e) Exp(M de).
inline Mat3 euler_rate_to_body(const EulerPose& e) {
  Mat3 M;
  M.col(0) = Vec3::UnitX();
  M.col(1) = rot_x(e.roll).transpose() * Vec3::UnitY();
  M.col(2) = (rot_y(e.pitch) * rot_x(e.roll)).transpose() * Vec3::UnitZ();
  return M;
}

struct CameraModel {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  Pose extrinsic_bc;  // camera in vehicle frame

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw Error(ErrorKind::kValidation, "focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error(ErrorKind::kValidation, "image size must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
      throw Error(ErrorKind::kValidation, "principal point outside image");
    }
  }

  bool in_image(const Vec2& u) const {
    return u.x() >= 0.0 && u.y() >= 0.0 && u.x() <= width - 1.0 && u.y() <= height - 1.0;
  }
};

/// Camera looking along the vehicle's +x axis (or rotated by `yaw` about the
/// vehicle z axis), mounted at `position` in the vehicle frame.
inline Pose forward_camera_extrinsic(const Vec3& position, double yaw = 0.0, double pitch_down = 0.0) {
  Mat3 base;
  // columns: camera x, y, z axes expressed in vehicle FLU
  base << 0.0, 0.0, 1.0,
          -1.0, 0.0, 0.0,
          0.0, -1.0, 0.0;
  return {rot_z(yaw) * rot_y(pitch_down) * base, position};
}

inline constexpr double kDefaultZMin = 0.1;

/// p_c = R_cb * (R_wb^T * (P_w - t_wb)) + t_cb.
inline Vec3 transform_point(const Pose& pose_wb, const Pose& extrinsic_bc, const Vec3& p_w) {
  const Vec3 p_b = pose_wb.rotation.transpose() * (p_w - pose_wb.translation);
  return extrinsic_bc.rotation.transpose() * (p_b - extrinsic_bc.translation);
}

inline std::optional<Vec2> try_project(const CameraModel& cam, const Vec3& p_c,
                                       double z_min = kDefaultZMin) {
  if (!(p_c.z() > z_min)) return std::nullopt;
  const double inv_z = 1.0 / p_c.z();
  return Vec2(cam.fx * p_c.x() * inv_z + cam.cx, cam.fy * p_c.y() * inv_z + cam.cy);
}

inline Vec2 project(const CameraModel& cam, const Vec3& p_c, double z_min = kDefaultZMin) {
  auto u = try_project(cam, p_c, z_min);
  if (!u) throw Error(ErrorKind::kBehindCamera, "point depth below near plane");
  return *u;
}

/// d p_c / d eps for T_wb * Exp(eps), eps = (translation, rotation):
///   -[I  -[p_c]x] Ad(T_cb).
inline Mat36 jacobian_point_se3(const Vec3& p_c, const Pose& extrinsic_cb) {
  Mat36 left;
  left.leftCols<3>() = Mat3::Identity();
  left.rightCols<3>() = -skew(p_c);
  Mat36 J = -left * adjoint(extrinsic_cb);
  return J;
}

/// d p_c / d t_wb = -R_cb R_wb^T = -R_cw.
inline Mat3 jacobian_point_translation(const Pose& pose_wb, const Pose& extrinsic_bc) {
  return -(extrinsic_bc.rotation.transpose() * pose_wb.rotation.transpose());
}

/// d p_c / d theta for one Euler axis: R_cb (dR_wb/dtheta)^T (P_w - t_wb).
inline Vec3 jacobian_point_euler(const EulerPose& pose, const Pose& extrinsic_bc, const Vec3& p_w,
                                 EulerAxis axis) {
  pose.check_gimbal();
  Mat3 dR;
  switch (axis) {
    case EulerAxis::kX: dR = rot_z(pose.yaw) * rot_y(pose.pitch) * drot_x(pose.roll); break;
    case EulerAxis::kY: dR = rot_z(pose.yaw) * drot_y(pose.pitch) * rot_x(pose.roll); break;
    case EulerAxis::kZ: dR = drot_z(pose.yaw) * rot_y(pose.pitch) * rot_x(pose.roll); break;
  }
  return extrinsic_bc.rotation.transpose() * (dR.transpose() * (p_w - pose.translation));
}

inline Mat23 jacobian_projection(const CameraModel& cam, const Vec3& p_c, double z_min = kDefaultZMin) {
  if (!(p_c.z() > z_min)) throw Error(ErrorKind::kBehindCamera, "point depth below near plane");
  const double inv_z = 1.0 / p_c.z();
  const double inv_z2 = inv_z * inv_z;
  Mat23 J;
  J << cam.fx * inv_z, 0.0, -cam.fx * p_c.x() * inv_z2,
       0.0, cam.fy * inv_z, -cam.fy * p_c.y() * inv_z2;
  return J;
}

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  return a;
}

}  // namespace semloc
