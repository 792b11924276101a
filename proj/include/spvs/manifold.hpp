#pragma once

// Quaternion calculus on SO(3) and the rotation-based parametrization of
// unit bearing vectors on S^2.
//
// Conventions:
//   - Hamilton product, C(q1 (x) q2) = C(q1) C(q2).
//   - A BearingRotation q encodes the bearing n(q) = C(q) e_z; the columns of
//     N(q) = [C(q) e_x, C(q) e_y] span the tangent plane at n(q).
//   - q [+] a = exp(N(q) a) (x) q, i.e. tangent increments act on the left.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

namespace spvs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat32 = Eigen::Matrix<double, 3, 2>;

/// Tangent coordinates of a bearing rotation, radians.
using TangentVector2 = Eigen::Vector2d;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

/// Unit quaternion, renormalized on construction and canonicalized to w >= 0.
///
/// Canonicalization never changes the rotation matrix; it only makes logged
/// components reproducible.
class UnitQuaternion {
 public:
  UnitQuaternion() : q_(1.0, 0.0, 0.0, 0.0) {}
  UnitQuaternion(double w, double x, double y, double z) : q_(w, x, y, z) { normalize(); }
  explicit UnitQuaternion(const Eigen::Quaterniond& q) : q_(q) { normalize(); }

  static UnitQuaternion identity() { return {}; }

  static UnitQuaternion from_matrix(const Mat3& c) { return UnitQuaternion(Eigen::Quaterniond(c)); }

  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }

  /// Components ordered (w, x, y, z).
  Vec4 coeffs_wxyz() const { return {q_.w(), q_.x(), q_.y(), q_.z()}; }

  const Eigen::Quaterniond& eigen() const { return q_; }

  Mat3 matrix() const { return q_.toRotationMatrix(); }

  Vec3 rotate(const Vec3& v) const { return q_ * v; }

  UnitQuaternion inverse() const { return UnitQuaternion(q_.conjugate()); }

  friend UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
    return UnitQuaternion(a.q_ * b.q_);
  }

 private:
  void normalize() {
    q_.normalize();
    if (q_.w() < 0.0) q_.coeffs() = -q_.coeffs();
  }

  Eigen::Quaterniond q_;
};

/// Exponential map of SO(3): rotation of angle |psi| about psi/|psi|.
inline UnitQuaternion quat_exp(const Vec3& psi) {
  const double angle = psi.norm();
  if (angle < 1e-8) {
    // second-order accurate; renormalized by the constructor
    return UnitQuaternion(1.0 - angle * angle / 8.0, 0.5 * psi.x(), 0.5 * psi.y(), 0.5 * psi.z());
  }
  const double s = std::sin(0.5 * angle) / angle;
  return UnitQuaternion(std::cos(0.5 * angle), s * psi.x(), s * psi.y(), s * psi.z());
}

/// Logarithm of SO(3), returns the rotation vector with angle in [0, pi].
inline Vec3 quat_log(const UnitQuaternion& q) {
  // w >= 0 by canonicalization, so the angle is in [0, pi]
  const Vec3 v(q.x(), q.y(), q.z());
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v / q.w();
  return 2.0 * std::atan2(s, q.w()) * v / s;
}

/// Rotation vector that carries rho1 onto rho2 along the great circle.
///
/// Near-parallel inputs return the first-order limit rho1 x rho2; antipodal
/// inputs rotate by pi about normalize(e_x - (e_x . rho1) rho1), falling back
/// to e_y when rho1 is itself (anti)parallel to e_x.
inline Vec3 min_rotation(const Vec3& rho1, const Vec3& rho2) {
  const double c = rho1.dot(rho2);
  const Vec3 cross = rho1.cross(rho2);
  const double s = cross.norm();
  if (c < -1.0 + 1e-9) {
    Vec3 axis = Vec3::UnitX() - rho1.x() * rho1;
    if (axis.norm() < 1e-6) axis = Vec3::UnitY() - rho1.y() * rho1;
    return std::numbers::pi * axis.normalized();
  }
  if (s < 1e-9) return cross;
  return std::atan2(s, c) * cross / s;
}

/// A rotation whose action on the optical axis encodes a unit bearing.
class BearingRotation {
 public:
  BearingRotation() = default;
  explicit BearingRotation(const UnitQuaternion& q) : q_(q) {}

  const UnitQuaternion& quaternion() const { return q_; }

  /// n(q) = C(q) e_z.
  Vec3 bearing() const { return q_.matrix().col(2); }

  /// N(q) = [C(q) e_x, C(q) e_y].
  Mat32 tangent_basis() const { return q_.matrix().leftCols<2>(); }

 private:
  UnitQuaternion q_;
};

inline Vec3 bearing(const BearingRotation& q) { return q.bearing(); }
inline Mat32 tangent_basis(const BearingRotation& q) { return q.tangent_basis(); }

inline BearingRotation boxplus(const BearingRotation& q, const TangentVector2& a) {
  return BearingRotation(quat_exp(q.tangent_basis() * a) * q.quaternion());
}

/// Tangent coordinates of q1 expressed at base q2, so that (q [+] a) [-] q = a.
inline TangentVector2 boxminus(const BearingRotation& q1, const BearingRotation& q2) {
  return q2.tangent_basis().transpose() * min_rotation(q2.bearing(), q1.bearing());
}

/// d n(q [+] a) / d a at a = 0, which equals -n(q)^x N(q).
inline Mat32 bearing_jacobian(const BearingRotation& q) {
  const Mat3 c = q.quaternion().matrix();
  return -skew(c.col(2)) * c.leftCols<2>();
}

inline BearingRotation from_bearing(const Vec3& rho) {
  return BearingRotation(quat_exp(min_rotation(Vec3::UnitZ(), rho)));
}

}  // namespace spvs
