#pragma once

// Coupled quadrotor / spherical-image / range dynamics and their discrete
// predictors.
//
// Frames: w (world, z up), b (body), c (camera). q_wb maps body to world,
// q_bc maps camera to body and p_cb_b is the camera origin in the body frame.
// Body rates omega_b are expressed in the body frame, so the attitude evolves
// as q_wb' = 1/2 q_wb (x) (0, omega_b).

#include "spvs/manifold.hpp"

#include <algorithm>
#include <stdexcept>

namespace spvs {

/// Range floor applied inside integration; keeps 1/r finite on degenerate iterates.
inline constexpr double kRangeFloor = 0.05;

struct ServoState {
  Vec3 v_w = Vec3::Zero();
  UnitQuaternion q_wb;
  BearingRotation feature;
  double r = 1.0;
};

struct ControlInput {
  double c = 0.0;
  Vec3 omega_b = Vec3::Zero();

  Vec4 vector() const { return {c, omega_b.x(), omega_b.y(), omega_b.z()}; }
  static ControlInput from_vector(const Vec4& u) { return {u(0), u.tail<3>()}; }
};

struct RigExtrinsics {
  Vec3 p_cb_b = Vec3::Zero();
  UnitQuaternion q_bc;
};

struct WorldConstants {
  Vec3 g_w{0.0, 0.0, -9.81};
};

struct CameraTwist {
  Vec3 v_c;
  Vec3 omega_c;
};

struct QuadRates {
  Vec3 v_dot;
  Vec4 q_dot;  // (w, x, y, z)
};

/// Linear and angular velocity of the camera expressed in the camera frame.
inline CameraTwist camera_twist(const ServoState& x, const ControlInput& u, const RigExtrinsics& rig) {
  const Mat3 c_bc_t = rig.q_bc.matrix().transpose();
  const Vec3 v_b = x.q_wb.matrix().transpose() * x.v_w + u.omega_b.cross(rig.p_cb_b);
  return {c_bc_t * v_b, c_bc_t * u.omega_b};
}

/// Tangent-space rate of the feature rotation for a stationary landmark.
inline TangentVector2 feature_rate(const BearingRotation& q, double r, const Vec3& v_c, const Vec3& omega_c) {
  if (!(r > 0.0)) throw std::domain_error("feature_rate: range must be positive");
  const Vec3 n = q.bearing();
  return q.tangent_basis().transpose() * (-n.cross(v_c) / r - omega_c);
}

/// Range rate; negative while the camera approaches the landmark.
inline double range_rate(const BearingRotation& q, const Vec3& v_c) { return -q.bearing().dot(v_c); }

inline QuadRates quad_rates(const ServoState& x, const ControlInput& u, const WorldConstants& w) {
  QuadRates out;
  out.v_dot = x.q_wb.matrix() * Vec3(0.0, 0.0, u.c) + w.g_w;
  const Eigen::Quaterniond omega(0.0, u.omega_b.x(), u.omega_b.y(), u.omega_b.z());
  const Eigen::Quaterniond prod = x.q_wb.eigen() * omega;
  out.q_dot = 0.5 * Vec4(prod.w(), prod.x(), prod.y(), prod.z());
  return out;
}

/// One explicit step of the feature kinematics, q_{k+1} = q_k [+] (rate * dt).
inline BearingRotation predict_feature(const BearingRotation& q, double r, const Vec3& v_c, const Vec3& omega_c,
                                       double dt) {
  return boxplus(q, feature_rate(q, r, v_c, omega_c) * dt);
}

/// The same step written with the projector I - n n^T instead of N N^T.
inline BearingRotation predict_feature_expanded(const BearingRotation& q, double r, const Vec3& v_c,
                                                const Vec3& omega_c, double dt) {
  if (!(r > 0.0)) throw std::domain_error("predict_feature: range must be positive");
  const Vec3 n = q.bearing();
  const Vec3 psi = -n.cross(v_c) / r - (Mat3::Identity() - n * n.transpose()) * omega_c;
  return BearingRotation(quat_exp(psi * dt) * q.quaternion());
}

/// Tangent of the servo state: [dv(3), dtheta_wb(3), da(2), dr(1)].
///
/// Attitude increments act on the left (world frame), feature increments
/// through [+].
using StateTangent = Eigen::Matrix<double, 9, 1>;
inline constexpr int kStateTangentDim = 9;
inline constexpr int kInputDim = 4;

inline ServoState retract(const ServoState& x, const StateTangent& dx) {
  ServoState out;
  out.v_w = x.v_w + dx.segment<3>(0);
  out.q_wb = quat_exp(dx.segment<3>(3)) * x.q_wb;
  out.feature = boxplus(x.feature, dx.segment<2>(6));
  out.r = x.r + dx(8);
  return out;
}

/// Local coordinates of a relative to base, so that retract(base, local(a, base)) == a.
inline StateTangent local(const ServoState& a, const ServoState& base) {
  StateTangent d;
  d.segment<3>(0) = a.v_w - base.v_w;
  d.segment<3>(3) = quat_log(a.q_wb * base.q_wb.inverse());
  d.segment<2>(6) = boxminus(a.feature, base.feature);
  d(8) = a.r - base.r;
  return d;
}

namespace detail {

// Continuous dynamics in trivialized form: linear acceleration, body rates,
// left angular velocity of the feature rotation, range rate.
struct TrivializedRates {
  Vec3 v_dot;
  Vec3 omega_body;
  Vec3 feature_omega;
  double r_dot;
};

inline TrivializedRates trivialized_rates(const ServoState& x, const ControlInput& u, const RigExtrinsics& rig,
                                          const WorldConstants& w) {
  const CameraTwist tw = camera_twist(x, u, rig);
  const Vec3 n = x.feature.bearing();
  const double r = std::max(x.r, kRangeFloor);
  TrivializedRates out;
  out.v_dot = x.q_wb.matrix() * Vec3(0.0, 0.0, u.c) + w.g_w;
  out.omega_body = u.omega_b;
  out.feature_omega = -n.cross(tw.v_c) / r - (Mat3::Identity() - n * n.transpose()) * tw.omega_c;
  out.r_dot = -n.dot(tw.v_c);
  return out;
}

// Inverse differential of exp, truncated after the second commutator.
inline Vec3 dexp_inv_left(const Vec3& theta, const Vec3& w) {
  return w - 0.5 * theta.cross(w) + theta.cross(theta.cross(w)) / 12.0;
}
inline Vec3 dexp_inv_right(const Vec3& theta, const Vec3& w) {
  return w + 0.5 * theta.cross(w) + theta.cross(theta.cross(w)) / 12.0;
}

struct AlgebraOffset {
  Vec3 dv = Vec3::Zero();
  Vec3 theta_b = Vec3::Zero();
  Vec3 theta_f = Vec3::Zero();
  double dr = 0.0;

  AlgebraOffset scaled(double s) const { return {dv * s, theta_b * s, theta_f * s, dr * s}; }
  AlgebraOffset operator+(const AlgebraOffset& o) const {
    return {dv + o.dv, theta_b + o.theta_b, theta_f + o.theta_f, dr + o.dr};
  }
};

inline ServoState apply_offset(const ServoState& x0, const AlgebraOffset& d) {
  ServoState x;
  x.v_w = x0.v_w + d.dv;
  x.q_wb = x0.q_wb * quat_exp(d.theta_b);
  x.feature = BearingRotation(quat_exp(d.theta_f) * x0.feature.quaternion());
  x.r = x0.r + d.dr;
  return x;
}

}  // namespace detail

/// One Runge-Kutta-Munthe-Kaas step of order four.
///
/// Vector parts are integrated with classic RK4; both rotations are advanced
/// through their exponential maps (body rates on the right of q_wb, the
/// feature's tangent rate through [+] on the left of q), so quaternions stay
/// unit without renormalization drift. The range is floored at kRangeFloor.
inline ServoState integrate_state(const ServoState& x, const ControlInput& u, const RigExtrinsics& rig,
                                  const WorldConstants& w, double dt) {
  using detail::AlgebraOffset;
  auto stage = [&](const AlgebraOffset& off) {
    const auto rates = detail::trivialized_rates(detail::apply_offset(x, off), u, rig, w);
    return AlgebraOffset{rates.v_dot, detail::dexp_inv_right(off.theta_b, rates.omega_body),
                         detail::dexp_inv_left(off.theta_f, rates.feature_omega), rates.r_dot};
  };
  const AlgebraOffset k1 = stage({});
  const AlgebraOffset k2 = stage(k1.scaled(0.5 * dt));
  const AlgebraOffset k3 = stage(k2.scaled(0.5 * dt));
  const AlgebraOffset k4 = stage(k3.scaled(dt));
  const AlgebraOffset incr = (k1 + k2.scaled(2.0) + k3.scaled(2.0) + k4).scaled(dt / 6.0);
  ServoState out = detail::apply_offset(x, incr);
  out.r = std::max(out.r, kRangeFloor);
  return out;
}

}  // namespace spvs
